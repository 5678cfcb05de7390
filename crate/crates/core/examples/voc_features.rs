//! VOC features of every first inspection on the two-goal increasing
//! variance environment, flat and hierarchical.

use metaplan::belief::{init_belief, Computation, Level, Phase};
use metaplan::env::gen_increasing_variance;
use metaplan::features::{shared_cache, voc_hat, Evaluator, FeatureConfig, WeightVector};

fn main() -> metaplan::error::Result<()> {
    let spec = gen_increasing_variance(2)?;
    let cache = shared_cache();
    let mut cache = cache.lock().unwrap();
    let w = WeightVector::flat([0.4, 0.3, 0.3, 1.0]);

    let b = init_belief(&spec, Phase::Flat);
    let mut ev = Evaluator::new(&spec, &b, Level::Flat, None, FeatureConfig::default(), &mut cache);
    println!("flat VPI = {:.3}", ev.vpi()?);
    println!("{:>5} {:>8} {:>8} {:>8}", "node", "voi1", "vpi_sub", "voc");
    for v in spec.non_root() {
        let c = Computation::InspectNode(v);
        let f = ev.features(c, &w)?;
        println!("{v:>5} {:>8.3} {:>8.3} {:>8.3}", f.voi1, f.vpi_sub.unwrap_or(0.0), voc_hat(&mut ev, c, &w)?);
    }

    let b = init_belief(&spec, Phase::GoalSetting);
    let wh = WeightVector::high([0.5, 0.5, 1.0]);
    let mut ev = Evaluator::new(&spec, &b, Level::High, None, FeatureConfig::default(), &mut cache);
    for &g in spec.goals() {
        let c = Computation::InspectGoal(g);
        let f = ev.features(c, &wh)?;
        println!("goal {g}: voi1 {:.3}  vpi {:.3}  cost {:.3}", f.voi1, f.vpi, f.cost);
    }
    Ok(())
}
