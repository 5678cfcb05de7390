//! Inspection orders of the search baselines and their tuned aspiration
//! levels.

use metaplan::env::gen_increasing_variance;
use metaplan::features::shared_cache;
use metaplan::optimizer::mean_rr;
use metaplan::policy::{PolicyConfig, PolicyKind};
use metaplan::search::{aspiration_range, traversal_order, tune_aspiration, SearchKind};

fn main() -> metaplan::error::Result<()> {
    let spec = gen_increasing_variance(2)?;
    let (lo, hi) = aspiration_range(&spec);
    println!("aspiration range [{lo}, {hi}]");
    for kind in SearchKind::ALL {
        let order = traversal_order(kind, &spec);
        let tuned = tune_aspiration(kind, &spec, 20, 200, 0)?;
        let rr = mean_rr(&spec, &PolicyConfig::new(PolicyKind::Search(tuned)), 2000, 5, &shared_cache())?;
        println!("{:<14} first {:?}  aspiration {:>7.2}  rr {:>7.2}", kind.label(), &order[..6], tuned.aspiration, rr);
    }
    Ok(())
}
