//! Trains hierarchical BMPS with and without goal switching on the
//! high-risk environment and compares the two.

use metaplan::env::gen_high_risk;
use metaplan::features::shared_cache;
use metaplan::optimizer::{mean_rr, train_bmps, TrainMode, TrainSpec};

fn main() -> metaplan::error::Result<()> {
    let spec = gen_high_risk();
    let iterations = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    for switching in [true, false] {
        let out = train_bmps(&spec, &TrainSpec::new(TrainMode::Hier { switching }, iterations, 100, 1))?;
        let rr = mean_rr(&spec, &out.config, 2000, 99, &shared_cache())?;
        println!("{:<20} {:>8.2}  trained in {:.1}s", out.config.label(), rr, out.seconds);
        println!("  {}", serde_json::to_string(&out.config).expect("serializable"));
    }
    Ok(())
}
