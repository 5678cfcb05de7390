//! Feature computations per decision as the number of goals grows.

use metaplan::bench::scalability_sweep;
use metaplan::features::WeightVector;
use metaplan::policy::PolicyConfig;

fn main() -> metaplan::error::Result<()> {
    let flat = PolicyConfig::flat(WeightVector::flat([0.4, 0.3, 0.3, 1.0]));
    let hier = PolicyConfig::hier(WeightVector::high([0.5, 0.5, 1.0]), WeightVector::low([0.4, 0.3, 0.3, 1.0]), true);
    for p in scalability_sweep(&[2, 3, 4, 5], &flat, &hier, 5, 0)? {
        println!("{:<14} {:<22} {:>8.1}", p.env, p.policy, p.evaluations_per_selection);
    }
    Ok(())
}
