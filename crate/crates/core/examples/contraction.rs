//! Best-path reward distribution of a small DAG by graph contraction,
//! checked against full path enumeration.

use std::time::Instant;

use metaplan::contraction::{flat_local, max_path_dist, path_enumeration_dist};
use metaplan::dist::Dist;
use metaplan::env::gen_branching;

fn main() -> metaplan::error::Result<()> {
    let prior = Dist::uniform(&[-10.0, -5.0, 5.0, 10.0])?;
    let spec = gen_branching(&[3, 1, 2], &prior, 1.0)?;
    let dists: Vec<Dist> = (0..spec.node_count()).map(|v| spec.prior_or_zero(v)).collect();
    let local = flat_local(&spec, &dists);
    let scope = spec.flat_scope();

    let t = Instant::now();
    let fast = max_path_dist(scope, &local)?;
    let fast_time = t.elapsed();
    let t = Instant::now();
    let slow = path_enumeration_dist(scope, &local, None)?;
    let slow_time = t.elapsed();

    println!("{}: {} nodes, {} paths", spec.name(), spec.node_count(), scope.paths().len());
    println!("contraction  mean {:.4}  support {:>4}  {:?}", fast.mean(), fast.len(), fast_time);
    println!("enumeration  mean {:.4}  support {:>4}  {:?}", slow.mean(), slow.len(), slow_time);
    for (v, p) in fast.iter().filter(|&(_, p)| p > 0.02) {
        println!("  P(best = {v:>5}) = {p:.4}");
    }
    Ok(())
}
