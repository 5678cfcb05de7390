//! Exact metalevel values by backward induction, and the feedback a
//! learner would get for a few choices.

use metaplan::belief::{init_belief, Computation, Phase};
use metaplan::env::gen_feedback_tree;
use metaplan::oracle::{belief_space_size, optimal_feedback, solve_exact};

fn main() -> metaplan::error::Result<()> {
    let spec = gen_feedback_tree();
    println!("{}: {} beliefs", spec.name(), belief_space_size(&spec));
    let t = std::time::Instant::now();
    let sol = solve_exact(&spec)?;
    println!("solved in {:.2?}", t.elapsed());

    let b = init_belief(&spec, Phase::Flat);
    println!("V(start) = {:.3}, optimal first move {:?}", sol.value(&b)?, sol.policy(&b)?);
    for c in [
        Computation::InspectNode(1),
        Computation::InspectNode(4),
        Computation::InspectNode(7),
        Computation::TerminateFlat,
    ] {
        let fb = optimal_feedback(&b, c, &sol)?;
        println!("{c:?}: regret {:.3}, delay {} ms", fb.regret, fb.penalty_ms);
    }
    Ok(())
}
