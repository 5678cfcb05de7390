//! Drives a feedback session in process, then prints an annotated demo.

use metaplan::tutor::{Condition, CreateSession, Curriculum, DemoStep, TutorService};

fn main() -> Result<(), metaplan::tutor::TutorError> {
    let svc = TutorService::in_memory();
    let s = svc.create_session(&CreateSession {
        condition: Condition::Feedback,
        env: "builtin:feedback".into(),
        seed: 3,
        trials: Some(2),
    })?;
    for node in [7, 8, 12] {
        let r = svc.register_click(&s.id, 0, node)?;
        let fb = r.feedback.expect("feedback condition");
        println!("click {node} -> {:>5}  optimal {:<5} delay {} ms", r.revealed, fb.is_optimal, fb.penalty_ms);
    }
    let r = svc.submit_route(&s.id, 0, &[3, 6, 12])?;
    println!("route rr {:.1}, score {:.1}", r.rr, r.score);

    let demo = svc.get_demo("builtin:increasing2", "greedy_hier", 11, Curriculum::Full)?;
    for step in &demo.steps {
        match step {
            DemoStep::Click { node, value, annotation } => println!("  click {node:>2} = {value:>6}  {annotation:?}"),
            DemoStep::Move { node, .. } => println!("  move  {node:>2}"),
        }
    }
    println!("demo score {:.1}", demo.score);
    Ok(())
}
