//! Small benchmark on the high-risk environment. Writes reports to
//! `bench-example/`.

use metaplan::bench::{run_benchmark, write_run, BenchOptions};

fn main() -> metaplan::error::Result<()> {
    let opts = BenchOptions { episodes: 500, train_iterations: 30, tune_budget: 15, ..BenchOptions::default() };
    let names: Vec<String> =
        ["hier_bmps_switching", "hier_bmps", "greedy_hier", "backward", "random"].map(String::from).to_vec();
    let run = run_benchmark("builtin:highrisk", &names, &opts)?;
    for r in &run.report.rows {
        println!("{:<22} {:>9.2} ± {:<6.2} clicks {:>5.2}", r.policy, r.mean_rr, r.se_rr, r.mean_clicks);
    }
    write_run(&run, std::path::Path::new("bench-example"))?;
    Ok(())
}
