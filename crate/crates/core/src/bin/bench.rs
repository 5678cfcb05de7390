use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use metaplan::bench::{resolve_policy, run_benchmark, time_evaluation, write_run, BenchOptions};
use metaplan::env::load_env;
use metaplan::features::{Backend, FeatureConfig};
use metaplan::optimizer::{train_bmps, TrainMode, TrainSpec};
use metaplan::tutor::{http, TutorService};

#[derive(Parser)]
#[command(version, about = "Train, benchmark and serve metalevel planning strategies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Contraction,
    PathEnumeration,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Contraction => Backend::Contraction,
            BackendArg::PathEnumeration => Backend::PathEnumeration,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Flat,
    Hier,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate policies on shared instances and write reports.
    Run {
        #[arg(long)]
        env: String,
        /// Comma-separated policy names or config files.
        #[arg(long, value_delimiter = ',', default_value = "flat_bmps,hier_bmps_switching,random")]
        policies: Vec<String>,
        #[arg(long, default_value_t = 3000)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        train_iterations: usize,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
    },
    /// Time one policy per episode.
    Time {
        #[arg(long)]
        env: String,
        #[arg(long)]
        policy: String,
        #[arg(long, value_enum, default_value = "contraction")]
        backend: BackendArg,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        /// Per-episode budget in seconds.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Train BMPS weights and write the policy config as JSON.
    Train {
        #[arg(long)]
        env: String,
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long)]
        switching: bool,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the tutor API. Sessions persist under TUTOR_DATA_DIR if set.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    match Cli::parse().cmd {
        Cmd::Run { env, policies, episodes, seed, train_iterations, out } => {
            let opts = BenchOptions { episodes, seed, train_iterations, ..BenchOptions::default() };
            let run = run_benchmark(&env, &policies, &opts)?;
            for f in &run.report.failures {
                eprintln!("skipped {}: {}", f.policy, f.error);
            }
            for p in write_run(&run, &out)? {
                println!("{}", p.display());
            }
        }
        Cmd::Time { env, policy, backend, episodes, budget } => {
            let spec = load_env(&env)?;
            let features = FeatureConfig { backend: backend.into(), ..FeatureConfig::default() };
            let opts = BenchOptions { features, ..BenchOptions::default() };
            let mut config = resolve_policy(&policy, &spec, &opts)?.config;
            config.features = features;
            let t = time_evaluation(&config, &spec, episodes, 0, budget.map(Duration::from_secs_f64))?;
            println!("{}", serde_json::to_string_pretty(&t)?);
        }
        Cmd::Train { env, mode, switching, iters, episodes, seed, out } => {
            let spec = load_env(&env)?;
            let mode = match mode {
                ModeArg::Flat => TrainMode::Flat,
                ModeArg::Hier => TrainMode::Hier { switching },
            };
            let outcome = train_bmps(&spec, &TrainSpec::new(mode, iters, episodes, seed))?;
            std::fs::write(&out, serde_json::to_string_pretty(&outcome.config)?)?;
            println!("trained {} in {:.1}s -> {}", outcome.config.label(), outcome.seconds, out.display());
        }
        Cmd::Serve { port } => {
            let svc = Arc::new(TutorService::from_env()?);
            let rt = tokio::runtime::Runtime::new()?;
            println!("listening on 0.0.0.0:{port}");
            rt.block_on(http::serve(svc, ([0, 0, 0, 0], port).into()))?;
        }
    }
    Ok(())
}
