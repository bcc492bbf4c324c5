use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vps::harness::{benchmark_overhead, load_config, run_ablation_grid, run_experiment, BenchShape, ExperimentConfig};
use vps::verify::composite_loss;

#[derive(Parser)]
#[command(name = "vps", version, about = "Virtual parameter sharpening experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file; `VPS_<KEY>` env vars override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Enables the confidence filter, keeping this fraction of the pool.
    #[arg(long)]
    filter_fraction: Option<f64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = load_config(self.config.as_deref())
            .with_context(|| format!("loading config {}", self.config.as_ref().map_or("<defaults>".into(), |p| p.display().to_string())))?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
        if let Some(f) = self.filter_fraction {
            cfg.confidence_filter = true;
            cfg.filter_fraction = f;
        }
        Ok(cfg.finalize()?)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train, patch and refine the task set; writes TSV and JSON-lines rows.
    Run(Common),
    /// Run the full ablation grid.
    Ablate(Common),
    /// Time one VPS layer against its base forward.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 2048)]
        d_in: usize,
        #[arg(long, default_value_t = 2048)]
        d_out: usize,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long, default_value_t = 32)]
        topk: usize,
        #[arg(long, default_value_t = 10)]
        reps: usize,
    },
    /// Score a prediction against a reference.
    Verify {
        #[command(flatten)]
        common: Common,
        prediction: String,
        truth: String,
        /// Sampled answers for the self-consistency objective.
        #[arg(long, num_args = 1..)]
        samples: Vec<String>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Run(c) => {
            let cfg = c.resolve()?;
            let r = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r.summary)?);
            println!("wrote {}", r.output.display());
        }
        Cmd::Ablate(c) => {
            let cfg = c.resolve()?;
            let r = run_ablation_grid(&cfg)?;
            println!("{} of {} cells completed", r.completed(), r.cells.len());
            println!("wrote {}", r.output.display());
            if r.completed() != r.cells.len() {
                bail!("{} cells failed", r.cells.len() - r.completed());
            }
        }
        Cmd::Bench { common, d_in, d_out, n, rank, topk, reps } => {
            let cfg = common.resolve()?;
            let shape = BenchShape { d_in, d_out, n, rank, topk, reps };
            let report = benchmark_overhead(shape, cfg.seed)?;
            print!("{}", report.render());
            if let Some(out) = &common.out {
                fs::write(out, serde_json::to_string_pretty(&report)?).with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Cmd::Verify { common, prediction, truth, samples } => {
            let cfg = common.resolve()?;
            let mut weights = cfg.vps.weights;
            if !samples.is_empty() && weights.self_consistency == 0.0 {
                weights.self_consistency = 1.0;
            }
            let s = (!samples.is_empty()).then_some(&samples[..]);
            let report = composite_loss(&prediction, &truth, s, &weights);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}
