//! The ablation grid on a reduced task set.
//!
//! cargo run --release --example ablation -- [num_prompts]

use vps::harness::{run_ablation_grid, ExperimentConfig};

fn main() -> vps::Result<()> {
    let prompts = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let cfg = ExperimentConfig {
        num_prompts: prompts,
        train_steps: 150,
        output: std::env::temp_dir().join("vps_example").join("grid.tsv"),
        ..ExperimentConfig::default()
    };
    let report = run_ablation_grid(&cfg)?;
    println!("{} / {} cells completed", report.completed(), report.cells.len());
    let mut best: Vec<_> = report.cells.iter().filter_map(|c| c.outcome.as_ref().ok().map(|s| (c.cell, *s))).collect();
    best.sort_by(|a, b| a.1.mean_final_loss.total_cmp(&b.1.mean_final_loss));
    for (cell, s) in best.iter().take(5) {
        println!(
            "{:>6} gamma {} r {} coupled {:<5} adaptive {:<5} final loss {:.2} (baseline {:.2})",
            cell.builder.to_string(),
            cell.gamma,
            cell.rank,
            cell.qk_coupling,
            cell.adaptive,
            s.mean_final_loss,
            s.mean_baseline_loss
        );
    }
    println!("grid written to {}", report.output.display());
    Ok(())
}
