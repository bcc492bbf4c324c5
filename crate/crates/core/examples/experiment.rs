//! A full experiment from a config file (or the defaults) to result files.
//!
//! cargo run --example experiment -- [config-path] [output.tsv]

use std::path::PathBuf;

use vps::harness::{load_config, run_experiment};

fn main() -> vps::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args.next().map(PathBuf::from);
    let mut cfg = load_config(path.as_deref())?;
    cfg.output = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("vps_example").join("results.tsv"));
    let report = run_experiment(&cfg)?;
    for t in &report.tasks {
        print!("{} ", t.prompt);
    }
    println!();
    println!("{:#?}", report.summary);
    println!("rows in {}", report.output.display());
    Ok(())
}
