//! Single-layer overhead with the phase breakdown.
//!
//! cargo run --release --example bench -- [d] [n] [reps]

use vps::harness::{benchmark_overhead, BenchShape};

fn main() -> vps::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let d = args.next().flatten().unwrap_or(512);
    let n = args.next().flatten().unwrap_or(128);
    let reps = args.next().flatten().unwrap_or(20);
    let shape = BenchShape {
        d_in: d,
        d_out: d,
        n,
        rank: 2,
        topk: 32,
        reps,
    };
    let report = benchmark_overhead(shape, 0)?;
    print!("{}", report.render());
    println!("phases within 20% of extra time: {}", report.phases_consistent(0.2));
    Ok(())
}
