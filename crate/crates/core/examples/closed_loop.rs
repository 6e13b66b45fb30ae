//! The whole loop on synthetic traffic whose "other" class drifts halfway
//! through: bootstrap model, routing, ground-truth labels, joins, and
//! retraining with hot swaps. Prints the run report.
//!
//! cargo run --example closed_loop [seed]

use arcg_loop::harness::{run, RunConfig};

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(77);
    let mut cfg = RunConfig::drift_scenario(seed, 4, 120.0);
    cfg.workers = 2;
    let out = run(&cfg)?;
    print!("{}", out.report.to_text());

    println!("\nmoving accuracy (every 5 s of capture time):");
    let start = out.report.live_start_us.unwrap_or(0);
    let mut next = start;
    for &(t, acc) in &out.report.moving_accuracy_trace {
        if t >= next {
            if let Some(a) = acc {
                println!("  {:>6.1} s  {:.3}", t as f64 / 1e6, a);
            }
            next = t + 5_000_000;
        }
    }
    Ok(())
}
