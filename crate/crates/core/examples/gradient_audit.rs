//! Finite-difference audit of every hand-written gradient.
//!
//! cargo run --release --example gradient_audit -- [seed...]

use invreg::gradcheck::run_audit;

fn main() -> invreg::Result<()> {
    let mut seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse().expect("seed")).collect();
    if seeds.is_empty() {
        seeds = vec![1, 2, 3];
    }
    let report = run_audit(&seeds)?;
    for r in &report.results {
        println!("{r}");
    }
    println!("worst relative error {:.2e}", report.worst());
    if !report.passed() {
        std::process::exit(1);
    }
    Ok(())
}
