//! `gradcheck`: run the full 64-bit finite-difference suite over every tape
//! op and every loss term, print one line per check, and exit nonzero on
//! any failure.

use clap::Args;
use pose6d::losses::check::full_suite_f64;

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Sampled inputs per op/loss.
    #[arg(long, default_value_t = 100)]
    pub seeds: usize,
    /// Root seed of the sampled cases.
    #[arg(long, default_value_t = 2024)]
    pub seed: u64,
}

pub fn run(args: GradcheckArgs) -> anyhow::Result<()> {
    let outcomes = full_suite_f64(args.seeds, args.seed);
    let mut failed = 0usize;
    for o in &outcomes {
        println!(
            "{:<26} cases {:>4}  max rel err {:>12.3e}  tol {:>8.1e}  {}",
            o.name,
            o.cases,
            o.max_rel_err,
            o.tol,
            if o.passed() { "ok" } else { "FAIL" }
        );
        if !o.passed() {
            failed += 1;
        }
    }
    anyhow::ensure!(failed == 0, "{failed} gradient checks failed");
    println!("all {} checks passed", outcomes.len());
    Ok(())
}
