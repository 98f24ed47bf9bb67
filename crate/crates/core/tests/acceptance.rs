//! The full acceptance run: one line per item, at the stated budgets and
//! time limits. Runs without the test harness so the lines are always
//! printed.

use std::process::ExitCode;

use lipshadow::reproduce::{reproduce, Expected, ReproduceConfig};

fn main() -> ExitCode {
    let cfg = ReproduceConfig::default();
    let report = reproduce(&cfg, &Expected::default());
    println!("acceptance (seed {})", report.seed);
    for c in &report.criteria {
        println!("{}", c.line());
        for f in c.failures.iter().skip(1) {
            println!("    also: {f}");
        }
    }
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.passed).map(|c| c.item).collect();
    if failed.is_empty() {
        println!("acceptance: all {} items pass", report.criteria.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed items {failed:?}");
        ExitCode::FAILURE
    }
}
