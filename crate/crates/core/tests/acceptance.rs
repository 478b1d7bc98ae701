//! Acceptance suite: one line per criterion, non-zero exit on any failure.

use std::process::ExitCode;

use encircle_core::verify::Verifier;

fn main() -> ExitCode {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let verifier = Verifier::default();
    let results = verifier.run(filter.as_deref());
    for r in &results {
        println!("{}", r.line());
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
