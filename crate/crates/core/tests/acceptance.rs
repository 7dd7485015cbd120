//! Release gate: one line per acceptance criterion, nonzero exit on any failure.

use std::process::ExitCode;

use iupsim::closed_form::IdlerPhaseSign;
use iupsim::oracle::QuadratureSpec;
use iupsim::selftest::{self, CheckOutcome, SelftestOptions};

struct Variant {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn variant(name: &'static str, passed: bool, detail: String) -> Variant {
    Variant { name, passed, detail }
}

fn main() -> ExitCode {
    let opts = SelftestOptions::default();
    let checks: Vec<CheckOutcome> = selftest::run_all(&opts);
    for c in &checks {
        println!("{c}");
    }
    let mut variants = Vec::new();

    // The alternative cross-term sign must be caught by the oracle comparison.
    let minus = selftest::oracle_equivalence(&SelftestOptions {
        idler_sign: IdlerPhaseSign::Minus,
        ..opts
    });
    variants.push(variant(
        "minus idler sign is rejected by the oracle",
        !minus.passed,
        minus.detail,
    ));

    // A starved rule must surface as non-convergence, not as a silent mismatch.
    let starved = selftest::oracle_equivalence(&SelftestOptions {
        quadrature: QuadratureSpec::gauss_hermite(8),
        ..opts
    });
    variants.push(variant(
        "8-node quadrature reports non-convergence",
        !starved.passed && starved.detail.contains("did not converge"),
        starved.detail,
    ));

    for v in &variants {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] variant: {}: {}", v.name, v.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count() + variants.iter().filter(|v| !v.passed).count();
    let total = checks.len() + variants.len();
    println!("acceptance: {} passed, {failed} failed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
