//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

mod data;
mod decoding;
mod metrics;
mod model;
mod smoke;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let checks: [(u32, &str, Check); 11] = [
        (1, "retrieval fidelity", data::retrieval_fidelity),
        (2, "string metric oracles", metrics::string_oracles),
        (3, "distribution invariants", model::distribution_invariants),
        (4, "gradient checks", model::gradient_checks),
        (5, "mask leak freedom", model::mask_leak_freedom),
        (6, "decoding oracles", decoding::decoding_oracles),
        (7, "rerank behavior", decoding::rerank_behavior),
        (8, "overfit smoke tests", smoke::overfit),
        (9, "metric suite oracles", metrics::metric_suite),
        (10, "augmentation statistics", data::augmentation_stats),
        (11, "pipeline gating", smoke::pipeline_gating),
    ];
    let only: Vec<u32> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
        .unwrap_or_default();

    let mut failed = 0;
    for (n, name, check) in checks {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::new(false, format!("panicked: {msg}"))
            });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {n} {name}: {verdict} ({}; {:.1}s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
        failed += usize::from(!outcome.pass);
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
