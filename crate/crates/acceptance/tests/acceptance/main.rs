//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

mod case_studies;
mod composition;
mod crypto;
mod durability;
mod env;
mod merkle;
mod standalone;
mod state_machine;
mod threats;

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> String,
}

const CRITERIA: &[Criterion] = &[
    Criterion {
        name: "merkle proofs match brute-force recomputation",
        limit: Some(Duration::from_secs(10)),
        run: merkle::run,
    },
    Criterion { name: "crypto round-trips and mutations", limit: Some(Duration::from_secs(30)), run: crypto::run },
    Criterion { name: "certification state machine", limit: None, run: state_machine::run },
    Criterion { name: "threat matrix scenarios fail closed", limit: None, run: threats::run },
    Criterion { name: "case-study regressions", limit: None, run: case_studies::run },
    Criterion { name: "composition soundness", limit: Some(Duration::from_secs(60)), run: composition::run },
    Criterion { name: "durability across kill and restart", limit: None, run: durability::run },
    Criterion { name: "suite runs without the dashboard", limit: None, run: standalone::run },
];

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<String>()
        .cloned()
        .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panic".into())
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if std::env::args().any(|a| a == "--list") {
        for (i, c) in CRITERIA.iter().enumerate() {
            println!("{}: {}", i + 1, c.name);
        }
        return;
    }
    let default_hook = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    let mut ran = 0;
    for (i, c) in CRITERIA.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(detail) => match c.limit {
                Some(limit) if elapsed > limit => (false, format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
                _ => (true, detail),
            },
            Err(p) => (false, panic_message(p.as_ref())),
        };
        if !pass {
            failed += 1;
        }
        let limit = c.limit.map(|l| format!(" < {}s", l.as_secs())).unwrap_or_default();
        println!(
            "{} [{}] {} ({:.2}s{limit}): {}",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            c.name,
            elapsed.as_secs_f64(),
            detail
        );
    }
    panic::set_hook(default_hook);
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
