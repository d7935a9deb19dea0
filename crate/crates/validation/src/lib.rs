//! Bookkeeping for the acceptance run: timed checks that print one verdict
//! line each.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Outcome of one acceptance check.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Runs `check`, prints `criterion <id> PASS|FAIL ...` and returns whether it
/// passed. A panic counts as a failure.
pub fn run_check(id: usize, title: &str, check: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Verdict::new(false, format!("panicked: {msg}"))
    });
    println!("{}", verdict_line(id, title, &v, start.elapsed()));
    v.pass
}

pub fn verdict_line(id: usize, title: &str, v: &Verdict, elapsed: Duration) -> String {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    format!("criterion {id} {tag} {title} [{:.1}s]: {}", elapsed.as_secs_f64(), v.detail)
}

/// F1 score of a selected set against the true set.
pub fn f1(selected: &[bool], truth: &[bool]) -> f64 {
    assert_eq!(selected.len(), truth.len());
    let tp = selected.iter().zip(truth).filter(|(s, t)| **s && **t).count() as f64;
    let fp = selected.iter().zip(truth).filter(|(s, t)| **s && !**t).count() as f64;
    let fneg = selected.iter().zip(truth).filter(|(s, t)| !**s && **t).count() as f64;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fneg)
}

/// `(a - b) / a`: how far `b` sits below `a`, relative to `a`.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b) / a
}
