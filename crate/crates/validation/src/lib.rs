//! Reporting helpers for the acceptance suite: one verdict line per check,
//! plus summaries over sweep records.

use std::fmt;
use std::time::Duration;

use bvmlab_harness::RunRecord;

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub id: usize,
    pub title: &'static str,
    /// The measured property holds.
    pub holds: bool,
    pub elapsed: Duration,
    pub budget: Duration,
    pub detail: String,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.holds && self.elapsed < self.budget
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{status}] {:>2} {:<34} {:>8.2}s (limit {:>3}s)  {}",
            self.id,
            self.title,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

/// Values of `metric` at sample size `n`, in replicate order; error rows excluded.
pub fn values(records: &[RunRecord], metric: &str, n: usize) -> Vec<f64> {
    records.iter().filter(|r| r.metric == metric && r.n == n).map(|r| r.value).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Median (mean of the middle pair for even lengths).
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len().is_multiple_of(2) {
        0.5 * (s[m - 1] + s[m])
    } else {
        s[m]
    }
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}
