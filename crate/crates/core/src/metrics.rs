//! Error statistics, model-usage counts and run comparisons.

use crate::famm::MotionModel;
use crate::geodesy::GeodeticPosition;
use crate::pipeline::{RunSummary, StepRecord};
use crate::sim::{Dataset, SimError};
use std::fmt;

/// Mean and sample standard deviation (`n - 1` denominator). NaN for an
/// empty slice; the deviation of a single value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Steps spent in each of the nine models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelHistogram([usize; 9]);

impl ModelHistogram {
    pub fn add(&mut self, m: MotionModel) {
        self.0[m.index()] += 1;
    }

    pub fn count(&self, m: MotionModel) -> usize {
        self.0[m.index()]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn fraction(&self, m: MotionModel) -> f64 {
        self.count(m) as f64 / self.total().max(1) as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (MotionModel, usize)> + '_ {
        MotionModel::all().map(|m| (m, self.count(m)))
    }
}

impl fmt::Display for ModelHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|(m, n)| format!("{m}={n}")).collect();
        f.write_str(&parts.join(" "))
    }
}

/// Share of steps after `warmup` that used `model`.
pub fn model_share(steps: &[StepRecord], warmup: usize, model: MotionModel) -> f64 {
    let tail = &steps[warmup.min(steps.len())..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().filter(|s| s.model == model).count() as f64 / tail.len() as f64
}

/// Distance from each estimate to the truth, both in the run's frame.
pub fn position_errors(steps: &[StepRecord], origin: &GeodeticPosition, dataset: &Dataset) -> Result<Vec<f64>, SimError> {
    steps
        .iter()
        .map(|s| Ok((s.position - dataset.truth_in_frame(origin, s.t)?).norm()))
        .collect()
}

/// Distance between the estimate `settle` steps after the start and the
/// final estimate. Both ends of the loop regimes are stationary, so this
/// measures accumulated drift rather than start-up transients.
pub fn loop_gap(steps: &[StepRecord], settle: usize) -> f64 {
    match (steps.get(settle), steps.last()) {
        (Some(a), Some(b)) => (b.position - a.position).norm(),
        _ => f64::NAN,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trend {
    Up,
    Down,
    Same,
}

impl Trend {
    pub fn of(before: f64, after: f64) -> Trend {
        match after.partial_cmp(&before) {
            Some(std::cmp::Ordering::Greater) => Trend::Up,
            Some(std::cmp::Ordering::Less) => Trend::Down,
            _ => Trend::Same,
        }
    }

    pub fn arrow(self) -> &'static str {
        match self {
            Trend::Up => "↑",
            Trend::Down => "↓",
            Trend::Same => "",
        }
    }
}

/// One metric of a side-by-side comparison: `a` is the baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub metric: &'static str,
    pub a: f64,
    pub b: f64,
    pub trend: Trend,
}

pub fn compare_summaries(a: &RunSummary, b: &RunSummary) -> Vec<CompareRow> {
    let row = |metric, a: f64, b: f64| CompareRow {
        metric,
        a,
        b,
        trend: Trend::of(a, b),
    };
    vec![
        row("mean_error", a.mean_error, b.mean_error),
        row("std_error", a.std_error, b.std_error),
        row("final_trace", a.final_trace, b.final_trace),
    ]
}
