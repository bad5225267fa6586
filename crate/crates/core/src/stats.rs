//! Aggregation of repeated probe runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Stream;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;
pub const CHANCE_ALPHA: f64 = 0.01;
/// Runs at or below chance plus this margin are dropped as degenerate.
pub const DEGENERATE_MARGIN: f64 = 0.05;
/// The degenerate-run filter only applies to cells whose median clears this.
pub const MEDIAN_GATE: f64 = 0.80;
/// Fewer runs than this are left unfiltered.
pub const MIN_RUNS_FOR_FILTER: usize = 10;
pub const DEGENERATE_REASON: &str = "degenerate-run";

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("confidence level must be in (0, 1), got {0}")]
    BadConfidence(f64),
    #[error("accuracy {acc} over {n} items is not a whole number of hits")]
    NonIntegralHits { acc: f64, n: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub index: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmittedRun {
    pub index: usize,
    pub accuracy: Option<f64>,
    pub reason: String,
}

/// All runs of one matrix cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSet {
    pub key: String,
    /// Number of classes in the task.
    pub k: usize,
    pub n_test: usize,
    pub runs: Vec<Run>,
    pub omitted: Vec<OmittedRun>,
}

impl RunSet {
    pub fn new(key: impl Into<String>, k: usize, n_test: usize) -> Self {
        RunSet {
            key: key.into(),
            k,
            n_test,
            runs: Vec::new(),
            omitted: Vec::new(),
        }
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.accuracy).collect()
    }

    pub fn chance(&self) -> f64 {
        1.0 / self.k as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceTest {
    pub p_value: f64,
    pub at_chance: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub key: String,
    pub n_runs_kept: usize,
    pub n_runs_omitted: usize,
    pub mean_acc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub chance_level: f64,
    pub p_value: f64,
    pub at_chance: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Drops degenerate runs from cells that otherwise learned the task.
pub fn filter_outliers(rs: &RunSet) -> RunSet {
    let mut out = rs.clone();
    if rs.runs.len() < MIN_RUNS_FOR_FILTER {
        return out;
    }
    if median(&rs.accuracies()) < MEDIAN_GATE {
        return out;
    }
    let cut = rs.chance() + DEGENERATE_MARGIN + 1e-12;
    let (keep, drop): (Vec<Run>, Vec<Run>) = rs.runs.iter().cloned().partition(|r| r.accuracy > cut);
    out.runs = keep;
    out.omitted.extend(drop.into_iter().map(|r| OmittedRun {
        index: r.index,
        accuracy: Some(r.accuracy),
        reason: DEGENERATE_REASON.to_owned(),
    }));
    out
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 1].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap interval of the mean.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64), StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: values.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadConfidence(level));
    }
    if resamples == 0 {
        return Err(StatsError::Invalid("resamples must be positive".into()));
    }
    // sort first so the result does not depend on input order
    let mut data = values.to_vec();
    data.sort_by(f64::total_cmp);
    let n = data.len();
    let mut rng = Stream::root(seed).tag("bootstrap").rng();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let s: f64 = (0..n).map(|_| data[rand::Rng::random_range(&mut rng, 0..n)]).sum();
            s / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok((percentile_sorted(&means, tail), percentile_sorted(&means, 1.0 - tail)))
}

/// Exact two-sided binomial test of `acc * n` hits against chance `1/k`.
pub fn chance_test(acc: f64, n: usize, k: usize) -> Result<ChanceTest, StatsError> {
    if n == 0 || k < 2 {
        return Err(StatsError::Invalid("need n > 0 and k >= 2".into()));
    }
    if !(0.0..=1.0).contains(&acc) {
        return Err(StatsError::Invalid(format!("accuracy {acc} outside [0, 1]")));
    }
    let hits = acc * n as f64;
    if (hits - hits.round()).abs() > 1e-6 {
        return Err(StatsError::NonIntegralHits { acc, n });
    }
    let x = hits.round() as usize;
    let p = 1.0 / k as f64;
    // ln(i!) for i in 0..=n
    let lf: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |s, i| {
            *s += (i as f64).ln();
            Some(*s)
        }))
        .collect();
    let pmf = |i: usize| (lf[n] - lf[i] - lf[n - i] + i as f64 * p.ln() + (n - i) as f64 * (1.0 - p).ln()).exp();
    let observed = pmf(x);
    let bound = observed * (1.0 + 1e-7);
    let p_value: f64 = (0..=n).map(pmf).filter(|&q| q <= bound).sum::<f64>().min(1.0);
    Ok(ChanceTest {
        p_value,
        at_chance: p_value >= CHANCE_ALPHA,
    })
}

/// Mean, 95% bootstrap interval and chance test of the kept runs.
///
/// The chance test uses the mean accuracy rounded to the nearest whole hit
/// count on the test split.
pub fn summarize(rs: &RunSet, seed: u64) -> Result<ProbeResult, StatsError> {
    let accs = rs.accuracies();
    if accs.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: accs.len() });
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let (lo, hi) = bootstrap_ci(&accs, 0.95, BOOTSTRAP_RESAMPLES, seed)?;
    let ci_low = lo.min(mean).clamp(0.0, 1.0);
    let ci_high = hi.max(mean).clamp(0.0, 1.0);
    let hits = (mean * rs.n_test as f64).round() / rs.n_test as f64;
    let ct = chance_test(hits, rs.n_test, rs.k)?;
    Ok(ProbeResult {
        key: rs.key.clone(),
        n_runs_kept: rs.runs.len(),
        n_runs_omitted: rs.omitted.len(),
        mean_acc: mean,
        ci_low,
        ci_high,
        chance_level: rs.chance(),
        p_value: ct.p_value,
        at_chance: ct.at_chance,
    })
}
