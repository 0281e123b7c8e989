//! Attack-strength diagnostics and per-step training metrics.
//!
//! The attack strength of a step is the batch-mean clean success minus the
//! batch-mean hinted success, in percentage points. Steps above a threshold
//! (5 pp by default) are strong-attack steps; the summary reports how often
//! they occur, their longest run, and whether they thin out over training.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{softmax, PolicyParams, RoleContext};
use crate::tasks::TaskPool;

pub const DEFAULT_THRESHOLDS: [f64; 3] = [3.0, 4.0, 5.0];
pub const STRONG_ATTACK_PP: f64 = 5.0;
pub const SMOOTHING_WINDOW: usize = 21;

/// Statistics of one stream during one collection step. Update fields are
/// `None` when the stream did not flush.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub queue_len: usize,
    pub produced: usize,
    pub flushed: bool,
    pub evicted: usize,
    pub suspended: bool,
    pub loss: Option<f64>,
    pub grad_norm: Option<f64>,
    pub clip_frac: Option<f64>,
    pub entropy: Option<f64>,
    pub approx_kl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub optimizer_step: u64,
    pub p1_bar: f64,
    pub p3_bar: f64,
    pub delta_attack: f64,
    pub clean: StreamMetrics,
    pub adversary: StreamMetrics,
    pub robust: StreamMetrics,
    pub mastered_count: usize,
    pub active_pool_size: usize,
    /// Exact clean success of the post-step policy, averaged over the pool.
    pub pool_clean_success: f64,
    /// Exact expected flip rate of the post-step policy under its own hints.
    pub pool_flip_rate: f64,
    pub wall_ms: u64,
}

impl StepMetrics {
    pub fn new(step: u64, p1_bar: f64, p3_bar: f64) -> Self {
        StepMetrics {
            step,
            optimizer_step: 0,
            p1_bar,
            p3_bar,
            delta_attack: attack_strength(p1_bar, p3_bar),
            clean: StreamMetrics::default(),
            adversary: StreamMetrics::default(),
            robust: StreamMetrics::default(),
            mastered_count: 0,
            active_pool_size: 0,
            pool_clean_success: 0.0,
            pool_flip_rate: 0.0,
            wall_ms: 0,
        }
    }

    /// Recomputed from the stored batch means, ignoring the stored field.
    pub fn attack(&self) -> f64 {
        attack_strength(self.p1_bar, self.p3_bar)
    }
}

/// `p1_bar - p3_bar` in percentage points.
pub fn attack_strength(p1_bar: f64, p3_bar: f64) -> f64 {
    100.0 * (p1_bar - p3_bar)
}

/// Fraction of steps whose attack strength exceeds `threshold_pp`.
pub fn tail_frequency(trace: &[f64], threshold_pp: f64) -> f64 {
    assert!(!trace.is_empty(), "empty trace");
    trace.iter().filter(|d| **d > threshold_pp).count() as f64 / trace.len() as f64
}

pub fn longest_streak(trace: &[f64], threshold_pp: f64) -> usize {
    let mut best = 0;
    let mut run = 0;
    for d in trace {
        if *d > threshold_pp {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationSplit {
    /// Strong-attack fraction over the first ceil(n/2) steps.
    pub early: f64,
    pub late: f64,
    /// OLS slope of the smoothed strong-attack indicator, in %/step.
    pub slope: f64,
}

/// Trailing moving average over full windows; `window` is clamped to the
/// series length.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.clamp(1, series.len().max(1));
    series.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

/// Ordinary least-squares slope of `y` against `x0, x0+1, ...`; zero when
/// fewer than two points.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let xm = (n as f64 - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

pub fn saturation_split(trace: &[f64], threshold_pp: f64) -> SaturationSplit {
    assert!(trace.len() >= 2, "saturation split needs at least two steps");
    let half = trace.len().div_ceil(2);
    let indicator: Vec<f64> = trace.iter().map(|d| f64::from(u8::from(*d > threshold_pp))).collect();
    let smoothed = moving_average(&indicator, SMOOTHING_WINDOW);
    SaturationSplit {
        early: tail_frequency(&trace[..half], threshold_pp),
        late: tail_frequency(&trace[half..], threshold_pp),
        slope: 100.0 * ols_slope(&smoothed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub threshold_pp: f64,
    pub tail_frequency: f64,
    pub longest_streak: usize,
    pub early: f64,
    pub late: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub steps: usize,
    pub mean_attack_pp: f64,
    pub rows: Vec<ThresholdRow>,
}

pub fn summarize(trace: &[f64], thresholds: &[f64]) -> Summary {
    assert!(trace.len() >= 2, "summary needs at least two steps");
    let rows = thresholds
        .iter()
        .map(|&t| {
            let split = saturation_split(trace, t);
            ThresholdRow {
                threshold_pp: t,
                tail_frequency: tail_frequency(trace, t),
                longest_streak: longest_streak(trace, t),
                early: split.early,
                late: split.late,
                slope: split.slope,
            }
        })
        .collect();
    Summary {
        steps: trace.len(),
        mean_attack_pp: trace.iter().sum::<f64>() / trace.len() as f64,
        rows,
    }
}

impl Summary {
    pub fn to_text(&self) -> String {
        let mut s = format!("steps {}  mean attack {:.3} pp\n", self.steps, self.mean_attack_pp);
        let _ = writeln!(
            s,
            "{:>8} {:>10} {:>8} {:>8} {:>8} {:>10}",
            "theta", "tail", "streak", "early", "late", "slope%/st"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>8.1} {:>10.4} {:>8} {:>8.4} {:>8.4} {:>10.5}",
                r.threshold_pp, r.tail_frequency, r.longest_streak, r.early, r.late, r.slope
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold_pp,tail_frequency,longest_streak,early,late,slope\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.threshold_pp, r.tail_frequency, r.longest_streak, r.early, r.late, r.slope
            );
        }
        s
    }
}

pub fn attack_trace(metrics: &[StepMetrics]) -> Vec<f64> {
    metrics.iter().map(StepMetrics::attack).collect()
}

pub fn read_metrics<R: BufRead>(reader: R) -> Result<Vec<StepMetrics>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let m = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        out.push(m);
    }
    Ok(out)
}

/// Summary of a stored metrics file.
pub fn replay<R: BufRead>(reader: R, thresholds: &[f64]) -> Result<Summary> {
    let metrics = read_metrics(reader)?;
    if metrics.len() < 2 {
        return Err(Error::parse(metrics.len(), "replay needs at least two step records"));
    }
    Ok(summarize(&attack_trace(&metrics), thresholds))
}

/// Exact clean success probability averaged over the pool.
pub fn pool_clean_success(params: &PolicyParams, pool: &TaskPool) -> f64 {
    pool.questions
        .iter()
        .map(|q| params.distribution(&RoleContext::clean(q.id), 0)[q.truth])
        .sum::<f64>()
        / pool.len() as f64
}

/// Expected `max(0, p_clean - p_hinted(h))` with `h` drawn from the
/// adversary, for one question.
pub fn flip_rate(params: &PolicyParams, pool: &TaskPool, q: usize) -> f64 {
    let question = pool.get(q);
    let shape = params.shape();
    let clean = params.clean_row(q);
    let p_clean = softmax(clean)[question.truth];
    let suggest = params.distribution(&RoleContext::adversary(q), 0);
    let strength = if shape.hint_len >= 2 {
        params.distribution(&RoleContext::adversary(q), 1)
    } else {
        vec![1.0]
    };
    let trust = params.trust(q);
    let mut total = 0.0;
    for (a, pa) in suggest.iter().enumerate() {
        for (s, ps) in strength.iter().enumerate() {
            let mut z = clean.to_vec();
            z[a] += trust * params.strength_scale()[s];
            let p_hinted = softmax(&z)[question.truth];
            total += pa * ps * (p_clean - p_hinted).max(0.0);
        }
    }
    total
}

pub fn pool_flip_rate(params: &PolicyParams, pool: &TaskPool) -> f64 {
    (0..pool.len()).map(|q| flip_rate(params, pool, q)).sum::<f64>() / pool.len() as f64
}
