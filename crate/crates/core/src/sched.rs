//! Rollout scheduling simulator.
//!
//! Cost model: a continuous batch with a fixed number of slots, FIFO
//! admission, no preemption, and one token per active sequence per step. A
//! batch with mixed lengths leaves slots idle once its short sequences finish
//! ("bubbles"). Running the short hint round in those bubbles, and verifying
//! clean rewards while the hinted round generates, shortens the critical path
//! from `R1 + verify + R2 + R3` to `T12 + R3`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedScenario {
    pub r1_lengths: Vec<u64>,
    pub r2_lengths: Vec<u64>,
    pub r3_lengths: Vec<u64>,
    pub capacity: usize,
    #[serde(default)]
    pub verify_cost: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedResult {
    pub t_sequential: u64,
    pub t_merged: u64,
    pub t12: u64,
    pub t_r1: u64,
    pub bubble_fill: f64,
}

impl SchedScenario {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("r1_lengths", &self.r1_lengths), ("r2_lengths", &self.r2_lengths), ("r3_lengths", &self.r3_lengths)] {
            if v.is_empty() {
                return Err(Error::config(key, "must contain at least one sequence"));
            }
            if v.contains(&0) {
                return Err(Error::config(key, "lengths must be at least 1"));
            }
        }
        if self.capacity == 0 {
            return Err(Error::config("capacity", "must be at least 1"));
        }
        Ok(())
    }

    /// Sufficient condition for `t12 == t_r1`: a spare slot beyond R1, no hint
    /// longer than the gap after the shortest clean sequence, and at most
    /// `capacity - |R1| + 1` hints (at most one of them waits for a slot).
    pub fn absorbs_hints(&self) -> bool {
        let n1 = self.r1_lengths.len();
        let t_r1 = *self.r1_lengths.iter().max().unwrap_or(&0);
        let min1 = *self.r1_lengths.iter().min().unwrap_or(&0);
        self.capacity > n1
            && self.r2_lengths.iter().all(|l| *l <= t_r1 - min1)
            && self.r2_lengths.len() + n1 <= self.capacity + 1
    }
}

/// Start and finish step of every sequence, admitted in order.
pub fn schedule(lengths: &[u64], capacity: usize) -> Vec<(u64, u64)> {
    assert!(capacity >= 1, "capacity must be positive");
    let mut slots: BinaryHeap<Reverse<u64>> = BinaryHeap::with_capacity(capacity);
    lengths
        .iter()
        .map(|&len| {
            let start = if slots.len() < capacity {
                0
            } else {
                slots.pop().expect("nonempty heap").0
            };
            let finish = start + len;
            slots.push(Reverse(finish));
            (start, finish)
        })
        .collect()
}

/// Makespan of one continuous batch.
pub fn simulate_batch(lengths: &[u64], capacity: usize) -> u64 {
    schedule(lengths, capacity).iter().map(|s| s.1).max().unwrap_or(0)
}

fn merged_parts(sc: &SchedScenario) -> (u64, u64, f64) {
    let n1 = sc.r1_lengths.len();
    let joint: Vec<u64> = sc.r1_lengths.iter().chain(&sc.r2_lengths).copied().collect();
    let times = schedule(&joint, sc.capacity);
    let t_r1 = times[..n1].iter().map(|s| s.1).max().unwrap_or(0);
    let t12 = times.iter().map(|s| s.1).max().unwrap_or(0);
    let served: u64 = times[n1..]
        .iter()
        .map(|&(start, finish)| finish.min(t_r1).saturating_sub(start))
        .sum();
    let total: u64 = sc.r2_lengths.iter().sum();
    (t12, t_r1, served as f64 / total as f64)
}

/// Both schedules for one scenario.
pub fn simulate(sc: &SchedScenario) -> Result<SchedResult> {
    sc.validate()?;
    let b1 = simulate_batch(&sc.r1_lengths, sc.capacity);
    let b2 = simulate_batch(&sc.r2_lengths, sc.capacity);
    let b3 = simulate_batch(&sc.r3_lengths, sc.capacity);
    let (t12, t_r1, bubble_fill) = merged_parts(sc);
    debug_assert_eq!(t_r1, b1);
    Ok(SchedResult {
        t_sequential: b1 + sc.verify_cost + b2 + b3,
        t_merged: t12 + b3 + sc.verify_cost.saturating_sub(b3),
        t12,
        t_r1,
        bubble_fill,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Target ratios of mean hint length to mean clean length.
    pub ratios: Vec<f64>,
    #[serde(default = "SweepSpec::default_r1")]
    pub r1_count: usize,
    #[serde(default = "SweepSpec::default_r2")]
    pub r2_count: usize,
    #[serde(default = "SweepSpec::default_r1")]
    pub r3_count: usize,
    #[serde(default = "SweepSpec::default_capacity")]
    pub capacity: usize,
    #[serde(default = "SweepSpec::default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SweepSpec {
    fn default_r1() -> usize {
        64
    }
    fn default_r2() -> usize {
        32
    }
    fn default_capacity() -> usize {
        128
    }
    fn default_trials() -> usize {
        100
    }

    pub fn with_ratios(ratios: Vec<f64>) -> Self {
        SweepSpec {
            ratios,
            r1_count: Self::default_r1(),
            r2_count: Self::default_r2(),
            r3_count: Self::default_r1(),
            capacity: Self::default_capacity(),
            trials: Self::default_trials(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub t_sequential: f64,
    pub t_merged: f64,
    pub t12_over_t_r1: f64,
    pub speedup: f64,
    pub bubble_fill: f64,
}

/// Clean and hinted lengths uniform on 64..=512; hint lengths uniform on
/// `[1, 2*ratio*288]` so their mean tracks `ratio` times the clean mean.
pub fn sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::config("ratios", "must be positive"));
    }
    if spec.r1_count == 0 || spec.r2_count == 0 || spec.r3_count == 0 || spec.capacity == 0 || spec.trials == 0 {
        return Err(Error::config("sweep", "counts, capacity and trials must be at least 1"));
    }
    let mut rows = Vec::with_capacity(spec.ratios.len());
    for (i, &ratio) in spec.ratios.iter().enumerate() {
        let hi = ((2.0 * ratio * 288.0).round() as u64).max(1);
        let mut acc = [0.0f64; 5];
        for trial in 0..spec.trials {
            let mut r = rng::stream(spec.seed, "sweep", i as u64, trial as u64);
            let sc = SchedScenario {
                r1_lengths: (0..spec.r1_count).map(|_| r.gen_range(64..=512)).collect(),
                r2_lengths: (0..spec.r2_count).map(|_| r.gen_range(1..=hi)).collect(),
                r3_lengths: (0..spec.r3_count).map(|_| r.gen_range(64..=512)).collect(),
                capacity: spec.capacity,
                verify_cost: 0,
            };
            let res = simulate(&sc)?;
            acc[0] += res.t_sequential as f64;
            acc[1] += res.t_merged as f64;
            acc[2] += res.t12 as f64 / res.t_r1 as f64;
            acc[3] += res.t_sequential as f64 / res.t_merged as f64;
            acc[4] += res.bubble_fill;
        }
        let n = spec.trials as f64;
        rows.push(SweepRow {
            ratio,
            t_sequential: acc[0] / n,
            t_merged: acc[1] / n,
            t12_over_t_r1: acc[2] / n,
            speedup: acc[3] / n,
            bubble_fill: acc[4] / n,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("ratio,t_sequential,t_merged,t12_over_t_r1,speedup,bubble_fill\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{:.3},{:.6},{:.6},{:.6}\n",
            r.ratio, r.t_sequential, r.t_merged, r.t12_over_t_r1, r.speedup, r.bubble_fill
        ));
    }
    out
}
