//! Mastery-aware sampling.
//!
//! A question is mastered at a step when its clean answers are all correct and
//! so are the answers under every hint that survived zero-advantage
//! filtering. After `k_m` consecutive mastered observations it is retired from
//! the active pool. Retirement is operational, so an audit re-samples retired
//! questions afterwards.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, RoleContext};
use crate::rng;
use crate::tasks::TaskPool;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MasteryMode {
    /// Clean and every surviving hinted group must be all-correct.
    #[default]
    Robust,
    /// Clean success alone decides.
    CleanOnly,
}

pub fn mastery_indicator(p_clean: f64, surviving_hinted: &[f64]) -> bool {
    p_clean == 1.0 && surviving_hinted.iter().all(|p| *p == 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MasteryTracker {
    pub k_m: u32,
    pub mode: MasteryMode,
    streak: BTreeMap<usize, u32>,
    mastered: BTreeSet<usize>,
    retired_at: BTreeMap<usize, u64>,
}

impl MasteryTracker {
    pub fn new(k_m: u32, mode: MasteryMode) -> Self {
        assert!(k_m >= 1, "k_m must be at least 1");
        MasteryTracker {
            k_m,
            mode,
            streak: BTreeMap::new(),
            mastered: BTreeSet::new(),
            retired_at: BTreeMap::new(),
        }
    }

    /// Records one observation and returns whether `q` was retired by it.
    pub fn observe(&mut self, q: usize, indicator: bool, step: u64) -> bool {
        assert!(!self.mastered.contains(&q), "question {q} is already mastered");
        let streak = self.streak.entry(q).or_insert(0);
        if !indicator {
            *streak = 0;
            return false;
        }
        *streak += 1;
        if *streak >= self.k_m {
            self.mastered.insert(q);
            self.retired_at.insert(q, step);
            true
        } else {
            false
        }
    }

    /// Observation from the rollout statistics of one bundle, honoring the mode.
    pub fn observe_rates(&mut self, q: usize, p_clean: f64, surviving_hinted: &[f64], step: u64) -> bool {
        let ind = match self.mode {
            MasteryMode::Robust => mastery_indicator(p_clean, surviving_hinted),
            MasteryMode::CleanOnly => p_clean == 1.0,
        };
        self.observe(q, ind, step)
    }

    pub fn streak(&self, q: usize) -> u32 {
        self.streak.get(&q).copied().unwrap_or(0)
    }

    pub fn is_mastered(&self, q: usize) -> bool {
        self.mastered.contains(&q)
    }

    pub fn mastered(&self) -> &BTreeSet<usize> {
        &self.mastered
    }

    pub fn retired_at(&self) -> &BTreeMap<usize, u64> {
        &self.retired_at
    }

    pub fn mastered_count(&self) -> usize {
        self.mastered.len()
    }

    /// Number of questions retired at or before `step`.
    pub fn mastered_count_at(&self, step: u64) -> usize {
        self.retired_at.values().filter(|s| **s <= step).count()
    }

    pub fn active(&self, pool_size: usize) -> Vec<usize> {
        (0..pool_size).filter(|q| !self.mastered.contains(q)).collect()
    }

    /// Uniform sample without replacement from the active pool, in ascending id order.
    pub fn sample_active<R: Rng + ?Sized>(&self, pool_size: usize, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        let active = self.active(pool_size);
        if active.is_empty() {
            return Err(Error::TrainingComplete);
        }
        let n = batch_size.min(active.len());
        let mut picked: Vec<usize> = index::sample(rng, active.len(), n).into_iter().map(|i| active[i]).collect();
        picked.sort_unstable();
        Ok(picked)
    }

    /// Removes questions whose audit mean falls below `threshold` from the
    /// mastered set. Off in the default configuration.
    pub fn readmit(&mut self, report: &AuditReport, threshold: f64) -> Vec<usize> {
        let mut back = Vec::new();
        for r in &report.questions {
            if r.rate < threshold && self.mastered.remove(&r.question) {
                self.retired_at.remove(&r.question);
                self.streak.insert(r.question, 0);
                back.push(r.question);
            }
        }
        back
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditQuestion {
    pub question: usize,
    pub retired_at: u64,
    pub correct: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub questions: usize,
    pub n: usize,
    pub rollouts: usize,
    /// Mean per-rollout accuracy over the audited questions.
    pub mean_at_n: f64,
    /// Fraction with at least one correct rollout.
    pub pass_at_n: f64,
    /// Fraction with all n correct.
    pub all_correct: f64,
    /// Fraction with exactly n-1 correct.
    pub one_miss: f64,
    /// Fraction with fewer than ceil(n/2) correct.
    pub below_half: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub questions: Vec<AuditQuestion>,
    pub summary: AuditSummary,
}

/// Draws `n` fresh clean rollouts for every mastered question.
pub fn audit(tracker: &MasteryTracker, params: &PolicyParams, pool: &TaskPool, n: usize, seed: u64) -> AuditReport {
    assert!(n >= 1, "audit needs at least one rollout per question");
    let mut rows = Vec::new();
    for (&q, &step) in tracker.retired_at() {
        let mut r = rng::stream(seed, rng::purpose::AUDIT, q as u64, step);
        let trajs = params.sample(pool.get(q), &RoleContext::clean(q), n, step, &mut r);
        let correct = trajs.iter().filter(|t| t.reward() == 1.0).count();
        rows.push(AuditQuestion {
            question: q,
            retired_at: step,
            correct,
            rate: correct as f64 / n as f64,
        });
    }
    let summary = summarize(&rows, n);
    AuditReport { questions: rows, summary }
}

fn summarize(rows: &[AuditQuestion], n: usize) -> AuditSummary {
    let m = rows.len();
    let frac = |pred: &dyn Fn(&AuditQuestion) -> bool| {
        if m == 0 {
            0.0
        } else {
            rows.iter().filter(|r| pred(r)).count() as f64 / m as f64
        }
    };
    let half = n.div_ceil(2);
    AuditSummary {
        questions: m,
        n,
        rollouts: m * n,
        mean_at_n: if m == 0 { 0.0 } else { rows.iter().map(|r| r.rate).sum::<f64>() / m as f64 },
        pass_at_n: frac(&|r| r.correct >= 1),
        all_correct: frac(&|r| r.correct == n),
        one_miss: frac(&|r| r.correct + 1 == n),
        below_half: frac(&|r| r.correct < half),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    /// Mastered fraction of the pool after each step.
    pub per_step: Vec<f64>,
    /// Upper-bound rollout time saved at each step under the linear model.
    pub saved_time: Vec<f64>,
    /// Total saved time over the time a run without retirement would spend.
    pub cumulative_fraction: f64,
}

/// Linear upper-bound model: retiring a question saves its whole
/// R1 + G2 x R3 generation time. Real savings are smaller.
pub fn savings_estimate(tracker: &MasteryTracker, pool_size: usize, t_r1: f64, t_r3: f64, g2: usize, steps: u64) -> Savings {
    assert!(t_r1 >= 0.0 && t_r3 >= 0.0, "times must be non-negative");
    assert!(pool_size >= 1);
    let per_question = t_r1 + g2 as f64 * t_r3;
    let per_step: Vec<f64> = (0..steps)
        .map(|s| tracker.mastered_count_at(s) as f64 / pool_size as f64)
        .collect();
    let saved_time: Vec<f64> = per_step.iter().map(|f| f * per_question).collect();
    // the per-question time cancels, so the ratio is the mean mastered fraction
    let cumulative_fraction = if steps == 0 {
        0.0
    } else {
        per_step.iter().sum::<f64>() / steps as f64
    };
    Savings {
        per_step,
        saved_time,
        cumulative_fraction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::DEFAULT_STRENGTH_SCALE;
    use crate::tasks::generate_pool;
    use proptest::prelude::*;

    #[test]
    fn indicator_examples() {
        assert!(mastery_indicator(1.0, &[1.0, 1.0]));
        assert!(!mastery_indicator(1.0, &[1.0, 0.875]));
        assert!(!mastery_indicator(0.875, &[]));
        assert!(mastery_indicator(1.0, &[]));
    }

    #[test]
    fn persistence() {
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        assert!(t.observe(3, true, 0));
        assert_eq!(t.retired_at()[&3], 0);

        let mut t = MasteryTracker::new(2, MasteryMode::Robust);
        assert!(!t.observe(0, true, 0));
        assert!(!t.observe(0, false, 1));
        assert_eq!(t.streak(0), 0);
        assert!(!t.observe(0, true, 2));
        assert!(!t.is_mastered(0));

        let mut t = MasteryTracker::new(2, MasteryMode::Robust);
        assert!(!t.observe(0, true, 0));
        assert!(t.observe(0, true, 1));
    }

    #[test]
    #[should_panic(expected = "already mastered")]
    fn observing_mastered_is_a_bug() {
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        t.observe(0, true, 0);
        t.observe(0, true, 1);
    }

    #[test]
    fn clean_only_mode_ignores_hints() {
        let mut t = MasteryTracker::new(1, MasteryMode::CleanOnly);
        assert!(t.observe_rates(0, 1.0, &[0.5], 0));
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        assert!(!t.observe_rates(0, 1.0, &[0.5], 0));
    }

    #[test]
    fn sampling_examples() {
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        let mut r = rng::stream(0, "t", 0, 0);
        let perm = t.sample_active(10, 10, &mut r).unwrap();
        assert_eq!(perm, (0..10).collect::<Vec<_>>());
        for q in 0..9 {
            t.observe(q, true, 0);
        }
        assert_eq!(t.sample_active(10, 4, &mut r).unwrap(), vec![9]);
        t.observe(9, true, 1);
        assert!(matches!(t.sample_active(10, 4, &mut r), Err(Error::TrainingComplete)));
    }

    #[test]
    fn mastered_never_sampled() {
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        for q in (0..64).step_by(3) {
            t.observe(q, true, 0);
        }
        for i in 0..10_000u64 {
            let mut r = rng::stream(i, "t", 0, 0);
            let b = t.sample_active(64, 16, &mut r).unwrap();
            assert!(b.iter().all(|q| q % 3 != 0));
            assert_eq!(b.len(), 16);
        }
    }

    #[test]
    fn audit_of_deterministic_policy() {
        let pool = generate_pool(50, 4, 3).unwrap();
        let mut params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        for q in &pool.questions {
            *params.clean_mut(q.id, q.truth) = 1e6;
        }
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        for q in 0..50 {
            t.observe(q, true, q as u64);
        }
        let rep = audit(&t, &params, &pool, 8, 1);
        assert_eq!(rep.summary.rollouts, 400);
        assert_eq!(rep.summary.mean_at_n, 1.0);
        assert_eq!(rep.summary.all_correct, 1.0);
        assert_eq!(rep.summary.below_half, 0.0);
    }

    #[test]
    fn summary_columns() {
        let rows: Vec<AuditQuestion> = [8, 7, 3, 0]
            .iter()
            .enumerate()
            .map(|(i, c)| AuditQuestion { question: i, retired_at: 0, correct: *c, rate: *c as f64 / 8.0 })
            .collect();
        let s = summarize(&rows, 8);
        assert_eq!(s.mean_at_n, 18.0 / 32.0);
        assert_eq!((s.all_correct, s.one_miss, s.below_half, s.pass_at_n), (0.25, 0.25, 0.5, 0.75));
    }

    #[test]
    fn readmission() {
        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        t.observe(0, true, 0);
        t.observe(1, true, 0);
        let rep = AuditReport {
            questions: vec![
                AuditQuestion { question: 0, retired_at: 0, correct: 2, rate: 0.25 },
                AuditQuestion { question: 1, retired_at: 0, correct: 8, rate: 1.0 },
            ],
            summary: summarize(&[], 8),
        };
        assert_eq!(t.readmit(&rep, 0.5), vec![0]);
        assert_eq!(t.active(2), vec![0]);
    }

    #[test]
    fn savings_examples() {
        let t = MasteryTracker::new(1, MasteryMode::Robust);
        assert_eq!(savings_estimate(&t, 10, 1.0, 1.0, 2, 5).cumulative_fraction, 0.0);

        let mut t = MasteryTracker::new(1, MasteryMode::Robust);
        for q in 0..52 {
            t.observe(q, true, 9);
        }
        let s = savings_estimate(&t, 100, 3.0, 2.0, 2, 10);
        assert_eq!(s.per_step[9], 0.52);
        assert_eq!(s.per_step[8], 0.0);
    }

    proptest! {
        #[test]
        fn savings_invariant_to_g2(retire in proptest::collection::vec(0u64..20, 0..30), t1 in 0.1f64..50.0, t3 in 0.1f64..50.0) {
            let mut t = MasteryTracker::new(1, MasteryMode::Robust);
            for (q, s) in retire.iter().enumerate() {
                t.observe(q, true, *s);
            }
            let a = savings_estimate(&t, 40, t1, t3, 1, 20);
            for g2 in 2..6 {
                let b = savings_estimate(&t, 40, t1, t3, g2, 20);
                prop_assert_eq!(&a.per_step, &b.per_step);
                prop_assert_eq!(a.cumulative_fraction, b.cumulative_fraction);
            }
        }
    }
}
