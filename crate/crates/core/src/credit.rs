//! Credit assignment: group-relative advantages, the adversary's
//! hint-effectiveness reward and the zero-advantage filter.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::bundle::RolloutBundle;
use crate::policy::Trajectory;

pub const DEFAULT_EPS_STD: f64 = 1e-6;
/// Adversary rewards at or below this magnitude carry no signal.
pub const ZERO_GAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Clean,
    Adversary,
    Robust,
}

impl Stream {
    /// Flush order within one collection step.
    pub const ALL: [Stream; 3] = [Stream::Clean, Stream::Adversary, Stream::Robust];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Clean => "clean",
            Stream::Adversary => "adversary",
            Stream::Robust => "robust",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub stream: Stream,
    pub question: usize,
    pub hint_index: Option<usize>,
    pub trajectories: Vec<Trajectory>,
    pub advantages: Vec<f64>,
    pub birth_step: u64,
}

impl RolloutGroup {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// `(R_i - mean) / (std + eps)` with the population (divisor G) deviation.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Vec<f64> {
    assert!(!rewards.is_empty(), "advantages need at least one reward");
    assert!(eps > 0.0, "eps must be positive");
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + eps;
    rewards.iter().map(|r| (r - mean) / denom).collect()
}

/// Hint-effectiveness gap `p_clean - p_hinted`.
pub fn adversary_reward(p_clean: f64, p_hinted: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&p_clean) && (0.0..=1.0).contains(&p_hinted));
    p_clean - p_hinted
}

/// One clean group, one adversary group holding every hint with its gap as
/// advantage, and one robust group per hint standardized within that hint.
pub fn build_candidate_groups(bundle: &RolloutBundle, eps: f64) -> Vec<RolloutGroup> {
    let q = bundle.question.id;
    let step = bundle.collection_step;
    let mut groups = Vec::with_capacity(2 + bundle.hints.len());

    let clean_rewards: Vec<f64> = bundle.clean.iter().map(Trajectory::reward).collect();
    groups.push(RolloutGroup {
        stream: Stream::Clean,
        question: q,
        hint_index: None,
        trajectories: bundle.clean.clone(),
        advantages: group_advantages(&clean_rewards, eps),
        birth_step: step,
    });

    let gaps: Vec<f64> = bundle
        .p_hinted
        .iter()
        .map(|p| adversary_reward(bundle.p_clean, *p))
        .collect();
    let hints = bundle
        .hints
        .iter()
        .zip(&gaps)
        .map(|(h, gap)| Trajectory {
            reward: Some(*gap),
            ..h.clone()
        })
        .collect();
    groups.push(RolloutGroup {
        stream: Stream::Adversary,
        question: q,
        hint_index: None,
        trajectories: hints,
        advantages: gaps,
        birth_step: step,
    });

    for (k, hinted) in bundle.hinted.iter().enumerate() {
        let rewards: Vec<f64> = hinted.iter().map(Trajectory::reward).collect();
        groups.push(RolloutGroup {
            stream: Stream::Robust,
            question: q,
            hint_index: Some(k),
            trajectories: hinted.clone(),
            advantages: group_advantages(&rewards, eps),
            birth_step: step,
        });
    }
    groups
}

/// Drops clean and robust groups whose rewards are all equal, and adversary
/// hints whose gap is (numerically) zero. Empty adversary groups vanish.
pub fn filter_zero_advantage(groups: Vec<RolloutGroup>) -> Vec<RolloutGroup> {
    groups
        .into_iter()
        .filter_map(|mut g| match g.stream {
            Stream::Clean | Stream::Robust => {
                let first = g.trajectories.first().map(Trajectory::reward);
                let uniform = g.trajectories.iter().all(|t| Some(t.reward()) == first);
                (!uniform).then_some(g)
            }
            Stream::Adversary => {
                let (trajectories, advantages): (Vec<_>, Vec<_>) = g
                    .trajectories
                    .into_iter()
                    .zip(g.advantages)
                    .filter(|(_, a)| a.abs() >= ZERO_GAP)
                    .unzip();
                g.trajectories = trajectories;
                g.advantages = advantages;
                (!g.trajectories.is_empty()).then_some(g)
            }
        })
        .collect()
}
