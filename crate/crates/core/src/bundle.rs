//! Paired three-round rollout bundles.
//!
//! For one question the bundle holds G1 clean answers (R1), G2 adversary
//! hints (R2) and, for each hint, G3 answers under that hint (R3), together
//! with the clean and per-hint empirical success rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::policy::{PolicyParams, RoleContext, Trajectory};
use crate::tasks::Question;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutBundle {
    pub question: Question,
    pub clean: Vec<Trajectory>,
    pub hints: Vec<Trajectory>,
    pub hinted: Vec<Vec<Trajectory>>,
    pub p_clean: f64,
    pub p_hinted: Vec<f64>,
    pub collection_step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSizes {
    pub g1: usize,
    pub g2: usize,
    pub g3: usize,
}

impl Default for GroupSizes {
    fn default() -> Self {
        GroupSizes { g1: 8, g2: 2, g3: 8 }
    }
}

pub fn mean_reward(trajectories: &[Trajectory]) -> f64 {
    trajectories.iter().map(Trajectory::reward).sum::<f64>() / trajectories.len() as f64
}

pub fn collect_bundle<R: Rng + ?Sized>(
    params: &PolicyParams,
    question: &Question,
    sizes: GroupSizes,
    step: u64,
    rng: &mut R,
) -> RolloutBundle {
    assert!(sizes.g1 >= 1 && sizes.g2 >= 1 && sizes.g3 >= 1, "group sizes must be positive");
    let q = question.id;
    let clean = params.sample(question, &RoleContext::clean(q), sizes.g1, step, rng);
    let hints = params.sample(question, &RoleContext::adversary(q), sizes.g2, step, rng);
    let hinted: Vec<Vec<Trajectory>> = hints
        .iter()
        .map(|h| {
            let ctx = RoleContext::hinted(q, h.tokens.clone());
            params.sample(question, &ctx, sizes.g3, step, rng)
        })
        .collect();
    let p_clean = mean_reward(&clean);
    let p_hinted = hinted.iter().map(|g| mean_reward(g)).collect();
    RolloutBundle {
        question: *question,
        clean,
        hints,
        hinted,
        p_clean,
        p_hinted,
        collection_step: step,
    }
}

impl RolloutBundle {
    pub fn len(&self) -> usize {
        self.clean.len() + self.hints.len() + self.hinted.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clean_success_rate(&self) -> f64 {
        self.p_clean
    }

    pub fn hinted_success_rate(&self, k: usize) -> f64 {
        assert!(k < self.hints.len(), "hint index {k} out of range ({} hints)", self.hints.len());
        self.p_hinted[k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{Role, DEFAULT_STRENGTH_SCALE};
    use crate::rng;
    use crate::tasks::generate_pool;
    use proptest::prelude::*;

    fn with_clean_rewards(rewards: &[f64]) -> RolloutBundle {
        let pool = generate_pool(1, 4, 1).unwrap();
        let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        let mut b = collect_bundle(&params, pool.get(0), GroupSizes::default(), 0, &mut rng::stream(0, "t", 0, 0));
        b.clean = rewards
            .iter()
            .map(|r| Trajectory {
                reward: Some(*r),
                ..b.clean[0].clone()
            })
            .collect();
        b.p_clean = mean_reward(&b.clean);
        b
    }

    #[test]
    fn clean_rate_is_mean() {
        assert_eq!(with_clean_rewards(&[1., 1., 1., 0., 1., 1., 1., 1.]).clean_success_rate(), 0.875);
        assert_eq!(with_clean_rewards(&[0.; 8]).clean_success_rate(), 0.0);
        assert_eq!(with_clean_rewards(&[1.; 8]).clean_success_rate(), 1.0);
        assert_eq!(with_clean_rewards(&[1., 0., 1., 0.]).clean_success_rate(), 0.5);
    }

    #[test]
    fn default_bundle_size() {
        let pool = generate_pool(2, 8, 1).unwrap();
        let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        let b = collect_bundle(&params, pool.get(1), GroupSizes { g1: 8, g2: 2, g3: 8 }, 4, &mut rng::stream(0, "t", 0, 0));
        assert_eq!(b.len(), 8 + 2 + 16);
        assert!(b.clean.iter().chain(&b.hints).chain(b.hinted.iter().flatten()).all(|t| t.birth_step == 4));
    }

    #[test]
    fn truth_telling_without_trust_is_always_right() {
        let pool = generate_pool(3, 8, 2).unwrap();
        let mut params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 0.0);
        for q in &pool.questions {
            *params.clean_mut(q.id, q.truth) = 1e6;
        }
        let b = collect_bundle(&params, pool.get(2), GroupSizes { g1: 8, g2: 4, g3: 8 }, 0, &mut rng::stream(1, "t", 0, 0));
        assert_eq!(b.p_clean, 1.0);
        assert!(b.p_hinted.iter().all(|p| *p == 1.0));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn hinted_rate_index_checked() {
        with_clean_rewards(&[1.0]).hinted_success_rate(2);
    }

    #[test]
    fn hinted_rate_examples() {
        let mut b = with_clean_rewards(&[1.0]);
        for (j, t) in b.hinted[0].iter_mut().enumerate() {
            t.reward = Some(if j == 7 { 1.0 } else { 0.0 });
        }
        b.p_hinted[0] = mean_reward(&b.hinted[0]);
        assert_eq!(b.hinted_success_rate(0), 0.125);
        for t in b.hinted[1].iter_mut() {
            t.reward = Some(1.0);
        }
        b.p_hinted[1] = mean_reward(&b.hinted[1]);
        assert_eq!(b.hinted_success_rate(1), 1.0);
    }

    #[test]
    fn trustless_hints_do_not_move_success() {
        // with trust 0 the hinted and clean distributions coincide, so the two
        // estimators share a mean; sd of each at n=4096 is below 0.008
        let pool = generate_pool(1, 4, 9).unwrap();
        let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 0.0);
        let b = collect_bundle(&params, pool.get(0), GroupSizes { g1: 4096, g2: 2, g3: 4096 }, 0, &mut rng::stream(5, "t", 0, 0));
        let hinted_mean = b.p_hinted.iter().sum::<f64>() / 2.0;
        assert!((b.p_clean - hinted_mean).abs() <= 0.03);
    }

    proptest! {
        #[test]
        fn bundle_structure(seed in any::<u64>(), g1 in 1usize..10, g2 in 1usize..5, g3 in 1usize..10) {
            let pool = generate_pool(2, 5, seed).unwrap();
            let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
            let b = collect_bundle(&params, pool.get(1), GroupSizes { g1, g2, g3 }, 0, &mut rng::stream(seed, "t", 0, 0));
            prop_assert_eq!(b.len(), g1 + g2 + g2 * g3);
            // brute-force recomputation of the estimators
            let clean: f64 = b.clean.iter().map(|t| t.reward.unwrap()).sum::<f64>() / g1 as f64;
            prop_assert_eq!(b.clean_success_rate(), clean);
            for k in 0..g2 {
                let mut hits = 0.0;
                for t in &b.hinted[k] {
                    prop_assert_eq!(t.context.role, Role::HintedReasoner);
                    prop_assert_eq!(t.context.hint.as_ref(), Some(&b.hints[k].tokens));
                    hits += t.reward.unwrap();
                }
                prop_assert_eq!(b.hinted_success_rate(k), hits / g3 as f64);
            }
        }
    }
}
