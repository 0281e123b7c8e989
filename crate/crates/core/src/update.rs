//! Branch losses and parameter updates.
//!
//! Clean and robust groups are trained with the clipped GRPO surrogate,
//! adversary hints with a REINFORCE term weighted by the (constant)
//! hint-effectiveness gap. Both return analytic gradients of the loss; the
//! optimizer descends them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::credit::{RolloutGroup, Stream};
use crate::error::{Error, Result};
use crate::policy::{log_softmax, logprob_logit_grad, Gradient, PolicyParams, RoleContext, WeightedItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    PlainGradient,
    AdaptiveMoment,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateConfig {
    pub clip_low: f64,
    pub clip_high: f64,
    pub kl_beta: f64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub eps_std: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            clip_low: 0.2,
            clip_high: 0.28,
            kl_beta: 0.0,
            lr: 0.1,
            optimizer: OptimizerKind::AdaptiveMoment,
            eps_std: crate::credit::DEFAULT_EPS_STD,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub stream: Stream,
    pub loss: f64,
    pub grad_norm: f64,
    /// Mean |r - 1| over the tokens of the batch.
    pub ratio_dev: f64,
    pub clip_frac: f64,
    /// Exact KL(pre-update || post-update) averaged over the batch contexts.
    pub approx_kl: f64,
    /// Mean entropy (nats) of the pre-update policy over the batch contexts.
    pub entropy: f64,
    pub groups: usize,
    pub trajectories: usize,
}

/// Loss value, its gradient and the ratio statistics seen while computing it.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub loss: f64,
    pub gradient: Gradient,
    pub ratio_dev: f64,
    pub clip_frac: f64,
    pub tokens: usize,
}

/// `min(r A, clip(r, 1 - lo, 1 + hi) A)` and whether the clipped branch
/// was the smaller one (in which case the token has zero gradient).
pub fn clipped_objective(ratio: f64, advantage: f64, clip_low: f64, clip_high: f64) -> (f64, bool) {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_low, 1.0 + clip_high) * advantage;
    if clipped < unclipped {
        (clipped, true)
    } else {
        (unclipped, false)
    }
}

/// Per-group weights: the plain mean over groups for the clean stream; for
/// the robust stream a mean over hints within each question, then over
/// questions.
fn group_weights(groups: &[RolloutGroup]) -> Vec<f64> {
    match groups[0].stream {
        Stream::Robust => {
            let mut per_question: BTreeMap<usize, usize> = BTreeMap::new();
            for g in groups {
                *per_question.entry(g.question).or_default() += 1;
            }
            let questions = per_question.len() as f64;
            groups
                .iter()
                .map(|g| 1.0 / (questions * per_question[&g.question] as f64))
                .collect()
        }
        _ => vec![1.0 / groups.len() as f64; groups.len()],
    }
}

fn check_stream(groups: &[RolloutGroup], allowed: &[Stream]) {
    assert!(!groups.is_empty(), "update batch is empty");
    let stream = groups[0].stream;
    assert!(allowed.contains(&stream), "{stream} groups sent to the wrong loss");
    assert!(
        groups.iter().all(|g| g.stream == stream),
        "mixed-stream update batch"
    );
}

/// Negated clipped GRPO surrogate (plus `kl_beta * KL(pi || reference)`),
/// averaged over groups.
pub fn grpo_surrogate(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &UpdateConfig,
    reference: Option<&PolicyParams>,
) -> LossEval {
    check_stream(groups, &[Stream::Clean, Stream::Robust]);
    let weights = group_weights(groups);
    let mut grad = Gradient::zeros(params.shape());
    let mut loss = 0.0;
    let mut tokens = 0usize;
    let mut clipped_tokens = 0usize;
    let mut ratio_dev = 0.0;

    for (g, w) in groups.iter().zip(&weights) {
        let size = g.len() as f64;
        let mut objective = 0.0;
        for (traj, &adv) in g.trajectories.iter().zip(&g.advantages) {
            let len = traj.tokens.len() as f64;
            for (t, &tok) in traj.tokens.iter().enumerate() {
                let lp = log_softmax(&params.logits(&traj.context, t));
                let ratio = (lp[tok] - traj.behavior_logprobs[t]).exp();
                let (value, clipped) = clipped_objective(ratio, adv, cfg.clip_low, cfg.clip_high);
                objective += value / len;
                tokens += 1;
                ratio_dev += (ratio - 1.0).abs();
                if clipped {
                    clipped_tokens += 1;
                } else if adv != 0.0 {
                    // d(r A)/dtheta = A r dlogp/dtheta, negated for the loss
                    let probs: Vec<f64> = lp.iter().map(|v| v.exp()).collect();
                    let dlogits = logprob_logit_grad(&probs, tok);
                    let coef = -w * adv * ratio / (size * len);
                    params.accumulate_logit_grad(&traj.context, t, &dlogits, coef, &mut grad);
                }
            }
        }
        loss -= w * objective / size;

        if cfg.kl_beta > 0.0 {
            let reference = reference.expect("kl_beta > 0 requires a reference policy");
            let ctx = &g.trajectories[0].context;
            let kl = kl_with_gradient(params, reference, ctx, w * cfg.kl_beta, &mut grad);
            loss += w * cfg.kl_beta * kl;
        }
    }

    LossEval {
        loss,
        gradient: grad,
        ratio_dev: ratio_dev / tokens.max(1) as f64,
        clip_frac: clipped_tokens as f64 / tokens.max(1) as f64,
        tokens,
    }
}

/// KL(pi_theta || reference) at `ctx` and its gradient (times `coef`) added
/// into `grad`. For p = softmax(z): dKL/dz_j = p_j (log(p_j / r_j) - KL).
fn kl_with_gradient(
    params: &PolicyParams,
    reference: &PolicyParams,
    ctx: &RoleContext,
    coef: f64,
    grad: &mut Gradient,
) -> f64 {
    let mut total = 0.0;
    for t in 0..params.positions(ctx) {
        let lp = log_softmax(&params.logits(ctx, t));
        let lr = log_softmax(&reference.logits(ctx, t));
        let kl = crate::policy::kl_from_logprobs(&lp, &lr);
        let dlogits: Vec<f64> = lp
            .iter()
            .zip(&lr)
            .map(|(a, b)| a.exp() * (a - b - kl))
            .collect();
        params.accumulate_logit_grad(ctx, t, &dlogits, coef, grad);
        total += kl;
    }
    total
}

/// `-(1/n) sum_k R_k (1/|h_k|) sum_t log pi(h_{k,t})` with the rewards held
/// constant.
pub fn adversary_reinforce(params: &PolicyParams, groups: &[RolloutGroup], _cfg: &UpdateConfig) -> LossEval {
    check_stream(groups, &[Stream::Adversary]);
    let n: usize = groups.iter().map(RolloutGroup::len).sum();
    assert!(n > 0, "adversary batch has no hints");
    let mut loss = 0.0;
    let mut ratio_dev = 0.0;
    let mut tokens = 0usize;
    let mut items = Vec::with_capacity(n);
    for g in groups {
        for (traj, &reward) in g.trajectories.iter().zip(&g.advantages) {
            let stored = traj.reward.expect("adversary hint without an assigned reward");
            assert_eq!(stored, reward, "adversary advantage must equal its reward");
            let lps = params.logprob(&traj.context, &traj.tokens);
            loss -= reward * lps.iter().sum::<f64>() / lps.len() as f64;
            for (lp, blp) in lps.iter().zip(&traj.behavior_logprobs) {
                ratio_dev += ((lp - blp).exp() - 1.0).abs();
                tokens += 1;
            }
            items.push(WeightedItem {
                context: &traj.context,
                tokens: &traj.tokens,
                weight: reward,
            });
        }
    }
    let mut gradient = params.weighted_logprob_gradient(&items);
    gradient.scale(-1.0 / n as f64);
    LossEval {
        loss: loss / n as f64,
        gradient,
        ratio_dev: ratio_dev / tokens.max(1) as f64,
        clip_frac: 0.0,
        tokens,
    }
}

/// First and second moment estimates for the adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize) -> Self {
        let moments = if kind == OptimizerKind::AdaptiveMoment { len } else { 0 };
        Optimizer {
            kind,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            t: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// Steps taken so far.
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One descent step. Non-finite gradients abort without touching `params`.
pub fn apply_update(
    params: &PolicyParams,
    gradient: &Gradient,
    cfg: &UpdateConfig,
    optimizer: &mut Optimizer,
    stream: Stream,
) -> Result<PolicyParams> {
    assert_eq!(gradient.values.len(), params.theta().len(), "gradient shape mismatch");
    if let Some((index, &value)) = gradient.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { stream, index, value });
    }
    let mut next = params.clone();
    optimizer.t += 1;
    match optimizer.kind {
        OptimizerKind::PlainGradient => {
            for (p, g) in next.theta_mut().iter_mut().zip(&gradient.values) {
                *p -= cfg.lr * g;
            }
        }
        OptimizerKind::AdaptiveMoment => {
            let t = optimizer.t as i32;
            let c1 = 1.0 - cfg.adam_beta1.powi(t);
            let c2 = 1.0 - cfg.adam_beta2.powi(t);
            for (i, (p, g)) in next.theta_mut().iter_mut().zip(&gradient.values).enumerate() {
                let m = &mut optimizer.m[i];
                let v = &mut optimizer.v[i];
                *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g;
                *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g * g;
                let step = (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
                *p -= cfg.lr * (step + cfg.weight_decay * *p);
            }
        }
    }
    if !next.is_finite() {
        return Err(Error::NonFiniteGradient {
            stream,
            index: next.theta().iter().position(|v| !v.is_finite()).unwrap_or(0),
            value: f64::NAN,
        });
    }
    Ok(next)
}

/// Mean over `contexts` of the exact KL(old || new).
pub fn approx_kl(old: &PolicyParams, new: &PolicyParams, contexts: &[RoleContext]) -> f64 {
    if contexts.is_empty() {
        return 0.0;
    }
    contexts.iter().map(|c| old.kl_to(new, c)).sum::<f64>() / contexts.len() as f64
}

/// Distinct contexts of a batch in first-seen order.
pub fn batch_contexts(groups: &[RolloutGroup]) -> Vec<RoleContext> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for g in groups {
        for t in &g.trajectories {
            if seen.insert(&t.context) {
                out.push(t.context.clone());
            }
        }
    }
    out
}

/// Evaluate the stream's loss on `groups`, take one optimizer step and
/// report. `reference` is the frozen initial policy used by the KL term.
pub fn update_stream(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &UpdateConfig,
    optimizer: &mut Optimizer,
    reference: Option<&PolicyParams>,
) -> Result<(PolicyParams, UpdateReport)> {
    let stream = groups[0].stream;
    let eval = match stream {
        Stream::Adversary => adversary_reinforce(params, groups, cfg),
        Stream::Clean | Stream::Robust => grpo_surrogate(params, groups, cfg, reference),
    };
    if !eval.loss.is_finite() {
        return Err(Error::NonFiniteGradient {
            stream,
            index: 0,
            value: eval.loss,
        });
    }
    let next = apply_update(params, &eval.gradient, cfg, optimizer, stream)?;
    let contexts = batch_contexts(groups);
    let entropy = contexts.iter().map(|c| params.entropy(c)).sum::<f64>() / contexts.len() as f64;
    let report = UpdateReport {
        stream,
        loss: eval.loss,
        grad_norm: eval.gradient.norm(),
        ratio_dev: eval.ratio_dev,
        clip_frac: eval.clip_frac,
        approx_kl: approx_kl(params, &next, &contexts),
        entropy,
        groups: groups.len(),
        trajectories: groups.iter().map(RolloutGroup::len).sum(),
    };
    Ok((next, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{collect_bundle, GroupSizes};
    use crate::credit::{build_candidate_groups, filter_zero_advantage, DEFAULT_EPS_STD};
    use crate::policy::{Shape, Trajectory, DEFAULT_STRENGTH_SCALE};
    use crate::rng;
    use crate::tasks::generate_pool;

    fn setup(seed: u64) -> (crate::tasks::TaskPool, PolicyParams, Vec<RolloutGroup>) {
        let pool = generate_pool(3, 4, seed).unwrap();
        let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        let mut groups = Vec::new();
        for q in &pool.questions {
            let b = collect_bundle(&params, q, GroupSizes::default(), 0, &mut rng::stream(seed, "t", q.id as u64, 0));
            groups.extend(build_candidate_groups(&b, DEFAULT_EPS_STD));
        }
        (pool, params, groups)
    }

    fn plain() -> UpdateConfig {
        UpdateConfig {
            optimizer: OptimizerKind::PlainGradient,
            ..UpdateConfig::default()
        }
    }

    fn of(groups: &[RolloutGroup], s: Stream) -> Vec<RolloutGroup> {
        groups.iter().filter(|g| g.stream == s).cloned().collect()
    }

    fn single_token_group(ctx: RoleContext, token: usize, behavior_lp: f64, adv: f64) -> RolloutGroup {
        RolloutGroup {
            stream: Stream::Clean,
            question: ctx.question,
            hint_index: None,
            trajectories: vec![Trajectory {
                context: ctx,
                tokens: vec![token],
                behavior_logprobs: vec![behavior_lp],
                reward: Some(1.0),
                birth_step: 0,
            }],
            advantages: vec![adv],
            birth_step: 0,
        }
    }

    #[test]
    fn on_policy_gradient_is_vanilla_policy_gradient() {
        let (_, params, groups) = setup(1);
        let clean = of(&groups, Stream::Clean);
        let eval = grpo_surrogate(&params, &clean, &UpdateConfig::default(), None);
        // ratios are exactly 1, so the gradient is -(1/|g|)(1/G) sum A grad logp
        let mut items = Vec::new();
        for g in &clean {
            for (t, a) in g.trajectories.iter().zip(&g.advantages) {
                items.push(WeightedItem {
                    context: &t.context,
                    tokens: &t.tokens,
                    weight: -a / (clean.len() as f64 * g.len() as f64),
                });
            }
        }
        let vanilla = params.weighted_logprob_gradient(&items);
        for (a, b) in eval.gradient.values.iter().zip(&vanilla.values) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(eval.ratio_dev, 0.0);
        assert_eq!(eval.clip_frac, 0.0);
    }

    #[test]
    fn zero_advantages_zero_loss() {
        let (_, params, groups) = setup(2);
        let mut clean = of(&groups, Stream::Clean);
        for g in clean.iter_mut() {
            g.advantages.iter_mut().for_each(|a| *a = 0.0);
        }
        let eval = grpo_surrogate(&params, &clean, &UpdateConfig::default(), None);
        assert_eq!(eval.loss, 0.0);
        assert!(eval.gradient.is_zero());
    }

    #[test]
    fn ratio_above_upper_clip_uses_clipped_value() {
        // K = 2, uniform current policy: logp = ln 0.5, behavior logp chosen so r = 1.4
        let params = PolicyParams::zeros(
            Shape {
                questions: 1,
                answers: 2,
                hint_len: 1,
                strength_vocab: 1,
            },
            vec![1.0],
        );
        let behavior = 0.5f64.ln() - 1.4f64.ln();
        let g = single_token_group(RoleContext::clean(0), 1, behavior, 1.0);
        let cfg = UpdateConfig::default();
        let eval = grpo_surrogate(&params, &[g], &cfg, None);
        assert!((eval.loss + 1.28).abs() < 1e-12, "loss {}", eval.loss);
        assert!(eval.gradient.is_zero());
        assert_eq!(eval.clip_frac, 1.0);
    }

    #[test]
    fn clip_asymmetry() {
        assert_eq!(clipped_objective(1.25, 1.0, 0.2, 0.28), (1.25, false));
        let (v, clipped) = clipped_objective(1.25, 1.0, 0.2, 0.2);
        assert!(clipped && (v - 1.2).abs() < 1e-15);
        // negative advantage clips at the lower bound
        let (v, clipped) = clipped_objective(0.5, -1.0, 0.2, 0.28);
        assert!(clipped && (v + 0.8).abs() < 1e-15);
    }

    #[test]
    #[should_panic(expected = "mixed-stream")]
    fn mixed_batch_rejected() {
        let (_, params, groups) = setup(3);
        let mut batch = of(&groups, Stream::Clean);
        let mut robust = of(&groups, Stream::Robust);
        batch.push(robust.remove(0));
        batch[0].stream = Stream::Clean;
        let last = batch.len() - 1;
        batch[last].stream = Stream::Robust;
        grpo_surrogate(&params, &batch, &UpdateConfig::default(), None);
    }

    #[test]
    fn robust_weights_average_within_then_across_questions() {
        let (_, _, groups) = setup(4);
        let mut robust = of(&groups, Stream::Robust);
        // drop one hint of question 0: it then carries the full question weight
        robust.remove(0);
        let w = group_weights(&robust);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((w[1] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn adversary_zero_reward_zero_gradient() {
        let (_, params, groups) = setup(5);
        let mut adv = of(&groups, Stream::Adversary);
        for g in adv.iter_mut() {
            g.advantages.iter_mut().for_each(|a| *a = 0.0);
            g.trajectories.iter_mut().for_each(|t| t.reward = Some(0.0));
        }
        assert!(adversary_reinforce(&params, &adv, &UpdateConfig::default()).gradient.is_zero());
    }

    fn hint_group(params: &PolicyParams, tokens: Vec<usize>, reward: f64) -> RolloutGroup {
        let ctx = RoleContext::adversary(0);
        let behavior = params.logprob(&ctx, &tokens);
        RolloutGroup {
            stream: Stream::Adversary,
            question: 0,
            hint_index: None,
            trajectories: vec![Trajectory {
                context: ctx,
                tokens,
                behavior_logprobs: behavior,
                reward: Some(reward),
                birth_step: 0,
            }],
            advantages: vec![reward],
            birth_step: 0,
        }
    }

    #[test]
    fn adversary_step_moves_hint_probability_with_reward_sign() {
        let pool = generate_pool(1, 4, 1).unwrap();
        let params = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        let cfg = plain();
        let ctx = RoleContext::adversary(0);
        let joint = |p: &PolicyParams| p.logprob(&ctx, &[2, 1]).iter().sum::<f64>();
        for (reward, up) in [(1.0, true), (-0.5, false)] {
            let g = hint_group(&params, vec![2, 1], reward);
            let eval = adversary_reinforce(&params, &[g], &cfg);
            let mut opt = Optimizer::new(cfg.optimizer, params.theta().len());
            let next = apply_update(&params, &eval.gradient, &cfg, &mut opt, Stream::Adversary).unwrap();
            assert_eq!(joint(&next) > joint(&params), up);
        }
    }

    #[test]
    fn hint_length_normalizes_token_weight() {
        // same reward: a 2-token hint puts half the per-token weight of a 1-token hint
        let pool = generate_pool(1, 4, 1).unwrap();
        let long = PolicyParams::init(&pool, 2, &DEFAULT_STRENGTH_SCALE, 1.5);
        let short = PolicyParams::init(&pool, 1, &DEFAULT_STRENGTH_SCALE, 1.5);
        let cfg = UpdateConfig::default();
        let gl = adversary_reinforce(&long, &[hint_group(&long, vec![2, 1], 1.0)], &cfg).gradient;
        let gs = adversary_reinforce(&short, &[hint_group(&short, vec![2], 1.0)], &cfg).gradient;
        // first-position logit of token 2 sits at the start of the adversary block
        let n_clean = 4;
        let dl = gl.values[n_clean + 2];
        let ds = gs.values[n_clean + 2];
        assert!((dl - 0.5 * ds).abs() < 1e-15, "{dl} vs {ds}");
    }

    #[test]
    fn plain_step_definition_and_reversal() {
        let (_, params, groups) = setup(6);
        let cfg = plain();
        let mut opt = Optimizer::new(cfg.optimizer, params.theta().len());
        let zero = Gradient::zeros(params.shape());
        assert_eq!(apply_update(&params, &zero, &cfg, &mut opt, Stream::Clean).unwrap(), params);

        let g = grpo_surrogate(&params, &filter_zero_advantage(of(&groups, Stream::Robust)), &cfg, None).gradient;
        let next = apply_update(&params, &g, &cfg, &mut opt, Stream::Robust).unwrap();
        for ((a, b), d) in next.theta().iter().zip(params.theta()).zip(&g.values) {
            assert_eq!(*a, b - cfg.lr * d);
        }
        let mut neg = g.clone();
        neg.scale(-1.0);
        let back = apply_update(&next, &neg, &cfg, &mut opt, Stream::Robust).unwrap();
        for (a, b) in back.theta().iter().zip(params.theta()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let (_, params, _) = setup(7);
        let mut g = Gradient::zeros(params.shape());
        g.values[3] = f64::NAN;
        let cfg = UpdateConfig::default();
        let mut opt = Optimizer::new(cfg.optimizer, params.theta().len());
        assert!(matches!(
            apply_update(&params, &g, &cfg, &mut opt, Stream::Clean),
            Err(Error::NonFiniteGradient { index: 3, .. })
        ));
    }

    #[test]
    fn adaptive_moment_first_step_is_lr_sized() {
        let (_, params, groups) = setup(8);
        let cfg = UpdateConfig::default();
        assert_eq!(cfg.optimizer, OptimizerKind::AdaptiveMoment);
        let g = grpo_surrogate(&params, &filter_zero_advantage(of(&groups, Stream::Robust)), &cfg, None).gradient;
        let mut opt = Optimizer::new(cfg.optimizer, params.theta().len());
        let next = apply_update(&params, &g, &cfg, &mut opt, Stream::Robust).unwrap();
        for ((a, b), d) in next.theta().iter().zip(params.theta()).zip(&g.values) {
            if d.abs() > 1e-6 {
                assert!(((b - a) - cfg.lr * d.signum()).abs() < 1e-6);
            }
        }
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn exact_kl_examples() {
        let shape = Shape {
            questions: 1,
            answers: 2,
            hint_len: 1,
            strength_vocab: 1,
        };
        let a = PolicyParams::zeros(shape, vec![1.0]);
        let mut b = a.clone();
        *b.clean_mut(0, 1) = 1.0;
        let ctx = [RoleContext::clean(0)];
        assert_eq!(approx_kl(&a, &a, &ctx), 0.0);
        // KL([1/2,1/2] || [1/(1+e), e/(1+e)]) = ln((1+e)/(2 sqrt e))
        let e = std::f64::consts::E;
        let closed = ((1.0 + e) / (2.0 * e.sqrt())).ln();
        assert!((approx_kl(&a, &b, &ctx) - closed).abs() < 1e-15);
        assert!((closed - 0.12011).abs() < 1e-5);
    }

    #[test]
    fn zero_kl_beta_contributes_nothing() {
        let (_, params, groups) = setup(9);
        let robust = filter_zero_advantage(of(&groups, Stream::Robust));
        let cfg = UpdateConfig::default();
        let mut reference = params.clone();
        reference.theta_mut().iter_mut().for_each(|v| *v += 0.3);
        let without = grpo_surrogate(&params, &robust, &cfg, None);
        let with_ref = grpo_surrogate(&params, &robust, &cfg, Some(&reference));
        assert_eq!(without.loss, with_ref.loss);
        assert_eq!(without.gradient, with_ref.gradient);
    }
}
