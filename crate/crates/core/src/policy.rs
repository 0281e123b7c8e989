//! Role-conditioned tabular softmax policy.
//!
//! One parameter vector serves three roles:
//!
//! * clean reasoner: `softmax(clean[q])` over the K answers;
//! * adversary: an independent softmax per hint position, position 0 over the
//!   K answers (the suggested answer) and later positions over the strength
//!   vocabulary;
//! * hinted reasoner: `softmax(clean[q] + trust[q] * scale[s] * e_suggested)`.
//!
//! Parameters are stored flat so optimizers and finite-difference checks can
//! treat them as a plain vector. The layout is `[clean | adversary | trust]`.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{self, DecodedHint, Question, TaskPool};

pub const DEFAULT_STRENGTH_SCALE: [f64; 3] = [0.5, 1.0, 1.5];
pub const DEFAULT_TRUST: f64 = 1.5;

const CHECKPOINT_MAGIC: &str = "hintduel-policy v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    CleanReasoner,
    Adversary,
    HintedReasoner,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RoleContext {
    pub role: Role,
    pub question: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<Vec<usize>>,
}

impl RoleContext {
    pub fn clean(question: usize) -> Self {
        RoleContext {
            role: Role::CleanReasoner,
            question,
            hint: None,
        }
    }

    pub fn adversary(question: usize) -> Self {
        RoleContext {
            role: Role::Adversary,
            question,
            hint: None,
        }
    }

    pub fn hinted(question: usize, hint: Vec<usize>) -> Self {
        RoleContext {
            role: Role::HintedReasoner,
            question,
            hint: Some(hint),
        }
    }

    fn check(&self) {
        assert_eq!(
            self.hint.is_some(),
            self.role == Role::HintedReasoner,
            "a hint is carried exactly by hinted-reasoner contexts"
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub context: RoleContext,
    pub tokens: Vec<usize>,
    pub behavior_logprobs: Vec<f64>,
    /// Verifier reward for reasoner roles; the hint-effectiveness gap for
    /// adversary trajectories once credit has been assigned.
    pub reward: Option<f64>,
    pub birth_step: u64,
}

impl Trajectory {
    pub fn reward(&self) -> f64 {
        self.reward.expect("trajectory reward has not been assigned")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub questions: usize,
    pub answers: usize,
    pub hint_len: usize,
    pub strength_vocab: usize,
}

impl Shape {
    /// Adversary logits per question: K for position 0, S for each later one.
    pub fn adv_width(&self) -> usize {
        self.answers + (self.hint_len - 1) * self.strength_vocab
    }

    pub fn position_vocab(&self, position: usize) -> usize {
        if position == 0 {
            self.answers
        } else {
            self.strength_vocab
        }
    }

    pub fn len(&self) -> usize {
        self.questions * (self.answers + self.adv_width() + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn clean_offset(&self, q: usize) -> usize {
        q * self.answers
    }

    fn adv_offset(&self, q: usize, position: usize) -> usize {
        let base = self.questions * self.answers + q * self.adv_width();
        if position == 0 {
            base
        } else {
            base + self.answers + (position - 1) * self.strength_vocab
        }
    }

    fn trust_offset(&self, q: usize) -> usize {
        self.questions * (self.answers + self.adv_width()) + q
    }
}

/// Shared parameters of every role. `theta` holds all trainable entries;
/// `strength_scale` is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: Shape,
    theta: Vec<f64>,
    strength_scale: Vec<f64>,
}

/// A vector with the same layout as [`PolicyParams`]' trainable entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(shape: &Shape) -> Self {
        Gradient {
            values: vec![0.0; shape.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn add_scaled(&mut self, other: &Gradient, factor: f64) {
        assert_eq!(self.values.len(), other.values.len(), "gradient shape mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

/// One term of a weighted log-likelihood: `weight * mean_t logprob(token_t)`.
#[derive(Debug, Clone)]
pub struct WeightedItem<'a> {
    pub context: &'a RoleContext,
    pub tokens: &'a [usize],
    pub weight: f64,
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// KL(p || q) for two categorical distributions given as log-probabilities.
pub fn kl_from_logprobs(lp: &[f64], lq: &[f64]) -> f64 {
    lp.iter()
        .zip(lq)
        .map(|(a, b)| {
            let p = a.exp();
            if p > 0.0 {
                p * (a - b)
            } else {
                0.0
            }
        })
        .sum()
}

impl PolicyParams {
    /// Initial parameters: the truth logit starts at `2 * difficulty - 1`,
    /// every other clean logit at 0, adversary logits at 0 and trust at
    /// `trust`.
    pub fn init(pool: &TaskPool, hint_len: usize, strength_scale: &[f64], trust: f64) -> Self {
        assert!(!pool.is_empty(), "pool must be nonempty");
        let mut params = PolicyParams::zeros(
            Shape {
                questions: pool.len(),
                answers: pool.answer_space(),
                hint_len,
                strength_vocab: strength_scale.len(),
            },
            strength_scale.to_vec(),
        );
        for q in &pool.questions {
            assert_eq!(q.answer_space, params.shape.answers, "pool has mixed answer spaces");
            *params.clean_mut(q.id, q.truth) = 2.0 * q.difficulty - 1.0;
            *params.trust_mut(q.id) = trust;
        }
        params
    }

    pub fn zeros(shape: Shape, strength_scale: Vec<f64>) -> Self {
        assert!(shape.hint_len >= 1, "hints have at least one token");
        assert!(shape.answers >= 2, "answer space has at least two answers");
        assert_eq!(strength_scale.len(), shape.strength_vocab, "strength scale length");
        assert!(
            strength_scale.iter().all(|s| s.is_finite() && *s >= 0.0),
            "strength multipliers must be finite and non-negative"
        );
        PolicyParams {
            theta: vec![0.0; shape.len()],
            shape,
            strength_scale,
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn strength_scale(&self) -> &[f64] {
        &self.strength_scale
    }

    pub fn clean_row(&self, q: usize) -> &[f64] {
        let o = self.shape.clean_offset(q);
        &self.theta[o..o + self.shape.answers]
    }

    pub fn clean_mut(&mut self, q: usize, answer: usize) -> &mut f64 {
        assert!(answer < self.shape.answers);
        let o = self.shape.clean_offset(q);
        &mut self.theta[o + answer]
    }

    pub fn adv_row(&self, q: usize, position: usize) -> &[f64] {
        let o = self.shape.adv_offset(q, position);
        &self.theta[o..o + self.shape.position_vocab(position)]
    }

    pub fn adv_mut(&mut self, q: usize, position: usize, token: usize) -> &mut f64 {
        assert!(token < self.shape.position_vocab(position));
        let o = self.shape.adv_offset(q, position);
        &mut self.theta[o + token]
    }

    pub fn trust(&self, q: usize) -> f64 {
        self.theta[self.shape.trust_offset(q)]
    }

    pub fn trust_mut(&mut self, q: usize) -> &mut f64 {
        let o = self.shape.trust_offset(q);
        &mut self.theta[o]
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Number of token positions a trajectory in this context has.
    pub fn positions(&self, ctx: &RoleContext) -> usize {
        match ctx.role {
            Role::Adversary => self.shape.hint_len,
            Role::CleanReasoner | Role::HintedReasoner => 1,
        }
    }

    pub fn vocab(&self, ctx: &RoleContext, position: usize) -> usize {
        match ctx.role {
            Role::Adversary => self.shape.position_vocab(position),
            Role::CleanReasoner | Role::HintedReasoner => self.shape.answers,
        }
    }

    fn decode(&self, ctx: &RoleContext) -> DecodedHint {
        let hint = ctx.hint.as_deref().expect("hinted context without a hint");
        tasks::decode_tokens(hint, self.shape.answers, self.shape.strength_vocab)
            .unwrap_or_else(|e| panic!("invalid hint in context: {e}"))
    }

    /// Logits of the next-token distribution at `position` (0 for reasoners).
    pub fn logits(&self, ctx: &RoleContext, position: usize) -> Vec<f64> {
        ctx.check();
        assert!(ctx.question < self.shape.questions, "question {} out of range", ctx.question);
        assert!(position < self.positions(ctx), "position {position} out of range");
        match ctx.role {
            Role::CleanReasoner => self.clean_row(ctx.question).to_vec(),
            Role::Adversary => self.adv_row(ctx.question, position).to_vec(),
            Role::HintedReasoner => {
                let hint = self.decode(ctx);
                let mut z = self.clean_row(ctx.question).to_vec();
                z[hint.suggested] += self.trust(ctx.question) * self.strength_scale[hint.strength];
                z
            }
        }
    }

    pub fn distribution(&self, ctx: &RoleContext, position: usize) -> Vec<f64> {
        softmax(&self.logits(ctx, position))
    }

    pub fn logprob(&self, ctx: &RoleContext, tokens: &[usize]) -> Vec<f64> {
        assert_eq!(tokens.len(), self.positions(ctx), "trajectory length does not match role");
        tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                let lp = log_softmax(&self.logits(ctx, t));
                assert!(tok < lp.len(), "token {tok} outside vocabulary of {}", lp.len());
                lp[tok]
            })
            .collect()
    }

    /// Draw `n` i.i.d. trajectories. Reasoner rewards are verified on the
    /// spot; adversary rewards stay unset until credit assignment.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        question: &Question,
        ctx: &RoleContext,
        n: usize,
        birth_step: u64,
        rng: &mut R,
    ) -> Vec<Trajectory> {
        assert!(n >= 1, "sample at least one trajectory");
        assert_eq!(question.id, ctx.question, "context refers to a different question");
        let per_position: Vec<Vec<f64>> = (0..self.positions(ctx))
            .map(|t| log_softmax(&self.logits(ctx, t)))
            .collect();
        (0..n)
            .map(|_| {
                let mut tokens = Vec::with_capacity(per_position.len());
                let mut behavior_logprobs = Vec::with_capacity(per_position.len());
                for lp in &per_position {
                    let tok = draw(lp, rng);
                    tokens.push(tok);
                    behavior_logprobs.push(lp[tok]);
                }
                let reward = match ctx.role {
                    Role::Adversary => None,
                    _ => Some(f64::from(tasks::verify(question, tokens[0]))),
                };
                Trajectory {
                    context: ctx.clone(),
                    tokens,
                    behavior_logprobs,
                    reward,
                    birth_step,
                }
            })
            .collect()
    }

    /// Entropy in nats; for the adversary the mean over hint positions.
    pub fn entropy(&self, ctx: &RoleContext) -> f64 {
        let positions = self.positions(ctx);
        (0..positions)
            .map(|t| entropy_of(&self.distribution(ctx, t)))
            .sum::<f64>()
            / positions as f64
    }

    /// Exact KL(self || other) of the full trajectory distribution at `ctx`.
    /// Adversary positions are independent, so their KLs add.
    pub fn kl_to(&self, other: &PolicyParams, ctx: &RoleContext) -> f64 {
        (0..self.positions(ctx))
            .map(|t| kl_from_logprobs(&log_softmax(&self.logits(ctx, t)), &log_softmax(&other.logits(ctx, t))))
            .sum()
    }

    /// Chain rule from d/d(logits at `position`) to the parameter vector,
    /// accumulated into `grad` with factor `coef`.
    pub fn accumulate_logit_grad(
        &self,
        ctx: &RoleContext,
        position: usize,
        dlogits: &[f64],
        coef: f64,
        grad: &mut Gradient,
    ) {
        let q = ctx.question;
        match ctx.role {
            Role::CleanReasoner => {
                let o = self.shape.clean_offset(q);
                for (j, d) in dlogits.iter().enumerate() {
                    grad.values[o + j] += coef * d;
                }
            }
            Role::Adversary => {
                let o = self.shape.adv_offset(q, position);
                for (j, d) in dlogits.iter().enumerate() {
                    grad.values[o + j] += coef * d;
                }
            }
            Role::HintedReasoner => {
                let hint = self.decode(ctx);
                let o = self.shape.clean_offset(q);
                for (j, d) in dlogits.iter().enumerate() {
                    grad.values[o + j] += coef * d;
                }
                grad.values[self.shape.trust_offset(q)] +=
                    coef * self.strength_scale[hint.strength] * dlogits[hint.suggested];
            }
        }
    }

    /// Gradient of `sum_i w_i * (1/|tokens_i|) * sum_t logprob(token_{i,t})`.
    pub fn weighted_logprob_gradient(&self, items: &[WeightedItem<'_>]) -> Gradient {
        let mut grad = Gradient::zeros(&self.shape);
        for item in items {
            assert!(item.weight.is_finite(), "non-finite weight");
            if item.weight == 0.0 {
                continue;
            }
            assert_eq!(item.tokens.len(), self.positions(item.context));
            let coef = item.weight / item.tokens.len() as f64;
            for (t, &tok) in item.tokens.iter().enumerate() {
                let dlogits = logprob_logit_grad(&self.distribution(item.context, t), tok);
                self.accumulate_logit_grad(item.context, t, &dlogits, coef, &mut grad);
            }
        }
        grad
    }

    /// Text checkpoint: a magic line, a shape line and one line per table
    /// row, every value written with 17 significant digits.
    pub fn to_text(&self) -> String {
        let s = &self.shape;
        let mut out = String::new();
        writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
        writeln!(
            out,
            "shape {} {} {} {}",
            s.questions, s.answers, s.hint_len, s.strength_vocab
        )
        .unwrap();
        let row = |out: &mut String, tag: &str, values: &[f64]| {
            out.push_str(tag);
            for v in values {
                write!(out, " {v:.16e}").unwrap();
            }
            out.push('\n');
        };
        row(&mut out, "scale", &self.strength_scale);
        for q in 0..s.questions {
            row(&mut out, &format!("clean {q}"), self.clean_row(q));
        }
        for q in 0..s.questions {
            for p in 0..s.hint_len {
                row(&mut out, &format!("adv {q} {p}"), self.adv_row(q, p));
            }
        }
        for q in 0..s.questions {
            row(&mut out, &format!("trust {q}"), &[self.trust(q)]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<PolicyParams> {
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("unexpected end of checkpoint, expected {what}")))
        };
        let (_, magic) = next("header")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(Error::parse(1, format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        let (ln, shape_line) = next("shape")?;
        let dims = parse_tagged(shape_line, "shape", 0, ln + 1)?
            .into_iter()
            .map(|v| v.parse::<usize>().map_err(|e| Error::parse(ln + 1, e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if dims.len() != 4 || dims[0] == 0 || dims[1] < 2 || dims[2] == 0 || dims[3] == 0 {
            return Err(Error::parse(ln + 1, "shape needs four positive sizes (answers >= 2)"));
        }
        let shape = Shape {
            questions: dims[0],
            answers: dims[1],
            hint_len: dims[2],
            strength_vocab: dims[3],
        };
        let mut floats = |tag: String, width: usize| -> Result<Vec<f64>> {
            let (ln, line) = next(&tag)?;
            let fields = parse_tagged(line, &tag, width, ln + 1)?;
            fields
                .iter()
                .map(|f| {
                    let v: f64 = f.parse().map_err(|e| Error::parse(ln + 1, format!("{e}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::parse(ln + 1, "non-finite value"))
                    }
                })
                .collect()
        };
        let scale = floats("scale".into(), shape.strength_vocab)?;
        if scale.iter().any(|s| *s < 0.0) {
            return Err(Error::parse(3, "strength multipliers must be non-negative"));
        }
        let mut params = PolicyParams::zeros(shape, scale);
        for q in 0..shape.questions {
            let row = floats(format!("clean {q}"), shape.answers)?;
            let o = shape.clean_offset(q);
            params.theta[o..o + shape.answers].copy_from_slice(&row);
        }
        for q in 0..shape.questions {
            for p in 0..shape.hint_len {
                let width = shape.position_vocab(p);
                let row = floats(format!("adv {q} {p}"), width)?;
                let o = shape.adv_offset(q, p);
                params.theta[o..o + width].copy_from_slice(&row);
            }
        }
        for q in 0..shape.questions {
            params.theta[shape.trust_offset(q)] = floats(format!("trust {q}"), 1)?[0];
        }
        Ok(params)
    }
}

/// d log softmax(z)[token] / dz = onehot(token) - softmax(z).
pub fn logprob_logit_grad(probs: &[f64], token: usize) -> Vec<f64> {
    let mut d: Vec<f64> = probs.iter().map(|p| -p).collect();
    d[token] += 1.0;
    d
}

/// Splits `line` into the values following `tag`; `width == 0` accepts any count.
fn parse_tagged<'a>(line: &'a str, tag: &str, width: usize, lineno: usize) -> Result<Vec<&'a str>> {
    let rest = line
        .strip_prefix(tag)
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| Error::parse(lineno, format!("expected `{tag}`")))?;
    let fields: Vec<&str> = rest.split_whitespace().collect();
    if width != 0 && fields.len() != width {
        return Err(Error::parse(lineno, format!("`{tag}` expects {width} values, found {}", fields.len())));
    }
    Ok(fields)
}

fn draw<R: Rng + ?Sized>(logprobs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, lp) in logprobs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    // rounding left u above the accumulated mass; take the last supported token
    logprobs
        .iter()
        .rposition(|lp| lp.exp() > 0.0)
        .unwrap_or(logprobs.len() - 1)
}
