//! Run configuration.
//!
//! A TOML document with the sections `pool`, `rollout`, `policy`, `update`,
//! `streams` and `mastery` plus a few top-level keys. Every key is optional;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bundle::GroupSizes;
use crate::credit::Stream;
use crate::error::{Error, Result};
use crate::mastery::MasteryMode;
use crate::policy::{DEFAULT_STRENGTH_SCALE, DEFAULT_TRUST};
use crate::update::{OptimizerKind, UpdateConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub n: usize,
    pub k: usize,
    /// Pool generation seed; the master seed when absent.
    pub seed: Option<u64>,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { n: 64, k: 8, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RolloutConfig {
    pub g1: usize,
    pub g2: usize,
    pub g3: usize,
    pub hint_len: usize,
    /// Prompts per collection step, capped at the active pool size.
    pub batch_size: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            g1: 8,
            g2: 2,
            g3: 8,
            hint_len: 2,
            batch_size: 256,
        }
    }
}

impl RolloutConfig {
    pub fn sizes(&self) -> GroupSizes {
        GroupSizes {
            g1: self.g1,
            g2: self.g2,
            g3: self.g3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub trust_init: f64,
    pub strength_scale: Vec<f64>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            trust_init: DEFAULT_TRUST,
            strength_scale: DEFAULT_STRENGTH_SCALE.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamsConfig {
    pub m_clean: usize,
    /// Counted in hint trajectories.
    pub m_adv: usize,
    pub m_robust: usize,
    pub max_lag: u64,
    pub capacity_factor: usize,
    /// Stop adversary updates from this collection step on.
    pub freeze_adversary_after: Option<u64>,
}

impl Default for StreamsConfig {
    fn default() -> Self {
        StreamsConfig {
            m_clean: 128,
            m_adv: 256,
            m_robust: 128,
            max_lag: 3,
            capacity_factor: 4,
            freeze_adversary_after: None,
        }
    }
}

impl StreamsConfig {
    pub fn flush_size(&self, stream: Stream) -> usize {
        match stream {
            Stream::Clean => self.m_clean,
            Stream::Adversary => self.m_adv,
            Stream::Robust => self.m_robust,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MasteryConfig {
    pub enabled: bool,
    pub k_m: u32,
    pub audit_n: usize,
    pub mode: MasteryMode,
    /// Re-admit retired questions whose audit mean falls below this value.
    pub readmit_below: Option<f64>,
}

impl Default for MasteryConfig {
    fn default() -> Self {
        MasteryConfig {
            enabled: true,
            k_m: 1,
            audit_n: 8,
            mode: MasteryMode::Robust,
            readmit_below: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub steps: u64,
    pub out: PathBuf,
    /// Collect bundles on the calling thread only.
    pub serial: bool,
    /// Fill `wall_ms` in the metrics (breaks byte-identical reruns).
    pub record_wall_time: bool,
    pub pool: PoolConfig,
    pub rollout: RolloutConfig,
    pub policy: PolicyConfig,
    pub update: UpdateConfig,
    pub streams: StreamsConfig,
    pub mastery: MasteryConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            steps: 500,
            out: PathBuf::from("runs/latest"),
            serial: false,
            record_wall_time: false,
            pool: PoolConfig::default(),
            rollout: RolloutConfig::default(),
            policy: PolicyConfig::default(),
            update: UpdateConfig::default(),
            streams: StreamsConfig::default(),
            mastery: MasteryConfig::default(),
        }
    }
}

fn positive(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::config(key, "must be at least 1"))
    } else {
        Ok(())
    }
}

fn finite_nonneg(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a finite non-negative number, got {v}")))
    }
}

impl RunConfig {
    pub fn pool_seed(&self) -> u64 {
        self.pool.seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        positive("pool.n", self.pool.n)?;
        if self.pool.k < 2 {
            return Err(Error::config("pool.k", "needs at least two answers"));
        }
        positive("rollout.g1", self.rollout.g1)?;
        positive("rollout.g2", self.rollout.g2)?;
        positive("rollout.g3", self.rollout.g3)?;
        positive("rollout.hint_len", self.rollout.hint_len)?;
        positive("rollout.batch_size", self.rollout.batch_size)?;
        if self.policy.strength_scale.is_empty() {
            return Err(Error::config("policy.strength_scale", "needs at least one strength level"));
        }
        for v in &self.policy.strength_scale {
            finite_nonneg("policy.strength_scale", *v)?;
        }
        if !self.policy.trust_init.is_finite() {
            return Err(Error::config("policy.trust_init", "must be finite"));
        }
        let u = &self.update;
        if !(u.clip_low.is_finite() && u.clip_low > 0.0 && u.clip_low < 1.0) {
            return Err(Error::config("update.clip_low", "must lie in (0, 1)"));
        }
        if !(u.clip_high.is_finite() && u.clip_high > 0.0) {
            return Err(Error::config("update.clip_high", "must be positive"));
        }
        finite_nonneg("update.kl_beta", u.kl_beta)?;
        if !(u.lr.is_finite() && u.lr > 0.0) {
            return Err(Error::config("update.lr", "must be positive"));
        }
        if !(u.eps_std.is_finite() && u.eps_std > 0.0) {
            return Err(Error::config("update.eps_std", "must be positive"));
        }
        if u.optimizer == OptimizerKind::AdaptiveMoment {
            for (key, b) in [("update.adam_beta1", u.adam_beta1), ("update.adam_beta2", u.adam_beta2)] {
                if !(0.0..1.0).contains(&b) {
                    return Err(Error::config(key, "must lie in [0, 1)"));
                }
            }
            if !(u.adam_eps.is_finite() && u.adam_eps > 0.0) {
                return Err(Error::config("update.adam_eps", "must be positive"));
            }
        }
        finite_nonneg("update.weight_decay", u.weight_decay)?;
        positive("streams.m_clean", self.streams.m_clean)?;
        positive("streams.m_adv", self.streams.m_adv)?;
        positive("streams.m_robust", self.streams.m_robust)?;
        positive("streams.capacity_factor", self.streams.capacity_factor)?;
        if self.mastery.k_m == 0 {
            return Err(Error::config("mastery.k_m", "must be at least 1"));
        }
        positive("mastery.audit_n", self.mastery.audit_n)?;
        if let Some(t) = self.mastery.readmit_below {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config("mastery.readmit_below", "must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let start = message.find("unknown field `")? + "unknown field `".len();
    let end = message[start..].find('`')?;
    Some(message[start..start + end].to_string())
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let key = unknown_key(&message).unwrap_or_else(|| match e.span() {
            Some(span) => text[..span.start.min(text.len())]
                .lines()
                .last()
                .and_then(|l| l.split('=').next())
                .map(|k| k.trim().to_string())
                .filter(|k| !k.is_empty())
                .unwrap_or_else(|| "config".into()),
            None => "config".into(),
        });
        Error::config(key, message)
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}
