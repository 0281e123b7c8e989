//! The buffered multi-stream training loop.
//!
//! Each collection step samples a batch from the active pool, collects one
//! bundle per question (optionally in parallel; every question draws from its
//! own seeded stream), turns the bundles into filtered groups in ascending
//! question order, and routes them into the clean, adversary and robust
//! queues. Each queue then flushes at most once, in that order, when it holds
//! its flush size. Lags are measured in global optimizer steps.

use std::time::Instant;

use rayon::prelude::*;

use crate::bundle::{collect_bundle, RolloutBundle};
use crate::config::RunConfig;
use crate::credit::{build_candidate_groups, filter_zero_advantage, RolloutGroup, Stream, ZERO_GAP};
use crate::diagnostics::{pool_clean_success, pool_flip_rate, StepMetrics, StreamMetrics};
use crate::error::{Error, Result};
use crate::mastery::MasteryTracker;
use crate::policy::PolicyParams;
use crate::queue::{units_of, StreamQueue};
use crate::rng::{self, purpose};
use crate::tasks::{generate_pool, TaskPool};
use crate::update::{update_stream, Optimizer, UpdateReport};

/// Per-stream production counts for one collection step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Routed {
    pub produced: [usize; 3],
    /// Units dropped because the stream was suspended or its queue was full.
    pub suppressed: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: RunConfig,
    pub pool: TaskPool,
    pub params: PolicyParams,
    reference: Option<PolicyParams>,
    pub queues: [StreamQueue; 3],
    optimizer: Optimizer,
    /// Global optimizer step (total parameter updates so far).
    pub step: u64,
    pub stream_steps: [u64; 3],
    /// Collection steps completed.
    pub collection_step: u64,
    pub tracker: MasteryTracker,
    pub suspended: [bool; 3],
    pub suppressed_total: [usize; 3],
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = generate_pool(cfg.pool.n, cfg.pool.k, cfg.pool_seed())?;
        Self::with_pool(cfg, pool)
    }

    pub fn with_pool(cfg: RunConfig, pool: TaskPool) -> Result<Self> {
        let params = PolicyParams::init(&pool, cfg.rollout.hint_len, &cfg.policy.strength_scale, cfg.policy.trust_init);
        Self::with_params(cfg, pool, params)
    }

    pub fn with_params(cfg: RunConfig, pool: TaskPool, params: PolicyParams) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.streams;
        let queues = Stream::ALL.map(|stream| {
            let m = s.flush_size(stream);
            StreamQueue::new(stream, m, m * s.capacity_factor, s.max_lag)
        });
        let reference = (cfg.update.kl_beta > 0.0).then(|| params.clone());
        let optimizer = Optimizer::new(cfg.update.optimizer, params.theta().len());
        let tracker = MasteryTracker::new(cfg.mastery.k_m, cfg.mastery.mode);
        Ok(Trainer {
            cfg,
            pool,
            params,
            reference,
            queues,
            optimizer,
            step: 0,
            stream_steps: [0; 3],
            collection_step: 0,
            tracker,
            suspended: [false; 3],
            suppressed_total: [0; 3],
        })
    }

    /// Record every queue operation (for invariant checks).
    pub fn with_journals(mut self) -> Self {
        self.queues = self.queues.map(StreamQueue::with_journal);
        self
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn queue(&self, stream: Stream) -> &StreamQueue {
        &self.queues[stream.index()]
    }

    fn adversary_frozen(&self) -> bool {
        self.cfg
            .streams
            .freeze_adversary_after
            .is_some_and(|s| self.collection_step >= s)
    }

    /// Questions for the next collection step.
    pub fn sample_batch(&self) -> Result<Vec<usize>> {
        let mut r = rng::stream(self.cfg.seed, purpose::BATCH, self.collection_step, 0);
        self.tracker.sample_active(self.pool.len(), self.cfg.rollout.batch_size, &mut r)
    }

    /// One bundle per question, in the order given. Parallel and serial
    /// collection produce identical bundles.
    pub fn collect_bundles(&self, batch: &[usize]) -> Vec<RolloutBundle> {
        let one = |&q: &usize| {
            let mut r = rng::stream(self.cfg.seed, purpose::ROLLOUT, self.collection_step, q as u64);
            collect_bundle(&self.params, self.pool.get(q), self.cfg.rollout.sizes(), self.step, &mut r)
        };
        if self.cfg.serial {
            batch.iter().map(one).collect()
        } else {
            batch.par_iter().map(one).collect()
        }
    }

    /// Filtered candidate groups of every bundle, in bundle order.
    pub fn collect_step(&self, bundles: &[RolloutBundle]) -> Vec<Vec<RolloutGroup>> {
        let eps = self.cfg.update.eps_std;
        bundles
            .iter()
            .map(|b| filter_zero_advantage(build_candidate_groups(b, eps)))
            .collect()
    }

    fn observe_mastery(&mut self, bundles: &[RolloutBundle]) {
        if !self.cfg.mastery.enabled {
            return;
        }
        for b in bundles {
            // hints whose adversary gap survives the zero-signal filter
            let surviving: Vec<f64> = b
                .p_hinted
                .iter()
                .copied()
                .filter(|p| (b.p_clean - p).abs() >= ZERO_GAP)
                .collect();
            self.tracker
                .observe_rates(b.question.id, b.p_clean, &surviving, self.collection_step);
        }
    }

    /// Enqueues per question and per stream. A stream that hits backpressure
    /// is suspended and drops the rest of this step's candidates.
    pub fn route(&mut self, per_question: Vec<Vec<RolloutGroup>>) -> Routed {
        let frozen = self.adversary_frozen();
        let mut routed = Routed::default();
        for groups in per_question {
            for stream in Stream::ALL {
                let i = stream.index();
                let batch: Vec<RolloutGroup> = groups.iter().filter(|g| g.stream == stream).cloned().collect();
                if batch.is_empty() || (frozen && stream == Stream::Adversary) {
                    continue;
                }
                let units: usize = batch.iter().map(units_of).sum();
                if self.suspended[i] {
                    routed.suppressed[i] += units;
                    continue;
                }
                match self.queues[i].enqueue(batch) {
                    Ok(_) => routed.produced[i] += units,
                    Err(Error::Backpressure { .. }) => {
                        self.suspended[i] = true;
                        routed.suppressed[i] += units;
                    }
                    Err(e) => unreachable!("enqueue failed: {e}"),
                }
            }
        }
        for i in 0..3 {
            self.suppressed_total[i] += routed.suppressed[i];
        }
        routed
    }

    /// Flushes `stream` once if it holds at least its flush size after
    /// evicting stale groups. Returns the units evicted and the update report.
    pub fn maybe_flush(&mut self, stream: Stream) -> Result<(usize, Option<UpdateReport>)> {
        let i = stream.index();
        if !self.queues[i].is_ready() {
            return Ok((0, None));
        }
        let evicted = self.queues[i].evict_stale(self.step);
        if !self.queues[i].is_ready() {
            return Ok((evicted, None));
        }
        let m = self.queues[i].flush_size;
        let groups = self.queues[i].take_oldest(m, self.step);
        let (next, report) = update_stream(&self.params, &groups, &self.cfg.update, &mut self.optimizer, self.reference.as_ref())?;
        self.params = next;
        self.step += 1;
        self.stream_steps[i] += 1;
        Ok((evicted, Some(report)))
    }

    /// One full collection step.
    pub fn step_once(&mut self) -> Result<(StepMetrics, Vec<RolloutBundle>)> {
        let started = Instant::now();
        let batch = self.sample_batch()?;
        let bundles = self.collect_bundles(&batch);
        let n = bundles.len() as f64;
        let p1_bar = bundles.iter().map(|b| b.p_clean).sum::<f64>() / n;
        let p3_bar = bundles
            .iter()
            .map(|b| b.p_hinted.iter().sum::<f64>() / b.p_hinted.len() as f64)
            .sum::<f64>()
            / n;
        let groups = self.collect_step(&bundles);
        self.observe_mastery(&bundles);
        let routed = self.route(groups);

        let mut m = StepMetrics::new(self.collection_step, p1_bar, p3_bar);
        for stream in Stream::ALL {
            let i = stream.index();
            let (evicted, report) = self.maybe_flush(stream)?;
            let q = &self.queues[i];
            if self.suspended[i] && q.len() < q.capacity {
                self.suspended[i] = false;
            }
            let sm = StreamMetrics {
                queue_len: q.len(),
                produced: routed.produced[i],
                flushed: report.is_some(),
                evicted,
                suspended: routed.suppressed[i] > 0,
                loss: report.map(|r| r.loss),
                grad_norm: report.map(|r| r.grad_norm),
                clip_frac: report.map(|r| r.clip_frac),
                entropy: report.map(|r| r.entropy),
                approx_kl: report.map(|r| r.approx_kl),
            };
            match stream {
                Stream::Clean => m.clean = sm,
                Stream::Adversary => m.adversary = sm,
                Stream::Robust => m.robust = sm,
            }
        }
        m.optimizer_step = self.step;
        m.mastered_count = self.tracker.mastered_count();
        m.active_pool_size = self.pool.len() - m.mastered_count;
        m.pool_clean_success = pool_clean_success(&self.params, &self.pool);
        m.pool_flip_rate = pool_flip_rate(&self.params, &self.pool);
        if self.cfg.record_wall_time {
            m.wall_ms = started.elapsed().as_millis() as u64;
        }
        self.collection_step += 1;
        Ok((m, bundles))
    }

    /// Runs up to `num_steps` collection steps, stopping early once every
    /// question is retired. `on_step` sees each record and its bundles.
    pub fn run<F>(&mut self, num_steps: u64, mut on_step: F) -> Result<Vec<StepMetrics>>
    where
        F: FnMut(&StepMetrics, &[RolloutBundle]) -> Result<()>,
    {
        if num_steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        let mut trace = Vec::with_capacity(num_steps as usize);
        for _ in 0..num_steps {
            match self.step_once() {
                Ok((m, bundles)) => {
                    on_step(&m, &bundles)?;
                    trace.push(m);
                }
                Err(Error::TrainingComplete) => break,
                Err(e) => return Err(e),
            }
        }
        Ok(trace)
    }

    /// `run` without a callback.
    pub fn run_steps(&mut self, num_steps: u64) -> Result<Vec<StepMetrics>> {
        self.run(num_steps, |_, _| Ok(()))
    }
}
