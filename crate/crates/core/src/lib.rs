//! Self-play adversarial hint training on synthetic verifiable tasks.
//!
//! One tabular policy plays two roles. As the adversary it writes short hints
//! that try to steer the reasoner toward a wrong answer; as the reasoner it
//! answers questions with and without those hints. Each question yields a
//! paired rollout bundle (clean answers, hints, hinted answers) from which
//! three training streams are built: clean GRPO, adversary REINFORCE on the
//! hint-effectiveness gap, and robustness GRPO within each hint. The streams
//! are buffered in bounded FIFO queues and flushed at their own cadence.
//!
//! Modules, bottom up:
//!
//! * [`tasks`]: synthetic questions and the binary verifier;
//! * [`policy`]: role-conditioned softmax tables with analytic gradients;
//! * [`bundle`]: paired rollout collection;
//! * [`credit`]: advantages, adversary rewards, zero-advantage filtering;
//! * [`update`]: branch losses and optimizers;
//! * [`queue`] and [`orchestrator`]: buffered stream training loop;
//! * [`mastery`]: retirement of mastered questions and the audit;
//! * [`sched`]: rollout scheduling simulator;
//! * [`diagnostics`]: attack-strength statistics over a metrics trace;
//! * [`config`]: run configuration.

pub mod bundle;
pub mod config;
pub mod credit;
pub mod diagnostics;
pub mod error;
pub mod policy;
pub mod queue;
pub mod mastery;
pub mod orchestrator;
pub mod rng;
pub mod sched;
pub mod tasks;
pub mod update;

pub use error::{Error, Result};
