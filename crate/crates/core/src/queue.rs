//! Bounded FIFO pending queue for one update stream.
//!
//! Sizes are counted in units: one unit per group for the clean and robust
//! streams, one unit per hint trajectory for the adversary stream (its flush
//! size is a trajectory count). Taking units from the front may split an
//! adversary group; the remainder keeps its place and birth step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::credit::{RolloutGroup, Stream};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueEvent {
    Enqueued { serial: u64, units: usize, birth_step: u64 },
    Consumed { serial: u64, units: usize, lag: u64 },
    Evicted { serial: u64, units: usize, lag: u64 },
}

#[derive(Debug, Clone)]
pub struct StreamQueue {
    stream: Stream,
    pending: VecDeque<(u64, RolloutGroup)>,
    units: usize,
    pub flush_size: usize,
    pub capacity: usize,
    pub max_lag: u64,
    next_serial: u64,
    pub produced_total: usize,
    pub consumed_total: usize,
    pub evicted_total: usize,
    /// Largest `step - birth_step` among consumed units.
    pub max_consumed_lag: u64,
    journal: Option<Vec<QueueEvent>>,
}

pub fn units_of(group: &RolloutGroup) -> usize {
    match group.stream {
        Stream::Adversary => group.len(),
        Stream::Clean | Stream::Robust => 1,
    }
}

impl StreamQueue {
    pub fn new(stream: Stream, flush_size: usize, capacity: usize, max_lag: u64) -> Self {
        assert!(flush_size >= 1, "flush size must be positive");
        assert!(capacity >= flush_size, "capacity below flush size");
        StreamQueue {
            stream,
            pending: VecDeque::new(),
            units: 0,
            flush_size,
            capacity,
            max_lag,
            next_serial: 0,
            produced_total: 0,
            consumed_total: 0,
            evicted_total: 0,
            max_consumed_lag: 0,
            journal: None,
        }
    }

    /// Keep a log of every enqueue, consumption and eviction.
    pub fn with_journal(mut self) -> Self {
        self.journal = Some(Vec::new());
        self
    }

    pub fn journal(&self) -> Option<&[QueueEvent]> {
        self.journal.as_deref()
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Pending size in units.
    pub fn len(&self) -> usize {
        self.units
    }

    pub fn is_empty(&self) -> bool {
        self.units == 0
    }

    pub fn pending_groups(&self) -> impl Iterator<Item = &RolloutGroup> {
        self.pending.iter().map(|(_, g)| g)
    }

    pub fn is_ready(&self) -> bool {
        self.units >= self.flush_size
    }

    fn log(&mut self, event: QueueEvent) {
        if let Some(j) = self.journal.as_mut() {
            j.push(event);
        }
    }

    /// Appends `groups` in order, or none of them if they would overflow
    /// the capacity. Returns the number of groups accepted.
    pub fn enqueue(&mut self, groups: Vec<RolloutGroup>) -> Result<usize> {
        assert!(
            groups.iter().all(|g| g.stream == self.stream),
            "group routed to the {} queue from another stream",
            self.stream
        );
        let incoming: usize = groups.iter().map(units_of).sum();
        if self.units + incoming > self.capacity {
            return Err(Error::Backpressure {
                stream: self.stream,
                len: self.units,
                capacity: self.capacity,
                incoming,
            });
        }
        let accepted = groups.len();
        for g in groups {
            let units = units_of(&g);
            let serial = self.next_serial;
            self.next_serial += 1;
            self.log(QueueEvent::Enqueued {
                serial,
                units,
                birth_step: g.birth_step,
            });
            self.units += units;
            self.produced_total += units;
            self.pending.push_back((serial, g));
        }
        Ok(accepted)
    }

    /// Removes every group older than `max_lag` optimizer steps, keeping the
    /// survivors in order. Returns the number of units evicted.
    pub fn evict_stale(&mut self, current_step: u64) -> usize {
        let max_lag = self.max_lag;
        let mut evicted = Vec::new();
        let mut kept = VecDeque::with_capacity(self.pending.len());
        for (serial, g) in self.pending.drain(..) {
            let lag = current_step.saturating_sub(g.birth_step);
            if lag > max_lag {
                evicted.push((serial, units_of(&g), lag));
            } else {
                kept.push_back((serial, g));
            }
        }
        self.pending = kept;
        let mut total = 0;
        for (serial, units, lag) in evicted {
            total += units;
            self.log(QueueEvent::Evicted { serial, units, lag });
        }
        self.units -= total;
        self.evicted_total += total;
        total
    }

    /// Removes exactly `units` units from the front (splitting the last
    /// adversary group if needed). Panics if fewer are pending.
    pub fn take_oldest(&mut self, units: usize, current_step: u64) -> Vec<RolloutGroup> {
        assert!(units <= self.units, "taking {units} units from a queue of {}", self.units);
        let mut out = Vec::new();
        let mut remaining = units;
        while remaining > 0 {
            let (serial, mut g) = self.pending.pop_front().expect("queue accounting");
            let lag = current_step.saturating_sub(g.birth_step);
            let have = units_of(&g);
            let took = if have > remaining {
                // only adversary groups hold more than one unit
                let rest_traj = g.trajectories.split_off(remaining);
                let rest_adv = g.advantages.split_off(remaining);
                let rest = RolloutGroup {
                    trajectories: rest_traj,
                    advantages: rest_adv,
                    ..g.clone()
                };
                self.pending.push_front((serial, rest));
                remaining
            } else {
                have
            };
            self.log(QueueEvent::Consumed {
                serial,
                units: took,
                lag,
            });
            self.max_consumed_lag = self.max_consumed_lag.max(lag);
            remaining -= took;
            out.push(g);
        }
        self.units -= units;
        self.consumed_total += units;
        out
    }

    /// `produced == consumed + evicted + pending`.
    pub fn is_conserved(&self) -> bool {
        self.produced_total == self.consumed_total + self.evicted_total + self.units
    }
}
