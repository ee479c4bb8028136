//! Bounded per-agent trajectory log.

use std::collections::VecDeque;

use crate::error::{contract, Result};

/// Default capacity; covers both the 19-entry act window and the 10-entry
/// cooperation window.
pub const DEFAULT_HISTORY_CAPACITY: usize = 32;
/// Shortest history the act window needs.
pub const MIN_HISTORY_CAPACITY: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub iteration: usize,
    /// Objective value at the published state.
    pub best_fitness: f64,
    pub divergence: f64,
    /// `|x_i(t) - x_i(t-1)|` of the agent-level state.
    pub state_delta: f64,
    /// Mean distance to the neighbors' published states.
    pub local_disagreement: f64,
}

#[derive(Debug, Clone)]
pub struct AgentHistory {
    records: VecDeque<HistoryRecord>,
    capacity: usize,
}

impl AgentHistory {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(MIN_HISTORY_CAPACITY);
        Self {
            records: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends a record, evicting the oldest when full. Iterations must be
    /// strictly increasing.
    pub fn push(&mut self, record: HistoryRecord) -> Result<()> {
        if let Some(last) = self.records.back() {
            if record.iteration <= last.iteration {
                return Err(contract(format!(
                    "history iteration {} does not follow {}",
                    record.iteration, last.iteration
                )));
            }
        }
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last(&self) -> Option<&HistoryRecord> {
        self.records.back()
    }

    /// The most recent `min(window, len)` records, oldest first.
    pub fn recent(&self, window: usize) -> Vec<HistoryRecord> {
        let skip = self.records.len().saturating_sub(window);
        self.records.iter().skip(skip).copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.records.iter()
    }
}
