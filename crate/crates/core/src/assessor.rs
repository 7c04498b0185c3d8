//! Oversubscription level (OSL) and the adaptive standard-deviation
//! coefficient derived from it.
//!
//! Each queued task contributes its estimated lateness relative to how long
//! it could afford to wait, `(C - deadline) / W` with `W = deadline - A - E`.
//! Infeasible tasks (`W <= 0`) and on-time tasks contribute zero. The
//! reading is the mean contribution over all queued tasks.

use crate::impact::{QueueEntry, SystemSnapshot, VirtualMachines};
use crate::task::{is_late, waitable_time};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OslWindow {
    /// Estimated over the live queues.
    CurrentEstimate,
    /// Observed over completed tasks.
    PastObserved,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OslReading {
    /// Unclamped; single contributions may exceed 1.
    pub value: f64,
    pub window: OslWindow,
    pub sample_count: usize,
}

impl OslReading {
    fn from_sum(sum: f64, n: usize, window: OslWindow) -> Self {
        Self {
            value: if n == 0 { 0.0 } else { sum / n as f64 },
            window,
            sample_count: n,
        }
    }
}

/// Miss severity of one task.
pub fn contribution(arrival: f64, deadline: f64, est_exec: f64, completion: f64) -> f64 {
    let w = waitable_time(arrival, deadline, est_exec);
    if w <= 0.0 || !is_late(completion, deadline) {
        0.0
    } else {
        (completion - deadline) / w
    }
}

fn entry_contribution(entry: &QueueEntry, completion: f64, beta: f64) -> f64 {
    let est = entry.estimate(beta);
    entry
        .members
        .iter()
        .map(|m| contribution(m.arrival, m.deadline, est, completion))
        .sum()
}

/// Current OSL over every task waiting in machine queues or the batch queue.
/// Completions are estimated with `alpha = beta`; compound members share the
/// compound's estimate. Tasks already in service are not counted.
pub fn osl(snapshot: &SystemSnapshot, beta: f64) -> OslReading {
    let mut sum = 0.0;
    let mut n = 0;
    let mut vm = VirtualMachines::load(snapshot, beta, |entry, done| {
        sum += entry_contribution(entry, done, beta);
        n += entry.members.len();
    });
    for entry in &snapshot.batch {
        let done = vm.assign(entry.estimate(beta));
        sum += entry_contribution(entry, done, beta);
        n += entry.members.len();
    }
    OslReading::from_sum(sum, n, OslWindow::CurrentEstimate)
}

/// One finished task as seen by the observed-window reading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompletionRecord {
    pub arrival: f64,
    pub deadline: f64,
    /// Estimated execution time used for `W`.
    pub est_exec: f64,
    pub completion: f64,
}

/// Completions with `start < completion <= end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    /// The `length` seconds up to `end`.
    pub fn trailing(end: f64, length: f64) -> Self {
        Self {
            start: end - length,
            end,
        }
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.start && t <= self.end
    }
}

/// Same formula over observed completion times.
pub fn osl_observed(records: &[CompletionRecord], window: TimeWindow) -> OslReading {
    let mut sum = 0.0;
    let mut n = 0;
    for r in records.iter().filter(|r| window.contains(r.completion)) {
        sum += contribution(r.arrival, r.deadline, r.est_exec, r.completion);
        n += 1;
    }
    OslReading::from_sum(sum, n, OslWindow::PastObserved)
}

/// `beta - 2 * beta * OSL` with OSL clamped to `[0, 1]`.
pub fn adaptive_alpha(osl_value: f64, beta: f64) -> f64 {
    let o = if osl_value.is_nan() { 0.0 } else { osl_value.clamp(0.0, 1.0) };
    beta - 2.0 * beta * o
}

/// Diagnostic only: share of windowed completions that missed.
pub fn raw_miss_ratio(records: &[CompletionRecord], window: TimeWindow) -> f64 {
    let inside: Vec<_> = records.iter().filter(|r| window.contains(r.completion)).collect();
    if inside.is_empty() {
        return 0.0;
    }
    inside.iter().filter(|r| is_late(r.completion, r.deadline)).count() as f64 / inside.len() as f64
}

/// Diagnostic only: offered work per unit of machine capacity over a window,
/// `sum(mu of arrivals) / (machines * length)`.
pub fn arrival_service_ratio(arrival_means: &[(f64, f64)], machines: usize, window: TimeWindow) -> f64 {
    let length = window.end - window.start;
    if machines == 0 || length <= 0.0 {
        return 0.0;
    }
    let work: f64 = arrival_means
        .iter()
        .filter(|(t, _)| window.contains(*t))
        .map(|(_, mu)| mu)
        .sum();
    work / (machines as f64 * length)
}
