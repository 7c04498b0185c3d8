//! Where a compound goes in the batch queue.
//!
//! With the queuing policy maintained the compound is re-inserted by the
//! policy's own comparator. With the policy relaxed, a heuristic probes
//! candidate slots through the impact evaluator; [`probe_exhaustive`] tries
//! every slot and serves as the test oracle.
//!
//! Positions index the batch queue with the existing (merge target) entry
//! removed, so a batch of `n + 1` entries offers `n + 1` slots.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::impact::{
    base_queue, check_proposal, evaluate_merge, ImpactReport, MergeProposal, QueueEntry,
    SystemSnapshot, VirtualMachines,
};
use crate::task::{is_late, urgency};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueuingPolicy {
    Fcfs,
    Edf,
    MaxUrgency,
}

impl QueuingPolicy {
    pub const ALL: [QueuingPolicy; 3] = [QueuingPolicy::Fcfs, QueuingPolicy::Edf, QueuingPolicy::MaxUrgency];

    pub fn as_str(self) -> &'static str {
        match self {
            QueuingPolicy::Fcfs => "fcfs",
            QueuingPolicy::Edf => "edf",
            QueuingPolicy::MaxUrgency => "max_urgency",
        }
    }

    /// `Less` means `a` is served before `b`. Ties fall back to the id.
    pub fn compare(self, a: &QueueEntry, b: &QueueEntry, alpha: f64) -> Ordering {
        let primary = match self {
            QueuingPolicy::Fcfs => a.arrival.total_cmp(&b.arrival),
            QueuingPolicy::Edf => a.earliest_deadline().total_cmp(&b.earliest_deadline()),
            QueuingPolicy::MaxUrgency => urgency(a.earliest_deadline(), a.estimate(alpha))
                .priority_cmp(&urgency(b.earliest_deadline(), b.estimate(alpha))),
        };
        primary.then(a.id.cmp(&b.id))
    }

    /// Slot a fresh entry takes: in front of the first entry it beats.
    pub fn insertion_index(self, queue: &[QueueEntry], entry: &QueueEntry, alpha: f64) -> usize {
        queue
            .iter()
            .position(|q| self.compare(entry, q, alpha) == Ordering::Less)
            .unwrap_or(queue.len())
    }
}

impl fmt::Display for QueuingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QueuingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "fcfs" => Ok(QueuingPolicy::Fcfs),
            "edf" => Ok(QueuingPolicy::Edf),
            "max_urgency" | "mu" | "maxurgency" => Ok(QueuingPolicy::MaxUrgency),
            other => Err(Error::InvalidConfig(format!("unknown queuing policy `{other}`"))),
        }
    }
}

/// Which arrival a FCFS compound inherits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FcfsMergeArrival {
    /// Keep the existing task's spot.
    #[default]
    Existing,
    /// Take the arriving task's arrival time (back of the queue).
    Arriving,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionMode {
    #[default]
    Maintained,
    Relaxed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxedHeuristic {
    #[default]
    Linear,
    Logarithmic,
    Exhaustive,
}

impl FromStr for RelaxedHeuristic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_lowercase().as_str() {
            "linear" => Ok(RelaxedHeuristic::Linear),
            "logarithmic" | "log" => Ok(RelaxedHeuristic::Logarithmic),
            "exhaustive" => Ok(RelaxedHeuristic::Exhaustive),
            other => Err(Error::InvalidConfig(format!("unknown relaxed heuristic `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    Place(usize),
    CancelMerge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PositionDecision {
    pub outcome: Placement,
    /// Impact evaluations spent.
    pub probes_used: usize,
}

impl PositionDecision {
    fn cancel(probes_used: usize) -> Self {
        Self {
            outcome: Placement::CancelMerge,
            probes_used,
        }
    }

    fn place(index: usize, probes_used: usize) -> Self {
        Self {
            outcome: Placement::Place(index),
            probes_used,
        }
    }
}

/// Policy-respecting slot for the compound in `queue` (which still holds the
/// existing entry at `existing_index`). The result indexes the queue with the
/// existing entry removed.
pub fn position_maintained(
    queue: &[QueueEntry],
    existing_index: usize,
    compound: &QueueEntry,
    policy: QueuingPolicy,
    fcfs: FcfsMergeArrival,
    alpha: f64,
) -> usize {
    if policy == QueuingPolicy::Fcfs && fcfs == FcfsMergeArrival::Existing {
        return existing_index;
    }
    let rest: Vec<QueueEntry> = queue
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != existing_index)
        .map(|(_, e)| e.clone())
        .collect();
    policy.insertion_index(&rest, compound, alpha)
}

/// Binary probing: evaluate the middle of the remaining range and steer by
/// who suffers. Compound late but others fine: go earlier. Compound on time
/// but others hurt: go later. Both: give up. Neither: take it.
pub fn probe_logarithmic(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    alpha: f64,
    policy: QueuingPolicy,
) -> Result<PositionDecision, Error> {
    check_proposal(snapshot, proposal)?;
    let n = snapshot.batch.len() - 1;
    let (mut lo, mut hi) = (0isize, n as isize);
    let mut probes = 0;
    while lo <= hi {
        let mid = ((lo + hi) / 2) as usize;
        let report = evaluate_merge(snapshot, proposal, mid, alpha, policy)?;
        probes += 1;
        let compound_late = !report.merged_task_meets_deadline;
        let others_hurt = report.other_misses_with > report.other_misses_without;
        match (compound_late, others_hurt) {
            (false, false) => return Ok(PositionDecision::place(mid, probes)),
            (true, false) => hi = mid as isize - 1,
            (false, true) => lo = mid as isize + 1,
            (true, true) => return Ok(PositionDecision::cancel(probes)),
        }
    }
    Ok(PositionDecision::cancel(probes))
}

/// Two-phase linear probing, for FCFS-ordered queues. Phase one scans the
/// queue once for the latest slot at which the compound still meets its
/// earliest deadline; phase two verifies that slot with one impact evaluation.
pub fn probe_linear(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    alpha: f64,
    policy: QueuingPolicy,
) -> Result<PositionDecision, Error> {
    // With no feasible slot the head is the candidate; it fails verification.
    let slot = latest_feasible_slot(snapshot, proposal, alpha)?.unwrap_or(0);
    let report = evaluate_merge(snapshot, proposal, slot, alpha, policy)?;
    if report.is_appropriate() {
        Ok(PositionDecision::place(slot, 1))
    } else {
        Ok(PositionDecision::cancel(1))
    }
}

/// Last slot where the compound meets its earliest deadline given only the
/// work ahead of it, or `None` if even the head is too late.
pub fn latest_feasible_slot(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    alpha: f64,
) -> Result<Option<usize>, Error> {
    check_proposal(snapshot, proposal)?;
    let base = base_queue(snapshot, proposal.existing_index);
    let deadline = proposal.compound.earliest_deadline();
    let est = proposal.compound.estimate(alpha);
    let mut vm = VirtualMachines::load(snapshot, alpha, |_, _| {});
    let mut latest = None;
    for slot in 0..=base.len() {
        if is_late(vm.peek(est), deadline) {
            break;
        }
        latest = Some(slot);
        if let Some(entry) = base.get(slot) {
            vm.assign(entry.estimate(alpha));
        }
    }
    Ok(latest)
}

/// Every slot where the merge is appropriate, with its report.
pub fn appropriate_positions(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    alpha: f64,
    policy: QueuingPolicy,
) -> Result<Vec<(usize, ImpactReport)>, Error> {
    check_proposal(snapshot, proposal)?;
    let n = snapshot.batch.len() - 1;
    let mut out = Vec::new();
    for slot in 0..=n {
        let report = evaluate_merge(snapshot, proposal, slot, alpha, policy)?;
        if report.is_appropriate() {
            out.push((slot, report));
        }
    }
    Ok(out)
}

/// Evaluates all slots and takes the latest appropriate one.
pub fn probe_exhaustive(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    alpha: f64,
    policy: QueuingPolicy,
) -> Result<PositionDecision, Error> {
    let probes = snapshot.batch.len();
    let found = appropriate_positions(snapshot, proposal, alpha, policy)?;
    Ok(match found.last() {
        Some((slot, _)) => PositionDecision::place(*slot, probes),
        None => PositionDecision::cancel(probes),
    })
}
