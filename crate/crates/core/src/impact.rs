//! Merge-impact evaluation over a virtual copy of the machine queues.
//!
//! Completion estimates follow
//! `C = now + e_r + sum(mu_p + alpha * sigma_p) + (mu + alpha * sigma)`:
//! current time, the in-service task's estimated remainder, everything queued
//! ahead on the machine, then the task itself. Batch-queue tasks are placed on
//! the virtual machines in queue order, each onto the machine that becomes
//! available first (lowest index on ties), which is exactly what the live
//! engine does when every estimate is exact.

use crate::error::{Error, Result};
use crate::position::QueuingPolicy;
use crate::task::{is_late, MergedTask};

/// One member's identity and deadline inside a queued entry.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberDeadline {
    pub task_id: u64,
    pub arrival: f64,
    pub deadline: f64,
}

/// Scheduling-relevant view of a queued compound.
#[derive(Clone, Debug, PartialEq)]
pub struct QueueEntry {
    pub id: u64,
    /// Arrival used for FCFS ordering.
    pub arrival: f64,
    pub mean: f64,
    pub sd: f64,
    pub members: Vec<MemberDeadline>,
}

impl QueueEntry {
    pub fn from_merged(task: &MergedTask) -> Self {
        Self {
            id: task.id(),
            arrival: task.arrival(),
            mean: task.combined_mean(),
            sd: task.combined_sd(),
            members: task
                .members()
                .iter()
                .map(|m| MemberDeadline {
                    task_id: m.id,
                    arrival: m.arrival,
                    deadline: m.deadline,
                })
                .collect(),
        }
    }

    /// Single-member entry; handy for tests and bindings.
    pub fn single(id: u64, arrival: f64, mean: f64, sd: f64, deadline: f64) -> Self {
        Self {
            id,
            arrival,
            mean,
            sd,
            members: vec![MemberDeadline {
                task_id: id,
                arrival,
                deadline,
            }],
        }
    }

    pub fn estimate(&self, alpha: f64) -> f64 {
        (self.mean + alpha * self.sd).max(0.0)
    }

    pub fn earliest_deadline(&self) -> f64 {
        self.members
            .iter()
            .map(|m| m.deadline)
            .fold(f64::INFINITY, f64::min)
    }

    fn late_members(&self, completion: f64) -> usize {
        self.members
            .iter()
            .filter(|m| is_late(completion, m.deadline))
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InService {
    pub mean: f64,
    pub sd: f64,
    /// Time already spent in service.
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MachineState {
    pub in_service: Option<InService>,
    /// Tasks already handed to this machine, in service order.
    pub pending: Vec<QueueEntry>,
}

impl MachineState {
    pub fn idle() -> Self {
        Self::default()
    }

    /// Busy with a deterministic task that needs `remaining` more seconds.
    pub fn busy_for(remaining: f64) -> Self {
        Self {
            in_service: Some(InService {
                mean: remaining,
                sd: 0.0,
                elapsed: 0.0,
            }),
            pending: Vec::new(),
        }
    }

    /// Estimated remaining service time `e_r` of the in-service task.
    pub fn remaining(&self, alpha: f64) -> f64 {
        self.in_service
            .map(|s| (s.mean + alpha * s.sd - s.elapsed).max(0.0))
            .unwrap_or(0.0)
    }
}

/// Immutable picture of the system at `now`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SystemSnapshot {
    pub now: f64,
    pub machines: Vec<MachineState>,
    pub batch: Vec<QueueEntry>,
}

/// Availability times of the virtual machines.
#[derive(Clone, Debug)]
pub(crate) struct VirtualMachines {
    avail: Vec<f64>,
}

impl VirtualMachines {
    /// Machines after their in-service and pending work; `on_pending` sees each
    /// pending entry with its estimated completion.
    pub(crate) fn load(
        snapshot: &SystemSnapshot,
        alpha: f64,
        mut on_pending: impl FnMut(&QueueEntry, f64),
    ) -> Self {
        let avail = snapshot
            .machines
            .iter()
            .map(|m| {
                let mut t = snapshot.now + m.remaining(alpha);
                for p in &m.pending {
                    t += p.estimate(alpha);
                    on_pending(p, t);
                }
                t
            })
            .collect();
        Self { avail }
    }

    fn earliest(&self) -> usize {
        let mut best = 0;
        for (i, t) in self.avail.iter().enumerate().skip(1) {
            if *t < self.avail[best] {
                best = i;
            }
        }
        best
    }

    /// Completion if a task of estimate `est` went next.
    pub(crate) fn peek(&self, est: f64) -> f64 {
        self.avail[self.earliest()] + est
    }

    pub(crate) fn assign(&mut self, est: f64) -> f64 {
        let m = self.earliest();
        self.avail[m] += est;
        self.avail[m]
    }
}

/// Estimated completion of a candidate on machine `machine` behind `prefix`.
pub fn completion_time(
    snapshot: &SystemSnapshot,
    machine: usize,
    prefix: &[(f64, f64)],
    candidate: (f64, f64),
    alpha: f64,
) -> f64 {
    let est = |(mu, sd): (f64, f64)| (mu + alpha * sd).max(0.0);
    let mut t = snapshot.now + snapshot.machines[machine].remaining(alpha);
    for p in prefix {
        t += est(*p);
    }
    t + est(candidate)
}

/// A candidate merge of `arriving` into the batch entry at `existing_index`.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeProposal {
    pub existing_index: usize,
    /// The merged entry `existing + arriving`.
    pub compound: QueueEntry,
    /// The arriving task on its own.
    pub arriving: QueueEntry,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TaskVerdict {
    pub task_id: u64,
    pub deadline: f64,
    pub completion_with: f64,
    pub completion_without: f64,
}

impl TaskVerdict {
    pub fn late_with(&self) -> bool {
        is_late(self.completion_with, self.deadline)
    }

    pub fn late_without(&self) -> bool {
        is_late(self.completion_without, self.deadline)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImpactReport {
    /// All individual tasks late when the merge happens.
    pub misses_with_merge: usize,
    /// All individual tasks late when the two are queued separately.
    pub misses_without_merge: usize,
    /// Late tasks other than the merge pair, with the merge.
    pub other_misses_with: usize,
    /// Late tasks other than the merge pair, without it.
    pub other_misses_without: usize,
    pub merged_task_meets_deadline: bool,
    pub compound_completion: f64,
    pub verdicts: Vec<TaskVerdict>,
}

impl ImpactReport {
    /// The compound is on time and no other task is newly late.
    pub fn is_appropriate(&self) -> bool {
        self.merged_task_meets_deadline && self.other_misses_with <= self.other_misses_without
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Merge,
    Decline,
}

/// Merge unless it strictly increases the number of missed deadlines.
pub fn decide(report: &ImpactReport) -> Decision {
    if report.misses_with_merge <= report.misses_without_merge {
        Decision::Merge
    } else {
        Decision::Decline
    }
}

pub(crate) fn check_proposal(snapshot: &SystemSnapshot, proposal: &MergeProposal) -> Result<()> {
    if proposal.existing_index >= snapshot.batch.len() {
        return Err(Error::ExistingOutOfRange {
            index: proposal.existing_index,
            len: snapshot.batch.len(),
        });
    }
    Ok(())
}

/// Batch entries other than the merge target, in queue order.
pub(crate) fn base_queue(snapshot: &SystemSnapshot, existing_index: usize) -> Vec<&QueueEntry> {
    snapshot
        .batch
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != existing_index)
        .map(|(_, e)| e)
        .collect()
}

/// Estimated completion of every task with and without the merge, the
/// compound placed at `position` of the batch queue (with the existing task
/// removed). The without-merge branch queues the arriving task where
/// `policy` would put a fresh arrival.
pub fn evaluate_merge(
    snapshot: &SystemSnapshot,
    proposal: &MergeProposal,
    position: usize,
    alpha: f64,
    policy: QueuingPolicy,
) -> Result<ImpactReport> {
    check_proposal(snapshot, proposal)?;
    let base = base_queue(snapshot, proposal.existing_index);
    if position > base.len() {
        return Err(Error::PositionOutOfRange {
            position,
            max: base.len(),
        });
    }

    let mut verdicts = Vec::new();
    let mut pending_late = 0;
    let vm = VirtualMachines::load(snapshot, alpha, |entry, done| {
        pending_late += entry.late_members(done);
        for m in &entry.members {
            verdicts.push(TaskVerdict {
                task_id: m.task_id,
                deadline: m.deadline,
                completion_with: done,
                completion_without: done,
            });
        }
    });

    // With merge.
    let mut with_done = vec![0.0; base.len()];
    let mut compound_completion = 0.0;
    {
        let mut vm = vm.clone();
        for (k, entry) in base.iter().enumerate() {
            if k == position {
                compound_completion = vm.assign(proposal.compound.estimate(alpha));
            }
            with_done[k] = vm.assign(entry.estimate(alpha));
        }
        if position == base.len() {
            compound_completion = vm.assign(proposal.compound.estimate(alpha));
        }
    }

    // Without merge: the existing task stays put, the arrival goes where the
    // policy sends it.
    let existing = &snapshot.batch[proposal.existing_index];
    let insert_at = policy.insertion_index(&snapshot.batch, &proposal.arriving, alpha);
    let mut without_done = vec![0.0; base.len()];
    let mut existing_done = 0.0;
    let mut arriving_done = 0.0;
    {
        let mut vm = vm;
        for k in 0..=snapshot.batch.len() {
            if k == insert_at {
                arriving_done = vm.assign(proposal.arriving.estimate(alpha));
            }
            if k == snapshot.batch.len() {
                break;
            }
            let done = vm.assign(snapshot.batch[k].estimate(alpha));
            if k == proposal.existing_index {
                existing_done = done;
            } else {
                let b = if k < proposal.existing_index { k } else { k - 1 };
                without_done[b] = done;
            }
        }
    }

    let mut other_with = pending_late;
    let mut other_without = pending_late;
    for (k, entry) in base.iter().enumerate() {
        other_with += entry.late_members(with_done[k]);
        other_without += entry.late_members(without_done[k]);
        for m in &entry.members {
            verdicts.push(TaskVerdict {
                task_id: m.task_id,
                deadline: m.deadline,
                completion_with: with_done[k],
                completion_without: without_done[k],
            });
        }
    }
    let pair_with = existing.late_members(compound_completion)
        + proposal.arriving.late_members(compound_completion);
    let pair_without =
        existing.late_members(existing_done) + proposal.arriving.late_members(arriving_done);
    for (entry, alone) in [(existing, existing_done), (&proposal.arriving, arriving_done)] {
        for m in &entry.members {
            verdicts.push(TaskVerdict {
                task_id: m.task_id,
                deadline: m.deadline,
                completion_with: compound_completion,
                completion_without: alone,
            });
        }
    }

    Ok(ImpactReport {
        misses_with_merge: other_with + pair_with,
        misses_without_merge: other_without + pair_without,
        other_misses_with: other_with,
        other_misses_without: other_without,
        merged_task_meets_deadline: !is_late(
            compound_completion,
            proposal.compound.earliest_deadline(),
        ),
        compound_completion,
        verdicts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(now: f64, machines: Vec<MachineState>, batch: Vec<QueueEntry>) -> SystemSnapshot {
        SystemSnapshot {
            now,
            machines,
            batch,
        }
    }

    #[test]
    fn completion_time_examples() {
        let s = snap(100.0, vec![MachineState::idle()], vec![]);
        assert_eq!(completion_time(&s, 0, &[], (10.0, 1.0), 2.0), 112.0);

        let s = snap(100.0, vec![MachineState::busy_for(5.0)], vec![]);
        let prefix = [(10.0, 1.0), (20.0, 2.0)];
        assert_eq!(completion_time(&s, 0, &prefix, (10.0, 1.0), 2.0), 153.0);
        assert_eq!(completion_time(&s, 0, &prefix, (10.0, 1.0), 0.0), 145.0);
    }

    #[test]
    fn remaining_uses_alpha_and_clamps() {
        let m = MachineState {
            in_service: Some(InService {
                mean: 10.0,
                sd: 1.0,
                elapsed: 4.0,
            }),
            pending: vec![],
        };
        assert_eq!(m.remaining(2.0), 8.0);
        assert_eq!(m.remaining(0.0), 6.0);
        let overrun = MachineState {
            in_service: Some(InService {
                mean: 1.0,
                sd: 0.0,
                elapsed: 4.0,
            }),
            pending: vec![],
        };
        assert_eq!(overrun.remaining(2.0), 0.0);
    }

    /// Single machine; queue holds i (mu 10, deadline `di`); j (mu 10,
    /// deadline 40) merges data-only into a 16.5 s compound.
    fn pair(di: f64) -> (SystemSnapshot, MergeProposal) {
        let i = QueueEntry::single(1, 0.0, 10.0, 0.0, di);
        let j = QueueEntry::single(2, 0.0, 10.0, 0.0, 40.0);
        let mut compound = i.clone();
        compound.mean = 16.5;
        compound.members.extend(j.members.clone());
        (
            snap(0.0, vec![MachineState::idle()], vec![i]),
            MergeProposal {
                existing_index: 0,
                compound,
                arriving: j,
            },
        )
    }

    /// Exhaustive replay oracle for one machine: serve entries back to back.
    fn replay_misses(order: &[(f64, Vec<f64>)]) -> usize {
        let mut t = 0.0;
        let mut late = 0;
        for (mu, deadlines) in order {
            t += mu;
            late += deadlines.iter().filter(|d| t > **d).count();
        }
        late
    }

    #[test]
    fn tight_existing_deadline_declines() {
        let (s, p) = pair(15.0);
        let r = evaluate_merge(&s, &p, 0, 0.0, QueuingPolicy::Fcfs).unwrap();
        let with = replay_misses(&[(16.5, vec![15.0, 40.0])]);
        let without = replay_misses(&[(10.0, vec![15.0]), (10.0, vec![40.0])]);
        assert_eq!((with, without), (1, 0));
        assert_eq!(r.misses_with_merge, with);
        assert_eq!(r.misses_without_merge, without);
        assert!(!r.merged_task_meets_deadline);
        assert_eq!(decide(&r), Decision::Decline);
    }

    #[test]
    fn tie_merges() {
        let (s, p) = pair(30.0);
        let r = evaluate_merge(&s, &p, 0, 0.0, QueuingPolicy::Fcfs).unwrap();
        assert_eq!((r.misses_with_merge, r.misses_without_merge), (0, 0));
        assert!(r.merged_task_meets_deadline);
        assert_eq!(decide(&r), Decision::Merge);
    }

    #[test]
    fn decide_examples() {
        let mk = |w, wo| ImpactReport {
            misses_with_merge: w,
            misses_without_merge: wo,
            other_misses_with: 0,
            other_misses_without: 0,
            merged_task_meets_deadline: true,
            compound_completion: 0.0,
            verdicts: vec![],
        };
        assert_eq!(decide(&mk(0, 0)), Decision::Merge);
        assert_eq!(decide(&mk(2, 1)), Decision::Decline);
        assert_eq!(decide(&mk(1, 2)), Decision::Merge);
    }

    #[test]
    fn out_of_range_position_is_rejected() {
        let (s, p) = pair(30.0);
        assert!(matches!(
            evaluate_merge(&s, &p, 1, 0.0, QueuingPolicy::Fcfs),
            Err(Error::PositionOutOfRange { position: 1, max: 0 })
        ));
        let bad = MergeProposal {
            existing_index: 3,
            ..p
        };
        assert!(evaluate_merge(&s, &bad, 0, 0.0, QueuingPolicy::Fcfs).is_err());
    }

    #[test]
    fn verdicts_cover_every_task_once() {
        let batch = vec![
            QueueEntry::single(1, 0.0, 3.0, 0.0, 5.0),
            QueueEntry::single(2, 0.0, 4.0, 0.0, 9.0),
            QueueEntry::single(3, 0.0, 2.0, 0.0, 20.0),
        ];
        let mut machines = vec![MachineState::busy_for(1.0), MachineState::idle()];
        machines[0]
            .pending
            .push(QueueEntry::single(9, 0.0, 2.0, 0.0, 2.5));
        let s = snap(0.0, machines, batch);
        let arriving = QueueEntry::single(4, 0.0, 4.0, 0.0, 30.0);
        let mut compound = s.batch[1].clone();
        compound.mean = 5.0;
        compound.members.extend(arriving.members.clone());
        let p = MergeProposal {
            existing_index: 1,
            compound,
            arriving,
        };
        let r = evaluate_merge(&s, &p, 1, 0.0, QueuingPolicy::Fcfs).unwrap();
        let mut ids: Vec<u64> = r.verdicts.iter().map(|v| v.task_id).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3, 4, 9]);
        let with = r.verdicts.iter().filter(|v| v.late_with()).count();
        let without = r.verdicts.iter().filter(|v| v.late_without()).count();
        assert_eq!(with, r.misses_with_merge);
        assert_eq!(without, r.misses_without_merge);
        // Hand replay: pending task 9 finishes at 3.0 > 2.5 in both branches;
        // the compound follows task 1 onto machine 0 at t=3 and ends at 8.
        assert_eq!((r.other_misses_with, r.other_misses_without), (1, 1));
        assert_eq!(r.compound_completion, 8.0);
    }

    #[test]
    fn evaluation_leaves_snapshot_untouched() {
        let (s, p) = pair(30.0);
        let copy = s.clone();
        let a = evaluate_merge(&s, &p, 0, 2.0, QueuingPolicy::Edf).unwrap();
        let b = evaluate_merge(&s, &p, 0, 2.0, QueuingPolicy::Edf).unwrap();
        assert_eq!(s, copy);
        assert_eq!(a, b);
    }
}
