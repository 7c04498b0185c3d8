//! Impact evaluation against a brute-force event replay.

use proptest::prelude::*;

use taskmerge::impact::{evaluate_merge, InService, MachineState, MergeProposal, QueueEntry, SystemSnapshot};
use taskmerge::position::QueuingPolicy;

const ALPHA: f64 = 2.0;

/// Replays `queue` on the machines tick by tick: at each event time, idle
/// machines take the queue head in index order. Returns per-entry completion
/// and the completion of each machine's pending work.
fn replay(snap: &SystemSnapshot, queue: &[QueueEntry]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let est = |mu: f64, sd: f64| (mu + ALPHA * sd).max(0.0);
    let mut busy_until: Vec<f64> = Vec::new();
    let mut pending_done = Vec::new();
    for m in &snap.machines {
        let mut t = snap.now;
        if let Some(s) = m.in_service {
            t += (est(s.mean, s.sd) - s.elapsed).max(0.0);
        }
        let mut done = Vec::new();
        for p in &m.pending {
            t += est(p.mean, p.sd);
            done.push(t);
        }
        busy_until.push(t);
        pending_done.push(done);
    }
    let mut out = vec![0.0; queue.len()];
    let mut next = 0;
    let mut clock = snap.now;
    while next < queue.len() {
        clock = busy_until.iter().cloned().fold(f64::INFINITY, f64::min).max(clock);
        for free in busy_until.iter_mut() {
            if next < queue.len() && *free <= clock {
                *free = clock + est(queue[next].mean, queue[next].sd);
                out[next] = *free;
                next += 1;
            }
        }
    }
    (out, pending_done)
}

fn late(entry: &QueueEntry, done: f64) -> usize {
    entry.members.iter().filter(|m| done > m.deadline + 1e-6).count()
}

fn entry_strategy(id: u64) -> impl Strategy<Value = QueueEntry> {
    (0.0..5.0f64, 1.0..6.0f64, 0.0..0.5f64, 1.0..30.0f64)
        .prop_map(move |(arr, mu, sd, slack)| QueueEntry::single(id, arr, mu, sd, arr + slack))
}

fn machine_strategy() -> impl Strategy<Value = MachineState> {
    (0usize..3, 0.5..6.0f64, 0.0..0.3f64, prop::option::of(entry_strategy(90))).prop_map(|(kind, mu, sd, p)| {
        let mut m = match kind {
            0 => MachineState::idle(),
            _ => MachineState {
                in_service: Some(InService { mean: mu, sd, elapsed: mu / 3.0 }),
                pending: Vec::new(),
            },
        };
        if kind == 2 {
            m.pending.extend(p);
        }
        m
    })
}

fn case_strategy() -> impl Strategy<Value = (SystemSnapshot, MergeProposal, usize)> {
    (
        prop::collection::vec(machine_strategy(), 1..=2),
        (1usize..=6).prop_flat_map(|n| (0..n as u64).map(entry_strategy).collect::<Vec<_>>()),
        1.0..6.0f64,
        1.0..30.0f64,
        any::<prop::sample::Index>(),
        any::<prop::sample::Index>(),
    )
        .prop_map(|(machines, mut batch, mu, slack, ex, pos)| {
            batch.sort_by(|a, b| a.arrival.total_cmp(&b.arrival));
            let now = 5.0;
            let existing_index = ex.index(batch.len());
            let arriving = QueueEntry::single(50, now, mu, 0.1, now + slack);
            let mut compound = batch[existing_index].clone();
            compound.mean += 0.35 * mu;
            compound.members.extend(arriving.members.clone());
            let position = pos.index(batch.len());
            (
                SystemSnapshot { now, machines, batch },
                MergeProposal { existing_index, compound, arriving },
                position,
            )
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn miss_counts_match_replay((snap, prop, position) in case_strategy()) {
        let report = evaluate_merge(&snap, &prop, position, ALPHA, QueuingPolicy::Fcfs).unwrap();

        let mut base: Vec<QueueEntry> = snap.batch.clone();
        let existing = base.remove(prop.existing_index);
        let mut with = base.clone();
        with.insert(position, prop.compound.clone());
        // FCFS: the arrival is the newest task, so it joins the tail.
        let mut without = snap.batch.clone();
        without.push(prop.arriving.clone());

        let (with_done, pending) = replay(&snap, &with);
        let (without_done, _) = replay(&snap, &without);
        let pending_late: usize = snap
            .machines
            .iter()
            .zip(&pending)
            .flat_map(|(m, d)| m.pending.iter().zip(d))
            .map(|(e, &t)| late(e, t))
            .sum();

        let compound_done = with_done[position];
        let other_with: usize = pending_late
            + with.iter().zip(&with_done).enumerate()
                .filter(|(k, _)| *k != position)
                .map(|(_, (e, &t))| late(e, t))
                .sum::<usize>();
        let mut other_without = pending_late;
        let mut pair_without = 0;
        for (k, (e, &t)) in without.iter().zip(&without_done).enumerate() {
            if k == prop.existing_index || k == without.len() - 1 {
                pair_without += late(e, t);
            } else {
                other_without += late(e, t);
            }
        }
        let pair_with = late(&existing, compound_done) + late(&prop.arriving, compound_done);

        prop_assert!((report.compound_completion - compound_done).abs() < 1e-9);
        prop_assert_eq!(report.other_misses_with, other_with);
        prop_assert_eq!(report.other_misses_without, other_without);
        prop_assert_eq!(report.misses_with_merge, other_with + pair_with);
        prop_assert_eq!(report.misses_without_merge, other_without + pair_without);
        prop_assert_eq!(report.merged_task_meets_deadline, late(&prop.compound, compound_done) == 0);
    }
}
