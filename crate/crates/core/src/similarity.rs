//! Three-level mergeable-task detection.
//!
//! One hash table per [`SimilarityLevel`], each mapping a level key to the
//! queued compound that currently owns it. Detection probes the tables from
//! the task level down, so it costs at most three probes regardless of
//! queue length. Keys are an index, not an identity: every hit is confirmed
//! by comparing the canonical fields stored alongside it, so a hash
//! collision degrades to "no match" rather than a wrong merge.

use std::cell::Cell;
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use crate::task::{OpType, SimilarityLevel, Task};

/// Handle of a queued compound (its first member's task id).
pub type TargetId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LevelKeys {
    pub task_key: u64,
    pub data_op_key: u64,
    pub data_key: u64,
}

impl LevelKeys {
    pub fn get(&self, level: SimilarityLevel) -> u64 {
        match level {
            SimilarityLevel::TaskLevel => self.task_key,
            SimilarityLevel::DataAndOperation => self.data_op_key,
            SimilarityLevel::DataOnly => self.data_key,
        }
    }
}

fn hash_of<T: Hash>(value: &T) -> u64 {
    // DefaultHasher::new() uses fixed keys, so keys are stable within a build.
    let mut h = DefaultHasher::new();
    value.hash(&mut h);
    h.finish()
}

pub fn make_keys(task: &Task) -> LevelKeys {
    let data = (task.stream_id, task.segment_idx);
    let op = task.op.op_type();
    LevelKeys {
        task_key: hash_of(&(0u8, data, op, task.op.params())),
        data_op_key: hash_of(&(1u8, data, op)),
        data_key: hash_of(&(2u8, data)),
    }
}

/// Canonical fields an entry was created from.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Signature {
    stream_id: u64,
    segment_idx: u32,
    op_type: OpType,
    params: Vec<String>,
}

impl Signature {
    fn of(task: &Task) -> Self {
        Self {
            stream_id: task.stream_id,
            segment_idx: task.segment_idx,
            op_type: task.op.op_type(),
            params: task.op.params().to_vec(),
        }
    }

    fn matches(&self, task: &Task, level: SimilarityLevel) -> bool {
        let data = self.stream_id == task.stream_id && self.segment_idx == task.segment_idx;
        match level {
            SimilarityLevel::DataOnly => data,
            SimilarityLevel::DataAndOperation => data && self.op_type == task.op.op_type(),
            SimilarityLevel::TaskLevel => {
                data && self.op_type == task.op.op_type() && self.params == task.op.params()
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Entry {
    signature: Signature,
    target: TargetId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Match {
    pub level: SimilarityLevel,
    pub target: TargetId,
}

/// What the engine actually did with an arriving task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmitOutcome {
    /// Merged into `target` as an identical task.
    MergedTaskLevel { target: TargetId },
    /// Merged into `target` at a lower level; `target` is now the compound.
    MergedLower { target: TargetId },
    /// Matched `declined` but was queued on its own.
    NotMerged { declined: TargetId },
    /// Nothing matched; queued on its own.
    NoMatch,
}

fn slot(level: SimilarityLevel) -> usize {
    match level {
        SimilarityLevel::TaskLevel => 0,
        SimilarityLevel::DataAndOperation => 1,
        SimilarityLevel::DataOnly => 2,
    }
}

#[derive(Debug, Default)]
pub struct SimilarityIndex {
    tables: [HashMap<u64, Entry>; 3],
    /// Reverse map so dequeue never scans the tables.
    owned: HashMap<TargetId, Vec<(SimilarityLevel, u64)>>,
    probes: Cell<u64>,
}

impl SimilarityIndex {
    pub fn new() -> Self {
        Self::default()
    }

    /// Highest-level confirmed match for `task`, if any.
    pub fn lookup(&self, task: &Task) -> Option<Match> {
        let keys = make_keys(task);
        for level in SimilarityLevel::DESCENDING {
            self.probes.set(self.probes.get() + 1);
            if let Some(entry) = self.tables[slot(level)].get(&keys.get(level)) {
                if entry.signature.matches(task, level) {
                    return Some(Match {
                        level,
                        target: entry.target,
                    });
                }
            }
        }
        None
    }

    /// Applies the table update for an admission decision.
    ///
    /// Panics if `outcome` is inconsistent with what [`lookup`](Self::lookup)
    /// reports for `arriving`: that is a bug in the caller, not bad input.
    pub fn on_admit(&mut self, arriving: &Task, outcome: AdmitOutcome) {
        let found = self.lookup(arriving);
        match outcome {
            AdmitOutcome::MergedTaskLevel { target } => {
                assert_eq!(
                    found,
                    Some(Match {
                        level: SimilarityLevel::TaskLevel,
                        target
                    }),
                    "task-level merge of {} into {target} without a task-level match",
                    arriving.id
                );
            }
            AdmitOutcome::MergedLower { target } => {
                assert!(
                    matches!(found, Some(m) if m.target == target && m.level < SimilarityLevel::TaskLevel),
                    "lower-level merge of {} into {target} disagrees with index ({found:?})",
                    arriving.id
                );
                self.insert_all(arriving, target);
            }
            AdmitOutcome::NotMerged { declined } => {
                assert!(
                    matches!(found, Some(m) if m.target == declined),
                    "task {} declined {declined} but index reports {found:?}",
                    arriving.id
                );
                // The matching entries move to the fresh task; it is the
                // likelier partner for whatever arrives next.
                self.insert_all(arriving, arriving.id);
            }
            AdmitOutcome::NoMatch => {
                assert!(
                    found.is_none(),
                    "task {} reported unmatched but index has {found:?}",
                    arriving.id
                );
                self.insert_all(arriving, arriving.id);
            }
        }
    }

    /// Drops every entry pointing at `departed`.
    pub fn on_dequeue(&mut self, departed: TargetId) {
        if let Some(keys) = self.owned.remove(&departed) {
            for (level, key) in keys {
                let table = &mut self.tables[slot(level)];
                if table.get(&key).is_some_and(|e| e.target == departed) {
                    table.remove(&key);
                }
            }
        }
    }

    fn insert_all(&mut self, task: &Task, target: TargetId) {
        let keys = make_keys(task);
        let signature = Signature::of(task);
        for level in SimilarityLevel::DESCENDING {
            let key = keys.get(level);
            let previous = self.tables[slot(level)].insert(
                key,
                Entry {
                    signature: signature.clone(),
                    target,
                },
            );
            if let Some(prev) = previous {
                if prev.target != target {
                    if let Some(list) = self.owned.get_mut(&prev.target) {
                        list.retain(|&(l, k)| !(l == level && k == key));
                        if list.is_empty() {
                            self.owned.remove(&prev.target);
                        }
                    }
                }
            }
            let list = self.owned.entry(target).or_default();
            if !list.contains(&(level, key)) {
                list.push((level, key));
            }
        }
    }

    /// Hash-table probes performed by `lookup` so far.
    pub fn probe_count(&self) -> u64 {
        self.probes.get()
    }

    pub fn len(&self) -> usize {
        self.tables.iter().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every (level, target) pair currently stored.
    pub fn entries(&self) -> impl Iterator<Item = (SimilarityLevel, TargetId)> + '_ {
        SimilarityLevel::DESCENDING
            .into_iter()
            .flat_map(move |level| self.tables[slot(level)].values().map(move |e| (level, e.target)))
    }

    /// Order-independent digest of the table contents.
    pub fn fingerprint(&self) -> u64 {
        let mut acc = 0u64;
        for level in SimilarityLevel::DESCENDING {
            for (key, e) in &self.tables[slot(level)] {
                acc = acc.wrapping_add(hash_of(&(slot(level), *key, e.target)));
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::OperationSpec;

    fn task(id: u64, seg: u32, op: OpType, param: &str) -> Task {
        Task {
            id,
            stream_id: 7,
            segment_idx: seg,
            op: OperationSpec::new(op, [param]).unwrap(),
            arrival: 0.0,
            deadline: 10.0,
            exec_mean: 1.0,
            exec_sd: 0.0,
            viewer_id: id,
        }
    }

    #[test]
    fn key_examples() {
        let a = make_keys(&task(1, 3, OpType::ChangeCodec, "h265"));
        let b = make_keys(&task(2, 3, OpType::ChangeCodec, "h265"));
        assert_eq!(a, b);

        let c = make_keys(&task(3, 3, OpType::ChangeCodec, "vp9"));
        assert_ne!(a.task_key, c.task_key);
        assert_eq!(a.data_op_key, c.data_op_key);
        assert_eq!(a.data_key, c.data_key);

        let d = make_keys(&task(4, 3, OpType::AdjustBitRate, "2M"));
        assert_ne!(a.task_key, d.task_key);
        assert_ne!(a.data_op_key, d.data_op_key);
        assert_eq!(a.data_key, d.data_key);
    }

    #[test]
    fn lookup_examples() {
        let mut idx = SimilarityIndex::new();
        assert_eq!(idx.lookup(&task(1, 3, OpType::ChangeCodec, "h265")), None);

        let i = task(1, 3, OpType::ChangeCodec, "h265");
        idx.on_admit(&i, AdmitOutcome::NoMatch);
        assert_eq!(
            idx.lookup(&task(2, 3, OpType::ChangeCodec, "h265")),
            Some(Match {
                level: SimilarityLevel::TaskLevel,
                target: 1
            })
        );
        assert_eq!(
            idx.lookup(&task(3, 3, OpType::AdjustFrameRate, "30fps")),
            Some(Match {
                level: SimilarityLevel::DataOnly,
                target: 1
            })
        );
        assert_eq!(idx.lookup(&task(4, 4, OpType::ChangeCodec, "h265")), None);
    }

    #[test]
    fn task_level_merge_leaves_index_untouched() {
        let mut idx = SimilarityIndex::new();
        idx.on_admit(&task(1, 3, OpType::ChangeCodec, "h265"), AdmitOutcome::NoMatch);
        let before = idx.fingerprint();
        for id in 2..10 {
            idx.on_admit(
                &task(id, 3, OpType::ChangeCodec, "h265"),
                AdmitOutcome::MergedTaskLevel { target: 1 },
            );
        }
        assert_eq!(idx.fingerprint(), before);
        assert_eq!(idx.len(), 3);
    }

    #[test]
    fn lower_merge_points_both_keysets_at_compound() {
        let mut idx = SimilarityIndex::new();
        let i = task(1, 3, OpType::ChangeCodec, "h265");
        let j = task(2, 3, OpType::AdjustFrameRate, "30fps");
        idx.on_admit(&i, AdmitOutcome::NoMatch);
        idx.on_admit(&j, AdmitOutcome::MergedLower { target: 1 });
        let probe_j = task(9, 3, OpType::AdjustFrameRate, "30fps");
        let probe_i = task(10, 3, OpType::ChangeCodec, "h265");
        assert_eq!(idx.lookup(&probe_j).unwrap().target, 1);
        assert_eq!(idx.lookup(&probe_j).unwrap().level, SimilarityLevel::TaskLevel);
        assert_eq!(idx.lookup(&probe_i).unwrap().target, 1);

        idx.on_dequeue(1);
        assert!(idx.is_empty());
    }

    #[test]
    fn declined_merge_redirects_to_newcomer() {
        let mut idx = SimilarityIndex::new();
        let i = task(1, 3, OpType::ChangeCodec, "h265");
        let j = task(2, 3, OpType::ChangeCodec, "vp9");
        idx.on_admit(&i, AdmitOutcome::NoMatch);
        assert_eq!(idx.lookup(&j).unwrap().level, SimilarityLevel::DataAndOperation);
        idx.on_admit(&j, AdmitOutcome::NotMerged { declined: 1 });

        assert_eq!(idx.lookup(&task(3, 3, OpType::ChangeCodec, "vp9")).unwrap().target, 2);
        // Shared data-op/data entries moved to j; i keeps only its task-level key.
        assert_eq!(
            idx.lookup(&task(4, 3, OpType::ChangeCodec, "av1")).unwrap().target,
            2
        );
        assert_eq!(idx.lookup(&task(5, 3, OpType::ChangeCodec, "h265")).unwrap().target, 1);

        idx.on_dequeue(2);
        assert_eq!(idx.lookup(&task(6, 3, OpType::AdjustBitRate, "1m")), None);
        assert_eq!(idx.entries().filter(|(_, t)| *t == 2).count(), 0);
        assert!(idx.entries().all(|(_, t)| t == 1));
    }

    #[test]
    fn admit_then_dequeue_empties_tables() {
        let mut idx = SimilarityIndex::new();
        idx.on_admit(&task(1, 3, OpType::ChangeCodec, "h265"), AdmitOutcome::NoMatch);
        assert_eq!(idx.len(), 3);
        idx.on_dequeue(1);
        assert!(idx.is_empty());
    }

    #[test]
    fn lookup_costs_at_most_three_probes() {
        let mut idx = SimilarityIndex::new();
        for seg in 0..500 {
            idx.on_admit(&task(seg as u64, seg, OpType::ChangeCodec, "h265"), AdmitOutcome::NoMatch);
        }
        let before = idx.probe_count();
        idx.lookup(&task(10_000, 9_999, OpType::AdjustBitRate, "1m"));
        assert_eq!(idx.probe_count() - before, 3);
        let before = idx.probe_count();
        idx.lookup(&task(10_001, 42, OpType::ChangeCodec, "h265"));
        assert_eq!(idx.probe_count() - before, 1);
    }

    #[test]
    #[should_panic]
    fn inconsistent_outcome_is_fatal() {
        let mut idx = SimilarityIndex::new();
        idx.on_admit(
            &task(1, 3, OpType::ChangeCodec, "h265"),
            AdmitOutcome::MergedTaskLevel { target: 99 },
        );
    }
}
