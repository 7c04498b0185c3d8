//! Discrete-event simulation of the batch queue and its machines.
//!
//! At any instant events run in a fixed order: arrivals (trace order), then
//! completions (machine index order), then dispatch. A compound leaves the
//! batch queue, and stops being mergeable, the moment it is dispatched.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assessor::{adaptive_alpha, osl};
use crate::error::{Error, Result};
use crate::impact::{decide, evaluate_merge, Decision, InService, MachineState, MergeProposal, QueueEntry, SystemSnapshot};
use crate::metrics::{MergeCounts, MetricsReport, TaskRecord};
use crate::position::{
    position_maintained, probe_exhaustive, probe_linear, probe_logarithmic, FcfsMergeArrival, Placement,
    PositionDecision, PositionMode, QueuingPolicy, RelaxedHeuristic,
};
use crate::similarity::{AdmitOutcome, SimilarityIndex};
use crate::task::{is_late, sample_runtime, MergedTask, SharingFactors, SimilarityLevel, Task};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    #[default]
    NoMerge,
    Conservative,
    Aggressive,
    Adaptive,
}

impl MergeMode {
    pub const ALL: [MergeMode; 4] = [
        MergeMode::NoMerge,
        MergeMode::Conservative,
        MergeMode::Aggressive,
        MergeMode::Adaptive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MergeMode::NoMerge => "no_merge",
            MergeMode::Conservative => "conservative",
            MergeMode::Aggressive => "aggressive",
            MergeMode::Adaptive => "adaptive",
        }
    }
}

impl fmt::Display for MergeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "no_merge" | "nomerge" | "none" => Ok(MergeMode::NoMerge),
            "conservative" => Ok(MergeMode::Conservative),
            "aggressive" => Ok(MergeMode::Aggressive),
            "adaptive" => Ok(MergeMode::Adaptive),
            other => Err(Error::InvalidConfig(format!("unknown merge mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub machine_count: usize,
    /// Tasks a machine may hold beyond the one in service. Zero keeps
    /// everything in the (mergeable) batch queue until a machine frees up.
    pub machine_queue_depth: usize,
    pub policy: QueuingPolicy,
    pub mode: MergeMode,
    pub position_mode: PositionMode,
    pub heuristic: RelaxedHeuristic,
    pub fcfs_merge_arrival: FcfsMergeArrival,
    pub sharing: SharingFactors,
    pub beta: f64,
    pub seed: u64,
    /// Extra multiplier on every task's standard deviation.
    pub sd_scale: f64,
    pub osl_window_seconds: f64,
    /// Keep per-task records in the report.
    pub keep_records: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            machine_count: 8,
            machine_queue_depth: 0,
            policy: QueuingPolicy::Fcfs,
            mode: MergeMode::NoMerge,
            position_mode: PositionMode::Maintained,
            heuristic: RelaxedHeuristic::Linear,
            fcfs_merge_arrival: FcfsMergeArrival::Existing,
            sharing: SharingFactors::default(),
            beta: 2.0,
            seed: 0,
            sd_scale: 1.0,
            osl_window_seconds: 60.0,
            keep_records: true,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.machine_count == 0 {
            return bad("machine_count must be at least 1".into());
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.sd_scale.is_finite() && self.sd_scale >= 0.0) {
            return bad(format!("sd_scale must be non-negative, got {}", self.sd_scale));
        }
        if !(self.osl_window_seconds.is_finite() && self.osl_window_seconds > 0.0) {
            return bad(format!("osl_window_seconds must be positive, got {}", self.osl_window_seconds));
        }
        self.sharing.validate()
    }
}

/// Which admission branch an arriving task took.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AdmissionOutcome {
    Inserted { position: usize },
    Merged { into: u64, level: SimilarityLevel, position: usize },
    Declined { target: u64, level: SimilarityLevel, position: usize },
}

#[derive(Clone, Debug)]
struct Running {
    task: MergedTask,
    dispatched: f64,
    start: f64,
    finish: f64,
}

#[derive(Clone, Debug)]
struct Waiting {
    task: MergedTask,
    dispatched: f64,
    runtime: f64,
}

#[derive(Clone, Debug, Default)]
struct Machine {
    running: Option<Running>,
    local: VecDeque<Waiting>,
}

impl Machine {
    fn is_idle(&self) -> bool {
        self.running.is_none() && self.local.is_empty()
    }
}

pub struct Engine {
    config: EngineConfig,
    now: f64,
    batch: Vec<MergedTask>,
    machines: Vec<Machine>,
    index: SimilarityIndex,
    seen: HashSet<u64>,
    alpha: f64,
    records: Vec<TaskRecord>,
    counts: MergeCounts,
    osl_series: Vec<(f64, f64)>,
    evaluations: u64,
    misses: usize,
    completed: usize,
    makespan: f64,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            now: 0.0,
            batch: Vec::new(),
            machines: vec![Machine::default(); config.machine_count],
            index: SimilarityIndex::new(),
            seen: HashSet::new(),
            alpha: config.beta,
            records: Vec::new(),
            counts: MergeCounts::default(),
            osl_series: Vec::new(),
            evaluations: 0,
            misses: 0,
            completed: 0,
            makespan: 0.0,
            config,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    /// Coefficient currently used for estimates.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn batch_len(&self) -> usize {
        self.batch.len()
    }

    pub fn batch(&self) -> &[MergedTask] {
        &self.batch
    }

    pub fn index(&self) -> &SimilarityIndex {
        &self.index
    }

    pub fn snapshot(&self) -> SystemSnapshot {
        let machines = self
            .machines
            .iter()
            .map(|m| MachineState {
                in_service: m.running.as_ref().map(|r| InService {
                    mean: r.task.combined_mean(),
                    sd: r.task.combined_sd(),
                    elapsed: self.now - r.start,
                }),
                pending: m.local.iter().map(|w| QueueEntry::from_merged(&w.task)).collect(),
            })
            .collect();
        SystemSnapshot {
            now: self.now,
            machines,
            batch: self.batch.iter().map(QueueEntry::from_merged).collect(),
        }
    }

    /// Admits a task arriving at the current clock.
    pub fn submit(&mut self, mut task: Task) -> Result<AdmissionOutcome> {
        if (task.arrival - self.now).abs() > 1e-9 {
            return Err(Error::ClockMismatch {
                id: task.id,
                arrival: task.arrival,
                now: self.now,
            });
        }
        if self.seen.contains(&task.id) {
            return Err(Error::DuplicateTask(task.id));
        }
        task.exec_sd *= self.config.sd_scale;
        task.validate()?;
        self.seen.insert(task.id);

        let snapshot = self.snapshot();
        let reading = osl(&snapshot, self.config.beta);
        self.osl_series.push((self.now, reading.value));
        self.alpha = match self.config.mode {
            MergeMode::Adaptive => adaptive_alpha(reading.value, self.config.beta),
            _ => self.config.beta,
        };

        if self.config.mode == MergeMode::NoMerge {
            return Ok(AdmissionOutcome::Inserted {
                position: self.insert_fresh(task),
            });
        }

        let Some(found) = self.index.lookup(&task) else {
            self.index.on_admit(&task, AdmitOutcome::NoMatch);
            return Ok(AdmissionOutcome::Inserted {
                position: self.insert_fresh(task),
            });
        };
        let existing = self
            .batch
            .iter()
            .position(|c| c.id() == found.target)
            .expect("similarity index points at a dispatched task");

        let mut compound = self.batch[existing].clone();
        compound.absorb(task.clone(), found.level, &self.config.sharing);
        if self.config.policy == QueuingPolicy::Fcfs && self.config.fcfs_merge_arrival == FcfsMergeArrival::Arriving {
            compound.set_governing_arrival(task.arrival);
        }
        let maintained = position_maintained(
            &snapshot.batch,
            existing,
            &QueueEntry::from_merged(&compound),
            self.config.policy,
            self.config.fcfs_merge_arrival,
            self.alpha,
        );

        if found.level == SimilarityLevel::TaskLevel {
            self.index.on_admit(&task, AdmitOutcome::MergedTaskLevel { target: found.target });
            return Ok(self.commit_merge(existing, compound, maintained, found.level));
        }

        let proposal = MergeProposal {
            existing_index: existing,
            compound: QueueEntry::from_merged(&compound),
            arriving: QueueEntry::from_merged(&MergedTask::singleton(task.clone())),
        };
        let placement = match self.config.mode {
            MergeMode::Aggressive => match self.config.position_mode {
                PositionMode::Maintained => Some(maintained),
                // A heuristic slot if one exists, otherwise merge anyway.
                PositionMode::Relaxed => match self.probe(&snapshot, &proposal)?.outcome {
                    Placement::Place(k) => Some(k),
                    Placement::CancelMerge => Some(maintained),
                },
            },
            MergeMode::Conservative | MergeMode::Adaptive => match self.config.position_mode {
                PositionMode::Maintained => {
                    let report = evaluate_merge(&snapshot, &proposal, maintained, self.alpha, self.config.policy)?;
                    self.evaluations += 1;
                    (decide(&report) == Decision::Merge).then_some(maintained)
                }
                PositionMode::Relaxed => match self.probe(&snapshot, &proposal)?.outcome {
                    Placement::Place(k) => Some(k),
                    Placement::CancelMerge => None,
                },
            },
            MergeMode::NoMerge => unreachable!(),
        };

        match placement {
            Some(position) => {
                self.index.on_admit(&task, AdmitOutcome::MergedLower { target: found.target });
                Ok(self.commit_merge(existing, compound, position, found.level))
            }
            None => {
                self.index.on_admit(&task, AdmitOutcome::NotMerged { declined: found.target });
                self.counts.declined += 1;
                Ok(AdmissionOutcome::Declined {
                    target: found.target,
                    level: found.level,
                    position: self.insert_fresh(task),
                })
            }
        }
    }

    fn probe(&mut self, snapshot: &SystemSnapshot, proposal: &MergeProposal) -> Result<PositionDecision> {
        let d = match self.config.heuristic {
            RelaxedHeuristic::Linear => probe_linear(snapshot, proposal, self.alpha, self.config.policy)?,
            RelaxedHeuristic::Logarithmic => probe_logarithmic(snapshot, proposal, self.alpha, self.config.policy)?,
            RelaxedHeuristic::Exhaustive => probe_exhaustive(snapshot, proposal, self.alpha, self.config.policy)?,
        };
        self.evaluations += d.probes_used as u64;
        Ok(d)
    }

    fn commit_merge(
        &mut self,
        existing: usize,
        compound: MergedTask,
        position: usize,
        level: SimilarityLevel,
    ) -> AdmissionOutcome {
        self.batch.remove(existing);
        let into = compound.id();
        self.batch.insert(position, compound);
        self.counts.add(level);
        AdmissionOutcome::Merged { into, level, position }
    }

    fn insert_fresh(&mut self, task: Task) -> usize {
        let compound = MergedTask::singleton(task);
        let entry = QueueEntry::from_merged(&compound);
        let queue: Vec<QueueEntry> = self.batch.iter().map(QueueEntry::from_merged).collect();
        let at = self.config.policy.insertion_index(&queue, &entry, self.alpha);
        self.batch.insert(at, compound);
        at
    }

    fn estimated_available(&self, m: &Machine) -> f64 {
        let mut t = self.now;
        if let Some(r) = &m.running {
            let est = r.task.estimate(self.alpha);
            t += (est - (self.now - r.start)).max(0.0);
        }
        t + m.local.iter().map(|w| w.task.estimate(self.alpha)).sum::<f64>()
    }

    fn pick_machine(&self) -> Option<usize> {
        if self.config.machine_queue_depth == 0 {
            return self.machines.iter().position(Machine::is_idle);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, m) in self.machines.iter().enumerate() {
            let accepts = m.running.is_none() || m.local.len() < self.config.machine_queue_depth;
            if !accepts {
                continue;
            }
            let avail = self.estimated_available(m);
            if best.is_none_or(|(_, b)| avail < b) {
                best = Some((i, avail));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Moves batch-queue heads onto machines while any machine can take one.
    pub fn dispatch_step(&mut self) -> usize {
        let mut moved = 0;
        while !self.batch.is_empty() {
            let Some(m) = self.pick_machine() else { break };
            let task = self.batch.remove(0);
            self.index.on_dequeue(task.id());
            let runtime = sample_runtime(task.combined_mean(), task.combined_sd(), task.id(), self.config.seed);
            let waiting = Waiting {
                task,
                dispatched: self.now,
                runtime,
            };
            if self.machines[m].running.is_none() {
                self.machines[m].running = Some(self.start(waiting));
            } else {
                self.machines[m].local.push_back(waiting);
            }
            moved += 1;
        }
        moved
    }

    fn start(&self, w: Waiting) -> Running {
        Running {
            task: w.task,
            dispatched: w.dispatched,
            start: self.now,
            finish: self.now + w.runtime,
        }
    }

    fn next_completion(&self) -> Option<f64> {
        self.machines
            .iter()
            .filter_map(|m| m.running.as_ref().map(|r| r.finish))
            .min_by(f64::total_cmp)
    }

    /// Finishes every task due at the current clock, machine by machine.
    fn complete_due(&mut self) {
        for i in 0..self.machines.len() {
            let due = self.machines[i].running.as_ref().is_some_and(|r| r.finish <= self.now);
            if !due {
                continue;
            }
            let done = self.machines[i].running.take().expect("checked above");
            let next = self.machines[i].local.pop_front().map(|w| self.start(w));
            self.machines[i].running = next;
            self.record(done);
        }
    }

    fn record(&mut self, done: Running) {
        let compound_id = done.task.id();
        self.makespan = self.makespan.max(done.finish);
        for m in done.task.members() {
            let late = is_late(done.finish, m.deadline);
            self.misses += late as usize;
            self.completed += 1;
            if self.config.keep_records {
                self.records.push(TaskRecord {
                    id: m.id,
                    compound_id,
                    stream_id: m.stream_id,
                    segment_idx: m.segment_idx,
                    arrival: m.arrival,
                    dispatch: done.dispatched,
                    start: done.start,
                    completion: done.finish,
                    deadline: m.deadline,
                    late,
                });
            }
        }
    }

    /// Runs every completion strictly before `t`, each followed by dispatch,
    /// then sets the clock to `t`.
    pub fn advance_to(&mut self, t: f64) {
        while let Some(f) = self.next_completion() {
            if f >= t {
                break;
            }
            self.now = self.now.max(f);
            self.complete_due();
            self.dispatch_step();
        }
        self.now = self.now.max(t);
    }

    /// Completions and dispatch at the current instant.
    pub fn settle(&mut self) {
        self.complete_due();
        self.dispatch_step();
    }

    /// Runs until nothing is queued or in service.
    pub fn drain(&mut self) {
        self.settle();
        while let Some(f) = self.next_completion() {
            self.now = self.now.max(f);
            self.settle();
        }
    }

    pub fn report(&self) -> MetricsReport {
        let mut records = self.records.clone();
        records.sort_by_key(|r| r.id);
        let mean_osl = if self.osl_series.is_empty() {
            0.0
        } else {
            self.osl_series.iter().map(|(_, v)| v).sum::<f64>() / self.osl_series.len() as f64
        };
        MetricsReport {
            mode: self.config.mode,
            policy: self.config.policy,
            total_tasks: self.completed,
            misses: self.misses,
            dmr: if self.completed == 0 {
                0.0
            } else {
                self.misses as f64 / self.completed as f64
            },
            makespan: self.makespan,
            merges: self.counts,
            evaluations: self.evaluations,
            index_probes: self.index.probe_count(),
            mean_osl,
            osl_series: self.osl_series.clone(),
            records,
        }
    }

    /// Simulates a whole trace, which must be sorted by arrival.
    pub fn run(config: EngineConfig, trace: &[Task]) -> Result<MetricsReport> {
        if let Some(w) = trace.windows(2).find(|w| w[1].arrival < w[0].arrival) {
            return Err(Error::MalformedTrace(format!(
                "task {} arrives at {} before task {} at {}",
                w[1].id, w[1].arrival, w[0].id, w[0].arrival
            )));
        }
        if let Some(t) = trace.first() {
            if t.arrival < 0.0 {
                return Err(Error::MalformedTrace(format!("task {} has negative arrival", t.id)));
            }
        }
        let mut engine = Engine::new(config)?;
        let mut i = 0;
        while i < trace.len() {
            let t = trace[i].arrival;
            engine.advance_to(t);
            while i < trace.len() && trace[i].arrival == t {
                engine.submit(trace[i].clone())?;
                i += 1;
            }
            engine.settle();
        }
        engine.drain();
        Ok(engine.report())
    }
}

/// One mode's result next to the no-merge baseline on the same trace.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedResult {
    pub mode: MergeMode,
    pub report: MetricsReport,
    pub dmr_reduction: f64,
    pub makespan_saving_pct: f64,
}

/// Runs the baseline and each mode on the same trace and seed.
pub fn paired_comparison(trace: &[Task], config: &EngineConfig, modes: &[MergeMode]) -> Result<Vec<PairedResult>> {
    let baseline = Engine::run(
        EngineConfig {
            mode: MergeMode::NoMerge,
            ..config.clone()
        },
        trace,
    )?;
    modes
        .iter()
        .map(|&mode| {
            let report = if mode == MergeMode::NoMerge {
                baseline.clone()
            } else {
                Engine::run(EngineConfig { mode, ..config.clone() }, trace)?
            };
            Ok(PairedResult {
                mode,
                dmr_reduction: baseline.dmr - report.dmr,
                makespan_saving_pct: saving_pct(baseline.makespan, report.makespan),
                report,
            })
        })
        .collect()
}

pub fn saving_pct(baseline: f64, value: f64) -> f64 {
    if baseline > 0.0 {
        100.0 * (baseline - value) / baseline
    } else {
        0.0
    }
}
