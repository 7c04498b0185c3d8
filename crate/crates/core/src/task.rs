//! Tasks, compound (merged) tasks and the scalar estimates built on them.
//!
//! Every estimate in the crate goes through [`estimated_execution_time`]:
//! a task's runtime is modelled as Normal(mu, sigma) and the scheduler plans
//! with `mu + alpha * sigma`, where `alpha` is the standard-deviation
//! coefficient (2 by default, adaptive in `[-beta, beta]` under load).

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Completion later than `deadline + LATE_EPSILON` counts as a miss.
///
/// Estimates and realized completions are built from the same quantities but
/// summed in a different order, so they can disagree in the last few ulps.
pub const LATE_EPSILON: f64 = 1e-6;

pub fn is_late(completion: f64, deadline: f64) -> bool {
    completion > deadline + LATE_EPSILON
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    ReduceResolution,
    AdjustBitRate,
    AdjustFrameRate,
    ChangeCodec,
}

impl OpType {
    pub const ALL: [OpType; 4] = [
        OpType::ReduceResolution,
        OpType::AdjustBitRate,
        OpType::AdjustFrameRate,
        OpType::ChangeCodec,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OpType::ReduceResolution => "reduce_resolution",
            OpType::AdjustBitRate => "adjust_bit_rate",
            OpType::AdjustFrameRate => "adjust_frame_rate",
            OpType::ChangeCodec => "change_codec",
        }
    }
}

impl fmt::Display for OpType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OpType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .flat_map(char::to_lowercase)
            .collect();
        match norm.as_str() {
            "reduceresolution" => Ok(OpType::ReduceResolution),
            "adjustbitrate" => Ok(OpType::AdjustBitRate),
            "adjustframerate" => Ok(OpType::AdjustFrameRate),
            "changecodec" => Ok(OpType::ChangeCodec),
            _ => Err(Error::UnknownOpType(s.to_string())),
        }
    }
}

/// A processing operation and its parameters, in canonical form.
///
/// Parameters are trimmed, lowercased and sorted on construction so two
/// viewers asking for the same thing in a different order produce the same
/// key material.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OperationSpec {
    op_type: OpType,
    params: Vec<String>,
}

impl OperationSpec {
    pub fn new<I, S>(op_type: OpType, params: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut params: Vec<String> = params
            .into_iter()
            .map(|p| p.as_ref().trim().to_lowercase())
            .filter(|p| !p.is_empty())
            .collect();
        if params.is_empty() {
            return Err(Error::EmptyParams);
        }
        params.sort();
        Ok(Self { op_type, params })
    }

    pub fn op_type(&self) -> OpType {
        self.op_type
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }
}

/// One segment-processing request.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub id: u64,
    pub stream_id: u64,
    pub segment_idx: u32,
    pub op: OperationSpec,
    /// Arrival time, simulated seconds.
    pub arrival: f64,
    /// Individual deadline. May precede `arrival + exec_mean`; such tasks are
    /// infeasible but still admitted and executed.
    pub deadline: f64,
    pub exec_mean: f64,
    pub exec_sd: f64,
    /// Requesting viewer; not used for scheduling.
    pub viewer_id: u64,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidTask {
            id: self.id,
            reason: reason.to_string(),
        };
        if !self.arrival.is_finite() || !self.deadline.is_finite() {
            return Err(bad("arrival and deadline must be finite"));
        }
        if !self.exec_mean.is_finite() || self.exec_mean <= 0.0 {
            return Err(bad("exec_mean must be finite and positive"));
        }
        if !self.exec_sd.is_finite() || self.exec_sd < 0.0 {
            return Err(bad("exec_sd must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn estimate(&self, alpha: f64) -> f64 {
        (self.exec_mean + alpha * self.exec_sd).max(0.0)
    }
}

/// How much two tasks have in common. Ordered by reuse value, so
/// `TaskLevel > DataAndOperation > DataOnly`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityLevel {
    /// Same segment only.
    DataOnly,
    /// Same segment and operation, different parameters.
    DataAndOperation,
    /// Identical processing.
    TaskLevel,
}

impl SimilarityLevel {
    /// Highest level first: the order in which detection probes the tables.
    pub const DESCENDING: [SimilarityLevel; 3] = [
        SimilarityLevel::TaskLevel,
        SimilarityLevel::DataAndOperation,
        SimilarityLevel::DataOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityLevel::TaskLevel => "task",
            SimilarityLevel::DataAndOperation => "data_op",
            SimilarityLevel::DataOnly => "data",
        }
    }
}

impl fmt::Display for SimilarityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fraction of a joiner's mean runtime that a merge still has to pay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharingFactors {
    pub data_and_operation: f64,
    pub data_only: f64,
}

impl Default for SharingFactors {
    fn default() -> Self {
        // Two-task data-only merge saves (1 - 0.35) / 2 = 32.5%; the
        // data-and-operation level saves more (37.5%) since it shares decode too.
        Self {
            data_and_operation: 0.25,
            data_only: 0.35,
        }
    }
}

impl SharingFactors {
    pub fn rho(&self, level: SimilarityLevel) -> f64 {
        match level {
            SimilarityLevel::TaskLevel => 0.0,
            SimilarityLevel::DataAndOperation => self.data_and_operation,
            SimilarityLevel::DataOnly => self.data_only,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho_data_and_operation", self.data_and_operation),
            ("rho_data_only", self.data_only),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// A compound task. A plain queued task is a singleton compound.
///
/// Members keep their own deadlines; only the earliest one drives queue
/// ordering. The compound's id is its first member's id, which is also the
/// handle the similarity index points at.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedTask {
    members: Vec<Task>,
    level_links: Vec<SimilarityLevel>,
    combined_mean: f64,
    combined_sd: f64,
    earliest_deadline: f64,
    governing_arrival: f64,
}

impl MergedTask {
    pub fn singleton(task: Task) -> Self {
        Self {
            combined_mean: task.exec_mean,
            combined_sd: task.exec_sd,
            earliest_deadline: task.deadline,
            governing_arrival: task.arrival,
            members: vec![task],
            level_links: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.members[0].id
    }

    pub fn members(&self) -> &[Task] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Task> {
        self.members
    }

    /// Level under which each member after the first joined.
    pub fn level_links(&self) -> &[SimilarityLevel] {
        &self.level_links
    }

    pub fn combined_mean(&self) -> f64 {
        self.combined_mean
    }

    pub fn combined_sd(&self) -> f64 {
        self.combined_sd
    }

    pub fn earliest_deadline(&self) -> f64 {
        self.earliest_deadline
    }

    /// Arrival used for FCFS ordering.
    pub fn arrival(&self) -> f64 {
        self.governing_arrival
    }

    pub fn set_governing_arrival(&mut self, arrival: f64) {
        self.governing_arrival = arrival;
    }

    pub fn estimate(&self, alpha: f64) -> f64 {
        (self.combined_mean + alpha * self.combined_sd).max(0.0)
    }

    pub fn urgency(&self, alpha: f64) -> Urgency {
        urgency(self.earliest_deadline, self.estimate(alpha))
    }

    /// Folds `joiner` into this compound under `level`.
    pub fn absorb(&mut self, joiner: Task, level: SimilarityLevel, factors: &SharingFactors) {
        let (mean, sd) = merged_cost(self, &joiner, level, factors);
        self.combined_mean = mean;
        self.combined_sd = sd;
        self.earliest_deadline = self.earliest_deadline.min(joiner.deadline);
        self.level_links.push(level);
        self.members.push(joiner);
    }
}

/// `mu + alpha * sigma`, clamped at zero.
pub fn estimated_execution_time(mean: f64, sd: f64, alpha: f64) -> Result<f64> {
    if !mean.is_finite() {
        return Err(Error::NonFinite("mean"));
    }
    if !sd.is_finite() {
        return Err(Error::NonFinite("sd"));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    Ok((mean + alpha * sd).max(0.0))
}

/// Urgency score `1 / (deadline - estimate)`.
///
/// A task whose estimate already reaches its deadline has no finite score;
/// it is `Doomed` and outranks every finite score, earlier deadline first.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Urgency {
    Doomed { deadline: f64 },
    Score(f64),
}

impl Urgency {
    pub fn value(&self) -> f64 {
        match self {
            Urgency::Doomed { .. } => f64::INFINITY,
            Urgency::Score(s) => *s,
        }
    }

    /// `Less` means `self` is served first.
    pub fn priority_cmp(&self, other: &Urgency) -> Ordering {
        match (self, other) {
            (Urgency::Doomed { deadline: a }, Urgency::Doomed { deadline: b }) => a.total_cmp(b),
            (Urgency::Doomed { .. }, Urgency::Score(_)) => Ordering::Less,
            (Urgency::Score(_), Urgency::Doomed { .. }) => Ordering::Greater,
            (Urgency::Score(a), Urgency::Score(b)) => b.total_cmp(a),
        }
    }
}

pub fn urgency(deadline: f64, est_exec: f64) -> Urgency {
    let slack = deadline - est_exec;
    if slack > 0.0 {
        Urgency::Score(1.0 / slack)
    } else {
        Urgency::Doomed { deadline }
    }
}

/// Longest time the task can wait in queue and still finish on time.
/// Zero or negative means the task is infeasible.
pub fn waitable_time(arrival: f64, deadline: f64, est_exec: f64) -> f64 {
    deadline - arrival - est_exec
}

/// Cost model of `base` after absorbing `joiner` at `level`.
///
/// Task-level merges are free. Otherwise the joiner adds `rho(level)` of its
/// mean; standard deviations combine in quadrature (independent runtimes).
/// The result never drops below the joiner's own cost: a compound still has
/// to do all of its longest member's work.
pub fn merged_cost(
    base: &MergedTask,
    joiner: &Task,
    level: SimilarityLevel,
    factors: &SharingFactors,
) -> (f64, f64) {
    match level {
        SimilarityLevel::TaskLevel => (base.combined_mean, base.combined_sd),
        SimilarityLevel::DataAndOperation | SimilarityLevel::DataOnly => {
            let rho = factors.rho(level);
            let mean = (base.combined_mean + rho * joiner.exec_mean).max(joiner.exec_mean);
            let sd = base.combined_sd.hypot(rho * joiner.exec_sd).max(joiner.exec_sd);
            (mean, sd)
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed derived from a run seed and a stream of identifiers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

/// Realized runtime of a compound, drawn once at dispatch.
///
/// Normal(mean, sd) truncated below at 5% of the mean. Depends only on
/// `(task_id, run_seed)` and the distribution, so dispatch order does not
/// perturb other tasks' samples.
pub fn sample_runtime(mean: f64, sd: f64, task_id: u64, run_seed: u64) -> f64 {
    let floor = 0.05 * mean;
    if sd <= 0.0 {
        return mean.max(floor);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(run_seed, &[task_id]));
    let normal = Normal::new(mean, sd).expect("sd is finite and positive");
    for _ in 0..64 {
        let x = normal.sample(&mut rng);
        if x >= floor {
            return x;
        }
    }
    // Only reachable for sd many times the mean.
    floor + rng.random::<f64>() * mean
}
