//! Synthetic video-processing traces and the trace file format.
//!
//! Arrivals come in bursts ("groups") of consecutive segments from one
//! viewing session. Group times are drawn from a piecewise-constant rate that
//! alternates high and base periods. Sessions are drawn from a small active
//! pool; a new session either starts a fresh video or joins a video someone
//! is already watching at their current position, which is what creates
//! merge opportunities.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{derive_seed, OpType, OperationSpec, Task};

/// Mean runtime for one `(op, param)` pair, in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub op: OpType,
    pub param: String,
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecProfile {
    pub entries: Vec<ProfileEntry>,
}

impl Default for ExecProfile {
    fn default() -> Self {
        let e = |op, param: &str, mu| ProfileEntry {
            op,
            param: param.to_string(),
            mu,
        };
        Self {
            entries: vec![
                e(OpType::AdjustFrameRate, "30fps", 1.0),
                e(OpType::AdjustFrameRate, "24fps", 0.9),
                e(OpType::ReduceResolution, "720p", 2.2),
                e(OpType::ReduceResolution, "480p", 1.8),
                e(OpType::AdjustBitRate, "2m", 2.6),
                e(OpType::AdjustBitRate, "1m", 2.4),
                e(OpType::ChangeCodec, "h265", 8.0),
                e(OpType::ChangeCodec, "vp9", 7.2),
            ],
        }
    }
}

impl ExecProfile {
    pub fn params(&self, op: OpType) -> Vec<&ProfileEntry> {
        self.entries.iter().filter(|e| e.op == op).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.mu.is_finite() && e.mu > 0.0) {
                return Err(Error::InvalidSpec(format!("profile mu for {} {} must be positive", e.op, e.param)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeadlineKind {
    /// Playback continuity: each burst must play `startup_delay` after it
    /// arrives, one segment every `segment_duration` after that.
    #[default]
    Streaming,
    /// `arrival + slack_factor * mu`.
    Slack,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DeadlineModel {
    Streaming { startup_delay: f64, segment_duration: f64 },
    Slack { factor: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    pub total_tasks: usize,
    /// Catalog size.
    pub streams: usize,
    pub segments_min: u32,
    pub segments_max: u32,
    pub segment_duration: f64,
    pub group_size: u32,
    pub cycles: u32,
    /// Length of one high-rate period; base periods last `base_ratio` times longer.
    pub high_period_s: f64,
    pub base_ratio: f64,
    /// Arrival rate in high periods relative to base periods.
    pub high_rate_factor: f64,
    /// Sessions interleaving at any time.
    pub active_sessions: usize,
    /// Chance that a new session joins a video already being watched.
    pub stream_overlap: f64,
    /// Weights in [`OpType::ALL`] order.
    pub op_mix: [f64; 4],
    pub profile: ExecProfile,
    /// Per-segment runtime factor is drawn from `[1 - jitter, 1 + jitter]`.
    pub cost_jitter: f64,
    /// `sigma = sd_fraction * mu * sd_scale`.
    pub sd_fraction: f64,
    pub sd_scale: f64,
    pub deadline_model: DeadlineKind,
    pub startup_delay: f64,
    pub slack_factor: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        Self {
            total_tasks: 1000,
            streams: 200,
            segments_min: 5,
            segments_max: 110,
            segment_duration: 2.0,
            group_size: 5,
            cycles: 15,
            high_period_s: 12.0,
            base_ratio: 3.0,
            high_rate_factor: 2.0,
            active_sessions: 8,
            stream_overlap: 0.35,
            op_mix: [0.3, 0.3, 0.25, 0.15],
            profile: ExecProfile::default(),
            cost_jitter: 0.2,
            sd_fraction: 0.04,
            sd_scale: 1.0,
            deadline_model: DeadlineKind::Streaming,
            startup_delay: 6.0,
            slack_factor: 3.0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.total_tasks == 0 {
            return bad("total_tasks must be at least 1");
        }
        if self.streams == 0 {
            return bad("streams must be at least 1");
        }
        if self.segments_min == 0 || self.segments_min > self.segments_max {
            return bad("need 1 <= segments_min <= segments_max");
        }
        if self.group_size == 0 {
            return bad("group_size must be at least 1");
        }
        if self.cycles == 0 {
            return bad("cycles must be at least 1");
        }
        for (name, v) in [
            ("high_period_s", self.high_period_s),
            ("base_ratio", self.base_ratio),
            ("high_rate_factor", self.high_rate_factor),
            ("segment_duration", self.segment_duration),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if self.active_sessions == 0 {
            return bad("active_sessions must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.stream_overlap) {
            return bad("stream_overlap must lie in [0, 1]");
        }
        if self.op_mix.iter().any(|w| !w.is_finite() || *w < 0.0) || self.op_mix.iter().sum::<f64>() <= 0.0 {
            return bad("op_mix weights must be non-negative with a positive sum");
        }
        for (op, w) in OpType::ALL.iter().zip(self.op_mix) {
            if w > 0.0 && self.profile.params(*op).is_empty() {
                return Err(Error::InvalidSpec(format!("op_mix selects {op} but the profile has no entry for it")));
            }
        }
        self.profile.validate()?;
        if !(0.0..1.0).contains(&self.cost_jitter) {
            return bad("cost_jitter must lie in [0, 1)");
        }
        if !(self.sd_fraction >= 0.0 && self.sd_scale >= 0.0) {
            return bad("sd_fraction and sd_scale must be non-negative");
        }
        self.deadline()?;
        Ok(())
    }

    pub fn deadline(&self) -> Result<DeadlineModel> {
        match self.deadline_model {
            DeadlineKind::Streaming => {
                if !(self.startup_delay.is_finite() && self.startup_delay > 0.0) {
                    return Err(Error::InvalidSpec("startup_delay must be positive".into()));
                }
                Ok(DeadlineModel::Streaming {
                    startup_delay: self.startup_delay,
                    segment_duration: self.segment_duration,
                })
            }
            DeadlineKind::Slack => {
                if !(self.slack_factor.is_finite() && self.slack_factor > 0.0) {
                    return Err(Error::InvalidSpec("slack_factor must be positive".into()));
                }
                Ok(DeadlineModel::Slack {
                    factor: self.slack_factor,
                })
            }
        }
    }

    /// Length of the arrival horizon in seconds.
    pub fn horizon(&self) -> f64 {
        self.cycles as f64 * self.high_period_s * (1.0 + self.base_ratio)
    }
}

struct Session {
    id: u64,
    video: u64,
    next: u32,
    end: u32,
}

struct Group {
    session: u64,
    video: u64,
    first: u32,
    len: u32,
}

fn video_length(video: u64, spec: &WorkloadSpec, seed: u64) -> u32 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1, video]));
    rng.random_range(spec.segments_min..=spec.segments_max)
}

fn cost_factor(video: u64, segment: u32, spec: &WorkloadSpec, seed: u64) -> f64 {
    if spec.cost_jitter == 0.0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[2, video, segment as u64]));
    rng.random_range(1.0 - spec.cost_jitter..=1.0 + spec.cost_jitter)
}

/// Session schedule: which consecutive segments each burst carries.
fn plan_groups(spec: &WorkloadSpec, seed: u64, rng: &mut ChaCha8Rng) -> Vec<Group> {
    let mut active: Vec<Session> = Vec::new();
    let mut groups = Vec::new();
    let mut emitted = 0usize;
    let mut next_session = 0u64;
    while emitted < spec.total_tasks {
        while active.len() < spec.active_sessions {
            let joined = if !active.is_empty() && rng.random_bool(spec.stream_overlap) {
                let lead = &active[rng.random_range(0..active.len())];
                Some((lead.video, lead.next, lead.end))
            } else {
                None
            };
            let (video, next, end) = joined.unwrap_or_else(|| {
                let video = rng.random_range(0..spec.streams as u64);
                (video, 0, video_length(video, spec, seed))
            });
            active.push(Session {
                id: next_session,
                video,
                next,
                end,
            });
            next_session += 1;
        }
        let k = rng.random_range(0..active.len());
        let s = &mut active[k];
        let len = spec
            .group_size
            .min(s.end - s.next)
            .min((spec.total_tasks - emitted) as u32);
        groups.push(Group {
            session: s.id,
            video: s.video,
            first: s.next,
            len,
        });
        emitted += len as usize;
        s.next += len;
        if s.next >= s.end {
            active.swap_remove(k);
        }
    }
    groups
}

/// `n` sorted arrival times in integer milliseconds. Each cycle is a base
/// period followed by a high period.
fn arrival_times_ms(spec: &WorkloadSpec, n: usize, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let high = (spec.high_period_s * 1000.0).round().max(1.0) as u64;
    let base = (spec.high_period_s * spec.base_ratio * 1000.0).round().max(1.0) as u64;
    let p_high = spec.high_rate_factor * high as f64 / (spec.high_rate_factor * high as f64 + base as f64);
    let mut times: Vec<u64> = (0..n)
        .map(|_| {
            let cycle = rng.random_range(0..spec.cycles as u64) * (high + base);
            if rng.random_bool(p_high) {
                cycle + base + rng.random_range(0..high)
            } else {
                cycle + rng.random_range(0..base)
            }
        })
        .collect();
    times.sort_unstable();
    times
}

/// Picks an op, favouring whichever is furthest below its target share so
/// the realized mix tracks `op_mix` closely.
fn pick_op(spec: &WorkloadSpec, counts: &[usize; 4], upcoming: usize, rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = spec.op_mix.iter().sum();
    let after = (counts.iter().sum::<usize>() + upcoming) as f64;
    let deficits: Vec<f64> = (0..4)
        .map(|i| (spec.op_mix[i] / total * after - counts[i] as f64).max(0.0))
        .collect();
    let sum: f64 = deficits.iter().sum();
    let weights: Vec<f64> = if sum > 0.0 { deficits } else { spec.op_mix.to_vec() };
    let wsum: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..wsum);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Deterministic trace for `(spec, seed)`, sorted by arrival, ids from 0.
pub fn generate(spec: &WorkloadSpec, seed: u64) -> Result<Vec<Task>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let groups = plan_groups(spec, seed, &mut rng);
    let times = arrival_times_ms(spec, groups.len(), &mut rng);
    let mut counts = [0usize; 4];
    let mut trace = Vec::with_capacity(spec.total_tasks);
    for (g, t_ms) in groups.iter().zip(times) {
        let op_i = pick_op(spec, &counts, g.len as usize, &mut rng);
        counts[op_i] += g.len as usize;
        let op = OpType::ALL[op_i];
        let choices = spec.profile.params(op);
        let entry = choices[rng.random_range(0..choices.len())];
        let spec_op = OperationSpec::new(op, [entry.param.as_str()])?;
        let arrival = t_ms as f64 / 1000.0;
        for seg in g.first..g.first + g.len {
            let mu = entry.mu * cost_factor(g.video, seg, spec, seed);
            trace.push(Task {
                id: trace.len() as u64,
                stream_id: g.video,
                segment_idx: seg,
                op: spec_op.clone(),
                arrival,
                deadline: 0.0,
                exec_mean: mu,
                exec_sd: spec.sd_fraction * mu * spec.sd_scale,
                viewer_id: g.session,
            });
        }
    }
    assign_deadlines(&mut trace, spec.deadline()?)?;
    Ok(trace)
}

/// Fills in deadlines. Under the streaming model a burst is the set of tasks
/// sharing `(viewer, stream, arrival)`; its lowest segment is due
/// `startup_delay` after arrival and each later one a segment later.
pub fn assign_deadlines(trace: &mut [Task], model: DeadlineModel) -> Result<()> {
    match model {
        DeadlineModel::Streaming {
            startup_delay,
            segment_duration,
        } => {
            if !(startup_delay.is_finite() && startup_delay > 0.0) {
                return Err(Error::InvalidSpec("startup_delay must be positive".into()));
            }
            let mut i = 0;
            while i < trace.len() {
                let key = (trace[i].viewer_id, trace[i].stream_id, trace[i].arrival);
                let mut j = i;
                while j < trace.len() && (trace[j].viewer_id, trace[j].stream_id, trace[j].arrival) == key {
                    j += 1;
                }
                let first = trace[i..j].iter().map(|t| t.segment_idx).min().unwrap_or(0);
                for t in &mut trace[i..j] {
                    t.deadline = t.arrival + startup_delay + (t.segment_idx - first) as f64 * segment_duration;
                }
                i = j;
            }
        }
        DeadlineModel::Slack { factor } => {
            if !(factor.is_finite() && factor > 0.0) {
                return Err(Error::InvalidSpec("slack factor must be positive".into()));
            }
            for t in trace.iter_mut() {
                t.deadline = t.arrival + factor * t.exec_mean;
            }
        }
    }
    Ok(())
}

/// Share of tasks whose `(stream, segment)` was requested by an earlier task,
/// i.e. the merge opportunity if nothing ever left the queue.
pub fn merge_opportunity(trace: &[Task]) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let mut seen = HashSet::new();
    let dup = trace
        .iter()
        .filter(|t| !seen.insert((t.stream_id, t.segment_idx)))
        .count();
    dup as f64 / trace.len() as f64
}

pub const TRACE_HEADER: &str = "id,stream_id,segment_idx,op_type,param,arrival_s,mu_s,sigma_s,deadline_s,viewer_id";

const FIELDS: [&str; 10] = [
    "id",
    "stream_id",
    "segment_idx",
    "op_type",
    "param",
    "arrival_s",
    "mu_s",
    "sigma_s",
    "deadline_s",
    "viewer_id",
];

pub fn format_trace(trace: &[Task]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for t in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            t.id,
            t.stream_id,
            t.segment_idx,
            t.op.op_type(),
            t.op.params().join(";"),
            t.arrival,
            t.exec_mean,
            t.exec_sd,
            t.deadline,
            t.viewer_id
        );
    }
    out
}

pub fn save_trace(trace: &[Task], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_trace(trace))?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn parse_trace(text: &str) -> Result<Vec<Task>> {
    let mut trace = Vec::new();
    let mut header_seen = false;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.trim_end_matches('\r');
        if body.trim().is_empty() || body.trim_start().starts_with('#') {
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = body.split(',').map(str::trim).collect();
            if cols != FIELDS {
                return Err(Error::TraceParse {
                    line,
                    column: 1,
                    field: "header",
                    message: format!("expected `{TRACE_HEADER}`"),
                });
            }
            header_seen = true;
            continue;
        }
        trace.push(parse_line(body, line)?);
    }
    if !header_seen {
        return Err(Error::MalformedTrace("missing header line".into()));
    }
    Ok(trace)
}

fn parse_line(body: &str, line: usize) -> Result<Task> {
    let mut cells = Vec::with_capacity(10);
    let mut col = 1;
    for cell in body.split(',') {
        cells.push((col, cell.trim()));
        col += cell.chars().count() + 1;
    }
    if cells.len() != FIELDS.len() {
        return Err(Error::TraceParse {
            line,
            column: 1,
            field: "line",
            message: format!("expected {} fields, found {}", FIELDS.len(), cells.len()),
        });
    }
    let err = |i: usize, message: String| Error::TraceParse {
        line,
        column: cells[i].0,
        field: FIELDS[i],
        message,
    };
    let int = |i: usize| -> Result<u64> {
        cells[i]
            .1
            .parse::<u64>()
            .map_err(|e| err(i, format!("`{}`: {e}", cells[i].1)))
    };
    let real = |i: usize| -> Result<f64> {
        let v = cells[i]
            .1
            .parse::<f64>()
            .map_err(|e| err(i, format!("`{}`: {e}", cells[i].1)))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(err(i, "must be finite".into()))
        }
    };
    let segment_idx = u32::try_from(int(2)?).map_err(|_| err(2, "out of range".into()))?;
    let op_type: OpType = cells[3].1.parse().map_err(|e: Error| err(3, e.to_string()))?;
    let op = OperationSpec::new(op_type, cells[4].1.split(';')).map_err(|e| err(4, e.to_string()))?;
    let task = Task {
        id: int(0)?,
        stream_id: int(1)?,
        segment_idx,
        op,
        arrival: real(5)?,
        exec_mean: real(6)?,
        exec_sd: real(7)?,
        deadline: real(8)?,
        viewer_id: int(9)?,
    };
    if task.exec_mean <= 0.0 {
        return Err(err(6, "must be positive".into()));
    }
    if task.exec_sd < 0.0 {
        return Err(err(7, "must be non-negative".into()));
    }
    Ok(task)
}
