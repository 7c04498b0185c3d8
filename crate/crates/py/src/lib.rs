//! Python bindings: trace generation, single runs, paired comparisons and a
//! step-by-step engine.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use taskmerge::assessor;
use taskmerge::engine::{self, AdmissionOutcome, EngineConfig, MergeMode};
use taskmerge::metrics::MetricsReport;
use taskmerge::position::{PositionMode, QueuingPolicy};
use taskmerge::task::{OpType, OperationSpec, Task};
use taskmerge::workload::{self, WorkloadSpec};
use taskmerge::ConfigFile;

fn err(e: taskmerge::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn engine_config(
    mode: &str,
    policy: &str,
    position_finder: bool,
    machines: usize,
    seed: u64,
    sd_scale: f64,
) -> PyResult<EngineConfig> {
    Ok(EngineConfig {
        mode: mode.parse().map_err(err)?,
        policy: policy.parse().map_err(err)?,
        position_mode: if position_finder {
            PositionMode::Relaxed
        } else {
            PositionMode::Maintained
        },
        machine_count: machines,
        seed,
        sd_scale,
        keep_records: false,
        ..EngineConfig::default()
    })
}

fn summary<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mode", r.mode.as_str())?;
    d.set_item("policy", r.policy.as_str())?;
    d.set_item("total_tasks", r.total_tasks)?;
    d.set_item("misses", r.misses)?;
    d.set_item("dmr", r.dmr)?;
    d.set_item("makespan", r.makespan)?;
    d.set_item("merges_task", r.merges.task)?;
    d.set_item("merges_data_op", r.merges.data_op)?;
    d.set_item("merges_data_only", r.merges.data_only)?;
    d.set_item("declined", r.merges.declined)?;
    d.set_item("evaluations", r.evaluations)?;
    d.set_item("mean_osl", r.mean_osl)?;
    Ok(d)
}

/// Synthetic trace as CSV text. `config` is optional TOML text whose
/// `[workload]` section is used.
#[pyfunction]
#[pyo3(signature = (tasks=1000, seed=0, sd_scale=1.0, config=None))]
fn generate(tasks: usize, seed: u64, sd_scale: f64, config: Option<&str>) -> PyResult<String> {
    let base = match config {
        Some(text) => ConfigFile::parse(text).map_err(err)?.workload,
        None => WorkloadSpec::default(),
    };
    let spec = WorkloadSpec {
        total_tasks: tasks,
        sd_scale,
        ..base
    };
    let trace = workload::generate(&spec, seed).map_err(err)?;
    Ok(workload::format_trace(&trace))
}

/// Fraction of tasks with an earlier same-segment task in the trace.
#[pyfunction]
fn merge_opportunity(trace: &str) -> PyResult<f64> {
    Ok(workload::merge_opportunity(&workload::parse_trace(trace).map_err(err)?))
}

/// Simulates a CSV trace and returns the summary as a dict.
#[pyfunction]
#[pyo3(signature = (trace, mode="no_merge", policy="fcfs", position_finder=false, machines=8, seed=0, sd_scale=1.0))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    trace: &str,
    mode: &str,
    policy: &str,
    position_finder: bool,
    machines: usize,
    seed: u64,
    sd_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let tasks = workload::parse_trace(trace).map_err(err)?;
    let config = engine_config(mode, policy, position_finder, machines, seed, sd_scale)?;
    let report = py.detach(|| engine::Engine::run(config, &tasks)).map_err(err)?;
    summary(py, &report)
}

/// Runs NoMerge and each of `modes` on the same trace; each dict adds
/// `dmr_reduction` and `makespan_saving_pct` against NoMerge.
#[pyfunction]
#[pyo3(signature = (trace, modes=vec!["conservative".to_string(), "aggressive".to_string(), "adaptive".to_string()], policy="fcfs", position_finder=false, machines=8, seed=0))]
fn paired<'py>(
    py: Python<'py>,
    trace: &str,
    modes: Vec<String>,
    policy: &str,
    position_finder: bool,
    machines: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let tasks = workload::parse_trace(trace).map_err(err)?;
    let config = engine_config("no_merge", policy, position_finder, machines, seed, 1.0)?;
    let modes: Vec<MergeMode> = modes.iter().map(|m| m.parse()).collect::<Result<_, _>>().map_err(err)?;
    let results = py
        .detach(|| engine::paired_comparison(&tasks, &config, &modes))
        .map_err(err)?;
    results
        .iter()
        .map(|r| {
            let d = summary(py, &r.report)?;
            d.set_item("dmr_reduction", r.dmr_reduction)?;
            d.set_item("makespan_saving_pct", r.makespan_saving_pct)?;
            Ok(d)
        })
        .collect()
}

#[pyfunction]
fn adaptive_alpha(osl: f64, beta: f64) -> f64 {
    assessor::adaptive_alpha(osl, beta)
}

/// Engine driven one arrival at a time.
#[pyclass(unsendable)]
struct Engine {
    inner: engine::Engine,
}

#[pymethods]
impl Engine {
    #[new]
    #[pyo3(signature = (mode="no_merge", policy="fcfs", position_finder=false, machines=8, seed=0))]
    fn new(mode: &str, policy: &str, position_finder: bool, machines: usize, seed: u64) -> PyResult<Self> {
        let mut config = engine_config(mode, policy, position_finder, machines, seed, 1.0)?;
        config.keep_records = true;
        Ok(Self {
            inner: engine::Engine::new(config).map_err(err)?,
        })
    }

    #[getter]
    fn now(&self) -> f64 {
        self.inner.now()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    #[getter]
    fn batch_len(&self) -> usize {
        self.inner.batch_len()
    }

    /// Completes everything finishing before `t` and moves the clock to `t`.
    fn advance_to(&mut self, t: f64) {
        self.inner.advance_to(t);
    }

    /// Admits a task at the current clock. Returns `(outcome, position)` where
    /// outcome is "inserted", "merged:<level>" or "declined:<level>".
    #[pyo3(signature = (id, stream_id, segment_idx, op_type, param, mu, deadline, sigma=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn submit(
        &mut self,
        id: u64,
        stream_id: u64,
        segment_idx: u32,
        op_type: &str,
        param: &str,
        mu: f64,
        deadline: f64,
        sigma: f64,
    ) -> PyResult<(String, usize)> {
        let op: OpType = op_type.parse().map_err(err)?;
        let task = Task {
            id,
            stream_id,
            segment_idx,
            op: OperationSpec::new(op, [param]).map_err(err)?,
            arrival: self.inner.now(),
            deadline,
            exec_mean: mu,
            exec_sd: sigma,
            viewer_id: 0,
        };
        Ok(match self.inner.submit(task).map_err(err)? {
            AdmissionOutcome::Inserted { position } => ("inserted".into(), position),
            AdmissionOutcome::Merged { level, position, .. } => (format!("merged:{level}"), position),
            AdmissionOutcome::Declined { level, position, .. } => (format!("declined:{level}"), position),
        })
    }

    /// Processes completions at the current clock, then dispatches.
    fn settle(&mut self) {
        self.inner.settle();
    }

    fn drain(&mut self) {
        self.inner.drain();
    }

    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        summary(py, &self.inner.report())
    }

    /// Per-task `(id, compound_id, start, completion, deadline, late)`.
    fn records(&self) -> Vec<(u64, u64, f64, f64, f64, bool)> {
        self.inner
            .report()
            .records
            .iter()
            .map(|r| (r.id, r.compound_id, r.start, r.completion, r.deadline, r.late))
            .collect()
    }
}

#[pymodule]
pub fn taskmerge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(merge_opportunity, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(paired, m)?)?;
    m.add_function(wrap_pyfunction!(adaptive_alpha, m)?)?;
    m.add_class::<Engine>()?;
    m.add("MODES", MergeMode::ALL.map(MergeMode::as_str).to_vec())?;
    m.add("POLICIES", QueuingPolicy::ALL.map(QueuingPolicy::as_str).to_vec())?;
    Ok(())
}
