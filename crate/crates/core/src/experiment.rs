//! Paired experiment matrix with confidence intervals and long-form CSV.
//!
//! Every cell (policy, load, sd scale, position finder) runs all requested
//! modes on the same per-repetition trace and seed, next to an internal
//! no-merge baseline, so reductions are computed within a repetition.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{paired_comparison, EngineConfig, MergeMode, PairedResult};
use crate::error::{Error, Result};
use crate::position::{PositionMode, QueuingPolicy};
use crate::task::derive_seed;
use crate::workload::{generate, WorkloadSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub loads: Vec<usize>,
    pub modes: Vec<MergeMode>,
    pub policies: Vec<QueuingPolicy>,
    pub sd_scales: Vec<f64>,
    /// Run without (`false`) and/or with (`true`) the relaxed position finder.
    pub position_finder: Vec<bool>,
    pub reps: u64,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            loads: vec![1000, 1500, 2000, 2500],
            modes: MergeMode::ALL.to_vec(),
            policies: vec![QueuingPolicy::Fcfs],
            sd_scales: vec![1.0],
            position_finder: vec![false],
            reps: 30,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub settings: ExperimentSettings,
    pub workload: WorkloadSpec,
    pub engine: EngineConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub policy: QueuingPolicy,
    pub load: usize,
    pub sd_scale: f64,
    pub position_finder: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if s.loads.is_empty() || s.modes.is_empty() || s.policies.is_empty() || s.sd_scales.is_empty() {
            return bad("loads, modes, policies and sd_scales must be non-empty");
        }
        if s.position_finder.is_empty() {
            return bad("position_finder must list at least one setting");
        }
        if s.reps == 0 {
            return bad("reps must be at least 1");
        }
        if s.loads.contains(&0) {
            return bad("loads must be positive");
        }
        if s.sd_scales.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return bad("sd_scales must be non-negative");
        }
        self.engine.validate()?;
        self.workload.validate()
    }

    /// Cells in output order.
    pub fn cells(&self) -> Vec<Cell> {
        let s = &self.settings;
        let mut out = Vec::new();
        for &policy in &s.policies {
            for &position_finder in &s.position_finder {
                for &sd_scale in &s.sd_scales {
                    for &load in &s.loads {
                        out.push(Cell {
                            policy,
                            load,
                            sd_scale,
                            position_finder,
                        });
                    }
                }
            }
        }
        out
    }

    /// Seed shared by every cell for repetition `rep`.
    pub fn rep_seed(&self, rep: u64) -> u64 {
        derive_seed(self.settings.seed, &[rep])
    }

    fn run_rep(&self, cell: Cell, rep: u64) -> Result<Vec<PairedResult>> {
        let seed = self.rep_seed(rep);
        let spec = WorkloadSpec {
            total_tasks: cell.load,
            sd_scale: cell.sd_scale,
            ..self.workload.clone()
        };
        let trace = generate(&spec, seed)?;
        let config = EngineConfig {
            policy: cell.policy,
            position_mode: if cell.position_finder {
                PositionMode::Relaxed
            } else {
                PositionMode::Maintained
            },
            seed,
            keep_records: false,
            ..self.engine.clone()
        };
        paired_comparison(&trace, &config, &self.settings.modes)
    }

    /// Runs the matrix in parallel; results come back in plan order.
    pub fn run(&self) -> Result<ExperimentResults> {
        self.validate()?;
        let cells = self.cells();
        let reps = self.settings.reps;
        let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
        let results: Vec<Vec<PairedResult>> = jobs
            .par_iter()
            .map(|&(c, r)| {
                self.run_rep(cells[c], r).map_err(|e| {
                    Error::InvalidConfig(format!(
                        "cell policy={} load={} sd_scale={} position_finder={} rep={r}: {e}",
                        cells[c].policy, cells[c].load, cells[c].sd_scale, cells[c].position_finder
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(cells.len());
        let mut it = results.into_iter();
        for cell in cells {
            let per_rep: Vec<Vec<PairedResult>> = it.by_ref().take(reps as usize).collect();
            out.push(CellResult { cell, per_rep });
        }
        Ok(ExperimentResults {
            modes: self.settings.modes.clone(),
            cells: out,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    /// `per_rep[rep][mode index]`.
    pub per_rep: Vec<Vec<PairedResult>>,
}

impl CellResult {
    /// One metric for mode index `m` across repetitions.
    pub fn series(&self, m: usize, f: impl Fn(&PairedResult) -> f64) -> Vec<f64> {
        self.per_rep.iter().map(|r| f(&r[m])).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub modes: Vec<MergeMode>,
    pub cells: Vec<CellResult>,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Two-sided critical value at `confidence`: Student t below 30 samples,
/// normal from 30 on.
pub fn critical_value(n: usize, confidence: f64) -> f64 {
    let q = 1.0 - (1.0 - confidence) / 2.0;
    if n >= 30 {
        return statrs::distribution::Normal::standard().inverse_cdf(q);
    }
    let df = (n.max(2) - 1) as f64;
    StudentsT::new(0.0, 1.0, df).expect("df > 0").inverse_cdf(q)
}

/// Half-width of the 95% confidence interval of the mean; `None` below two samples.
pub fn ci95(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    Some(critical_value(xs.len(), 0.95) * sample_sd(xs) / (xs.len() as f64).sqrt())
}

/// Paired difference `a - b` with its 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedDiff {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn paired_diff(a: &[f64], b: &[f64]) -> PairedDiff {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let h = ci95(&d).unwrap_or(0.0);
    PairedDiff {
        mean: m,
        lower: m - h,
        upper: m + h,
    }
}

pub const CSV_COLUMNS: [&str; 21] = [
    "row_type",
    "policy",
    "load",
    "sd_scale",
    "position_finder",
    "mode",
    "rep",
    "n",
    "dmr",
    "dmr_ci",
    "makespan",
    "makespan_ci",
    "dmr_reduction",
    "dmr_reduction_ci",
    "makespan_saving_pct",
    "makespan_saving_pct_ci",
    "merges_task",
    "merges_data_op",
    "merges_data_only",
    "declined",
    "mean_osl",
];

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl ExperimentResults {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        for cell in &self.cells {
            let c = cell.cell;
            let head = |row_type: &str, mode: MergeMode| {
                vec![
                    row_type.to_string(),
                    c.policy.to_string(),
                    c.load.to_string(),
                    c.sd_scale.to_string(),
                    c.position_finder.to_string(),
                    mode.to_string(),
                ]
            };
            for (mi, &mode) in self.modes.iter().enumerate() {
                for (rep, row) in cell.per_rep.iter().enumerate() {
                    let r = &row[mi];
                    let mut rec = head("raw", mode);
                    rec.extend([
                        rep.to_string(),
                        "1".into(),
                        r.report.dmr.to_string(),
                        String::new(),
                        r.report.makespan.to_string(),
                        String::new(),
                        r.dmr_reduction.to_string(),
                        String::new(),
                        r.makespan_saving_pct.to_string(),
                        String::new(),
                        r.report.merges.task.to_string(),
                        r.report.merges.data_op.to_string(),
                        r.report.merges.data_only.to_string(),
                        r.report.merges.declined.to_string(),
                        r.report.mean_osl.to_string(),
                    ]);
                    w.write_record(&rec)?;
                }
                let s = |f: &dyn Fn(&PairedResult) -> f64| cell.series(mi, f);
                let dmr = s(&|r| r.report.dmr);
                let mk = s(&|r| r.report.makespan);
                let red = s(&|r| r.dmr_reduction);
                let sav = s(&|r| r.makespan_saving_pct);
                let mut rec = head("aggregate", mode);
                rec.extend([
                    String::new(),
                    cell.per_rep.len().to_string(),
                    mean(&dmr).to_string(),
                    fmt_opt(ci95(&dmr)),
                    mean(&mk).to_string(),
                    fmt_opt(ci95(&mk)),
                    mean(&red).to_string(),
                    fmt_opt(ci95(&red)),
                    mean(&sav).to_string(),
                    fmt_opt(ci95(&sav)),
                    mean(&s(&|r| r.report.merges.task as f64)).to_string(),
                    mean(&s(&|r| r.report.merges.data_op as f64)).to_string(),
                    mean(&s(&|r| r.report.merges.data_only as f64)).to_string(),
                    mean(&s(&|r| r.report.merges.declined as f64)).to_string(),
                    mean(&s(&|r| r.report.mean_osl)).to_string(),
                ]);
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(reps: u64) -> ExperimentPlan {
        ExperimentPlan {
            settings: ExperimentSettings {
                loads: vec![60],
                modes: vec![MergeMode::NoMerge, MergeMode::Aggressive],
                reps,
                ..ExperimentSettings::default()
            },
            workload: WorkloadSpec {
                cycles: 2,
                ..WorkloadSpec::default()
            },
            engine: EngineConfig {
                machine_count: 2,
                ..EngineConfig::default()
            },
        }
    }

    #[test]
    fn row_accounting() {
        let plan = ExperimentPlan {
            settings: ExperimentSettings {
                modes: vec![MergeMode::Aggressive],
                ..small_plan(2).settings
            },
            ..small_plan(2)
        };
        let mut buf = Vec::new();
        plan.run().unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.iter().filter(|r| r.starts_with("raw,")).count(), 2);
        assert_eq!(rows.iter().filter(|r| r.starts_with("aggregate,")).count(), 1);
    }

    #[test]
    fn reductions_are_paired_within_rep() {
        let res = small_plan(3).run().unwrap();
        for rep in &res.cells[0].per_rep {
            let base = &rep[0];
            let aggr = &rep[1];
            assert_eq!(base.dmr_reduction, 0.0);
            assert_eq!(aggr.dmr_reduction, base.report.dmr - aggr.report.dmr);
        }
    }

    #[test]
    fn aggregates_recompute_from_raw_rows() {
        let mut buf = Vec::new();
        small_plan(4).run().unwrap().write_csv(&mut buf).unwrap();
        let mut rdr = csv::Reader::from_reader(buf.as_slice());
        let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
        let col = |name: &str| CSV_COLUMNS.iter().position(|c| *c == name).unwrap();
        for mode in ["no_merge", "aggressive"] {
            let raw: Vec<f64> = rows
                .iter()
                .filter(|r| &r[0] == "raw" && &r[col("mode")] == mode)
                .map(|r| r[col("dmr")].parse().unwrap())
                .collect();
            let agg = rows
                .iter()
                .find(|r| &r[0] == "aggregate" && &r[col("mode")] == mode)
                .unwrap();
            assert_eq!(agg[col("dmr")].parse::<f64>().unwrap(), mean(&raw));
            assert_eq!(agg[col("n")].parse::<usize>().unwrap(), raw.len());
        }
    }

    #[test]
    fn parallel_output_is_deterministic() {
        let run = || {
            let mut buf = Vec::new();
            small_plan(3).run().unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn critical_values() {
        assert!((critical_value(30, 0.95) - 1.959964).abs() < 1e-5);
        // t(0.975, 9)
        assert!((critical_value(10, 0.95) - 2.262157).abs() < 1e-5);
        assert_eq!(ci95(&[1.0]), None);
        let d = paired_diff(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert_eq!((d.mean, d.lower, d.upper), (0.0, 0.0, 0.0));
    }

    #[test]
    fn invalid_plan() {
        let mut p = small_plan(1);
        p.settings.reps = 0;
        assert!(p.run().is_err());
    }
}
