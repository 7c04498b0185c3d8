//! Engine invariants over random traces.

use proptest::prelude::*;

use taskmerge::engine::{Engine, EngineConfig, MergeMode};
use taskmerge::position::{PositionMode, QueuingPolicy};
use taskmerge::task::{OpType, OperationSpec, Task};
use taskmerge::workload::{generate, WorkloadSpec};

fn trace_strategy() -> impl Strategy<Value = Vec<Task>> {
    prop::collection::vec((0u8..4, 0u64..3, 0u32..3, 0usize..4, 0usize..2, 0.5..8.0f64, 0.0..0.5f64, 0.5..20.0f64), 1..40)
        .prop_map(|rows| {
            let mut t = 0.0;
            rows.into_iter()
                .enumerate()
                .map(|(id, (gap, stream, seg, op, param, mu, sd, slack))| {
                    t += f64::from(gap);
                    Task {
                        id: id as u64,
                        stream_id: stream,
                        segment_idx: seg,
                        op: OperationSpec::new(OpType::ALL[op], [["x", "y"][param]]).unwrap(),
                        arrival: t,
                        deadline: t + slack,
                        exec_mean: mu,
                        exec_sd: sd,
                        viewer_id: 0,
                    }
                })
                .collect()
        })
}

fn config_strategy() -> impl Strategy<Value = EngineConfig> {
    (
        1usize..4,
        0usize..3,
        prop::sample::select(QueuingPolicy::ALL.to_vec()),
        prop::sample::select(MergeMode::ALL.to_vec()),
        any::<bool>(),
        any::<u64>(),
    )
        .prop_map(|(machines, depth, policy, mode, relaxed, seed)| EngineConfig {
            machine_count: machines,
            machine_queue_depth: depth,
            policy,
            mode,
            position_mode: if relaxed { PositionMode::Relaxed } else { PositionMode::Maintained },
            seed,
            ..EngineConfig::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn every_task_completes_once(trace in trace_strategy(), config in config_strategy()) {
        let r = Engine::run(config.clone(), &trace).unwrap();
        prop_assert_eq!(r.total_tasks, trace.len());
        prop_assert_eq!(r.records.len(), trace.len());
        for (rec, t) in r.records.iter().zip(&trace) {
            prop_assert_eq!(rec.id, t.id);
            prop_assert!(rec.dispatch >= t.arrival - 1e-9);
            prop_assert!(rec.start >= rec.dispatch - 1e-9);
            prop_assert!(rec.completion > rec.start);
            prop_assert_eq!(rec.late, rec.completion > t.deadline + 1e-6);
        }
        let misses = r.records.iter().filter(|x| x.late).count();
        prop_assert_eq!(r.misses, misses);
        prop_assert!((r.dmr - misses as f64 / trace.len() as f64).abs() < 1e-12);
        let last_arrival = trace.last().unwrap().arrival;
        let last_done = r.records.iter().map(|x| x.completion).fold(0.0, f64::max);
        prop_assert!(r.makespan >= last_arrival);
        prop_assert!((r.makespan - last_done).abs() < 1e-9);
        if config.mode == MergeMode::NoMerge {
            prop_assert_eq!(r.merges.total(), 0);
        }
    }

    #[test]
    fn compound_members_share_service(trace in trace_strategy(), config in config_strategy()) {
        let r = Engine::run(config, &trace).unwrap();
        for a in &r.records {
            let lead = r.records.iter().find(|x| x.id == a.compound_id).unwrap();
            prop_assert_eq!(a.start, lead.start);
            prop_assert_eq!(a.completion, lead.completion);
            let sa = &trace[a.id as usize];
            let sl = &trace[lead.id as usize];
            prop_assert_eq!((sa.stream_id, sa.segment_idx), (sl.stream_id, sl.segment_idx));
        }
        let merged = r.records.iter().filter(|x| x.id != x.compound_id).count() as u64;
        prop_assert_eq!(merged, r.merges.task + r.merges.data_op + r.merges.data_only);
    }

    #[test]
    fn machines_never_idle_while_work_waits(trace in trace_strategy(), mut config in config_strategy()) {
        config.machine_queue_depth = 0;
        let m = config.machine_count;
        let r = Engine::run(config, &trace).unwrap();
        let mut services: Vec<(f64, f64)> = Vec::new();
        for rec in r.records.iter().filter(|x| x.id == x.compound_id) {
            services.push((rec.start, rec.completion));
        }
        for rec in &r.records {
            if rec.start > trace[rec.id as usize].arrival + 1e-9 {
                // Some instant in [arrival, start) must see every machine busy.
                let probe = rec.start - 1e-7;
                let busy = services.iter().filter(|(s, c)| *s <= probe && probe < *c).count();
                prop_assert_eq!(busy, m, "task {} waited with a free machine", rec.id);
            }
        }
        let mut overlap_points: Vec<f64> = services.iter().map(|s| s.0).collect();
        overlap_points.sort_by(f64::total_cmp);
        for t in overlap_points {
            let busy = services.iter().filter(|(s, c)| *s <= t && t < *c).count();
            prop_assert!(busy <= m);
        }
    }

    #[test]
    fn runs_are_deterministic(trace in trace_strategy(), config in config_strategy()) {
        let a = Engine::run(config.clone(), &trace).unwrap();
        let b = Engine::run(config, &trace).unwrap();
        prop_assert_eq!(a.records, b.records);
        prop_assert_eq!(a.osl_series, b.osl_series);
    }
}

#[test]
fn generated_workload_runs_in_every_mode() {
    let spec = WorkloadSpec { total_tasks: 1000, ..WorkloadSpec::default() };
    let trace = generate(&spec, 5).unwrap();
    for mode in MergeMode::ALL {
        for policy in QueuingPolicy::ALL {
            let config = EngineConfig { mode, policy, seed: 5, ..EngineConfig::default() };
            let r = Engine::run(config, &trace).unwrap();
            assert_eq!(r.records.len(), 1000);
            assert!((0.0..=1.0).contains(&r.dmr));
            assert_eq!(r.osl_series.len(), 1000);
        }
    }
}
