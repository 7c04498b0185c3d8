//! Deadline-aware task merging for oversubscribed scheduling queues.
//!
//! Arriving tasks that share work with something already queued (same
//! segment; optionally the same operation or the same exact request) can be
//! folded into one compound task. Whether to merge, and where the compound
//! goes in the queue, is decided by replaying the queue on virtual machines
//! and counting deadline misses with and without the merge.

pub mod assessor;
pub mod cli;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod impact;
pub mod metrics;
pub mod position;
pub mod similarity;
pub mod task;
pub mod workload;

pub use assessor::{adaptive_alpha, osl, osl_observed, OslReading};
pub use config::ConfigFile;
pub use engine::{paired_comparison, AdmissionOutcome, Engine, EngineConfig, MergeMode};
pub use error::{Error, Result};
pub use experiment::{ExperimentPlan, ExperimentSettings};
pub use impact::{evaluate_merge, ImpactReport, MachineState, MergeProposal, QueueEntry, SystemSnapshot};
pub use metrics::{MetricsReport, TaskRecord};
pub use position::{Placement, PositionDecision, PositionMode, QueuingPolicy, RelaxedHeuristic};
pub use similarity::SimilarityIndex;
pub use task::{MergedTask, OpType, OperationSpec, SharingFactors, SimilarityLevel, Task};
pub use workload::{generate, load_trace, save_trace, WorkloadSpec};
