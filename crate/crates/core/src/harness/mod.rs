//! Experiment orchestration: data setup, both training phases, reports,
//! checkpoints, the random-init control and the complexity audit.

mod audit;
mod output;
mod pipeline;
mod setup;

pub use audit::{client_flops, complexity_audit, Audit, AuditRow, LAYERS};
pub use output::{
    apply_env_overrides, run_and_write, run_control, run_experiment, write_artifacts, SEED_ENV,
};
pub use pipeline::{
    feature_oracle_accuracy, rounds_to_convergence, run_pipeline, smoothed, ByteTotals, Mode,
    Outcome, Summary, CONVERGENCE_TOL, SMOOTHING_WINDOW,
};
pub use setup::{build_contexts, client_domain, domain_spec, generate_shards, text_encoder};
