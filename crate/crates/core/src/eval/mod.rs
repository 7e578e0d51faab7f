//! ROC evaluation, experiments and reports.

pub mod config;
pub mod experiment;
pub mod matched;
pub mod roc;

pub use config::{desk_training, AnalysisConfig, AttackerKind, DefenderKind, ExperimentConfig, KappaSpec, Precision, SCENARIOS};
pub use experiment::{
    build_defense, config_hash, evaluate_attackers, run_configured, run_experiment, AttackOutcome, AttackerReport, CellReport, Defense, ExperimentReport,
    SeedContext, SeedStats, TrainedDefense,
};
pub use matched::{matched_utility_dp, MatchedDp};
pub use roc::{roc_auc, RocCurve};
