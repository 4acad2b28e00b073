//! Evaluation harness.

mod metrics;
mod perturb;
mod plots;
mod run;
mod split;

pub use metrics::{accuracy, auc, average_auc, roc_curve};
pub use perturb::{perturb, PerturbKind, MAX_SEVERITY};
pub use plots::{
    plot_histograms, plot_report, plot_roc, plot_severity, plot_temporal, plot_traces,
};
pub use run::{
    run_benchmark, test_records, AucSummary, Authenticator, BenchConfig, BenchReport,
    DiffusionAuthenticator, OracleAuthenticator, PerturbationPlan, RuleResult, RunMetadata,
    ScoreRecord, ScoringVariant, SubjectResult, SweepRow, SweepTrend, VariantResult,
};
pub use split::{
    build_evaluation_split, subject_name, EvaluationSplit, ReferenceAmount, SplitConfig,
    SubjectSplit, REFERENCE_ROLE, TEST_ROLE, VALIDATION_ROLE,
};
