//! Core library for L1-penalized Poisson regression paths with
//! level-aware double cross-validation on grouped count surveys.

pub mod cv;
pub mod data;
pub mod dcv;
pub mod design;
pub mod error;
pub mod glm;
pub mod lasso;
pub mod metrics;
pub mod schema;
pub mod synth;

pub use cv::{build_folds, cv_curve, select_lambda, CvCurve, FoldPlan, LambdaSelection};
pub use data::{load_dataset, recode_quartiles, Dataset, Recoder, Value};
pub use dcv::{
    backward_glm_baseline, debias_refit, refit_cv_predictions, run_in_pool, run_lolo_dcv,
    BaselineResult, DcvConfig, DcvResult, FoldRecord, PresenceMatrix,
};
pub use design::{
    canonical_group_names, encode_design, expand_interactions, DesignMatrix, Group, GroupKind,
    Scenario,
};
pub use error::{Error, Result};
pub use glm::{
    deviance, fit_irls, log_likelihood, log_likelihood_gradient, predict_mu,
    saturated_log_likelihood, Coefficients, FitResult, ScaleFrame,
};
pub use lasso::{
    build_grid, default_min_ratio, fit_path, fit_penalized, kkt_max_violation, lambda_max,
    penalized_objective, LambdaGrid, LassoPath,
};
pub use metrics::{
    emit_frequency_plot_data, emit_summary_table, frequent_variables, prediction_accuracy,
    quality_summary, FrequentVariableSet, LambdaRule, QualityReport,
};
pub use schema::{Schema, VarKind, VarRole, VariableSpec};
pub use synth::{generate, survey_schema, SupportTerm, SynthConfig, SynthOutput};
