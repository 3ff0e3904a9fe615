//! Level-aware double cross-validation with debiased refits.
//!
//! The outer loop holds out one level of the grouping variable at a time
//! (one house, with every survey made in it). Everything else is learned
//! strictly inside the remaining rows: quantile edges, standardization,
//! the penalty grid anchor, the inner fold plan, the cross-validation
//! curve, and the penalty choice. The selected active set is then refitted
//! without the penalty to undo the L1 shrinkage, and only that refitted
//! model ever sees the held-out rows.
//!
//! Each outer fold contributes one row to a presence matrix per selection
//! rule, marking which variable groups were active; frequencies over those
//! rows drive the stability analysis in the metrics module. A fold that
//! fails numerically falls back to intercept-only predictions and an
//! all-zero presence row, and stays in the denominator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cv::{build_folds, cv_curve, select_lambda, FoldPlan};
use crate::data::Dataset;
use crate::design::{
    canonical_group_names, encode_design, expand_interactions, DesignMatrix, GroupKind, Scenario,
};
use crate::error::{Error, Result};
use crate::glm::{fit_irls, predict_mu, FitResult};
use crate::lasso::{build_grid, default_min_ratio, fit_path, lambda_max};

/// Settings for a double cross-validation run.
#[derive(Debug, Clone, PartialEq)]
pub struct DcvConfig {
    pub scenario: Scenario,
    /// Grouping variable for the outer leave-one-level-out loop and the
    /// inner fold dealing. `None` uses the schema's level-key variable,
    /// falling back to plain row folds if the schema declares none.
    pub level_key: Option<String>,
    /// Inner fold count, clamped per fold to the distinct training levels
    /// (and used as the outer fold count when no level key exists).
    pub inner_folds: usize,
    /// Number of penalties in each fold's grid.
    pub grid_count: usize,
    /// Smallest-to-largest penalty ratio; `None` picks the default from
    /// the training shape.
    pub grid_min_ratio: Option<f64>,
    /// Frequency threshold (percent) for the frequent-variable sets.
    pub threshold: f64,
    pub seed: u64,
    /// Worker threads; 0 uses the ambient thread pool.
    pub jobs: usize,
}

impl DcvConfig {
    pub fn new(scenario: Scenario) -> DcvConfig {
        DcvConfig {
            scenario,
            level_key: None,
            inner_folds: 9,
            grid_count: 100,
            grid_min_ratio: None,
            threshold: 80.0,
            seed: 0,
            jobs: 0,
        }
    }
}

/// One presence row per outer fold; columns follow the canonical group
/// order for the scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PresenceMatrix {
    pub group_names: Vec<String>,
    pub fold_labels: Vec<String>,
    pub rows: Vec<Vec<bool>>,
}

impl PresenceMatrix {
    /// Percentage of folds in which group `j` was active.
    pub fn frequency(&self, j: usize) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        let hits = self.rows.iter().filter(|r| r[j]).count();
        100.0 * hits as f64 / self.rows.len() as f64
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.group_names.len())
            .map(|j| self.frequency(j))
            .collect()
    }
}

/// Per-fold diagnostics from the outer loop.
#[derive(Debug, Clone)]
pub struct FoldRecord {
    pub label: String,
    pub test_rows: Vec<usize>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub active_min: Vec<String>,
    pub active_1se: Vec<String>,
    pub failed: bool,
    pub message: Option<String>,
}

/// Everything a double cross-validation run produces.
#[derive(Debug, Clone)]
pub struct DcvResult {
    pub config: DcvConfig,
    /// The grouping variable actually used, if any.
    pub level_key: Option<String>,
    pub fold_records: Vec<FoldRecord>,
    /// Observed counts, row-aligned with the input dataset.
    pub y: Vec<f64>,
    /// Held-out predictions under the minimum-score rule.
    pub predictions_min: Vec<f64>,
    /// Held-out predictions under the one-standard-error rule.
    pub predictions_1se: Vec<f64>,
    pub presence_min: PresenceMatrix,
    pub presence_1se: PresenceMatrix,
    pub n_failed_folds: usize,
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl DcvResult {
    /// Renders the run as deterministic text files keyed by file name.
    /// Floats use the shortest round-trip formatting, so two byte-equal
    /// outputs mean numerically identical runs.
    pub fn render_files(&self) -> BTreeMap<String, String> {
        let mut files = BTreeMap::new();

        let mut fold_of_row = vec![String::new(); self.y.len()];
        for rec in &self.fold_records {
            for &i in &rec.test_rows {
                fold_of_row[i] = rec.label.clone();
            }
        }
        let mut pred = String::from("row,fold,y,predicted_min,predicted_1se\n");
        for (i, fold) in fold_of_row.iter().enumerate() {
            pred.push_str(&format!(
                "{},{},{},{},{}\n",
                i,
                csv_field(fold),
                self.y[i],
                self.predictions_min[i],
                self.predictions_1se[i]
            ));
        }
        files.insert("predictions.csv".to_string(), pred);

        for (name, m) in [
            ("presence_min.csv", &self.presence_min),
            ("presence_1se.csv", &self.presence_1se),
        ] {
            let mut out = String::from("fold");
            for g in &m.group_names {
                out.push(',');
                out.push_str(&csv_field(g));
            }
            out.push('\n');
            for (label, row) in m.fold_labels.iter().zip(&m.rows) {
                out.push_str(&csv_field(label));
                for &hit in row {
                    out.push_str(if hit { ",1" } else { ",0" });
                }
                out.push('\n');
            }
            files.insert(name.to_string(), out);
        }

        let mut folds = String::from(
            "fold,n_test,lambda_min,lambda_1se,n_active_min,n_active_1se,failed,message\n",
        );
        for rec in &self.fold_records {
            folds.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                csv_field(&rec.label),
                rec.test_rows.len(),
                rec.lambda_min,
                rec.lambda_1se,
                rec.active_min.len(),
                rec.active_1se.len(),
                rec.failed,
                csv_field(rec.message.as_deref().unwrap_or(""))
            ));
        }
        files.insert("folds.csv".to_string(), folds);
        files
    }
}

/// Picks the grouping variable: an explicit override must exist and be
/// nominal; otherwise the schema's level-key variable, if declared.
fn resolve_level_key(dataset: &Dataset, config: &DcvConfig) -> Result<Option<String>> {
    match &config.level_key {
        Some(name) => {
            dataset.labels(name)?;
            Ok(Some(name.clone()))
        }
        None => Ok(dataset
            .schema()
            .vars()
            .iter()
            .find(|v| v.role == crate::schema::VarRole::LevelKey)
            .map(|v| v.name.clone())),
    }
}

fn build_outer_folds(
    dataset: &Dataset,
    level_key: Option<&str>,
    config: &DcvConfig,
) -> Result<FoldPlan> {
    match level_key {
        Some(name) => {
            let col = dataset.labels(name)?;
            let mut distinct: Vec<&str> = Vec::new();
            for l in col {
                if !distinct.contains(&l.as_str()) {
                    distinct.push(l);
                }
            }
            build_folds(dataset, Some(name), distinct.len(), config.seed)
        }
        None => build_folds(dataset, None, config.inner_folds, config.seed),
    }
}

fn build_inner_folds(
    ea: &Dataset,
    level_key: Option<&str>,
    config: &DcvConfig,
    outer_index: usize,
) -> Result<FoldPlan> {
    let seed = config.seed.wrapping_add(outer_index as u64 + 1);
    if let Some(name) = level_key {
        let col = ea.labels(name)?;
        let mut distinct: Vec<&str> = Vec::new();
        for l in col {
            if !distinct.contains(&l.as_str()) {
                distinct.push(l);
            }
        }
        if distinct.len() >= 2 {
            let k = config.inner_folds.min(distinct.len());
            return build_folds(ea, Some(name), k, seed);
        }
        log::warn!(
            "training rows hold a single '{}' level; falling back to row folds",
            name
        );
    }
    build_folds(ea, None, config.inner_folds.min(ea.n_rows()), seed)
}

fn encode_for_scenario(dataset: &Dataset, scenario: Scenario) -> Result<DesignMatrix> {
    expand_interactions(&encode_design(dataset, scenario)?)
}

/// Refits the unpenalized model on the chosen columns only, returning
/// coefficients in the full column space (zeros elsewhere).
pub fn debias_refit(x: &DMatrix<f64>, y: &DVector<f64>, active: &[usize]) -> Result<FitResult> {
    let sub = x.select_columns(active.iter());
    let fit = fit_irls(&sub, y)?;
    let mut slopes = DVector::zeros(x.ncols());
    for (k, &j) in active.iter().enumerate() {
        slopes[j] = fit.coefficients.slopes[k];
    }
    let dropped_columns = fit.dropped_columns.iter().map(|&k| active[k]).collect();
    Ok(FitResult {
        coefficients: crate::glm::Coefficients::new(fit.coefficients.intercept, slopes),
        dropped_columns,
        ..fit
    })
}

struct FoldOutcome {
    record: FoldRecord,
    pred_min: Vec<f64>,
    pred_1se: Vec<f64>,
    presence_min: Vec<bool>,
    presence_1se: Vec<bool>,
}

fn intercept_only_outcome(
    label: String,
    test_rows: Vec<usize>,
    ea_mean: f64,
    n_groups: usize,
    message: String,
) -> FoldOutcome {
    let mu = ea_mean.max(1e-10);
    let preds = vec![mu; test_rows.len()];
    FoldOutcome {
        record: FoldRecord {
            label,
            test_rows,
            lambda_min: f64::NAN,
            lambda_1se: f64::NAN,
            active_min: Vec::new(),
            active_1se: Vec::new(),
            failed: true,
            message: Some(message),
        },
        pred_min: preds.clone(),
        pred_1se: preds,
        presence_min: vec![false; n_groups],
        presence_1se: vec![false; n_groups],
    }
}

fn try_fold(
    dataset: &Dataset,
    config: &DcvConfig,
    level_key: Option<&str>,
    outer: &FoldPlan,
    f: usize,
    canonical: &[String],
) -> Result<FoldOutcome> {
    let train = outer.training_rows(f);
    let test = outer.held_out(f).to_vec();
    let ea = dataset.subset(&train);
    let et = dataset.subset(&test);
    let design = encode_for_scenario(&ea, config.scenario)?;
    debug_assert_eq!(design.group_names(), canonical);

    let x = design.values();
    let y = design.y();
    let anchor = lambda_max(x, y);
    let ratio = config
        .grid_min_ratio
        .unwrap_or_else(|| default_min_ratio(x.nrows(), x.ncols()));
    let grid = build_grid(anchor, config.grid_count, ratio)?;
    let inner = build_inner_folds(&ea, level_key, config, f)?;
    let curve = cv_curve(x, y, &grid, &inner)?;
    let selection = select_lambda(&curve)?;
    let path = fit_path(x, y, &grid)?;
    let (x_te, _) = design.apply_to(&et)?;

    let rule = |index: usize| -> Result<(Vec<String>, Vec<bool>, Vec<f64>)> {
        let active_cols = path.coefficients[index].nonzero();
        let mut col_active = vec![false; design.p()];
        for &c in &active_cols {
            col_active[c] = true;
        }
        let refit = debias_refit(x, y, &active_cols)?;
        let mu = predict_mu(&x_te, &refit.coefficients);
        let presence: Vec<bool> = design
            .groups()
            .iter()
            .map(|g| g.columns.clone().any(|c| col_active[c]))
            .collect();
        let names = design
            .groups()
            .iter()
            .zip(&presence)
            .filter(|(_, hit)| **hit)
            .map(|(g, _)| g.name.clone())
            .collect();
        Ok((names, presence, mu.iter().cloned().collect()))
    };
    let (active_min, presence_min, pred_min) = rule(selection.min_index)?;
    let (active_1se, presence_1se, pred_1se) = rule(selection.one_se_index)?;

    Ok(FoldOutcome {
        record: FoldRecord {
            label: outer.labels()[f].clone(),
            test_rows: test,
            lambda_min: selection.lambda_min,
            lambda_1se: selection.lambda_1se,
            active_min,
            active_1se,
            failed: false,
            message: None,
        },
        pred_min,
        pred_1se,
        presence_min,
        presence_1se,
    })
}

/// Runs `body` on a dedicated `jobs`-thread pool, or on the ambient one
/// when `jobs` is zero.
pub fn run_in_pool<T: Send>(jobs: usize, body: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        body()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("cannot build a {}-thread pool: {}", jobs, e)))?;
        pool.install(body)
    }
}

/// Runs the full double cross-validation for one scenario.
///
/// Outer folds leave one level out; inner folds, grids, encodings, and
/// penalty choices are fitted per outer fold on its training rows only.
/// Returns held-out predictions covering every row exactly once per rule,
/// plus presence matrices over the canonical group universe. The output
/// is byte-reproducible for a fixed seed, independent of `jobs`.
pub fn run_lolo_dcv(dataset: &Dataset, config: &DcvConfig) -> Result<DcvResult> {
    let level_key = resolve_level_key(dataset, config)?;
    let outer = build_outer_folds(dataset, level_key.as_deref(), config)?;
    let canonical = canonical_group_names(dataset.schema(), config.scenario);
    let n = dataset.n_rows();

    let outcomes: Vec<FoldOutcome> = run_in_pool(config.jobs, || {
        Ok((0..outer.n_folds())
            .into_par_iter()
            .map(
                |f| match try_fold(dataset, config, level_key.as_deref(), &outer, f, &canonical) {
                    Ok(outcome) => outcome,
                    Err(e) => {
                        log::warn!("outer fold '{}' failed: {}", outer.labels()[f], e);
                        let train = outer.training_rows(f);
                        let ea_mean = train.iter().map(|&i| dataset.response()[i]).sum::<f64>()
                            / train.len().max(1) as f64;
                        intercept_only_outcome(
                            outer.labels()[f].clone(),
                            outer.held_out(f).to_vec(),
                            ea_mean,
                            canonical.len(),
                            e.to_string(),
                        )
                    }
                },
            )
            .collect())
    })?;

    let mut predictions_min = vec![f64::NAN; n];
    let mut predictions_1se = vec![f64::NAN; n];
    for o in &outcomes {
        for (k, &row) in o.record.test_rows.iter().enumerate() {
            if !predictions_min[row].is_nan() {
                return Err(Error::Invalid(format!(
                    "row {} predicted by more than one fold",
                    row
                )));
            }
            predictions_min[row] = o.pred_min[k];
            predictions_1se[row] = o.pred_1se[k];
        }
    }
    if predictions_min.iter().any(|v| v.is_nan()) {
        return Err(Error::Invalid(
            "some rows were never predicted by the outer loop".to_string(),
        ));
    }

    let fold_labels: Vec<String> = outcomes.iter().map(|o| o.record.label.clone()).collect();
    let presence_min = PresenceMatrix {
        group_names: canonical.clone(),
        fold_labels: fold_labels.clone(),
        rows: outcomes.iter().map(|o| o.presence_min.clone()).collect(),
    };
    let presence_1se = PresenceMatrix {
        group_names: canonical,
        fold_labels,
        rows: outcomes.iter().map(|o| o.presence_1se.clone()).collect(),
    };
    let n_failed_folds = outcomes.iter().filter(|o| o.record.failed).count();
    if n_failed_folds > 0 {
        log::warn!(
            "{} of {} outer folds fell back to intercept-only predictions",
            n_failed_folds,
            outcomes.len()
        );
    }
    Ok(DcvResult {
        config: config.clone(),
        level_key,
        fold_records: outcomes.into_iter().map(|o| o.record).collect(),
        y: dataset.response().to_vec(),
        predictions_min,
        predictions_1se,
        presence_min,
        presence_1se,
        n_failed_folds,
    })
}

/// Leave-one-level-out predictions for a fixed set of group names: per
/// outer fold, encode the training rows, refit the groups' columns
/// without penalty, and predict the held-out rows. An empty group list
/// gives intercept-only predictions.
pub fn refit_cv_predictions(
    dataset: &Dataset,
    config: &DcvConfig,
    groups: &[String],
) -> Result<Vec<f64>> {
    let level_key = resolve_level_key(dataset, config)?;
    let outer = build_outer_folds(dataset, level_key.as_deref(), config)?;
    let n = dataset.n_rows();

    let fold_preds: Vec<Vec<f64>> = run_in_pool(config.jobs, || {
        Ok((0..outer.n_folds())
            .into_par_iter()
            .map(|f| {
                let train = outer.training_rows(f);
                let test = outer.held_out(f);
                let ea = dataset.subset(&train);
                let et = dataset.subset(test);
                let attempt = || -> Result<Vec<f64>> {
                    let design = encode_for_scenario(&ea, config.scenario)?;
                    let cols: Vec<usize> = design
                        .groups()
                        .iter()
                        .filter(|g| groups.contains(&g.name))
                        .flat_map(|g| g.columns.clone())
                        .collect();
                    let refit = debias_refit(design.values(), design.y(), &cols)?;
                    let (x_te, _) = design.apply_to(&et)?;
                    Ok(predict_mu(&x_te, &refit.coefficients)
                        .iter()
                        .cloned()
                        .collect())
                };
                attempt().unwrap_or_else(|e| {
                    log::warn!("refit fold '{}' failed: {}", outer.labels()[f], e);
                    let ea_mean = ea.response().iter().sum::<f64>() / ea.n_rows().max(1) as f64;
                    vec![ea_mean.max(1e-10); test.len()]
                })
            })
            .collect())
    })?;

    let mut preds = vec![f64::NAN; n];
    for (f, values) in fold_preds.iter().enumerate() {
        for (k, &row) in outer.held_out(f).iter().enumerate() {
            preds[row] = values[k];
        }
    }
    Ok(preds)
}

/// A classical backward-eliminated Poisson regression for comparison.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    /// Terms surviving elimination, in design order.
    pub terms: Vec<String>,
    /// Terms removed, with the likelihood-ratio p-value that removed them,
    /// in elimination order.
    pub eliminated: Vec<(String, f64)>,
    /// Full-data fit of the final model (standardized frame, full column
    /// space).
    pub fit: FitResult,
    /// Leave-one-level-out predictions of the final model.
    pub predictions: Vec<f64>,
    pub alpha: f64,
}

/// Backward elimination by likelihood-ratio tests: starting from all main
/// effects plus the whitelisted interaction pairs, repeatedly drops the
/// term with the largest p-value above `alpha`. Main effects stay while
/// an interaction involving them remains. Degrees of freedom count the
/// effectively estimable columns, so aliased levels do not inflate tests.
pub fn backward_glm_baseline(
    dataset: &Dataset,
    config: &DcvConfig,
    interactions: &[(String, String)],
    alpha: f64,
) -> Result<BaselineResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "elimination threshold must lie in (0, 1), got {}",
            alpha
        )));
    }
    let design = encode_for_scenario(dataset, config.scenario)?;
    let mains: Vec<String> = design
        .groups()
        .iter()
        .filter(|g| g.kind == GroupKind::Main)
        .map(|g| g.name.clone())
        .collect();
    let mut terms = mains.clone();
    for (a, b) in interactions {
        let (ia, ib) = match (
            mains.iter().position(|m| m == a),
            mains.iter().position(|m| m == b),
        ) {
            (Some(ia), Some(ib)) if ia != ib => (ia.min(ib), ia.max(ib)),
            _ => {
                log::warn!(
                    "ignoring interaction '{}:{}': both sides must be distinct main terms",
                    a,
                    b
                );
                continue;
            }
        };
        let name = format!("{}:{}", mains[ia], mains[ib]);
        if !terms.contains(&name) {
            terms.push(name);
        }
    }

    let x = design.values();
    let y = design.y();
    let cols_of = |terms: &[String]| -> Vec<usize> {
        design
            .groups()
            .iter()
            .filter(|g| terms.contains(&g.name))
            .flat_map(|g| g.columns.clone())
            .collect()
    };
    let fit_terms = |terms: &[String]| -> Result<(f64, usize)> {
        let cols = cols_of(terms);
        let fit = debias_refit(x, y, &cols)?;
        Ok((fit.log_likelihood, cols.len() - fit.dropped_columns.len()))
    };
    let droppable = |term: &str, terms: &[String]| -> bool {
        !terms.iter().any(|t| {
            design
                .groups()
                .iter()
                .find(|g| &g.name == t)
                .is_some_and(|g| match &g.kind {
                    GroupKind::Interaction { left, right } => left == term || right == term,
                    GroupKind::Main => false,
                })
        })
    };

    let mut eliminated = Vec::new();
    while !terms.is_empty() {
        let (ll_full, k_full) = fit_terms(&terms)?;
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..terms.len() {
            if !droppable(&terms[i], &terms) {
                continue;
            }
            let reduced: Vec<String> = terms
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, t)| t.clone())
                .collect();
            let (ll_reduced, k_reduced) = fit_terms(&reduced)?;
            let df = k_full.saturating_sub(k_reduced);
            let p = if df == 0 {
                1.0
            } else {
                let lr = (2.0 * (ll_full - ll_reduced)).max(0.0);
                let chi = ChiSquared::new(df as f64)
                    .map_err(|e| Error::Invalid(format!("chi-squared setup failed: {}", e)))?;
                1.0 - chi.cdf(lr)
            };
            if worst.is_none_or(|(_, wp)| p > wp) {
                worst = Some((i, p));
            }
        }
        match worst {
            Some((i, p)) if p > alpha => {
                let gone = terms.remove(i);
                log::info!("eliminating '{}' (p = {:.4})", gone, p);
                eliminated.push((gone, p));
            }
            _ => break,
        }
    }

    let fit = debias_refit(x, y, &cols_of(&terms))?;
    let predictions = refit_cv_predictions(dataset, config, &terms)?;
    Ok(BaselineResult {
        terms,
        eliminated,
        fit,
        predictions,
        alpha,
    })
}
