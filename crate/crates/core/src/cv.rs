//! Cross-validation: level-aware fold construction, held-out deviance
//! curves along a penalty grid, and penalty selection rules.
//!
//! Folds can be keyed by a grouping variable so that all rows of one
//! level (for example one house) stay together. When the fold count
//! equals the number of distinct levels this is exactly
//! leave-one-level-out; otherwise whole levels are dealt round-robin to
//! folds after a seeded shuffle. Every random choice flows from the
//! caller's seed, so fold plans are reproducible byte for byte.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::glm::{deviance, predict_mu};
use crate::lasso::{fit_path, LambdaGrid};

/// A partition of rows into held-out folds.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    held_out: Vec<Vec<usize>>,
    labels: Vec<String>,
    n: usize,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.held_out.len()
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    /// Rows evaluated in fold `f`, ascending.
    pub fn held_out(&self, f: usize) -> &[usize] {
        &self.held_out[f]
    }

    /// Rows trained on in fold `f`, ascending.
    pub fn training_rows(&self, f: usize) -> Vec<usize> {
        let mut out_mask = vec![false; self.n];
        for &i in &self.held_out[f] {
            out_mask[i] = true;
        }
        (0..self.n).filter(|&i| !out_mask[i]).collect()
    }

    /// One label per fold: the level name for leave-one-level-out plans,
    /// `fold-XX` otherwise.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Builds `k` folds over the dataset rows, optionally keeping all rows
/// that share a `level_key` value in the same fold.
///
/// With a level key and `k` equal to the number of distinct levels, each
/// fold holds out exactly one level, in first-appearance order. With
/// fewer folds, levels are shuffled with the seed and dealt round-robin.
/// Without a level key, rows themselves are shuffled and dealt.
pub fn build_folds(
    dataset: &crate::data::Dataset,
    level_key: Option<&str>,
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    let n = dataset.n_rows();
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs at least 2 folds, got {}",
            k
        )));
    }
    match level_key {
        Some(name) => {
            let col = dataset.labels(name)?;
            let mut order: Vec<&str> = Vec::new();
            for l in col {
                if !order.contains(&l.as_str()) {
                    order.push(l);
                }
            }
            if k > order.len() {
                return Err(Error::Config(format!(
                    "{} folds requested but '{}' has only {} distinct levels",
                    k,
                    name,
                    order.len()
                )));
            }
            let rows_of =
                |level: &str| -> Vec<usize> { (0..n).filter(|&i| col[i] == level).collect() };
            if k == order.len() {
                let held_out: Vec<Vec<usize>> = order.iter().map(|l| rows_of(l)).collect();
                let labels = order.iter().map(|l| l.to_string()).collect();
                return Ok(FoldPlan {
                    held_out,
                    labels,
                    n,
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut shuffled = order.clone();
            shuffled.shuffle(&mut rng);
            let mut held_out = vec![Vec::new(); k];
            for (i, level) in shuffled.iter().enumerate() {
                held_out[i % k].extend(rows_of(level));
            }
            for fold in &mut held_out {
                fold.sort_unstable();
            }
            let labels = (0..k).map(|f| format!("fold-{:02}", f + 1)).collect();
            Ok(FoldPlan {
                held_out,
                labels,
                n,
            })
        }
        None => {
            if k > n {
                return Err(Error::Config(format!(
                    "{} folds requested but the dataset has only {} rows",
                    k, n
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rows: Vec<usize> = (0..n).collect();
            rows.shuffle(&mut rng);
            let mut held_out = vec![Vec::new(); k];
            for (i, &row) in rows.iter().enumerate() {
                held_out[i % k].push(row);
            }
            for fold in &mut held_out {
                fold.sort_unstable();
            }
            let labels = (0..k).map(|f| format!("fold-{:02}", f + 1)).collect();
            Ok(FoldPlan {
                held_out,
                labels,
                n,
            })
        }
    }
}

/// Held-out deviance along a penalty grid, averaged across folds.
#[derive(Debug, Clone)]
pub struct CvCurve {
    pub grid: LambdaGrid,
    /// Mean across scored folds of the per-observation held-out deviance.
    pub mean: Vec<f64>,
    /// Standard error of that mean across folds.
    pub se: Vec<f64>,
    /// Per-fold scores; `None` for folds skipped as degenerate.
    pub per_fold: Vec<Option<Vec<f64>>>,
    /// Indices of skipped folds.
    pub skipped: Vec<usize>,
}

/// Fits a full penalty path per fold (in parallel) and scores each grid
/// value by the held-out deviance per observation.
///
/// Folds whose training rows carry no counts at all, or whose path fit
/// fails numerically, are skipped with a warning and excluded from the
/// mean; at least one fold must survive.
pub fn cv_curve(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &LambdaGrid,
    folds: &FoldPlan,
) -> Result<CvCurve> {
    if folds.n_rows() != x.nrows() {
        return Err(Error::Invalid(format!(
            "fold plan covers {} rows but the design has {}",
            folds.n_rows(),
            x.nrows()
        )));
    }
    let per_fold: Vec<Option<Vec<f64>>> = (0..folds.n_folds())
        .into_par_iter()
        .map(|f| {
            let train = folds.training_rows(f);
            let test = folds.held_out(f);
            if train.is_empty() || test.is_empty() {
                log::warn!("skipping fold {}: empty split", f);
                return None;
            }
            let y_tr = y.select_rows(train.iter());
            if y_tr.iter().sum::<f64>() <= 0.0 {
                log::warn!("skipping fold {}: training response is all zeros", f);
                return None;
            }
            let x_tr = x.select_rows(train.iter());
            let x_te = x.select_rows(test.iter());
            let y_te = y.select_rows(test.iter());
            match fit_path(&x_tr, &y_tr, grid) {
                Ok(path) => {
                    let scores = path
                        .coefficients
                        .iter()
                        .map(|c| deviance(&y_te, &predict_mu(&x_te, c)) / test.len() as f64)
                        .collect();
                    Some(scores)
                }
                Err(e) => {
                    log::warn!("skipping fold {}: {}", f, e);
                    None
                }
            }
        })
        .collect();

    let included: Vec<usize> = (0..per_fold.len())
        .filter(|&f| per_fold[f].is_some())
        .collect();
    let skipped: Vec<usize> = (0..per_fold.len())
        .filter(|&f| per_fold[f].is_none())
        .collect();
    if included.is_empty() {
        return Err(Error::Degenerate(
            "every cross-validation fold was skipped".to_string(),
        ));
    }
    let m = included.len() as f64;
    let mut mean = vec![0.0; grid.len()];
    let mut se = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        let mut s = 0.0;
        for &f in &included {
            s += per_fold[f].as_ref().unwrap()[k];
        }
        mean[k] = s / m;
        if included.len() > 1 {
            let mut ss = 0.0;
            for &f in &included {
                let d = per_fold[f].as_ref().unwrap()[k] - mean[k];
                ss += d * d;
            }
            se[k] = (ss / (m - 1.0)).sqrt() / m.sqrt();
        }
    }
    Ok(CvCurve {
        grid: grid.clone(),
        mean,
        se,
        per_fold,
        skipped,
    })
}

/// The two penalties read off a cross-validation curve.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    /// Grid index of the smallest mean score (ties broken toward the
    /// larger penalty).
    pub min_index: usize,
    /// Grid index of the largest penalty whose mean score is within one
    /// standard error of the minimum.
    pub one_se_index: usize,
    /// Grid index minimizing `mean + se` directly; reported for
    /// comparison, not used for refits.
    pub literal_index: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
}

/// Applies the minimum-score and one-standard-error rules to a curve.
pub fn select_lambda(curve: &CvCurve) -> Result<LambdaSelection> {
    let k = curve.mean.len();
    if k == 0 || curve.grid.len() != k || curve.se.len() != k {
        return Err(Error::Invalid(
            "selection needs a nonempty curve with matching grid".to_string(),
        ));
    }
    if curve.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate(
            "cross-validation curve contains non-finite scores".to_string(),
        ));
    }
    let mut min_index = 0;
    for i in 1..k {
        if curve.mean[i] < curve.mean[min_index] {
            min_index = i;
        }
    }
    let threshold = curve.mean[min_index] + curve.se[min_index];
    let one_se_index = (0..k)
        .find(|&i| curve.mean[i] <= threshold)
        .expect("the minimum itself is within threshold");
    let mut literal_index = 0;
    for i in 1..k {
        if curve.mean[i] + curve.se[i] < curve.mean[literal_index] + curve.se[literal_index] {
            literal_index = i;
        }
    }
    Ok(LambdaSelection {
        min_index,
        one_se_index,
        literal_index,
        lambda_min: curve.grid.values[min_index],
        lambda_1se: curve.grid.values[one_se_index],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ColumnData, Dataset};
    use crate::lasso::{build_grid, lambda_max};
    use crate::schema::{Schema, VarKind, VarRole, VariableSpec};

    fn keyed_dataset(levels: &[&str]) -> Dataset {
        let uniq: Vec<&str> = {
            let mut u = Vec::new();
            for l in levels {
                if !u.contains(l) {
                    u.push(*l);
                }
            }
            if u.len() < 2 {
                u.push("unused");
            }
            u
        };
        let schema = Schema::new(vec![
            VariableSpec::numeric("y", VarRole::Response, VarKind::Discrete),
            VariableSpec::nominal("house", VarRole::LevelKey, &uniq),
        ])
        .unwrap();
        Dataset::from_columns(
            schema,
            vec![
                ColumnData::Numbers((0..levels.len()).map(|i| (i % 3) as f64).collect()),
                ColumnData::Labels(levels.iter().map(|s| s.to_string()).collect()),
            ],
        )
        .unwrap()
    }

    fn assert_partition(plan: &FoldPlan, n: usize) {
        let mut seen = vec![0usize; n];
        for f in 0..plan.n_folds() {
            for &i in plan.held_out(f) {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1), "not a partition: {:?}", seen);
    }

    #[test]
    fn leave_one_level_out_when_folds_equal_levels() {
        let ds = keyed_dataset(&["a", "a", "b", "c", "b", "c", "c"]);
        let plan = build_folds(&ds, Some("house"), 3, 42).unwrap();
        assert_eq!(plan.n_folds(), 3);
        assert_eq!(plan.labels(), &["a", "b", "c"]);
        assert_eq!(plan.held_out(0), &[0, 1]);
        assert_eq!(plan.held_out(1), &[2, 4]);
        assert_eq!(plan.held_out(2), &[3, 5, 6]);
        assert_partition(&plan, 7);
        assert_eq!(plan.training_rows(1), vec![0, 1, 3, 5, 6]);
    }

    #[test]
    fn levels_never_split_across_folds() {
        let levels = ["a", "b", "c", "d", "e", "a", "b", "c", "d", "e", "a", "b"];
        let ds = keyed_dataset(&levels);
        let plan = build_folds(&ds, Some("house"), 2, 7).unwrap();
        assert_partition(&plan, levels.len());
        for level in ["a", "b", "c", "d", "e"] {
            let rows: Vec<usize> = (0..levels.len()).filter(|&i| levels[i] == level).collect();
            let hits: Vec<usize> = (0..2)
                .filter(|&f| rows.iter().any(|r| plan.held_out(f).contains(r)))
                .collect();
            assert_eq!(hits.len(), 1, "level {} split across folds", level);
        }
        let again = build_folds(&ds, Some("house"), 2, 7).unwrap();
        assert_eq!(plan, again);
    }

    #[test]
    fn rowwise_folds_balance_and_reproduce() {
        let ds = keyed_dataset(&["a"; 11]);
        let plan = build_folds(&ds, None, 4, 5).unwrap();
        assert_partition(&plan, 11);
        let mut sizes: Vec<usize> = (0..4).map(|f| plan.held_out(f).len()).collect();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 3, 3, 3]);
        assert_eq!(plan, build_folds(&ds, None, 4, 5).unwrap());
    }

    #[test]
    fn fold_count_is_validated() {
        let ds = keyed_dataset(&["a", "b", "c", "a"]);
        assert!(build_folds(&ds, Some("house"), 1, 0).is_err());
        assert!(build_folds(&ds, Some("house"), 4, 0).is_err());
        assert!(build_folds(&ds, None, 5, 0).is_err());
        assert!(build_folds(&ds, Some("y"), 2, 0).is_err());
    }

    fn curve(grid: &[f64], mean: &[f64], se: &[f64]) -> CvCurve {
        CvCurve {
            grid: LambdaGrid {
                values: grid.to_vec(),
            },
            mean: mean.to_vec(),
            se: se.to_vec(),
            per_fold: Vec::new(),
            skipped: Vec::new(),
        }
    }

    #[test]
    fn selection_worked_example() {
        let c = curve(&[1.0, 0.1, 0.01], &[10.0, 4.0, 6.0], &[1.0, 1.0, 1.0]);
        let s = select_lambda(&c).unwrap();
        assert_eq!(s.min_index, 1);
        assert_eq!(s.lambda_min, 0.1);
        assert_eq!(s.one_se_index, 1);
        assert_eq!(s.lambda_1se, 0.1);
    }

    #[test]
    fn ties_go_to_the_larger_penalty() {
        let c = curve(&[1.0, 0.1, 0.01], &[5.0, 4.0, 4.0], &[0.0, 0.0, 0.0]);
        let s = select_lambda(&c).unwrap();
        assert_eq!(s.min_index, 1);
        let c = curve(&[1.0, 0.1, 0.01], &[6.0, 5.0, 4.0], &[0.5, 2.0, 1.0]);
        let s = select_lambda(&c).unwrap();
        assert_eq!(s.min_index, 2);
        assert_eq!(s.one_se_index, 1, "5 <= 4 + 1 picks the larger penalty");
        assert_eq!(s.lambda_1se, 0.1);
    }

    #[test]
    fn one_se_never_smaller_than_min() {
        let grids = [
            vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            vec![2.0, 0.2, 0.02, 0.002, 0.0002],
        ];
        for (gi, g) in grids.iter().enumerate() {
            for seed in 0..20u64 {
                let mut state = seed
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(gi as u64);
                let mut next = || {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    (state >> 11) as f64 / (1u64 << 53) as f64
                };
                let mean: Vec<f64> = (0..g.len()).map(|_| 1.0 + 5.0 * next()).collect();
                let se: Vec<f64> = (0..g.len()).map(|_| 0.1 + next()).collect();
                let s = select_lambda(&curve(g, &mean, &se)).unwrap();
                assert!(s.lambda_1se >= s.lambda_min);
                assert!(s.one_se_index <= s.min_index);
            }
        }
    }

    #[test]
    fn cv_curve_scores_every_grid_value() {
        let n = 36;
        let mut state = 0xabcdefu64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let x = DMatrix::from_fn(n, 3, |_, _| next() * 2.0 - 1.0);
        let y = DVector::from_fn(n, |i, _| ((0.5 + 0.8 * x[(i, 0)]).exp() + next()).floor());
        let ds = keyed_dataset(&vec!["a"; n]);
        let folds = build_folds(&ds, None, 4, 9).unwrap();
        let grid = build_grid(lambda_max(&x, &y), 12, 0.05).unwrap();
        let c = cv_curve(&x, &y, &grid, &folds).unwrap();
        assert_eq!(c.mean.len(), 12);
        assert_eq!(c.se.len(), 12);
        assert_eq!(c.per_fold.len(), 4);
        assert!(c.skipped.is_empty());
        assert!(c.mean.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(c.se.iter().all(|v| v.is_finite() && *v >= 0.0));
        let s = select_lambda(&c).unwrap();
        assert!(s.lambda_1se >= s.lambda_min);
    }

    #[test]
    fn all_zero_training_folds_are_skipped() {
        let levels = ["a", "a", "a", "b", "b", "b"];
        let schema = Schema::new(vec![
            VariableSpec::numeric("y", VarRole::Response, VarKind::Discrete),
            VariableSpec::nominal("house", VarRole::LevelKey, &["a", "b"]),
        ])
        .unwrap();
        let ds = Dataset::from_columns(
            schema,
            vec![
                ColumnData::Numbers(vec![2.0, 1.0, 3.0, 0.0, 0.0, 0.0]),
                ColumnData::Labels(levels.iter().map(|s| s.to_string()).collect()),
            ],
        )
        .unwrap();
        let folds = build_folds(&ds, Some("house"), 2, 0).unwrap();
        let x = DMatrix::from_fn(6, 1, |i, _| (i as f64 - 2.5) / 1.87);
        let y = DVector::from_vec(ds.response().to_vec());
        let grid = build_grid(lambda_max(&x, &y).max(1e-3), 5, 0.1).unwrap();
        let c = cv_curve(&x, &y, &grid, &folds).unwrap();
        assert_eq!(c.skipped, vec![0], "fold trained on zeros must be skipped");
        assert!(c.per_fold[1].is_some());
        assert!(c.mean.iter().all(|v| v.is_finite()));
    }
}
