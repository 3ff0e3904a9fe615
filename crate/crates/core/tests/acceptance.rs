//! Acceptance gate: ten checks with pinned tolerances and runtime
//! budgets, covering closed-form fits, optimality certificates, a
//! brute-force objective oracle, the double cross-validation contract,
//! selection rules, design expansion counts, metrics arithmetic, and
//! end-to-end support recovery on synthetic surveys.
//!
//! Each criterion is one test; run with `--nocapture` to see the
//! one-line PASS summaries.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use lolo_dcv_core::{
    build_grid, canonical_group_names, debias_refit, default_min_ratio, emit_summary_table,
    fit_irls, fit_path, fit_penalized, frequent_variables, generate, kkt_max_violation, lambda_max,
    log_likelihood, log_likelihood_gradient, penalized_objective, predict_mu, prediction_accuracy,
    quality_summary, refit_cv_predictions, run_lolo_dcv, select_lambda, survey_schema,
    Coefficients, CvCurve, DcvConfig, LambdaGrid, LambdaRule, PresenceMatrix, QualityReport,
    Scenario, Schema, SynthConfig, VarKind, VarRole, VariableSpec,
};

fn standardized_columns(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for j in 0..p {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let ss: f64 = raw.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        for i in 0..n {
            x[(i, j)] = (raw[i] - mean) / sd;
        }
    }
    x
}

fn poisson_response(
    x: &DMatrix<f64>,
    intercept: f64,
    slopes: &[f64],
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    DVector::from_fn(x.nrows(), |i, _| {
        let mut eta = intercept;
        for (j, b) in slopes.iter().enumerate() {
            eta += b * x[(i, j)];
        }
        Poisson::new(eta.exp()).expect("positive rate").sample(rng)
    })
}

fn ll_at(x: &DMatrix<f64>, y: &DVector<f64>, coefs: &Coefficients) -> f64 {
    log_likelihood(y, &predict_mu(x, coefs))
}

#[test]
fn c01_poisson_mle_closed_forms() {
    let start = Instant::now();

    let y = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 0.0]);
    let x = DMatrix::<f64>::zeros(6, 0);
    let fit = fit_irls(&x, &y).unwrap();
    let ybar = y.iter().sum::<f64>() / 6.0;
    let intercept_gap = (fit.coefficients.intercept - ybar.ln()).abs();
    assert!(
        intercept_gap <= 1e-8,
        "intercept-only fit is {:.3e} from ln(mean)",
        intercept_gap
    );

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..20 {
        xs.push(0.0);
        ys.push((i % 5) as f64 + 1.0);
    }
    for i in 0..20 {
        xs.push(1.0);
        ys.push((i % 5) as f64 + 3.0);
    }
    let x = DMatrix::from_column_slice(40, 1, &xs);
    let y = DVector::from_vec(ys);
    let fit = fit_irls(&x, &y).unwrap();
    let (m0, m1) = (3.0f64, 5.0f64);
    let b0_gap = (fit.coefficients.intercept - m0.ln()).abs();
    let b1_gap = (fit.coefficients.slopes[0] - (m1.ln() - m0.ln())).abs();
    assert!(
        b0_gap <= 1e-8,
        "group baseline is {:.3e} from ln(mean)",
        b0_gap
    );
    assert!(
        b1_gap <= 1e-8,
        "group contrast is {:.3e} from the log ratio",
        b1_gap
    );

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1.0, "closed-form checks took {:.2} s", secs);
    println!(
        "criterion 1: PASS - closed-form fits within 1e-8 in {:.2} s",
        secs
    );
}

#[test]
fn c02_kkt_certificate_on_random_paths() {
    let start = Instant::now();
    let mut worst_seen = 0.0f64;
    let mut activated_near_anchor = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let x = standardized_columns(100, 10, &mut rng);
        let slopes = [0.5, -0.4, 0.3, 0.0, 0.0, 0.2, 0.0, 0.0, 0.0, 0.0];
        let y = poisson_response(&x, 0.4, &slopes, &mut rng);
        let anchor = lambda_max(&x, &y);
        let grid = build_grid(anchor, 100, default_min_ratio(100, 10)).unwrap();
        let path = fit_path(&x, &y, &grid).unwrap();
        assert!(
            path.coefficients[0].nonzero().is_empty(),
            "seed {}: active set at the grid anchor must be empty",
            seed
        );
        for (k, coefs) in path.coefficients.iter().enumerate() {
            let v = kkt_max_violation(&x, &y, grid.values[k], coefs);
            worst_seen = worst_seen.max(v);
            assert!(
                v <= 1e-7,
                "seed {}: subgradient violation {:.3e} at grid point {}",
                seed,
                v,
                k
            );
        }
        let near = fit_penalized(&x, &y, 0.99 * anchor, None).unwrap();
        if !near.nonzero().is_empty() {
            activated_near_anchor += 1;
        }
    }
    assert!(
        activated_near_anchor >= 1,
        "no problem activated a variable just below the anchor"
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 30.0, "certificate sweep took {:.1} s", secs);
    println!(
        "criterion 2: PASS - worst violation {:.2e} over 50 paths, {}/50 activate at 0.99*anchor, {:.1} s",
        worst_seen, activated_near_anchor, secs
    );
}

#[test]
fn c03_brute_force_objective_oracle() {
    let start = Instant::now();
    let fractions = [0.5, 0.4, 0.3, 0.25, 0.2, 0.15, 0.12, 0.1, 0.08, 0.05];
    let mut worst_excess = f64::NEG_INFINITY;
    for (k, frac) in fractions.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + k as u64);
        let x = standardized_columns(20, 2, &mut rng);
        let y = poisson_response(&x, 1.0, &[0.5, -0.3], &mut rng);
        let lambda = frac * lambda_max(&x, &y);
        let solved = fit_penalized(&x, &y, lambda, None).unwrap();
        let solver_obj = penalized_objective(&x, &y, lambda, &solved);

        let sy: f64 = y.iter().sum();
        let mut grid_best = f64::INFINITY;
        for a in 0..200 {
            let b1 = -2.0 + 4.0 * a as f64 / 199.0;
            for b in 0..200 {
                let b2 = -2.0 + 4.0 * b as f64 / 199.0;
                let mut sum_exp = 0.0;
                let mut sum_yq = 0.0;
                for i in 0..20 {
                    let q = b1 * x[(i, 0)] + b2 * x[(i, 1)];
                    sum_exp += q.exp();
                    sum_yq += y[i] * q;
                }
                let b0 = (sy / sum_exp).ln();
                let obj = (sy - b0 * sy - sum_yq) / 20.0 + lambda * (b1.abs() + b2.abs());
                if obj < grid_best {
                    grid_best = obj;
                }
            }
        }
        worst_excess = worst_excess.max(solver_obj - grid_best);
        assert!(
            solver_obj <= grid_best + 1e-3,
            "seed {}: solver objective {:.6} exceeds grid optimum {:.6} by more than 1e-3",
            k,
            solver_obj,
            grid_best
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "oracle sweep took {:.1} s", secs);
    println!(
        "criterion 3: PASS - solver objective within 1e-3 of the 200x200 oracle (worst excess {:.2e}), {:.1} s",
        worst_excess, secs
    );
}

#[test]
fn c04_debias_refit_matches_direct_fit() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let x = standardized_columns(60, 6, &mut rng);
    let y = poisson_response(&x, 0.8, &[0.5, -0.4, 0.0, 0.3, 0.0, 0.0], &mut rng);
    let lambda = 0.2 * lambda_max(&x, &y);
    let solved = fit_penalized(&x, &y, lambda, None).unwrap();
    let active = solved.nonzero();
    assert!(!active.is_empty(), "the penalized fit selected nothing");

    let refit = debias_refit(&x, &y, &active).unwrap();
    let direct = fit_irls(&x.select_columns(active.iter()), &y).unwrap();
    let mut gap = (refit.coefficients.intercept - direct.coefficients.intercept).abs();
    for (k, &j) in active.iter().enumerate() {
        gap = gap.max((refit.coefficients.slopes[j] - direct.coefficients.slopes[k]).abs());
    }
    for j in (0..x.ncols()).filter(|j| !active.contains(j)) {
        gap = gap.max(refit.coefficients.slopes[j].abs());
    }
    assert!(
        gap <= 1e-6,
        "refit differs from the direct fit by {:.3e}",
        gap
    );
    println!(
        "criterion 4: PASS - debiased refit matches the direct fit within {:.2e}",
        gap
    );
}

#[test]
fn c05_dcv_contract_coverage_levels_determinism() {
    let data = generate(&SynthConfig::new(505)).unwrap().dataset;
    let mut config = DcvConfig::new(Scenario::Original);
    config.level_key = Some("village".to_string());
    config.grid_count = 40;
    config.grid_min_ratio = Some(0.1);
    config.seed = 505;

    let result = run_lolo_dcv(&data, &config).unwrap();
    assert_eq!(result.fold_records.len(), 9, "one outer fold per village");
    assert_eq!(result.n_failed_folds, 0);

    let villages = data.labels("village").unwrap();
    let mut covered = vec![0usize; data.n_rows()];
    for rec in &result.fold_records {
        for &i in &rec.test_rows {
            covered[i] += 1;
            assert_eq!(
                &villages[i], &rec.label,
                "row {} belongs to {} but was held out with {}",
                i, villages[i], rec.label
            );
        }
    }
    assert!(
        covered.iter().all(|&c| c == 1),
        "every row must be held out exactly once"
    );
    assert_eq!(result.predictions_min.len(), data.n_rows());
    assert_eq!(result.predictions_1se.len(), data.n_rows());
    assert!(result.predictions_min.iter().all(|p| p.is_finite()));
    assert!(result.predictions_1se.iter().all(|p| p.is_finite()));

    let again = run_lolo_dcv(&data, &config).unwrap();
    assert_eq!(
        result.render_files(),
        again.render_files(),
        "two runs with one seed must agree byte for byte"
    );

    let mut one = config.clone();
    one.jobs = 1;
    let mut eight = config.clone();
    eight.jobs = 8;
    let run_one = run_lolo_dcv(&data, &one).unwrap();
    let run_eight = run_lolo_dcv(&data, &eight).unwrap();
    assert_eq!(
        run_one.render_files(),
        run_eight.render_files(),
        "the jobs knob must not change output bytes"
    );
    assert_eq!(result.render_files(), run_one.render_files());

    println!("criterion 5: PASS - coverage, village integrity, and byte determinism hold");
}

#[test]
fn c06_selection_rules() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for trial in 0..100 {
        let k = rng.gen_range(3..40);
        let anchor = rng.gen_range(0.5..5.0);
        let grid = build_grid(anchor, k, 0.01).unwrap();
        let mean: Vec<f64> = (0..k).map(|_| rng.gen_range(1.0..10.0)).collect();
        let se: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..2.0)).collect();
        let curve = CvCurve {
            grid,
            mean,
            se,
            per_fold: Vec::new(),
            skipped: Vec::new(),
        };
        let sel = select_lambda(&curve).unwrap();
        assert!(
            sel.lambda_1se >= sel.lambda_min,
            "trial {}: conservative penalty below the minimizer",
            trial
        );
    }

    let curve = CvCurve {
        grid: LambdaGrid {
            values: vec![1.0, 0.1, 0.01],
        },
        mean: vec![10.0, 4.0, 6.0],
        se: vec![1.0, 1.0, 1.0],
        per_fold: Vec::new(),
        skipped: Vec::new(),
    };
    let sel = select_lambda(&curve).unwrap();
    assert_eq!(sel.lambda_min, 0.1);
    assert_eq!(sel.lambda_1se, 0.1);

    let tied = CvCurve {
        grid: LambdaGrid {
            values: vec![1.0, 0.1, 0.01],
        },
        mean: vec![7.0, 3.0, 3.0],
        se: vec![0.5, 0.5, 0.5],
        per_fold: Vec::new(),
        skipped: Vec::new(),
    };
    let sel = select_lambda(&tied).unwrap();
    assert_eq!(
        sel.min_index, 1,
        "ties must resolve toward the larger penalty"
    );
    assert_eq!(sel.lambda_min, 0.1);

    println!("criterion 6: PASS - ordering on 100 curves, worked example, and tie-break hold");
}

#[test]
fn c07_support_recovery_and_prediction_power() {
    let start = Instant::now();
    let mut mains_recovered = 0;
    let mut power_improved = 0;
    for seed in 1..=20u64 {
        let data = generate(&SynthConfig::new(seed)).unwrap().dataset;
        let mut config = DcvConfig::new(Scenario::Original);
        config.grid_count = 50;
        config.grid_min_ratio = Some(0.05);
        config.seed = seed;

        let result = run_lolo_dcv(&data, &config).unwrap();
        let frequent = frequent_variables(&result.presence_min, LambdaRule::Min, 80.0).unwrap();
        if frequent.contains("temp_anomaly") && frequent.contains("rain_anomaly") {
            mains_recovered += 1;
        }

        let hits = |pred: &[f64]| -> usize {
            prediction_accuracy(&result.y, pred)
                .iter()
                .filter(|&&h| h == 1)
                .count()
        };
        let intercept_only = refit_cv_predictions(&data, &config, &[]).unwrap();
        if hits(&result.predictions_min) > hits(&intercept_only) {
            power_improved += 1;
        }
    }
    assert!(
        mains_recovered >= 16,
        "both true mains recovered at s=80 in only {}/20 seeds",
        mains_recovered
    );
    assert!(
        power_improved >= 18,
        "prediction power beat intercept-only in only {}/20 seeds",
        power_improved
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "recovery sweep took {:.0} s", secs);
    println!(
        "criterion 7: PASS - mains recovered {}/20 seeds, power improved {}/20, {:.0} s",
        mains_recovered, power_improved, secs
    );
}

#[test]
fn c08_interaction_count_identity() {
    let schema = survey_schema(9, 4).unwrap();
    assert_eq!(
        canonical_group_names(&schema, Scenario::Original).len(),
        136,
        "16 mains must expand to 136 groups"
    );
    for k in 2..=20usize {
        let mut vars = vec![VariableSpec::numeric(
            "y",
            VarRole::Response,
            VarKind::Discrete,
        )];
        for j in 0..k {
            vars.push(VariableSpec::numeric(
                &format!("x{:02}", j),
                VarRole::Explanatory,
                VarKind::Continuous,
            ));
        }
        let schema = Schema::new(vars).unwrap();
        assert_eq!(
            canonical_group_names(&schema, Scenario::Original).len(),
            k + k * (k - 1) / 2,
            "group count for {} mains",
            k
        );
    }
    println!("criterion 8: PASS - group counts match k + k(k-1)/2 for k in 2..=20");
}

#[test]
fn c09_metrics_arithmetic_and_table_layout() {
    assert_eq!(prediction_accuracy(&[2.0], &[2.5]), vec![1]);
    assert_eq!(prediction_accuracy(&[2.0], &[1.5]), vec![1]);
    assert_eq!(prediction_accuracy(&[2.0], &[2.51]), vec![0]);
    assert_eq!(prediction_accuracy(&[2.0], &[1.49]), vec![0]);

    let y = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
    let yhat = [0.2, 2.0, 2.5, 3.0, 5.0, 4.9, 6.4, 8.0];
    let report = quality_summary(&y, &yhat, 10.0, "check").unwrap();
    let acc = prediction_accuracy(&y, &yhat);
    let mean_acc = acc.iter().map(|&h| h as f64).sum::<f64>() / acc.len() as f64;
    assert!((report.prediction_power - 100.0 * mean_acc).abs() <= 1e-12);
    assert_eq!(report.std, 10.0f64.sqrt());

    let presence = PresenceMatrix {
        group_names: vec!["a".to_string(), "b".to_string(), "c".to_string()],
        fold_labels: (1..=5).map(|f| format!("f{}", f)).collect(),
        rows: vec![
            vec![true, true, true],
            vec![true, true, false],
            vec![true, true, false],
            vec![true, false, false],
            vec![true, false, false],
        ],
    };
    let mut previous: Option<Vec<String>> = None;
    for s in [1.0, 20.0, 40.0, 60.0, 80.0, 100.0] {
        let set = frequent_variables(&presence, LambdaRule::Min, s).unwrap();
        let names: Vec<String> = set.names().iter().map(|g| g.to_string()).collect();
        if let Some(prev) = &previous {
            assert!(
                names.iter().all(|g| prev.contains(g)),
                "raising the threshold to {} grew the set",
                s
            );
        }
        previous = Some(names);
    }
    let at_60 = frequent_variables(&presence, LambdaRule::Min, 60.0).unwrap();
    assert_eq!(at_60.names(), vec!["a", "b"]);

    let row = QualityReport {
        method: "B-GLM".to_string(),
        mean: 3.75,
        deviance: 62.29,
        std: 62.29f64.sqrt(),
        absolute_risk: 3.88,
        prediction_power: 73.53,
        quadratic_risk: None,
    };
    let table = emit_summary_table(&[row]);
    let mut lines = table.lines();
    assert_eq!(
        lines.next().unwrap(),
        "Method & Mean & Deviance & Std & Absolute risk & Prediction Power (%)"
    );
    assert_eq!(
        lines.next().unwrap(),
        "B-GLM & 3.75 & 62.29 & 7.89 & 3.88 & 73.53"
    );
    println!(
        "criterion 9: PASS - boundary cases, counting identity, monotone thresholds, reference row"
    );
}

#[test]
fn c10_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let x = standardized_columns(30, 4, &mut rng);
    let y = poisson_response(&x, 0.5, &[0.4, -0.3, 0.2, 0.0], &mut rng);
    let h = 1e-5;
    let mut worst_rel = 0.0f64;
    for point in 0..20 {
        let coefs = Coefficients::new(
            rng.gen_range(-0.5..0.5),
            DVector::from_fn(4, |_, _| rng.gen_range(-0.5..0.5)),
        );
        let analytic = log_likelihood_gradient(&x, &y, &coefs);

        let mut check = |label: &str, analytic_g: f64, numeric_g: f64| {
            let rel = (analytic_g - numeric_g).abs() / analytic_g.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            assert!(
                rel <= 1e-4,
                "point {point} {label}: analytic {analytic_g:.8} vs numeric {numeric_g:.8}"
            );
        };

        let mut up = coefs.clone();
        up.intercept += h;
        let mut down = coefs.clone();
        down.intercept -= h;
        check(
            "intercept",
            analytic.intercept,
            (ll_at(&x, &y, &up) - ll_at(&x, &y, &down)) / (2.0 * h),
        );
        for j in 0..4 {
            let mut up = coefs.clone();
            up.slopes[j] += h;
            let mut down = coefs.clone();
            down.slopes[j] -= h;
            check(
                &format!("slope {}", j),
                analytic.slopes[j],
                (ll_at(&x, &y, &up) - ll_at(&x, &y, &down)) / (2.0 * h),
            );
        }
    }
    println!(
        "criterion 10: PASS - gradient matches central differences within {:.2e} relative",
        worst_rel
    );
}
