//! L1-penalized Poisson regression by cyclic coordinate descent with
//! warm-started regularization paths.
//!
//! The objective minimized is the mean negative log-likelihood plus an L1
//! penalty on the slopes, with an unpenalized intercept:
//!
//! ```text
//! F(b0, beta) = (1/n) sum_i [exp(eta_i) - y_i eta_i] + lambda ||beta||_1
//! ```
//!
//! Each outer iteration forms the weighted quadratic approximation at the
//! current point and solves it by coordinate descent with soft
//! thresholding, sweeping the full coordinate set and then iterating on
//! the active set. Outer iterations repeat, with step damping if the exact
//! objective ever increases, until the subgradient optimality certificate
//! [`kkt_max_violation`] clears `1e-8`.
//!
//! Columns are assumed standardized (the encoding layer guarantees it);
//! the math stays correct for raw columns, but the shared grid anchor
//! [`lambda_max`] is only comparable across folds on standardized data.

use nalgebra::{DMatrix, DVector};

use crate::design::Group;
use crate::error::{Error, Result};
use crate::glm::{self, deviance, predict_mu, Coefficients};

const INNER_TOL: f64 = 1e-9;
const MAX_INNER_CYCLES: usize = 1000;
const MAX_OUTER_ITER: usize = 100;
const KKT_TARGET: f64 = 1e-8;
const KKT_CERTIFICATE: f64 = 1e-7;
const ZERO_SNAP: f64 = 1e-10;

/// Smallest penalty that keeps every slope at zero:
/// `max_j |x_j' (y - mean(y))| / n`.
pub fn lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows();
    if n == 0 {
        return 0.0;
    }
    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut best = 0.0f64;
    for j in 0..x.ncols() {
        let mut s = 0.0;
        for i in 0..n {
            s += x[(i, j)] * (y[i] - ybar);
        }
        best = best.max((s / n as f64).abs());
    }
    best
}

/// Default smallest-to-largest penalty ratio: `0.01` when there are more
/// rows than columns, `0.05` otherwise.
pub fn default_min_ratio(n: usize, p: usize) -> f64 {
    if n > p {
        0.01
    } else {
        0.05
    }
}

/// A decreasing, log-uniform penalty grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
}

impl LambdaGrid {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Builds `count` penalties from `lambda_max` down to
/// `lambda_max * min_ratio`, equally spaced in log scale.
pub fn build_grid(lambda_max: f64, count: usize, min_ratio: f64) -> Result<LambdaGrid> {
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(Error::Degenerate(format!(
            "penalty anchor must be positive and finite, got {}",
            lambda_max
        )));
    }
    if count < 2 {
        return Err(Error::Config(format!(
            "penalty grid needs at least 2 values, got {}",
            count
        )));
    }
    if !(min_ratio > 0.0 && min_ratio < 1.0) {
        return Err(Error::Config(format!(
            "grid min ratio must lie in (0, 1), got {}",
            min_ratio
        )));
    }
    let values = (0..count)
        .map(|i| lambda_max * min_ratio.powf(i as f64 / (count - 1) as f64))
        .collect();
    Ok(LambdaGrid { values })
}

/// The exact penalized objective `F(b0, beta)` (without the `ln y!`
/// constant, which does not depend on the coefficients).
pub fn penalized_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    coefs: &Coefficients,
) -> f64 {
    let n = x.nrows() as f64;
    let eta = coefs.linear_predictor(x);
    let mut s = 0.0;
    for i in 0..x.nrows() {
        let e = eta[i].clamp(-30.0, 30.0);
        s += e.exp() - y[i] * e;
    }
    s / n + lambda * coefs.l1_norm()
}

/// Largest violation of the subgradient optimality conditions at `coefs`:
/// with `g = x' (mu - y) / n`, a zero slope needs `|g_j| <= lambda`, a
/// nonzero slope needs `g_j + lambda sign(beta_j) = 0`, and the intercept
/// needs `sum(mu - y) / n = 0`. Zero at an exact optimum.
pub fn kkt_max_violation(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    coefs: &Coefficients,
) -> f64 {
    let mu = predict_mu(x, coefs);
    let diff: Vec<f64> = mu.iter().zip(y.iter()).map(|(m, yy)| m - yy).collect();
    full_kkt_scan(x, &diff, lambda, coefs).worst
}

#[inline]
fn column_violation(g: f64, b: f64, lambda: f64) -> f64 {
    if b == 0.0 {
        (g.abs() - lambda).max(0.0)
    } else {
        (g + lambda * b.signum()).abs()
    }
}

/// The linear predictor accumulated over nonzero slopes only.
fn eta_sparse(x: &DMatrix<f64>, coefs: &Coefficients) -> DVector<f64> {
    let n = x.nrows();
    let xs = x.as_slice();
    let mut eta = DVector::from_element(n, coefs.intercept);
    for j in 0..coefs.len() {
        let b = coefs.slopes[j];
        if b != 0.0 {
            let col = &xs[j * n..(j + 1) * n];
            for (ei, xi) in eta.as_mut_slice().iter_mut().zip(col) {
                *ei += xi * b;
            }
        }
    }
    eta
}

/// `penalized_objective` evaluated from a precomputed `(eta, mu)` pair
/// where `mu = exp(clamp(eta))`.
fn objective_from(
    y: &DVector<f64>,
    eta: &DVector<f64>,
    mu: &DVector<f64>,
    lambda: f64,
    coefs: &Coefficients,
) -> f64 {
    let n = y.len();
    let mut s = 0.0;
    for i in 0..n {
        s += mu[i] - y[i] * eta[i].clamp(-30.0, 30.0);
    }
    s / n as f64 + lambda * coefs.l1_norm()
}

/// Max violation over the intercept and the given columns, from a
/// precomputed residual `diff = mu - y`.
fn partial_kkt(
    x: &DMatrix<f64>,
    diff: &[f64],
    lambda: f64,
    coefs: &Coefficients,
    cols: &[usize],
) -> f64 {
    let n = x.nrows();
    let nf = n as f64;
    let xs = x.as_slice();
    let mut worst = (diff.iter().sum::<f64>() / nf).abs();
    for &j in cols {
        let col = &xs[j * n..(j + 1) * n];
        let g = col.iter().zip(diff).map(|(a, b)| a * b).sum::<f64>() / nf;
        worst = worst.max(column_violation(g, coefs.slopes[j], lambda));
    }
    worst
}

struct KktScan {
    worst: f64,
    /// Mean gradient of every column, reusable as the screen for the next
    /// smaller penalty.
    gradients: Vec<f64>,
}

/// Full-design optimality scan at a precomputed residual.
fn full_kkt_scan(x: &DMatrix<f64>, diff: &[f64], lambda: f64, coefs: &Coefficients) -> KktScan {
    let n = x.nrows();
    let nf = n as f64;
    let xs = x.as_slice();
    let mut worst = (diff.iter().sum::<f64>() / nf).abs();
    let mut gradients = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = &xs[j * n..(j + 1) * n];
        let g = col.iter().zip(diff).map(|(a, b)| a * b).sum::<f64>() / nf;
        worst = worst.max(column_violation(g, coefs.slopes[j], lambda));
        gradients.push(g);
    }
    KktScan { worst, gradients }
}

#[inline]
fn soft_threshold(z: f64, g: f64) -> f64 {
    if z > g {
        z - g
    } else if z < -g {
        z + g
    } else {
        0.0
    }
}

struct Subproblem<'a> {
    x: &'a DMatrix<f64>,
    w: DVector<f64>,
    r: DVector<f64>,
    wx2: Vec<f64>,
    sum_w: f64,
    nf: f64,
}

impl<'a> Subproblem<'a> {
    /// Quadratic approximation at `(b0, beta)` with residuals on the
    /// working-response scale.
    /// `working` lists the only coordinates sweeps may touch; curvature is
    /// computed just for those.
    fn at(
        x: &'a DMatrix<f64>,
        y: &DVector<f64>,
        mu: &DVector<f64>,
        working: &[usize],
    ) -> Subproblem<'a> {
        let n = x.nrows();
        let nf = n as f64;
        let w = mu.map(|m| m.max(glm::MIN_WEIGHT));
        let r = DVector::from_fn(n, |i, _| (y[i] - mu[i]) / w[i]);
        let mut wx2 = vec![0.0; x.ncols()];
        let sum_w = w.iter().sum();
        let xs = x.as_slice();
        let ws = w.as_slice();
        for &j in working {
            let col = &xs[j * n..(j + 1) * n];
            wx2[j] = ws.iter().zip(col).map(|(wi, xi)| wi * xi * xi).sum::<f64>() / nf;
        }
        Subproblem {
            x,
            w,
            r,
            wx2,
            sum_w,
            nf,
        }
    }

    /// One coordinate-descent sweep over the given coordinates plus the
    /// intercept; returns the largest coefficient change.
    fn sweep(&mut self, coords: &[usize], lambda: f64, coefs: &mut Coefficients) -> f64 {
        let n = self.x.nrows();
        let xs = self.x.as_slice();
        let w = self.w.as_slice();
        let r = self.r.as_mut_slice();
        let mut max_change = 0.0f64;
        for &j in coords {
            let col = &xs[j * n..(j + 1) * n];
            let old = coefs.slopes[j];
            if self.wx2[j] <= 1e-12 {
                if old != 0.0 {
                    for (ri, xi) in r.iter_mut().zip(col) {
                        *ri += xi * old;
                    }
                    coefs.slopes[j] = 0.0;
                    max_change = max_change.max(old.abs());
                }
                continue;
            }
            let dot = w
                .iter()
                .zip(col)
                .zip(r.iter())
                .map(|((wi, xi), ri)| wi * xi * ri)
                .sum::<f64>();
            let z = dot / self.nf + self.wx2[j] * old;
            let new = soft_threshold(z, lambda) / self.wx2[j];
            if new != old {
                let d = new - old;
                for (ri, xi) in r.iter_mut().zip(col) {
                    *ri -= xi * d;
                }
                coefs.slopes[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        let dot = w.iter().zip(r.iter()).map(|(wi, ri)| wi * ri).sum::<f64>();
        let d0 = dot / self.sum_w;
        if d0 != 0.0 {
            coefs.intercept += d0;
            for ri in r.iter_mut() {
                *ri -= d0;
            }
            max_change = max_change.max(d0.abs());
        }
        max_change
    }

    /// Solves the quadratic subproblem: full sweep, active-set sweeps to
    /// tolerance, and a closing working-set sweep that must find nothing
    /// new.
    fn solve(&mut self, working: &[usize], lambda: f64, coefs: &mut Coefficients) -> usize {
        let mut cycles = 0;
        loop {
            let full_change = self.sweep(working, lambda, coefs);
            cycles += 1;
            if full_change < INNER_TOL || cycles >= MAX_INNER_CYCLES {
                return cycles;
            }
            loop {
                let active: Vec<usize> = coefs.nonzero();
                let change = self.sweep(&active, lambda, coefs);
                cycles += 1;
                if change < INNER_TOL || cycles >= MAX_INNER_CYCLES {
                    break;
                }
            }
            if cycles >= MAX_INNER_CYCLES {
                return cycles;
            }
        }
    }
}

/// Fits the penalized model at one penalty value, optionally warm-started
/// from a solution at a nearby penalty.
pub fn fit_penalized(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    warm_start: Option<&Coefficients>,
) -> Result<Coefficients> {
    Ok(fit_penalized_inner(x, y, lambda, None, warm_start)?.coefs)
}

struct PenalizedFit {
    coefs: Coefficients,
    /// Mean gradients from the final optimality scan.
    gradients: Vec<f64>,
}

/// `screen`, when present, carries the previous grid value and the mean
/// gradients at its solution; the two give the usual sequential screen
/// `|g_j| >= 2 lambda - lambda_prev` for the initial working set. Columns
/// the screen drops can still enter: the solver only terminates once a
/// full-design optimality scan passes, and any violating column is pulled
/// into the working set.
fn fit_penalized_inner(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    screen: Option<(f64, &[f64])>,
    warm_start: Option<&Coefficients>,
) -> Result<PenalizedFit> {
    let n = x.nrows();
    let p = x.ncols();
    if n == 0 {
        return Err(Error::Invalid("cannot fit on an empty design".to_string()));
    }
    if y.len() != n {
        return Err(Error::Invalid(format!(
            "design has {} rows but response has {}",
            n,
            y.len()
        )));
    }
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("invalid penalty {}", lambda)));
    }
    let mut coefs = match warm_start {
        Some(c) => {
            if c.len() != p {
                return Err(Error::Invalid(format!(
                    "warm start has {} slopes, design has {} columns",
                    c.len(),
                    p
                )));
            }
            c.clone()
        }
        None => {
            let ybar = y.iter().sum::<f64>() / n as f64;
            let mut c = Coefficients::zeros(p);
            c.intercept = (ybar + 0.1).ln();
            c
        }
    };

    let mut in_working = vec![false; p];
    let mut working: Vec<usize> = match (screen, warm_start) {
        (Some((prev_lambda, gradients)), Some(_)) if prev_lambda > lambda => {
            let cut = 2.0 * lambda - prev_lambda;
            (0..p)
                .filter(|&j| coefs.slopes[j] != 0.0 || gradients[j].abs() >= cut)
                .collect()
        }
        _ => (0..p).collect(),
    };
    for &j in &working {
        in_working[j] = true;
    }

    let mut eta = eta_sparse(x, &coefs);
    let mut mu = eta.map(glm::eta_to_mu);
    let mut objective = objective_from(y, &eta, &mu, lambda, &coefs);
    if !objective.is_finite() {
        return Err(Error::Divergence(
            "penalized objective is not finite at the starting point".to_string(),
        ));
    }

    let mut outer = 0;
    let mut cycles = 0;
    let mut clamp_warned = false;
    while outer < MAX_OUTER_ITER {
        outer += 1;
        let prev = coefs.clone();
        let prev_objective = objective;
        let mut sub = Subproblem::at(x, y, &mu, &working);
        cycles += sub.solve(&working, lambda, &mut coefs);

        for &j in &working {
            if coefs.slopes[j] != 0.0 && coefs.slopes[j].abs() < ZERO_SNAP {
                coefs.slopes[j] = 0.0;
            }
        }

        let mut candidate = coefs.clone();
        let mut t = 1.0;
        loop {
            eta = eta_sparse(x, &candidate);
            mu = eta.map(glm::eta_to_mu);
            objective = objective_from(y, &eta, &mu, lambda, &candidate);
            if objective.is_finite()
                && objective <= prev_objective + 1e-12 * (1.0 + prev_objective.abs())
            {
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                candidate = prev.clone();
                eta = eta_sparse(x, &candidate);
                mu = eta.map(glm::eta_to_mu);
                objective = prev_objective;
                break;
            }
            candidate.intercept = prev.intercept + t * (coefs.intercept - prev.intercept);
            for j in 0..p {
                candidate.slopes[j] = prev.slopes[j] + t * (coefs.slopes[j] - prev.slopes[j]);
            }
        }
        coefs = candidate;
        if !clamp_warned && eta.iter().any(|e| e.abs() > 30.0) {
            log::warn!(
                "linear predictor clamped to [-30, 30] at lambda {:.6e}",
                lambda
            );
            clamp_warned = true;
        }

        let diff: Vec<f64> = mu.iter().zip(y.iter()).map(|(m, yy)| m - yy).collect();
        let settled = partial_kkt(x, &diff, lambda, &coefs, &working) <= KKT_TARGET;
        let stalled =
            (prev_objective - objective).abs() <= 1e-15 * (1.0 + prev_objective.abs()) && t >= 1.0;
        if settled || stalled {
            let scan = full_kkt_scan(x, &diff, lambda, &coefs);
            if scan.worst <= KKT_TARGET
                || !admit_violators(&scan, lambda, &coefs, &mut in_working, &mut working)
            {
                log::debug!(
                    "lambda {:.4e}: {} outer iterations, {} cd cycles, working set {}, gap {:.2e}",
                    lambda,
                    outer,
                    cycles,
                    working.len(),
                    scan.worst
                );
                return Ok(finish(lambda, coefs, scan));
            }
        }
    }

    let diff: Vec<f64> = mu.iter().zip(y.iter()).map(|(m, yy)| m - yy).collect();
    let scan = full_kkt_scan(x, &diff, lambda, &coefs);
    Ok(finish(lambda, coefs, scan))
}

/// Pulls every screened-out column violating optimality into the working
/// set; false when there was nothing to admit.
fn admit_violators(
    scan: &KktScan,
    lambda: f64,
    coefs: &Coefficients,
    in_working: &mut [bool],
    working: &mut Vec<usize>,
) -> bool {
    let mut admitted = false;
    for (j, &g) in scan.gradients.iter().enumerate() {
        if !in_working[j] && column_violation(g, coefs.slopes[j], lambda) > KKT_TARGET {
            in_working[j] = true;
            admitted = true;
        }
    }
    if admitted {
        *working = (0..in_working.len()).filter(|&j| in_working[j]).collect();
    }
    admitted
}

fn finish(lambda: f64, coefs: Coefficients, scan: KktScan) -> PenalizedFit {
    if scan.worst > KKT_CERTIFICATE {
        log::warn!(
            "penalized fit at lambda {:.6e} stopped with optimality gap {:.3e}",
            lambda,
            scan.worst
        );
    }
    PenalizedFit {
        coefs,
        gradients: scan.gradients,
    }
}

/// Coefficients along a penalty grid, fitted with warm starts.
#[derive(Debug, Clone)]
pub struct LassoPath {
    pub grid: LambdaGrid,
    /// One coefficient vector per grid value, in grid order.
    pub coefficients: Vec<Coefficients>,
    /// Training deviance of each fit.
    pub deviances: Vec<f64>,
}

impl LassoPath {
    /// Indices of nonzero slopes at each grid value.
    pub fn active_sets(&self) -> Vec<Vec<usize>> {
        self.coefficients.iter().map(|c| c.nonzero()).collect()
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// One record per (penalty, group): the Euclidean norm of the group's
    /// slopes at that grid value, as delimited text for trajectory
    /// plotting.
    pub fn render_trajectories(&self, groups: &[Group]) -> String {
        let mut out = String::from("lambda,group,coefficient_norm\n");
        for (k, c) in self.coefficients.iter().enumerate() {
            for g in groups {
                let norm = g
                    .columns
                    .clone()
                    .map(|j| c.slopes[j] * c.slopes[j])
                    .sum::<f64>()
                    .sqrt();
                out.push_str(&format!("{},{},{}\n", self.grid.values[k], g.name, norm));
            }
        }
        out
    }
}

/// Sweeps the grid from largest to smallest penalty, warm-starting each
/// fit from the previous solution.
pub fn fit_path(x: &DMatrix<f64>, y: &DVector<f64>, grid: &LambdaGrid) -> Result<LassoPath> {
    let mut coefficients = Vec::with_capacity(grid.len());
    let mut deviances = Vec::with_capacity(grid.len());
    let mut warm: Option<(f64, PenalizedFit)> = None;
    for &lambda in &grid.values {
        let fit = match &warm {
            Some((prev_lambda, prev)) => fit_penalized_inner(
                x,
                y,
                lambda,
                Some((*prev_lambda, &prev.gradients)),
                Some(&prev.coefs),
            )?,
            None => fit_penalized_inner(x, y, lambda, None, None)?,
        };
        deviances.push(deviance(y, &eta_sparse(x, &fit.coefs).map(glm::eta_to_mu)));
        coefficients.push(fit.coefs.clone());
        warm = Some((lambda, fit));
    }
    Ok(LassoPath {
        grid: grid.clone(),
        coefficients,
        deviances,
    })
}
