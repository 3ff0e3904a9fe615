//! Poisson regression with a log link: likelihood, deviance, and
//! unpenalized fitting by iteratively reweighted least squares.
//!
//! The linear predictor is clamped to `[-30, 30]` before exponentiation,
//! which bounds fitted means away from overflow and from exact zero.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const ETA_CLAMP: f64 = 30.0;
const MAX_IRLS_ITER: usize = 100;
pub(crate) const MIN_WEIGHT: f64 = 1e-10;
const DEVIANCE_RTOL: f64 = 1e-10;
const GRADIENT_TOL: f64 = 1e-8;

pub(crate) fn eta_to_mu(eta: f64) -> f64 {
    eta.clamp(-ETA_CLAMP, ETA_CLAMP).exp()
}

/// An intercept plus one slope per design column.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub intercept: f64,
    pub slopes: DVector<f64>,
}

impl Coefficients {
    pub fn new(intercept: f64, slopes: DVector<f64>) -> Coefficients {
        Coefficients { intercept, slopes }
    }

    pub fn zeros(p: usize) -> Coefficients {
        Coefficients {
            intercept: 0.0,
            slopes: DVector::zeros(p),
        }
    }

    pub fn len(&self) -> usize {
        self.slopes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slopes.is_empty()
    }

    /// Indices of exactly nonzero slopes.
    pub fn nonzero(&self) -> Vec<usize> {
        (0..self.slopes.len())
            .filter(|&j| self.slopes[j] != 0.0)
            .collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.slopes.iter().map(|b| b.abs()).sum()
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut eta = x * &self.slopes;
        eta.add_scalar_mut(self.intercept);
        eta
    }
}

/// Fitted means `exp(intercept + x * slopes)` with the clamped link.
pub fn predict_mu(x: &DMatrix<f64>, coefs: &Coefficients) -> DVector<f64> {
    coefs.linear_predictor(x).map(eta_to_mu)
}

/// Poisson log-likelihood `sum(y ln mu - mu - ln y!)`.
pub fn log_likelihood(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let (yi, mi) = (y[i], mu[i]);
        let point = if yi > 0.0 { yi * mi.ln() } else { 0.0 };
        s += point - mi - ln_gamma(yi + 1.0);
    }
    s
}

/// Log-likelihood of the saturated model, where each mean equals its
/// observation (`0 ln 0` taken as zero).
pub fn saturated_log_likelihood(y: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let yi = y[i];
        if yi > 0.0 {
            s += yi * yi.ln() - yi - ln_gamma(yi + 1.0);
        }
    }
    s
}

/// Poisson deviance `2 sum(y ln(y/mu) - (y - mu))`, which equals twice the
/// log-likelihood gap to the saturated model.
pub fn deviance(y: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        let (yi, mi) = (y[i], mu[i]);
        if yi > 0.0 {
            s += yi * (yi / mi).ln() - (yi - mi);
        } else {
            s += mi;
        }
    }
    2.0 * s
}

/// Gradient of the log-likelihood at `coefs`: intercept component
/// `sum(y - mu)` and slope components `x' (y - mu)`.
pub fn log_likelihood_gradient(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    coefs: &Coefficients,
) -> Coefficients {
    let mu = predict_mu(x, coefs);
    let resid = y - &mu;
    Coefficients {
        intercept: resid.iter().sum(),
        slopes: x.transpose() * &resid,
    }
}

/// Converts standardized-frame coefficients back to the raw-data frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleFrame {
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl ScaleFrame {
    pub fn identity(p: usize) -> ScaleFrame {
        ScaleFrame {
            centers: vec![0.0; p],
            scales: vec![1.0; p],
        }
    }

    /// Maps coefficients fitted on `(x - center) / scale` columns to
    /// coefficients on the raw columns, preserving the linear predictor.
    pub fn to_original(&self, standardized: &Coefficients) -> Coefficients {
        let p = self.scales.len();
        assert_eq!(standardized.len(), p, "coefficient count mismatch");
        let mut slopes = DVector::zeros(p);
        let mut intercept = standardized.intercept;
        for j in 0..p {
            slopes[j] = standardized.slopes[j] / self.scales[j];
            intercept -= standardized.slopes[j] * self.centers[j] / self.scales[j];
        }
        Coefficients { intercept, slopes }
    }
}

/// Result of an unpenalized fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub coefficients: Coefficients,
    pub log_likelihood: f64,
    pub deviance: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Design columns excluded as linearly dependent on earlier columns
    /// (or on the intercept), in column order.
    pub dropped_columns: Vec<usize>,
}

/// Splits columns into a linearly independent prefix-respecting set and
/// the dependent remainder, always keeping the implicit intercept.
fn independent_columns(x: &DMatrix<f64>) -> (Vec<usize>, Vec<usize>) {
    let n = x.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    basis.push(DVector::from_element(n, 1.0 / (n as f64).sqrt()));
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..x.ncols() {
        let mut v = x.column(j).into_owned();
        let orig = v.norm();
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let r = v.norm();
        if orig == 0.0 || r <= 1e-8 * orig {
            dropped.push(j);
        } else {
            kept.push(j);
            basis.push(v / r);
        }
    }
    (kept, dropped)
}

/// Fits an unpenalized Poisson regression with intercept by Fisher
/// scoring on the working response, with step halving when a full step
/// would increase the deviance.
///
/// Linearly dependent columns are detected up front, excluded from the
/// solve, and reported with zero slopes. Convergence requires either a
/// relative deviance change below `1e-10` or a mean-gradient max norm
/// below `1e-8`, within 100 iterations.
pub fn fit_irls(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    let n = x.nrows();
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
    let p = x.ncols();
    let (kept, dropped) = independent_columns(x);
    if !dropped.is_empty() {
        log::debug!(
            "excluding {} linearly dependent design column(s) from the refit",
            dropped.len()
        );
    }
    let k = kept.len();
    let mut a = DMatrix::zeros(n, k + 1);
    for i in 0..n {
        a[(i, 0)] = 1.0;
    }
    for (jj, &j) in kept.iter().enumerate() {
        for i in 0..n {
            a[(i, jj + 1)] = x[(i, j)];
        }
    }

    let ybar = y.iter().sum::<f64>() / n as f64;
    let mut theta = DVector::zeros(k + 1);
    theta[0] = (ybar + 0.1).ln();
    let mut eta = &a * &theta;
    let mut mu = eta.map(eta_to_mu);
    let mut dev = deviance(y, &mu);
    let mut converged = false;
    let mut iterations = 0;
    let mut clamp_warned = false;

    for iter in 1..=MAX_IRLS_ITER {
        iterations = iter;
        if !clamp_warned && eta.iter().any(|e| e.abs() > ETA_CLAMP) {
            log::warn!("linear predictor clamped to [-30, 30] during the unpenalized fit");
            clamp_warned = true;
        }
        let mut m = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for c1 in 0..=k {
            for c2 in c1..=k {
                let mut s = 0.0;
                for i in 0..n {
                    let w = mu[i].max(MIN_WEIGHT);
                    s += w * a[(i, c1)] * a[(i, c2)];
                }
                m[(c1, c2)] = s;
                m[(c2, c1)] = s;
            }
            let mut s = 0.0;
            for i in 0..n {
                let w = mu[i].max(MIN_WEIGHT);
                let z = eta[i] + (y[i] - mu[i]) / w;
                s += w * z * a[(i, c1)];
            }
            rhs[c1] = s;
        }
        let solved = match nalgebra::linalg::Cholesky::new(m.clone()) {
            Some(ch) => ch.solve(&rhs),
            None => {
                let jitter = m.diagonal().sum() / (k + 1) as f64 * 1e-8 + 1e-12;
                let mut mj = m;
                for d in 0..=k {
                    mj[(d, d)] += jitter;
                }
                nalgebra::linalg::Cholesky::new(mj)
                    .ok_or_else(|| {
                        Error::RankDeficient(
                            "weighted normal equations are not positive definite".to_string(),
                        )
                    })?
                    .solve(&rhs)
            }
        };

        let dir = &solved - &theta;
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1e-10 {
            let trial = &theta + &dir * t;
            let eta_t = &a * &trial;
            let mu_t = eta_t.map(eta_to_mu);
            let dev_t = deviance(y, &mu_t);
            if dev_t.is_finite() && dev_t <= dev + 1e-12 * (1.0 + dev.abs()) {
                theta = trial;
                eta = eta_t;
                mu = mu_t;
                let rel = (dev - dev_t).abs() / (dev.abs() + 0.1);
                dev = dev_t;
                let grad = a.transpose() * DVector::from_fn(n, |i, _| y[i] - mu[i]);
                let g_inf = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) / n as f64;
                if rel < DEVIANCE_RTOL || g_inf < GRADIENT_TOL {
                    converged = true;
                }
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            let grad = a.transpose() * DVector::from_fn(n, |i, _| y[i] - mu[i]);
            let g_inf = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs())) / n as f64;
            converged = g_inf < GRADIENT_TOL;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged {
        log::warn!(
            "Poisson refit stopped after {} iterations without meeting tolerances",
            iterations
        );
    }

    let mut slopes = DVector::zeros(p);
    for (jj, &j) in kept.iter().enumerate() {
        slopes[j] = theta[jj + 1];
    }
    let coefficients = Coefficients::new(theta[0], slopes);
    Ok(FitResult {
        log_likelihood: log_likelihood(y, &mu),
        deviance: dev,
        iterations,
        converged,
        coefficients,
        dropped_columns: dropped,
    })
}
