//! Logistic regression by iteratively reweighted least squares.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::{independent_columns, weighted_gram, Design, Scaling};
use crate::error::{Error, Result};
use crate::simulator::truncnorm::expit;

/// Linear predictor magnitude beyond which a row counts as separated.
pub const SEPARATION_ETA: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticOptions {
    /// Stop when the max-norm of the mean log-likelihood gradient (on the
    /// scaled columns) drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub feature_names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Inverse-information standard errors; zero for dropped columns.
    #[serde(skip)]
    pub std_errors: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
    /// Some row had `|eta| > 30` at the returned iterate.
    pub separation: bool,
    pub n_obs: usize,
    pub dropped: Vec<String>,
    /// Mean log-likelihood after each accepted step, starting point first.
    #[serde(skip)]
    pub log_likelihood: Vec<f64>,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }
}

/// `log(1 + e^eta)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

struct Eval {
    ll: f64,
    max_eta: f64,
}

fn evaluate(z: &[f64], c: usize, y: &[f64], beta: &[f64]) -> Eval {
    let mut ll = 0.0;
    let mut max_eta: f64 = 0.0;
    for (row, &yi) in z.chunks_exact(c).zip(y) {
        let eta: f64 = row.iter().zip(beta).map(|(a, b)| a * b).sum();
        ll += yi * eta - softplus(eta);
        max_eta = max_eta.max(eta.abs());
    }
    Eval { ll: ll / y.len() as f64, max_eta }
}

/// Newton-Raphson (IRLS) maximisation of the Bernoulli log-likelihood on
/// z-scored columns, halving the step whenever the likelihood would drop.
/// Linearly dependent columns are removed up front and reported with a zero
/// coefficient.
pub fn fit_logistic(x: &Design, y: &[f64], opts: LogisticOptions) -> Result<LogisticModel> {
    x.check(y)?;
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Domain("logistic options need tol > 0 and max_iter >= 1".into()));
    }
    if let Some(i) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Domain(format!("response row {i} is {} (must be 0 or 1)", y[i])));
    }
    let (n, c_all) = (x.rows(), x.cols());
    let scaling = Scaling::fit(x);
    let z_all = scaling.apply_rows(x);
    let gram = weighted_gram(&z_all, c_all, &vec![1.0 / n as f64; n]);
    let kept = independent_columns(&gram, 1e-10);
    let c = kept.len();
    let z: Vec<f64> = if c == c_all {
        z_all
    } else {
        z_all.chunks_exact(c_all).flat_map(|r| kept.iter().map(move |&j| r[j])).collect()
    };

    let mut beta = vec![0.0; c];
    if let Some(i) = scaling.intercept.and_then(|j| kept.iter().position(|&k| k == j)) {
        let ybar = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
        beta[i] = (ybar / (1.0 - ybar)).ln();
    }
    let mut cur = evaluate(&z, c, y, &beta);
    let mut trace = vec![cur.ll];
    let mut grad_norm: f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut info: DMatrix<f64>;
    let mut w = vec![0.0; n];
    let mut grad = vec![0.0; c];

    loop {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for ((row, &yi), wi) in z.chunks_exact(c).zip(y).zip(w.iter_mut()) {
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let p = expit(eta);
            *wi = p * (1.0 - p) / n as f64;
            let r = (yi - p) / n as f64;
            for (g, v) in grad.iter_mut().zip(row) {
                *g += r * v;
            }
        }
        grad_norm = grad.iter().fold(0.0, |m: f64, g| m.max(g.abs()));
        info = weighted_gram(&z, c, &w);
        if grad_norm < opts.tol {
            converged = true;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        let step = newton_direction(&info, &grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let e = evaluate(&z, c, y, &trial);
            if e.ll >= cur.ll {
                beta = trial;
                cur = e;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent left at machine precision.
            break;
        }
        trace.push(cur.ll);
    }

    let mut beta_full = vec![0.0; c_all];
    for (b, &j) in beta.iter().zip(&kept) {
        beta_full[j] = *b;
    }
    let coefficients = scaling.unscale(&beta_full);
    let separation = cur.max_eta > SEPARATION_ETA;
    if !converged && !separation {
        return Err(Error::NoConvergence { iterations, grad_norm, last: coefficients });
    }
    if separation {
        warn!("logistic fit shows quasi-separation (max |eta| = {:.1})", cur.max_eta);
    }

    let mut cov_z = DMatrix::zeros(c_all, c_all);
    if let Some(inv) = (info * n as f64).cholesky().map(|ch| ch.inverse()) {
        for (a, &ja) in kept.iter().enumerate() {
            for (b, &jb) in kept.iter().enumerate() {
                cov_z[(ja, jb)] = inv[(a, b)];
            }
        }
    }
    let t = scaling.unscale_matrix();
    let cov = &t * cov_z * t.transpose();
    let dropped: Vec<String> = (0..c_all)
        .filter(|j| !kept.contains(j))
        .map(|j| x.names[j].clone())
        .collect();
    if !dropped.is_empty() {
        warn!("logistic fit is rank deficient; zeroed: {}", dropped.join(", "));
    }
    Ok(LogisticModel {
        feature_names: x.names.clone(),
        coefficients,
        std_errors: (0..c_all).map(|j| cov[(j, j)].max(0.0).sqrt()).collect(),
        iterations,
        grad_norm,
        converged,
        separation,
        n_obs: n,
        dropped,
        log_likelihood: trace,
    })
}

/// Solves `info * d = grad`, nudging the diagonal when the information is
/// numerically singular (fitted probabilities saturated at 0 or 1).
fn newton_direction(info: &DMatrix<f64>, grad: &[f64]) -> Vec<f64> {
    let g = DVector::from_column_slice(grad);
    let scale = info.diagonal().max().max(f64::MIN_POSITIVE);
    let mut ridge = 0.0;
    for _ in 0..12 {
        let mut m = info.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            let d = ch.solve(&g);
            if d.iter().all(|v| v.is_finite()) {
                return d.iter().copied().collect();
            }
        }
        ridge = if ridge == 0.0 { 1e-12 * scale } else { ridge * 100.0 };
    }
    grad.iter().map(|v| v / scale).collect()
}
