//! Classical comparison estimators: difference of means, least squares
//! adjustment, propensity-score matching and weighting, and Mahalanobis
//! nearest-neighbour matching.
//!
//! Matching estimators match treated units to controls with replacement, so
//! they target the effect on the treated. Ties at the matching distance are
//! all kept and averaged, which makes every estimator invariant under row
//! permutations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Result, SfeError};

/// Ridge added to the least-squares normal equations when they are singular.
pub const OLS_RIDGE: f64 = 1e-8;
/// Ridge on the non-intercept logistic coefficients.
pub const LOGISTIC_RIDGE: f64 = 1e-6;
/// Ridge added to the covariate covariance before inversion.
pub const MAHALANOBIS_RIDGE: f64 = 1e-8;
pub const IRLS_MAX_ITER: usize = 100;
pub const IRLS_TOL: f64 = 1e-8;
/// IPTW weights are clipped to these percentiles.
pub const IPTW_TRUNCATION: (f64, f64) = (1.0, 99.0);

/// Pivot ratio below which the normal equations count as singular.
const SINGULAR_PIVOT: f64 = 1e-7;

/// Tolerance for considering two matching distances equal.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsMode {
    Match,
    Iptw,
}

fn treatment_indicator(d: &Dataset, treat: &str) -> Result<Vec<bool>> {
    let a = d.column_index(treat)?;
    let col = d.x().column(a);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flags: Vec<bool> = col.iter().map(|&v| hi > lo && v == hi).collect();
    let nt = flags.iter().filter(|&&t| t).count();
    if nt == 0 || nt == flags.len() {
        return Err(SfeError::DegenerateSplit(format!(
            "`{treat}` has {nt} treated of {} individuals",
            flags.len()
        )));
    }
    Ok(flags)
}

fn covariate_matrix(d: &Dataset, covariates: &[&str]) -> Result<Vec<Vec<f64>>> {
    let idx = covariates
        .iter()
        .map(|c| d.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..d.n())
        .map(|i| idx.iter().map(|&a| d.x()[[i, a]]).collect())
        .collect())
}

/// Mean outcome of treated minus mean outcome of controls.
pub fn ate_diff_means(d: &Dataset, treat: &str) -> Result<f64> {
    let t = treatment_indicator(d, treat)?;
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for (&ti, &y) in t.iter().zip(d.y().iter()) {
        if ti {
            st += y;
            nt += 1;
        } else {
            sc += y;
            nc += 1;
        }
    }
    Ok(st / nt as f64 - sc / nc as f64)
}

/// Solves `(A + ridge·D) x = b` by Cholesky, where `D` is the identity with
/// a zero for the intercept. Returns `None` when the system is singular.
fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<DVector<f64>> {
    let mut a = a.clone();
    for k in 1..a.nrows() {
        a[(k, k)] += ridge;
    }
    let scale = a.diagonal().iter().copied().fold(0.0, f64::max);
    let chol = a.cholesky()?;
    let l = chol.l();
    let min_pivot = (0..l.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    if !(min_pivot > SINGULAR_PIVOT * scale) && ridge == 0.0 {
        return None;
    }
    Some(chol.solve(b))
}

fn design(d: &Dataset, treat: &str, covariates: &[&str]) -> Result<DMatrix<f64>> {
    let t = treatment_indicator(d, treat)?;
    let cov = covariate_matrix(d, covariates)?;
    let p = 2 + covariates.len();
    Ok(DMatrix::from_fn(d.n(), p, |i, k| match k {
        0 => 1.0,
        1 => {
            if t[i] {
                1.0
            } else {
                0.0
            }
        }
        _ => cov[i][k - 2],
    }))
}

/// Coefficient of the treatment indicator in a least-squares regression of
/// the outcome on an intercept, the treatment and `covariates`.
pub fn ate_ols(d: &Dataset, treat: &str, covariates: &[&str]) -> Result<f64> {
    let x = design(d, treat, covariates)?;
    let y = DVector::from_iterator(d.n(), d.y().iter().copied());
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let beta = solve_spd(&xtx, &xty, 0.0)
        .or_else(|| solve_spd(&xtx, &xty, OLS_RIDGE))
        .ok_or_else(|| SfeError::RankDeficient("normal equations singular even with ridge".into()))?;
    if !beta[1].is_finite() {
        return Err(SfeError::RankDeficient("non-finite treatment coefficient".into()));
    }
    Ok(beta[1])
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Centers each column and scales it to unit standard deviation; constant
/// columns become zero.
fn standardized(cov: &[Vec<f64>], p: usize) -> Vec<Vec<f64>> {
    let n = cov.len() as f64;
    let mut out = cov.to_vec();
    for k in 0..p {
        let mean = cov.iter().map(|r| r[k]).sum::<f64>() / n;
        let sd = (cov.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / n).sqrt();
        for row in &mut out {
            row[k] = if sd > 0.0 { (row[k] - mean) / sd } else { 0.0 };
        }
    }
    out
}

/// Fitted treatment probabilities from a ridge-stabilized logistic
/// regression of the treatment on an intercept and `covariates`, estimated
/// by iteratively reweighted least squares.
///
/// Covariates are standardized first, so the ridge acts on standardized
/// coefficients and the scores do not depend on covariate units.
pub fn fit_propensity(d: &Dataset, treat: &str, covariates: &[&str]) -> Result<Vec<f64>> {
    let t = treatment_indicator(d, treat)?;
    let cov = standardized(&covariate_matrix(d, covariates)?, covariates.len());
    let n = d.n();
    let p = 1 + covariates.len();
    let x = DMatrix::from_fn(n, p, |i, k| if k == 0 { 1.0 } else { cov[i][k - 1] });
    let target = DVector::from_iterator(n, t.iter().map(|&b| if b { 1.0 } else { 0.0 }));

    let penalized_nll = |beta: &DVector<f64>| -> f64 {
        let eta = &x * beta;
        let mut nll = 0.0;
        for i in 0..n {
            let z = eta[i];
            // log(1 + e^z) - t z, computed stably
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            nll += softplus - target[i] * z;
        }
        let ridge: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        nll + 0.5 * LOGISTIC_RIDGE * ridge
    };

    let mut beta = DVector::zeros(p);
    let frac = target.sum() / n as f64;
    beta[0] = (frac / (1.0 - frac)).ln();
    let mut last_change = f64::INFINITY;
    for _ in 0..IRLS_MAX_ITER {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        // gradient and Hessian of the penalized negative log-likelihood
        let mut grad = x.transpose() * (&mu - &target);
        let xw = DMatrix::from_fn(n, p, |i, k| x[(i, k)] * w[i]);
        let mut hess = x.transpose() * xw;
        for k in 1..p {
            grad[k] += LOGISTIC_RIDGE * beta[k];
            hess[(k, k)] += LOGISTIC_RIDGE;
        }
        let step = hess
            .cholesky()
            .map(|c| c.solve(&grad))
            .ok_or_else(|| SfeError::RankDeficient("logistic Hessian not positive definite".into()))?;
        // damped Newton: halve until the objective does not increase
        let current = penalized_nll(&beta);
        let mut scale = 1.0;
        let mut next = &beta - &step;
        while penalized_nll(&next) > current + 1e-12 * current.abs().max(1.0) && scale > 1e-10 {
            scale *= 0.5;
            next = &beta - &step * scale;
        }
        // measured on the linear predictor: directions of beta that X maps
        // to zero (collinear dummies) carry only rounding noise
        last_change = (&x * (&next - &beta)).amax();
        beta = next;
        if last_change < IRLS_TOL {
            let eta = &x * &beta;
            return Ok(eta.iter().map(|&z| sigmoid(z)).collect());
        }
    }
    Err(SfeError::NonConvergence {
        iterations: IRLS_MAX_ITER,
        last_change,
    })
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Propensity-score estimate: nearest-score matching of treated units, or
/// normalized inverse-probability weighting with percentile truncation.
pub fn ate_ps(d: &Dataset, treat: &str, scores: &[f64], mode: PsMode) -> Result<f64> {
    let t = treatment_indicator(d, treat)?;
    if scores.len() != d.n() {
        return Err(SfeError::DimensionMismatch {
            expected: d.n(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|&s| !(s > 0.0 && s < 1.0)) {
        return Err(SfeError::InvalidConfig("propensity scores must lie in (0, 1)".into()));
    }
    let y = d.y();
    match mode {
        PsMode::Match => {
            let controls: Vec<usize> = (0..d.n()).filter(|&i| !t[i]).collect();
            let treated: Vec<usize> = (0..d.n()).filter(|&i| t[i]).collect();
            let total: f64 = treated
                .iter()
                .map(|&i| {
                    let dist: Vec<f64> = controls.iter().map(|&j| (scores[i] - scores[j]).abs()).collect();
                    y[i] - mean_of_nearest(&controls, &dist, 1, y.as_slice().unwrap_or(&y.to_vec()))
                })
                .sum();
            Ok(total / treated.len() as f64)
        }
        PsMode::Iptw => {
            let mut w: Vec<f64> = (0..d.n())
                .map(|i| if t[i] { 1.0 / scores[i] } else { 1.0 / (1.0 - scores[i]) })
                .collect();
            let mut sorted = w.clone();
            sorted.sort_by(f64::total_cmp);
            let lo = percentile(&sorted, IPTW_TRUNCATION.0);
            let hi = percentile(&sorted, IPTW_TRUNCATION.1);
            for v in &mut w {
                *v = v.clamp(lo, hi);
            }
            let (mut st, mut wt, mut sc, mut wc) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..d.n() {
                if t[i] {
                    st += w[i] * y[i];
                    wt += w[i];
                } else {
                    sc += w[i] * y[i];
                    wc += w[i];
                }
            }
            Ok(st / wt - sc / wc)
        }
    }
}

/// Mean outcome of the `k` nearest candidates, keeping every candidate tied
/// with the k-th distance.
fn mean_of_nearest(candidates: &[usize], dist: &[f64], k: usize, y: &[f64]) -> f64 {
    let mut sorted = dist.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = sorted[k - 1];
    let tol = TIE_TOL * cutoff.abs().max(1.0);
    let (mut s, mut c) = (0.0, 0usize);
    for (&j, &dj) in candidates.iter().zip(dist) {
        if dj <= cutoff + tol {
            s += y[j];
            c += 1;
        }
    }
    s / c as f64
}

/// Sample covariance of the rows of `cov` with a ridge on the diagonal,
/// returned inverted.
fn inverse_covariance(cov: &[Vec<f64>], p: usize) -> Result<DMatrix<f64>> {
    let n = cov.len();
    let mut mean = vec![0.0; p];
    for row in cov {
        for k in 0..p {
            mean[k] += row[k] / n as f64;
        }
    }
    let mut s = DMatrix::zeros(p, p);
    for row in cov {
        for a in 0..p {
            for b in 0..p {
                s[(a, b)] += (row[a] - mean[a]) * (row[b] - mean[b]) / (n as f64 - 1.0);
            }
        }
    }
    for k in 0..p {
        s[(k, k)] += MAHALANOBIS_RIDGE;
    }
    s.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| SfeError::RankDeficient("covariate covariance not invertible".into()))
}

/// Mahalanobis nearest-neighbour matching of treated units to `k` controls.
pub fn ate_mahalanobis(d: &Dataset, treat: &str, covariates: &[&str], k: usize) -> Result<f64> {
    if !(1..=4).contains(&k) {
        return Err(SfeError::InvalidConfig(format!("k must be in 1..=4, got {k}")));
    }
    let t = treatment_indicator(d, treat)?;
    let cov = covariate_matrix(d, covariates)?;
    let controls: Vec<usize> = (0..d.n()).filter(|&i| !t[i]).collect();
    if controls.len() < k {
        return Err(SfeError::DegenerateSplit(format!(
            "{} controls for {k} neighbours",
            controls.len()
        )));
    }
    let p = covariates.len();
    let y: Vec<f64> = d.y().to_vec();
    let treated: Vec<usize> = (0..d.n()).filter(|&i| t[i]).collect();
    if p == 0 {
        let mean_c = controls.iter().map(|&j| y[j]).sum::<f64>() / controls.len() as f64;
        let mean_t = treated.iter().map(|&i| y[i]).sum::<f64>() / treated.len() as f64;
        return Ok(mean_t - mean_c);
    }
    let inv = inverse_covariance(&cov, p)?;
    let mut diff = vec![0.0; p];
    let mut total = 0.0;
    for &i in &treated {
        let dist: Vec<f64> = controls
            .iter()
            .map(|&j| {
                for a in 0..p {
                    diff[a] = cov[i][a] - cov[j][a];
                }
                let mut q = 0.0;
                for a in 0..p {
                    for b in 0..p {
                        q += diff[a] * inv[(a, b)] * diff[b];
                    }
                }
                q.max(0.0)
            })
            .collect();
        total += y[i] - mean_of_nearest(&controls, &dist, k, &y);
    }
    Ok(total / treated.len() as f64)
}

/// One estimate from one replication, scored against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: String,
    pub replication: usize,
    pub estimate: f64,
    pub oracle: f64,
    pub bias: f64,
    pub squared_error: f64,
    pub runtime_ms: u64,
    /// Optimizer iteration budget for `sfe` rows, empty otherwise.
    pub iterations: Option<usize>,
}

impl EstimateReport {
    pub fn new(method: impl Into<String>, replication: usize, estimate: f64, oracle: f64, runtime_ms: u64) -> Self {
        let bias = estimate - oracle;
        Self {
            method: method.into(),
            replication,
            estimate,
            oracle,
            bias,
            squared_error: bias * bias,
            runtime_ms,
            iterations: None,
        }
    }
}

/// Per-method aggregate over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub replications: usize,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub mse: f64,
    /// Population variance of the estimates.
    pub variance: f64,
}

/// Summaries in order of first appearance of each method.
pub fn summarize(reports: &[EstimateReport]) -> Vec<MethodSummary> {
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    methods
        .into_iter()
        .map(|m| {
            let rows: Vec<&EstimateReport> = reports.iter().filter(|r| r.method == m).collect();
            let k = rows.len() as f64;
            let mean_estimate = rows.iter().map(|r| r.estimate).sum::<f64>() / k;
            let mean_bias = rows.iter().map(|r| r.bias).sum::<f64>() / k;
            let mse = rows.iter().map(|r| r.squared_error).sum::<f64>() / k;
            let variance = rows.iter().map(|r| (r.bias - mean_bias).powi(2)).sum::<f64>() / k;
            MethodSummary {
                method: m.to_string(),
                replications: rows.len(),
                mean_estimate,
                mean_bias,
                mse,
                variance,
            }
        })
        .collect()
}
