//! Minibatch gradient descent over individual positions.
//!
//! Positions start at the normalized covariates and are moved so that pair
//! dot products track outcome differences, weighted by the treatment-size
//! and balance penalties. The result is the effect space consumed by
//! [`crate::effects`].
//!
//! Each step applies the gradient of `Γ(x_i)` averaged over the `n - 1`
//! partners of `i`, so the learning rate does not need to shrink with the
//! sample size. Penalties are recomputed from the batch-start positions and
//! held fixed while differentiating.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizedData, Scaling};
use crate::error::{Result, SfeError};

/// Name of the generator used for shuffling; recorded in persisted metadata.
pub const PRNG_NAME: &str = "ChaCha8Rng";

/// Largest admissible absolute coordinate before a fit is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Window (in iterations) of the early-stopping rule.
pub const STOP_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub eta: f64,
    pub iterations: usize,
    /// `None` means one batch holding the whole sample.
    pub batch_size: Option<usize>,
    pub seed: u64,
    pub deterministic: bool,
    /// Stop when the relative change between consecutive windowed means of
    /// the objective falls below this value.
    pub tolerance: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            eta: 0.025,
            iterations: 10_000,
            batch_size: None,
            seed: 0,
            deterministic: true,
            tolerance: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SfeError::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.iterations == 0 {
            return Err(SfeError::InvalidConfig("iterations must be at least 1".into()));
        }
        if let Some(b) = self.batch_size {
            if b == 0 || b > n {
                return Err(SfeError::InvalidConfig(format!(
                    "batch size {b} outside 1..={n}"
                )));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t >= 0.0) {
                return Err(SfeError::InvalidConfig(format!("tolerance must be nonnegative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Fitted positions `T_y(X)` with the configuration that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSpace {
    pub column_names: Vec<String>,
    pub positions: Array2<f64>,
    pub config: FitConfig,
    /// Total objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    /// Total objective at the starting positions.
    pub initial_objective: f64,
    /// Normalization of the data the space was fitted on.
    pub scaling: Scaling,
}

impl EffectSpace {
    pub fn n(&self) -> usize {
        self.positions.nrows()
    }

    pub fn m(&self) -> usize {
        self.positions.ncols()
    }

    pub fn iterations_run(&self) -> usize {
        self.objective_trace.len()
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(self.initial_objective)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.column_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| SfeError::UnknownFactor(name.to_string()))
    }

    /// Errors unless this space was fitted on data of the same shape.
    pub fn check_compatible(&self, nd: &NormalizedData) -> Result<()> {
        if self.m() != nd.m() {
            return Err(SfeError::DimensionMismatch {
                expected: nd.m(),
                found: self.m(),
            });
        }
        if self.n() != nd.n() {
            return Err(SfeError::DimensionMismatch {
                expected: nd.n(),
                found: self.n(),
            });
        }
        Ok(())
    }
}

/// Column-major position buffer with per-row caches used by the pair
/// kernel. Keeping each coordinate contiguous lets the inner loops over
/// partners run as flat array passes.
struct Workspace {
    n: usize,
    m: usize,
    inv_m: f64,
    /// `cols[a * n + i]` is coordinate `a` of individual `i`.
    cols: Vec<f64>,
    y: Vec<f64>,
    sq_norm: Vec<f64>,
    mean_proj: Vec<f64>,
    /// Same layout as `cols`.
    grad: Vec<f64>,
    scratch: Scratch,
}

#[derive(Default)]
struct Scratch {
    raw: Vec<f64>,
    w_ij: Vec<f64>,
    w_ji: Vec<f64>,
}

impl Scratch {
    fn with_len(n: usize) -> Self {
        Self {
            raw: vec![0.0; n],
            w_ij: vec![0.0; n],
            w_ji: vec![0.0; n],
        }
    }
}

/// `Σ a_k b_k` over four interleaved accumulators, combined in a fixed order.
#[inline(always)]
fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (p, q) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += p[l] * q[l];
        }
    }
    let mut tail = 0.0;
    for (p, q) in ra.iter().zip(rb) {
        tail += p * q;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline(always)]
fn sum4(a: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let r = ca.remainder();
    for p in ca {
        for l in 0..4 {
            acc[l] += p[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + r.iter().sum::<f64>()
}

impl Workspace {
    /// `x` is row-major `n × m`.
    fn new(x: &[f64], y: Vec<f64>, m: usize) -> Self {
        let n = y.len();
        let mut cols = vec![0.0; n * m];
        for i in 0..n {
            for a in 0..m {
                cols[a * n + i] = x[i * m + a];
            }
        }
        Self {
            n,
            m,
            inv_m: 1.0 / m as f64,
            cols,
            y,
            sq_norm: vec![0.0; n],
            mean_proj: vec![0.0; n],
            grad: vec![0.0; n * m],
            scratch: Scratch::with_len(n),
        }
    }

    #[inline]
    fn col(&self, a: usize) -> &[f64] {
        &self.cols[a * self.n..(a + 1) * self.n]
    }

    /// Refreshes squared norms and projections on the mean row.
    fn refresh_caches(&mut self) {
        let n = self.n;
        self.sq_norm.iter_mut().for_each(|v| *v = 0.0);
        self.mean_proj.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..self.m {
            let col = &self.cols[a * n..(a + 1) * n];
            let mean = col.iter().sum::<f64>() / n as f64;
            for ((s, p), &v) in self.sq_norm.iter_mut().zip(self.mean_proj.iter_mut()).zip(col) {
                *s += v * v;
                *p += mean * v;
            }
        }
    }

    /// Fills `raw[k]` with `<x_i, x_{lo+k}>` for partners `lo..hi`.
    fn raw_dots(&self, i: usize, lo: usize, hi: usize, raw: &mut [f64]) {
        let n = self.n;
        let raw = &mut raw[..hi - lo];
        raw.iter_mut().for_each(|r| *r = 0.0);
        for a in 0..self.m {
            let xa = self.cols[a * n + i];
            let col = &self.cols[a * n + lo..a * n + hi];
            for (r, &c) in raw.iter_mut().zip(col) {
                *r += xa * c;
            }
        }
    }

    /// Full synchronous pass over unordered pairs. Fills `grad` with the
    /// partner-averaged gradient of every row and returns the total objective.
    fn full_pass_symmetric(&mut self) -> f64 {
        let (n, m, inv_m) = (self.n, self.m, self.inv_m);
        self.refresh_caches();
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut terms = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n.saturating_sub(1) {
            let (lo, len) = (i + 1, n - i - 1);
            self.raw_dots(i, lo, n, &mut scratch.raw);
            let (yi, si, pi) = (self.y[i], self.sq_norm[i], self.mean_proj[i]);
            let ys = &self.y[lo..];
            let sq = &self.sq_norm[lo..];
            let mp = &self.mean_proj[lo..];
            let t = &mut terms[..len];
            let w_ij = &mut scratch.w_ij[..len];
            let w_ji = &mut scratch.w_ji[..len];
            for k in 0..len {
                let raw = scratch.raw[k];
                let d = raw * inv_m;
                let cx1 = 1.0 + (si + sq[k] + 2.0 * raw).max(0.0).sqrt() * inv_m;
                let bl = (pi + mp[k]).abs() * inv_m;
                let dy = yi - ys[k];
                let r1 = d + dy.max(0.0);
                let r2 = d + (-dy).max(0.0);
                let bd = bl * d;
                t[k] = cx1 * (r1 * r1 + r2 * r2) + 2.0 * bd * d;
                w_ij[k] = 2.0 * (cx1 * r1 + bd);
                w_ji[k] = 2.0 * (cx1 * r2 + bd);
            }
            total += sum4(t);
            for a in 0..m {
                let base = a * n;
                let xa = self.cols[base + i];
                let col = &self.cols[base + lo..base + n];
                let (gh, gt) = self.grad[base..base + n].split_at_mut(lo);
                gh[i] += dot4(w_ij, col);
                for (g, &w) in gt.iter_mut().zip(w_ji.iter()) {
                    *g += w * xa;
                }
            }
        }
        self.scratch = scratch;
        let scale = inv_m / (n - 1) as f64;
        self.grad.iter_mut().for_each(|g| *g *= scale);
        total
    }

    /// Partner-averaged gradient of row `i` against all others, written to
    /// `out`; returns `Γ(x_i)`.
    fn row_gradient(&self, i: usize, out: &mut [f64], scratch: &mut Scratch) -> f64 {
        let (n, inv_m) = (self.n, self.inv_m);
        self.raw_dots(i, 0, n, &mut scratch.raw);
        let (yi, si, pi) = (self.y[i], self.sq_norm[i], self.mean_proj[i]);
        let mut terms = vec![0.0; n];
        for j in 0..n {
            let raw = scratch.raw[j];
            let d = raw * inv_m;
            let cx1 = 1.0 + (si + self.sq_norm[j] + 2.0 * raw).max(0.0).sqrt() * inv_m;
            let bl = (pi + self.mean_proj[j]).abs() * inv_m;
            let r = d + (yi - self.y[j]).max(0.0);
            terms[j] = cx1 * r * r + bl * d * d;
            scratch.w_ij[j] = 2.0 * (cx1 * r + bl * d);
        }
        terms[i] = 0.0;
        scratch.w_ij[i] = 0.0;
        let scale = inv_m / (n - 1) as f64;
        for (a, g) in out.iter_mut().enumerate() {
            *g = dot4(&scratch.w_ij[..n], self.col(a)) * scale;
        }
        sum4(&terms)
    }

    /// Row-parallel variant of the full pass; reductions run per row.
    fn full_pass_parallel(&mut self) -> f64 {
        self.refresh_caches();
        let (n, m) = (self.n, self.m);
        let this = &*self;
        let rows: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map_init(
                || Scratch::with_len(n),
                |scratch, i| {
                    let mut g = vec![0.0; m];
                    let t = this.row_gradient(i, &mut g, scratch);
                    (g, t)
                },
            )
            .collect();
        let mut total = 0.0;
        for (i, (g, t)) in rows.into_iter().enumerate() {
            for a in 0..m {
                self.grad[a * n + i] = g[a];
            }
            total += t;
        }
        total
    }

    fn objective(&mut self) -> f64 {
        self.refresh_caches();
        let (n, inv_m) = (self.n, self.inv_m);
        let mut scratch = std::mem::take(&mut self.scratch);
        let mut terms = vec![0.0; n];
        let mut total = 0.0;
        for i in 0..n.saturating_sub(1) {
            let (lo, len) = (i + 1, n - i - 1);
            self.raw_dots(i, lo, n, &mut scratch.raw);
            let (yi, si, pi) = (self.y[i], self.sq_norm[i], self.mean_proj[i]);
            for k in 0..len {
                let j = lo + k;
                let raw = scratch.raw[k];
                let d = raw * inv_m;
                let cx1 = 1.0 + (si + self.sq_norm[j] + 2.0 * raw).max(0.0).sqrt() * inv_m;
                let bl = (pi + self.mean_proj[j]).abs() * inv_m;
                let dy = yi - self.y[j];
                let r1 = d + dy.max(0.0);
                let r2 = d + (-dy).max(0.0);
                terms[k] = cx1 * (r1 * r1 + r2 * r2) + 2.0 * bl * d * d;
            }
            total += sum4(&terms[..len]);
        }
        self.scratch = scratch;
        total
    }

    fn apply(&mut self, rows: impl Iterator<Item = usize>, eta: f64) {
        let n = self.n;
        for i in rows {
            for a in 0..self.m {
                self.cols[a * n + i] -= eta * self.grad[a * n + i];
            }
        }
    }

    fn apply_all(&mut self, eta: f64) {
        for (x, g) in self.cols.iter_mut().zip(&self.grad) {
            *x -= eta * g;
        }
    }

    fn check_finite(&self) -> std::result::Result<(), String> {
        for (k, v) in self.cols.iter().enumerate() {
            if !v.is_finite() {
                return Err(format!("non-finite position at row {}", k % self.n));
            }
            if v.abs() > DIVERGENCE_LIMIT {
                return Err(format!("position magnitude {v:e} at row {}", k % self.n));
            }
        }
        Ok(())
    }

    /// Row-major copy of the positions.
    fn rows(&self) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let mut x = vec![0.0; n * m];
        for a in 0..m {
            for i in 0..n {
                x[i * m + a] = self.cols[a * n + i];
            }
        }
        x
    }
}

/// Column order that depends only on column contents, so that permuted
/// inputs are processed identically.
fn canonical_column_order(x: ArrayView2<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.ncols()).collect();
    order.sort_by(|&a, &b| compare_columns(x.column(a), x.column(b)));
    order
}

fn compare_columns(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Ordering {
    for (p, q) in a.iter().zip(b.iter()) {
        match p.total_cmp(q) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Total objective `Σ_i Γ(x_i)` at the given positions.
pub fn total_objective(positions: ArrayView2<f64>, yn: ArrayView1<f64>) -> f64 {
    let m = positions.ncols();
    let x: Vec<f64> = positions.iter().copied().collect();
    let mut ws = Workspace::new(&x, yn.to_vec(), m);
    ws.objective()
}

/// Fits the effect space for normalized data.
pub fn fit(nd: &NormalizedData, cfg: &FitConfig) -> Result<EffectSpace> {
    let (n, m) = nd.xn.dim();
    if n < 2 {
        return Err(SfeError::InvalidDataset(format!("need at least 2 individuals, found {n}")));
    }
    cfg.validate(n)?;

    let order = canonical_column_order(nd.xn.view());
    let mut x0 = Vec::with_capacity(n * m);
    for i in 0..n {
        x0.extend(order.iter().map(|&a| nd.xn[[i, a]]));
    }
    let mut ws = Workspace::new(&x0, nd.yn.to_vec(), m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut individuals: Vec<usize> = (0..n).collect();
    let batch = cfg.batch_size.unwrap_or(n);
    let full_batch = batch >= n;

    let mut trace = Vec::with_capacity(cfg.iterations.min(1 << 16));
    let initial_objective = ws.objective();

    for iter in 0..cfg.iterations {
        individuals.shuffle(&mut rng);
        if full_batch {
            let obj = if cfg.deterministic {
                ws.full_pass_symmetric()
            } else {
                ws.full_pass_parallel()
            };
            // the fused pass evaluates the objective before this update
            if iter > 0 {
                trace.push(obj);
            }
            ws.apply_all(cfg.eta);
        } else {
            for chunk in individuals.chunks(batch) {
                ws.refresh_caches();
                let rows: Vec<usize> = chunk.to_vec();
                let mut grads = vec![0.0; rows.len() * m];
                if cfg.deterministic {
                    let mut scratch = Scratch::with_len(n);
                    for (k, &i) in rows.iter().enumerate() {
                        ws.row_gradient(i, &mut grads[k * m..(k + 1) * m], &mut scratch);
                    }
                } else {
                    let wsr = &ws;
                    grads
                        .par_chunks_mut(m)
                        .zip(rows.par_iter())
                        .for_each_init(
                            || Scratch::with_len(n),
                            |scratch, (g, &i)| {
                                wsr.row_gradient(i, g, scratch);
                            },
                        );
                }
                for (k, &i) in rows.iter().enumerate() {
                    for a in 0..m {
                        ws.grad[a * n + i] = grads[k * m + a];
                    }
                }
                ws.apply(rows.into_iter(), cfg.eta);
            }
            trace.push(ws.objective());
        }
        if let Err(reason) = ws.check_finite() {
            if full_batch {
                trace.push(f64::NAN);
            }
            return Err(SfeError::Diverged {
                iteration: iter + 1,
                reason,
                trace,
            });
        }
        if cfg.tolerance.is_some_and(|tol| should_stop(&trace, tol)) {
            break;
        }
    }
    if full_batch {
        trace.push(ws.objective());
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(SfeError::Diverged {
            iteration: trace.len(),
            reason: "non-finite objective".into(),
            trace,
        });
    }

    let x = ws.rows();
    let mut positions = Array2::zeros((n, m));
    for i in 0..n {
        for (k, &a) in order.iter().enumerate() {
            positions[[i, a]] = x[i * m + k];
        }
    }
    Ok(EffectSpace {
        column_names: nd.column_names.clone(),
        positions,
        config: cfg.clone(),
        objective_trace: trace,
        initial_objective,
        scaling: nd.scaling(),
    })
}

fn should_stop(trace: &[f64], tol: f64) -> bool {
    let w = STOP_WINDOW;
    if trace.len() < 2 * w {
        return false;
    }
    let k = trace.len();
    let recent: f64 = trace[k - w..].iter().sum::<f64>() / w as f64;
    let before: f64 = trace[k - 2 * w..k - w].iter().sum::<f64>() / w as f64;
    let denom = before.abs().max(f64::MIN_POSITIVE);
    ((before - recent).abs() / denom) < tol
}
