//! Per-pair kernels: outcome differences, the dot-product treatment
//! likelihood, the treatment-size and balance penalties, and the
//! per-individual objective with its gradient.
//!
//! Every inner product here carries the `1/m` normalization, so rows in
//! `[-1, +1]^m` have dot products in `[-1, +1]`.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{Result, SfeError};

/// Nonnegative outcome difference `max(0, y_i - y_j)`.
#[inline]
pub fn outcome_diff(yn_i: f64, yn_j: f64) -> f64 {
    (yn_i - yn_j).max(0.0)
}

#[inline]
fn raw_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(SfeError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(SfeError::InvalidDataset("empty row".into()));
    }
    Ok(())
}

/// `(1/m) <x_i, x_j>`.
pub fn pair_dot(x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    check_len(x_i, x_j)?;
    Ok(raw_dot(x_i, x_j) / x_i.len() as f64)
}

/// Probability of drawing a treated coordinate when comparing two rows:
/// `max(0, -<x_i, x_j>/m)`.
pub fn treatment_likelihood(x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    Ok((-pair_dot(x_i, x_j)?).max(0.0))
}

/// Treatment-size penalty `|x_i + x_j|_2 / m`.
pub fn phi_cx(x_i: &[f64], x_j: &[f64]) -> Result<f64> {
    check_len(x_i, x_j)?;
    let sq: f64 = x_i.iter().zip(x_j).map(|(p, q)| (p + q) * (p + q)).sum();
    Ok(sq.sqrt() / x_i.len() as f64)
}

/// Balance penalty `|<mean_row, x_i + x_j>| / m`, where `mean_row` is the
/// sample mean of the current positions.
pub fn phi_bl(x_i: &[f64], x_j: &[f64], mean_row: &[f64]) -> Result<f64> {
    check_len(x_i, x_j)?;
    check_len(x_i, mean_row)?;
    let s: f64 = mean_row
        .iter()
        .zip(x_i.iter().zip(x_j))
        .map(|(mu, (p, q))| mu * (p + q))
        .sum();
    Ok(s.abs() / x_i.len() as f64)
}

/// All per-pair quantities for an ordered pair `(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDecomposition {
    pub i: usize,
    pub j: usize,
    pub y_ij: f64,
    pub dot: f64,
    pub likelihood: f64,
    pub phi_cx: f64,
    pub phi_bl: f64,
}

impl PairDecomposition {
    /// Contribution of this pair to `Γ(x_i)`.
    pub fn gamma_term(&self) -> f64 {
        let r = self.dot + self.y_ij;
        (1.0 + self.phi_cx) * r * r + self.phi_bl * self.dot * self.dot
    }

    /// Scalar `c` such that the gradient contribution is `c * x_j / m`,
    /// with both penalties held fixed.
    pub fn gradient_weight(&self) -> f64 {
        2.0 * (1.0 + self.phi_cx) * (self.dot + self.y_ij) + 2.0 * self.phi_bl * self.dot
    }
}

/// Column means of a position matrix.
pub fn mean_row(positions: ArrayView2<f64>) -> Array1<f64> {
    let n = positions.nrows().max(1) as f64;
    positions.sum_axis(ndarray::Axis(0)) / n
}

/// Decomposes the ordered pair `(i, j)` against the given mean row.
pub fn decompose(
    i: usize,
    j: usize,
    positions: ArrayView2<f64>,
    yn: ArrayView1<f64>,
    mean: &[f64],
) -> Result<PairDecomposition> {
    let n = positions.nrows();
    for idx in [i, j] {
        if idx >= n {
            return Err(SfeError::IndexOutOfRange { index: idx, len: n });
        }
    }
    let xi = positions.row(i).to_vec();
    let xj = positions.row(j).to_vec();
    let dot = pair_dot(&xi, &xj)?;
    Ok(PairDecomposition {
        i,
        j,
        y_ij: outcome_diff(yn[i], yn[j]),
        dot,
        likelihood: (-dot).max(0.0),
        phi_cx: phi_cx(&xi, &xj)?,
        phi_bl: phi_bl(&xi, &xj, mean)?,
    })
}

fn check_inputs(i: usize, positions: &ArrayView2<f64>, yn: &ArrayView1<f64>) -> Result<()> {
    let n = positions.nrows();
    if yn.len() != n {
        return Err(SfeError::DimensionMismatch {
            expected: n,
            found: yn.len(),
        });
    }
    if i >= n {
        return Err(SfeError::IndexOutOfRange { index: i, len: n });
    }
    Ok(())
}

/// `Γ(x_i) = Σ_{j≠i} (1+φcx)(dot + y_ij)² + φbl·dot²`.
pub fn objective_gamma(i: usize, positions: ArrayView2<f64>, yn: ArrayView1<f64>) -> Result<f64> {
    check_inputs(i, &positions, &yn)?;
    let mean = mean_row(positions).to_vec();
    let mut total = 0.0;
    for j in (0..positions.nrows()).filter(|&j| j != i) {
        total += decompose(i, j, positions, yn, &mean)?.gamma_term();
    }
    Ok(total)
}

/// Gradient of [`objective_gamma`] with respect to `x_i`, holding the
/// penalty coefficients at their current values.
pub fn grad_gamma(i: usize, positions: ArrayView2<f64>, yn: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_inputs(i, &positions, &yn)?;
    let m = positions.ncols();
    let mean = mean_row(positions).to_vec();
    let mut g = Array1::zeros(m);
    for j in (0..positions.nrows()).filter(|&j| j != i) {
        let w = decompose(i, j, positions, yn, &mean)?.gradient_weight() / m as f64;
        g.scaled_add(w, &positions.row(j));
    }
    Ok(g)
}
