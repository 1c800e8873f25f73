//! Test-side oracles, written independently of the library kernels.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `Γ(x)` for row `i` evaluated at `x`, with every penalty computed from
/// the unperturbed positions `p` and then held fixed.
pub fn frozen_gamma(i: usize, x: &[f64], p: &Array2<f64>, y: &Array1<f64>) -> f64 {
    let (n, m) = p.dim();
    let mf = m as f64;
    let mu: Vec<f64> = (0..m).map(|a| (0..n).map(|k| p[[k, a]]).sum::<f64>() / n as f64).collect();
    let mut total = 0.0;
    for j in 0..n {
        if j == i {
            continue;
        }
        let mut sum_sq = 0.0;
        let mut proj = 0.0;
        let mut dot = 0.0;
        for a in 0..m {
            let s = p[[i, a]] + p[[j, a]];
            sum_sq += s * s;
            proj += mu[a] * s;
            dot += x[a] * p[[j, a]];
        }
        let cx = sum_sq.sqrt() / mf;
        let bl = proj.abs() / mf;
        let d = dot / mf;
        let yij = if y[i] > y[j] { y[i] - y[j] } else { 0.0 };
        total += (1.0 + cx) * (d + yij).powi(2) + bl * d * d;
    }
    total
}

/// Central finite-difference gradient of [`frozen_gamma`] at row `i`.
pub fn fd_gradient(i: usize, p: &Array2<f64>, y: &Array1<f64>, h: f64) -> Vec<f64> {
    let m = p.ncols();
    let base: Vec<f64> = p.row(i).to_vec();
    (0..m)
        .map(|a| {
            let mut up = base.clone();
            let mut dn = base.clone();
            up[a] += h;
            dn[a] -= h;
            (frozen_gamma(i, &up, p, y) - frozen_gamma(i, &dn, p, y)) / (2.0 * h)
        })
        .collect()
}

/// Random instance with `n ∈ [2, 10]`, `m ∈ [1, 8]`, positions in
/// `[-1, 1]` and outcomes in `[0, 1]`.
pub fn random_instance(rng: &mut ChaCha8Rng) -> (Array2<f64>, Array1<f64>) {
    let n = rng.gen_range(2..=10);
    let m = rng.gen_range(1..=8);
    let p = Array2::from_shape_fn((n, m), |_| rng.gen_range(-1.0..=1.0));
    let y = Array1::from_shape_fn(n, |_| rng.gen_range(0.0..=1.0));
    (p, y)
}

/// Worst relative error of the analytic gradient over `count` random
/// instances and every row of each.
pub fn worst_gradient_error(count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let (p, y) = random_instance(&mut rng);
        for i in 0..p.nrows() {
            let g = sfe::pairwise::grad_gamma(i, p.view(), y.view()).unwrap();
            let fd = fd_gradient(i, &p, &y, 1e-6);
            let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
            let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale;
            worst = worst.max(err);
        }
    }
    worst
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut e = k;
        while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[k]] {
            e += 1;
        }
        let avg = (k + e) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=e] {
            r[i] = avg;
        }
        k = e + 1;
    }
    r
}
