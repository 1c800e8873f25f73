//! Treatment effects read off a fitted effect space, and greedy selection
//! of effective, mutually non-redundant factors.

use serde::{Deserialize, Serialize};

use crate::data::{denormalize_effect, NormalizedData};
use crate::error::{Result, SfeError};
use crate::optimizer::EffectSpace;

/// Candidate pool size for [`select_variables`].
pub const SELECTION_POOL: usize = 20;

/// How a coordinate gap is turned into an effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMode {
    /// Square root of the absolute coordinate gap.
    Sqrt,
    /// Absolute coordinate gap.
    Linear,
}

impl Default for EffectMode {
    fn default() -> Self {
        DEFAULT_MODE
    }
}

/// Mode used when none is requested. Fixed by calibration on the
/// homogeneous simulation design, where the linear reading has the smaller
/// bias of the two (see `examples/calibrate.rs`).
pub const DEFAULT_MODE: EffectMode = EffectMode::Linear;

impl std::str::FromStr for EffectMode {
    type Err = SfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(Self::Sqrt),
            "linear" => Ok(Self::Linear),
            other => Err(SfeError::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

impl EffectMode {
    pub fn apply(self, gap: f64) -> f64 {
        match self {
            Self::Sqrt => gap.abs().sqrt(),
            Self::Linear => gap.abs(),
        }
    }

    /// Sign-preserving variant used for individual effects, so that an
    /// individual can be estimated to be harmed.
    pub fn apply_signed(self, gap: f64) -> f64 {
        match self {
            Self::Sqrt => gap.signum() * gap.abs().sqrt(),
            Self::Linear => gap,
        }
    }
}

/// Options shared by the effect queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectOptions {
    pub mode: EffectMode,
    /// Individuals whose normalized factor value exceeds this are treated.
    pub threshold: f64,
}

impl Default for EffectOptions {
    fn default() -> Self {
        Self {
            mode: DEFAULT_MODE,
            threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteResult {
    pub factor: String,
    pub ate_normalized: f64,
    pub ate_raw: f64,
    /// Signed coordinate gap, treated mean minus control mean.
    pub gap: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub mode: EffectMode,
    pub mask: String,
}

/// Mean `a`-coordinate of the treated and control groups within `rows`.
fn group_means(
    es: &EffectSpace,
    nd: &NormalizedData,
    a: usize,
    rows: &[usize],
    threshold: f64,
) -> (f64, usize, f64, usize) {
    let (mut st, mut nt, mut sc, mut nc) = (0.0, 0, 0.0, 0);
    for &i in rows {
        let p = es.positions[[i, a]];
        if nd.xn[[i, a]] > threshold {
            st += p;
            nt += 1;
        } else {
            sc += p;
            nc += 1;
        }
    }
    (st / nt.max(1) as f64, nt, sc / nc.max(1) as f64, nc)
}

fn resolve(es: &EffectSpace, nd: &NormalizedData, factor: &str) -> Result<usize> {
    es.check_compatible(nd)?;
    let a = nd.column_index(factor)?;
    if es.column_names.get(a).map(String::as_str) != Some(factor) {
        return Err(SfeError::UnknownFactor(factor.to_string()));
    }
    Ok(a)
}

fn rows_of(mask: Option<&[usize]>, n: usize) -> Result<Vec<usize>> {
    match mask {
        Some(rows) => {
            if let Some(&bad) = rows.iter().find(|&&i| i >= n) {
                return Err(SfeError::IndexOutOfRange { index: bad, len: n });
            }
            Ok(rows.to_vec())
        }
        None => Ok((0..n).collect()),
    }
}

/// Average effect of `factor`: the gap between the mean treated and mean
/// control positions along the factor's coordinate.
pub fn ate(
    es: &EffectSpace,
    nd: &NormalizedData,
    factor: &str,
    mask: Option<&[usize]>,
    opts: EffectOptions,
) -> Result<AteResult> {
    let a = resolve(es, nd, factor)?;
    let rows = rows_of(mask, es.n())?;
    let (mt, nt, mc, nc) = group_means(es, nd, a, &rows, opts.threshold);
    if nt == 0 || nc == 0 {
        return Err(SfeError::DegenerateSplit(format!(
            "`{factor}` has {nt} treated and {nc} control individuals"
        )));
    }
    let gap = mt - mc;
    let ate_normalized = opts.mode.apply(gap);
    Ok(AteResult {
        factor: factor.to_string(),
        ate_normalized,
        ate_raw: denormalize_effect(ate_normalized, nd),
        gap,
        n_treated: nt,
        n_control: nc,
        mode: opts.mode,
        mask: match mask {
            Some(r) => format!("{} individuals", r.len()),
            None => "all".to_string(),
        },
    })
}

/// Individual effect of `factor` for individual `i`: the gap between `i`'s
/// coordinate and the mean coordinate of the opposite group, in raw units.
/// The gap is oriented treated minus control and keeps its sign.
///
/// The opposite group is taken within `mask` when one is given.
pub fn ite(
    es: &EffectSpace,
    nd: &NormalizedData,
    i: usize,
    factor: &str,
    mask: Option<&[usize]>,
    opts: EffectOptions,
) -> Result<f64> {
    let a = resolve(es, nd, factor)?;
    if i >= es.n() {
        return Err(SfeError::IndexOutOfRange { index: i, len: es.n() });
    }
    let rows = rows_of(mask, es.n())?;
    let (mt, nt, mc, nc) = group_means(es, nd, a, &rows, opts.threshold);
    let own = es.positions[[i, a]];
    let treated = nd.xn[[i, a]] > opts.threshold;
    let (other, count) = if treated { (mc, nc) } else { (mt, nt) };
    if count == 0 {
        return Err(SfeError::DegenerateSplit(format!(
            "no individuals on the opposite side of `{factor}`"
        )));
    }
    let gap = if treated { own - other } else { other - own };
    Ok(denormalize_effect(opts.mode.apply_signed(gap), nd))
}

/// Mean of [`ite`] over a set of individuals, sharing group means.
pub fn mean_ite(
    es: &EffectSpace,
    nd: &NormalizedData,
    individuals: &[usize],
    factor: &str,
    opts: EffectOptions,
) -> Result<f64> {
    if individuals.is_empty() {
        return Err(SfeError::DegenerateSplit("no individuals".into()));
    }
    let mut total = 0.0;
    for &i in individuals {
        total += ite(es, nd, i, factor, None, opts)?;
    }
    Ok(total / individuals.len() as f64)
}

/// Cosine between the mean-centered position columns `a` and `b`.
pub fn column_cosine(es: &EffectSpace, a: &str, b: &str) -> Result<f64> {
    let ia = es.column_index(a)?;
    let ib = es.column_index(b)?;
    let ca = centered(es, ia);
    let cb = centered(es, ib);
    let na = ca.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = cb.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 {
        return Err(SfeError::UndefinedAngle(a.to_string()));
    }
    if nb == 0.0 {
        return Err(SfeError::UndefinedAngle(b.to_string()));
    }
    let inner: f64 = ca.iter().zip(&cb).map(|(p, q)| p * q).sum();
    Ok((inner / (na * nb)).clamp(-1.0, 1.0))
}

fn centered(es: &EffectSpace, a: usize) -> Vec<f64> {
    let col = es.positions.column(a);
    let mean = col.mean().unwrap_or(0.0);
    col.iter().map(|v| v - mean).collect()
}

/// Greedy selection of `k` factors: start from the largest effect, then
/// repeatedly add the candidate whose largest squared cosine against the
/// already selected factors is smallest.
///
/// Candidates are the [`SELECTION_POOL`] factors with the largest effects.
/// Factors without both groups, or with a zero-norm column, rank last and
/// are treated as maximally redundant.
pub fn select_variables(
    es: &EffectSpace,
    nd: &NormalizedData,
    k: usize,
    opts: EffectOptions,
) -> Result<Vec<String>> {
    let m = es.m();
    if k > m {
        return Err(SfeError::InvalidConfig(format!("k = {k} exceeds {m} columns")));
    }
    es.check_compatible(nd)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut scored: Vec<(usize, f64)> = (0..m)
        .map(|a| {
            let v = ate(es, nd, &es.column_names[a], None, opts)
                .map(|r| r.ate_normalized)
                .unwrap_or(f64::NEG_INFINITY);
            (a, v)
        })
        .collect();
    // descending effect, ties by column index
    scored.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let pool_size = SELECTION_POOL.max(k).min(m);
    let pool: Vec<usize> = scored.iter().take(pool_size).map(|(a, _)| *a).collect();

    let mut selected = vec![pool[0]];
    while selected.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for &b in pool.iter().filter(|b| !selected.contains(b)) {
            let redundancy = selected
                .iter()
                .map(|&a| {
                    column_cosine(es, &es.column_names[a], &es.column_names[b])
                        .map(|c| c * c)
                        .unwrap_or(1.0)
                })
                .fold(0.0, f64::max);
            let better = match best {
                None => true,
                Some((bb, r)) => redundancy < r || (redundancy == r && b < bb),
            };
            if better {
                best = Some((b, redundancy));
            }
        }
        match best {
            Some((b, _)) => selected.push(b),
            None => break,
        }
    }
    Ok(selected.into_iter().map(|a| es.column_names[a].clone()).collect())
}
