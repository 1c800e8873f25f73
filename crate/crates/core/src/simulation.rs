//! Monte Carlo designs with full counterfactual oracles.
//!
//! Four generators are provided: a homogeneous-effect design with three
//! confounded subpopulations, a heterogeneous variant, the heterogeneous
//! variant with appended consequence columns, and sampled edges of the
//! 10-factor Boolean cube. Every population carries both potential outcomes
//! for every individual, so any estimator can be scored exactly.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Column, ColumnKind, Dataset};
use crate::error::{Result, SfeError};

/// Number of factors of the factorial design.
pub const CUBE_DIM: usize = 10;
/// Edge count of the 10-cube, `10 * 2^9`.
pub const CUBE_EDGES: usize = CUBE_DIM << (CUBE_DIM - 1);

pub const SUBPOP_NAMES: [&str; 3] = ["a", "b", "c"];
pub const TREAT: &str = "treat";
pub const OUTCOME: &str = "y";

// independent substreams per variable family
const STREAM_PROPENSITY: u64 = 1;
const STREAM_ASSIGNMENT: u64 = 2;
const STREAM_EFFECT: u64 = 3;
const STREAM_BASELINE: u64 = 4;
const STREAM_CONSEQUENCE: u64 = 5;
const STREAM_EDGES: u64 = 6;
const STREAM_CUBE_NOISE: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DgpKind {
    Basic,
    Heterogeneous,
    Endogenous,
    Factorial,
}

impl std::str::FromStr for DgpKind {
    type Err = SfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "hetero" | "heterogeneous" => Ok(Self::Heterogeneous),
            "endogenous" => Ok(Self::Endogenous),
            "factorial" => Ok(Self::Factorial),
            other => Err(SfeError::InvalidConfig(format!("unknown dgp `{other}`"))),
        }
    }
}

impl std::fmt::Display for DgpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Basic => "basic",
            Self::Heterogeneous => "hetero",
            Self::Endogenous => "endogenous",
            Self::Factorial => "factorial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub kind: DgpKind,
    pub n: usize,
    pub seed: u64,
    /// Number of consequence columns (endogenous design).
    pub t: usize,
    /// Number of sampled cube edges (factorial design).
    pub gamma: usize,
    /// Standard deviation of the baseline outcome noise.
    pub noise_sd: f64,
    /// Baseline outcome level of subpopulations a, b, c.
    pub intercepts: [f64; 3],
    /// Per-subpopulation propensities are drawn uniformly from this range.
    pub propensity_range: (f64, f64),
    /// Fixed propensities of subpopulations a, b, c, used instead of draws
    /// from `propensity_range`.
    #[serde(default)]
    pub propensities: Option<[f64; 3]>,
    /// Assign treatment with probability 1/2 to everyone instead.
    pub randomized: bool,
    pub effect_sd: f64,
}

impl DgpConfig {
    pub fn new(kind: DgpKind, seed: u64) -> Self {
        Self {
            kind,
            n: 1000,
            seed,
            t: 10,
            gamma: CUBE_EDGES,
            noise_sd: 0.25,
            intercepts: [0.0, 0.25, 0.5],
            propensity_range: (0.2, 0.5),
            propensities: None,
            randomized: false,
            effect_sd: 0.5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.kind != DgpKind::Factorial && self.n < 10 {
            return Err(SfeError::InvalidConfig(format!("n must be at least 10, got {}", self.n)));
        }
        if !(self.noise_sd >= 0.0) || !(self.effect_sd >= 0.0) {
            return Err(SfeError::InvalidConfig("standard deviations must be nonnegative".into()));
        }
        let (lo, hi) = self.propensity_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(SfeError::InvalidConfig(format!("propensity range ({lo}, {hi}) outside (0, 1)")));
        }
        if let Some(p) = self.propensities {
            if !p.iter().all(|&v| 0.0 < v && v < 1.0) {
                return Err(SfeError::InvalidConfig(format!("propensities {p:?} outside (0, 1)")));
            }
        }
        if self.kind == DgpKind::Endogenous && self.t == 0 {
            return Err(SfeError::InvalidConfig("t must be at least 1".into()));
        }
        if self.kind == DgpKind::Factorial && !(1..=CUBE_EDGES).contains(&self.gamma) {
            return Err(SfeError::InvalidConfig(format!(
                "gamma must be in 1..={CUBE_EDGES}, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Replication `r` uses seed `seed + r`.
    pub fn replication(&self, r: u64) -> Self {
        Self {
            seed: self.seed.wrapping_add(r),
            ..self.clone()
        }
    }
}

/// A simulated sample together with both potential outcomes of every unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPopulation {
    pub dataset: Dataset,
    /// Name of the treatment column the counterfactuals refer to.
    pub treatment: String,
    pub subpop: Vec<usize>,
    pub subpop_names: Vec<String>,
    pub propensity: Vec<f64>,
    pub ite_true: Vec<f64>,
    pub y_plus: Vec<f64>,
    pub y_minus: Vec<f64>,
    /// True per-factor effect vector of every individual, one row each.
    pub effect_vectors: Option<Array2<f64>>,
}

impl SimulatedPopulation {
    pub fn treated(&self) -> Vec<bool> {
        let a = self.dataset.column_index(&self.treatment).expect("treatment column");
        self.dataset.x().column(a).iter().map(|&v| v > 0.0).collect()
    }

    /// Indices of the individuals in subpopulation `name`.
    pub fn members(&self, name: &str) -> Vec<usize> {
        match self.subpop_names.iter().position(|s| s == name) {
            Some(k) => (0..self.subpop.len()).filter(|&i| self.subpop[i] == k).collect(),
            None => Vec::new(),
        }
    }

    pub fn subpop_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.subpop_names.len()];
        for &s in &self.subpop {
            sizes[s] += 1;
        }
        sizes
    }
}

pub fn simulate(cfg: &DgpConfig) -> Result<SimulatedPopulation> {
    match cfg.kind {
        DgpKind::Basic => simulate_basic(cfg),
        DgpKind::Heterogeneous => simulate_heterogeneous(cfg),
        DgpKind::Endogenous => simulate_endogenous(cfg),
        DgpKind::Factorial => simulate_factorial(cfg),
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn subpop_sizes(n: usize) -> [usize; 3] {
    let a = (0.6 * n as f64).round() as usize;
    let b = (0.3 * n as f64).round() as usize;
    [a, b, n - a - b]
}

fn three_group(cfg: &DgpConfig, effect_means: [f64; 3]) -> Result<SimulatedPopulation> {
    cfg.validate()?;
    let n = cfg.n;
    let sizes = subpop_sizes(n);
    let mut prop_rng = stream(cfg.seed, STREAM_PROPENSITY);
    let mut assign_rng = stream(cfg.seed, STREAM_ASSIGNMENT);
    let mut effect_rng = stream(cfg.seed, STREAM_EFFECT);
    let mut base_rng = stream(cfg.seed, STREAM_BASELINE);

    let (lo, hi) = cfg.propensity_range;
    let propensity: Vec<f64> = (0..3)
        .map(|k| {
            // always draw, so fixing propensities does not shift the stream
            let p = if hi > lo { prop_rng.gen_range(lo..hi) } else { lo };
            if cfg.randomized {
                0.5
            } else {
                cfg.propensities.map_or(p, |f| f[k])
            }
        })
        .collect();

    let mut subpop = Vec::with_capacity(n);
    for (k, &size) in sizes.iter().enumerate() {
        subpop.extend(std::iter::repeat(k).take(size));
    }

    let mut x = Array2::zeros((n, 4));
    let mut y = Vec::with_capacity(n);
    let mut y_plus = Vec::with_capacity(n);
    let mut y_minus = Vec::with_capacity(n);
    let mut ite = Vec::with_capacity(n);
    let mut effects = Array2::zeros((n, 4));
    for (i, &k) in subpop.iter().enumerate() {
        let treated = assign_rng.gen_bool(propensity[k]);
        let effect = effect_means[k] + cfg.effect_sd * effect_rng.sample::<f64, _>(StandardNormal);
        let base = cfg.intercepts[k] + cfg.noise_sd * base_rng.sample::<f64, _>(StandardNormal);
        x[[i, k]] = 1.0;
        x[[i, 3]] = if treated { 1.0 } else { 0.0 };
        effects[[i, k]] = cfg.intercepts[k];
        effects[[i, 3]] = effect;
        y_minus.push(base);
        y_plus.push(base + effect);
        ite.push(effect);
        y.push(if treated { base + effect } else { base });
    }

    let mut columns: Vec<Column> = SUBPOP_NAMES
        .iter()
        .map(|s| Column::new(format!("type_{s}"), ColumnKind::Binary))
        .collect();
    columns.push(Column::new(TREAT, ColumnKind::Binary));
    // tiny samples may miss a level of a binary column
    let dataset = match Dataset::new(columns.clone(), x.clone(), Array1::from(y.clone()), OUTCOME, None) {
        Ok(d) => d,
        Err(_) => {
            let names = columns.into_iter().map(|c| c.name).collect();
            Dataset::with_inferred_kinds(names, x, Array1::from(y), OUTCOME, None)?
        }
    };
    Ok(SimulatedPopulation {
        dataset,
        treatment: TREAT.to_string(),
        subpop,
        subpop_names: SUBPOP_NAMES.iter().map(|s| s.to_string()).collect(),
        propensity,
        ite_true: ite,
        y_plus,
        y_minus,
        effect_vectors: Some(effects),
    })
}

/// Homogeneous effects: every subpopulation draws effects from N(0.5, 0.5²).
pub fn simulate_basic(cfg: &DgpConfig) -> Result<SimulatedPopulation> {
    three_group(cfg, [0.5, 0.5, 0.5])
}

/// Subpopulation b draws effects around 1.0, c around 0, a around 0.5.
pub fn simulate_heterogeneous(cfg: &DgpConfig) -> Result<SimulatedPopulation> {
    three_group(cfg, [0.5, 1.0, 0.0])
}

/// Heterogeneous design plus `T` consequence columns `u_t` whose expected
/// correlation with the outcome is `1 - 1/t`.
pub fn simulate_endogenous(cfg: &DgpConfig) -> Result<SimulatedPopulation> {
    cfg.validate()?;
    let base = simulate_heterogeneous(cfg)?;
    let d = &base.dataset;
    let n = d.n();
    let y = d.y();
    let mean = y.mean().unwrap_or(0.0);
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    let z: Vec<f64> = y.iter().map(|v| if sd > 0.0 { (v - mean) / sd } else { 0.0 }).collect();

    let mut rng = stream(cfg.seed, STREAM_CONSEQUENCE);
    let m0 = d.m();
    let mut x = Array2::zeros((n, m0 + cfg.t));
    x.slice_mut(ndarray::s![.., ..m0]).assign(d.x());
    let mut columns = d.columns().to_vec();
    for t in 1..=cfg.t {
        let rho = 1.0 - 1.0 / t as f64;
        let tail = (1.0 - rho * rho).sqrt();
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            x[[i, m0 + t - 1]] = rho * z[i] + tail * e;
        }
        columns.push(Column::new(format!("u{t}"), ColumnKind::Continuous));
    }
    let dataset = Dataset::new(columns, x, y.clone(), OUTCOME, None)?;
    let effect_vectors = base.effect_vectors.map(|f| {
        let mut out = Array2::zeros((n, m0 + cfg.t));
        out.slice_mut(ndarray::s![.., ..m0]).assign(&f);
        out
    });
    Ok(SimulatedPopulation {
        dataset,
        effect_vectors,
        ..base
    })
}

/// Union of the endpoints of `gamma` edges sampled without replacement from
/// the 10-cube. Each factor adds one unit to the outcome when present.
pub fn simulate_factorial(cfg: &DgpConfig) -> Result<SimulatedPopulation> {
    cfg.validate()?;
    let mut edge_rng = stream(cfg.seed, STREAM_EDGES);
    let mut noise_rng = stream(cfg.seed, STREAM_CUBE_NOISE);
    let mut present = vec![false; 1 << CUBE_DIM];
    for e in sample(&mut edge_rng, CUBE_EDGES, cfg.gamma).into_iter() {
        // edge e flips factor e / 512 of the 9-bit remainder
        let a = e >> (CUBE_DIM - 1);
        let rest = e & ((1 << (CUBE_DIM - 1)) - 1);
        let low_bits = rest & ((1 << a) - 1);
        let high_bits = (rest >> a) << (a + 1);
        let v = high_bits | low_bits;
        present[v] = true;
        present[v | (1 << a)] = true;
    }
    let vertices: Vec<usize> = (0..present.len()).filter(|&v| present[v]).collect();
    let n = vertices.len();
    let noise = Normal::new(0.0, cfg.noise_sd.max(0.0)).map_err(|e| SfeError::InvalidConfig(e.to_string()))?;
    let mut x = Array2::zeros((n, CUBE_DIM));
    let mut y = Vec::with_capacity(n);
    let mut y_plus = Vec::with_capacity(n);
    let mut y_minus = Vec::with_capacity(n);
    for (i, &v) in vertices.iter().enumerate() {
        let mut level = 0.0;
        for a in 0..CUBE_DIM {
            if v & (1 << a) != 0 {
                x[[i, a]] = 1.0;
                level += 1.0;
            }
        }
        let eps = if cfg.noise_sd > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
        let obs = level + eps;
        let on = x[[i, 0]] > 0.0;
        y.push(obs);
        y_plus.push(if on { obs } else { obs + 1.0 });
        y_minus.push(if on { obs - 1.0 } else { obs });
    }
    let names: Vec<String> = (0..CUBE_DIM).map(|a| format!("f{a}")).collect();
    let dataset = Dataset::with_inferred_kinds(names, x, Array1::from(y), OUTCOME, None)?;
    Ok(SimulatedPopulation {
        dataset,
        treatment: "f0".to_string(),
        subpop: vec![0; n],
        subpop_names: vec!["all".to_string()],
        propensity: vec![0.5],
        ite_true: vec![1.0; n],
        y_plus,
        y_minus,
        effect_vectors: Some(Array2::ones((n, CUBE_DIM))),
    })
}

/// Mean true individual effect over `mask` (everyone when `None`).
pub fn oracle_ate(pop: &SimulatedPopulation, mask: Option<&[usize]>) -> Result<f64> {
    let values: Vec<f64> = match mask {
        Some(idx) => idx.iter().map(|&i| pop.ite_true[i]).collect(),
        None => pop.ite_true.clone(),
    };
    if values.is_empty() {
        return Err(SfeError::DegenerateSplit("empty mask".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Heterogeneity bias and variance of the pairwise effect predictor for the
/// pair `(i, j)`.
///
/// `heter = ¼ |f_i − f_j|² cos²θ − y_ij` with θ the angle between
/// `f_i − f_j` and `x_i − x_j`; `var = eps² / |x_i − x_j|²`.
pub fn bias_variance(
    f_i: &[f64],
    f_j: &[f64],
    x_i: &[f64],
    x_j: &[f64],
    y_ij: f64,
    eps: f64,
) -> Result<(f64, f64)> {
    if f_i.len() != f_j.len() || x_i.len() != x_j.len() || f_i.len() != x_i.len() {
        return Err(SfeError::DimensionMismatch {
            expected: f_i.len(),
            found: x_i.len(),
        });
    }
    let df: Vec<f64> = f_i.iter().zip(f_j).map(|(a, b)| a - b).collect();
    let dx: Vec<f64> = x_i.iter().zip(x_j).map(|(a, b)| a - b).collect();
    let dx2: f64 = dx.iter().map(|v| v * v).sum();
    if dx2 == 0.0 {
        return Err(SfeError::CoincidentPositions);
    }
    let df2: f64 = df.iter().map(|v| v * v).sum();
    let cos2 = if df2 == 0.0 {
        0.0
    } else {
        let inner: f64 = df.iter().zip(&dx).map(|(a, b)| a * b).sum();
        inner * inner / (df2 * dx2)
    };
    Ok((0.25 * df2 * cos2 - y_ij, eps * eps / dx2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_sizes_and_consistency() {
        let pop = simulate_basic(&DgpConfig::new(DgpKind::Basic, 3)).unwrap();
        assert_eq!(pop.subpop_sizes(), vec![600, 300, 100]);
        let treated = pop.treated();
        for i in 0..pop.ite_true.len() {
            assert!((pop.ite_true[i] - (pop.y_plus[i] - pop.y_minus[i])).abs() < 1e-12);
            let obs = if treated[i] { pop.y_plus[i] } else { pop.y_minus[i] };
            assert_eq!(pop.dataset.y()[i], obs);
        }
        for p in &pop.propensity {
            assert!((0.2..0.5).contains(p));
        }
    }

    #[test]
    fn scaled_sizes() {
        let mut cfg = DgpConfig::new(DgpKind::Basic, 1);
        cfg.n = 50;
        assert_eq!(simulate(&cfg).unwrap().subpop_sizes(), vec![30, 15, 5]);
        cfg.n = 9;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_population() {
        let cfg = DgpConfig::new(DgpKind::Heterogeneous, 11);
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
        assert_ne!(simulate(&cfg).unwrap(), simulate(&cfg.replication(1)).unwrap());
    }

    #[test]
    fn heterogeneous_subpop_means() {
        let mut cfg = DgpConfig::new(DgpKind::Heterogeneous, 5);
        cfg.n = 20_000;
        let pop = simulate(&cfg).unwrap();
        let b = oracle_ate(&pop, Some(&pop.members("b"))).unwrap();
        let c = oracle_ate(&pop, Some(&pop.members("c"))).unwrap();
        // 6000 and 2000 draws with sd 0.5: 5 standard errors
        assert!((b - 1.0).abs() < 5.0 * 0.5 / 6000f64.sqrt(), "{b}");
        assert!(c.abs() < 5.0 * 0.5 / 2000f64.sqrt(), "{c}");
        let all = oracle_ate(&pop, None).unwrap();
        assert!((all - 0.6).abs() < 5.0 * 0.5 / 20000f64.sqrt() + 0.01, "{all}");
    }

    #[test]
    fn endogenous_strips_back_to_heterogeneous() {
        let cfg = DgpConfig::new(DgpKind::Endogenous, 8);
        let endo = simulate(&cfg).unwrap();
        let het = simulate_heterogeneous(&DgpConfig { kind: DgpKind::Heterogeneous, ..cfg.clone() }).unwrap();
        let stripped = endo.dataset.select_columns(&["type_a", "type_b", "type_c", "treat"]).unwrap();
        assert_eq!(stripped, het.dataset);
        assert_eq!(endo.ite_true, het.ite_true);
        assert_eq!(endo.dataset.m(), 14);
    }

    #[test]
    fn factorial_edges() {
        let mut cfg = DgpConfig::new(DgpKind::Factorial, 2);
        cfg.gamma = CUBE_EDGES;
        assert_eq!(simulate(&cfg).unwrap().dataset.n(), 1024);
        cfg.gamma = 1;
        let pop = simulate(&cfg).unwrap();
        assert_eq!(pop.dataset.n(), 2);
        let x = pop.dataset.x();
        let diff: f64 = (0..CUBE_DIM).map(|a| (x[[0, a]] - x[[1, a]]).abs()).sum();
        assert_eq!(diff, 1.0);
        cfg.gamma = 0;
        assert!(simulate(&cfg).is_err());
        cfg.gamma = CUBE_EDGES + 1;
        assert!(simulate(&cfg).is_err());
    }

    #[test]
    fn noiseless_edges_differ_by_one() {
        let mut cfg = DgpConfig::new(DgpKind::Factorial, 4);
        cfg.noise_sd = 0.0;
        cfg.gamma = 300;
        let pop = simulate(&cfg).unwrap();
        let x = pop.dataset.x();
        let y = pop.dataset.y();
        let n = pop.dataset.n();
        let mut edges = 0;
        for i in 0..n {
            for j in 0..n {
                let hamming: f64 = (0..CUBE_DIM).map(|a| (x[[i, a]] - x[[j, a]]).abs()).sum();
                if hamming == 1.0 {
                    edges += 1;
                    assert_eq!((y[i] - y[j]).abs(), 1.0);
                }
            }
        }
        assert!(edges >= 2 * 300);
    }

    #[test]
    fn bias_variance_examples() {
        let (h, _) = bias_variance(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 0.0], &[0.0, 0.0], 0.0, 0.3).unwrap();
        assert_eq!(h, 0.0);
        let (_, v) = bias_variance(&[1.0, 2.0], &[0.0, 2.0], &[1.0, 0.0], &[0.0, 1.0], 0.2, 0.0).unwrap();
        assert_eq!(v, 0.0);
        let (h, _) = bias_variance(&[2.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 0.0], 1.0, 0.0).unwrap();
        assert!(h.abs() < 1e-15);
        assert!(matches!(
            bias_variance(&[1.0], &[0.0], &[0.5], &[0.5], 0.0, 1.0),
            Err(SfeError::CoincidentPositions)
        ));
    }

    #[test]
    fn fixed_propensities_override_draws() {
        let mut cfg = DgpConfig::new(DgpKind::Heterogeneous, 9);
        let drawn = simulate(&cfg).unwrap();
        cfg.propensities = Some([0.1, 0.5, 0.9]);
        let fixed = simulate(&cfg).unwrap();
        assert_eq!(fixed.propensity, vec![0.1, 0.5, 0.9]);
        // other families keep their streams
        assert_eq!(fixed.ite_true, drawn.ite_true);
        cfg.propensities = Some([0.1, 1.0, 0.5]);
        assert!(matches!(simulate(&cfg), Err(SfeError::InvalidConfig(_))));
    }
}
