//! Monte Carlo comparison of SFE against the baseline estimators on
//! simulated populations with known counterfactuals.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    ate_diff_means, ate_mahalanobis, ate_ols, ate_ps, fit_propensity, EstimateReport, PsMode,
};
use crate::data::{unity_normalize, NormalizedData};
use crate::effects::{ate, EffectOptions};
use crate::error::{Result, SfeError};
use crate::optimizer::{fit, EffectSpace, FitConfig};
use crate::simulation::{oracle_ate, simulate, DgpConfig, SimulatedPopulation};

/// Version of the benchmark CSV layout, bumped on any column change.
pub const SCHEMA_VERSION: u32 = 1;

/// Column order of the benchmark CSV.
pub const CSV_COLUMNS: [&str; 8] = [
    "method",
    "replication",
    "estimate",
    "oracle",
    "bias",
    "squared_error",
    "runtime_ms",
    "iterations",
];

/// Iteration budget for SFE inside the benchmark.
pub const DEFAULT_SFE_ITERATIONS: usize = 2000;
pub const DEFAULT_REPS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sfe,
    Diff,
    Ols,
    PsMatch,
    PsIptw,
    /// Mahalanobis matching on 1 to 4 neighbours.
    Mahab(usize),
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Sfe,
        Method::Diff,
        Method::Ols,
        Method::PsMatch,
        Method::PsIptw,
        Method::Mahab(1),
        Method::Mahab(2),
        Method::Mahab(3),
        Method::Mahab(4),
    ];

    /// Parses a comma-separated list such as `sfe,diff,mahab1`.
    pub fn parse_list(s: &str) -> Result<Vec<Method>> {
        let mut out: Vec<Method> = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let m: Method = part.parse()?;
            if !out.contains(&m) {
                out.push(m);
            }
        }
        if out.is_empty() {
            return Err(SfeError::UnknownMethod(s.to_string()));
        }
        Ok(out)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Sfe => f.write_str("sfe"),
            Method::Diff => f.write_str("diff"),
            Method::Ols => f.write_str("ols"),
            Method::PsMatch => f.write_str("ps-match"),
            Method::PsIptw => f.write_str("ps-iptw"),
            Method::Mahab(k) => write!(f, "mahab{k}"),
        }
    }
}

impl FromStr for Method {
    type Err = SfeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sfe" => Ok(Method::Sfe),
            "diff" => Ok(Method::Diff),
            "ols" => Ok(Method::Ols),
            "ps-match" => Ok(Method::PsMatch),
            "ps-iptw" => Ok(Method::PsIptw),
            "mahab1" => Ok(Method::Mahab(1)),
            "mahab2" => Ok(Method::Mahab(2)),
            "mahab3" => Ok(Method::Mahab(3)),
            "mahab4" => Ok(Method::Mahab(4)),
            other => Err(SfeError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    /// Base design; replication `r` uses seed `dgp.seed + r`.
    pub dgp: DgpConfig,
    pub reps: usize,
    pub methods: Vec<Method>,
    /// SFE fit settings; the seed is replaced per replication.
    pub fit: FitConfig,
    pub effect: EffectOptions,
}

impl BenchmarkConfig {
    pub fn new(dgp: DgpConfig) -> Self {
        Self {
            dgp,
            reps: DEFAULT_REPS,
            methods: Method::ALL.to_vec(),
            fit: FitConfig {
                iterations: DEFAULT_SFE_ITERATIONS,
                ..FitConfig::default()
            },
            effect: EffectOptions::default(),
        }
    }
}

/// Everything produced by one replication, for callers that need more
/// than the estimates.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub population: SimulatedPopulation,
    pub normalized: NormalizedData,
    /// Present when SFE was among the methods.
    pub space: Option<EffectSpace>,
    pub reports: Vec<EstimateReport>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, u64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_millis() as u64))
}

/// Runs every configured method on replication `r`.
pub fn run_replication(cfg: &BenchmarkConfig, r: usize) -> Result<ReplicationOutcome> {
    let dgp = cfg.dgp.replication(r as u64);
    let pop = simulate(&dgp)?;
    let nd = unity_normalize(&pop.dataset)?;
    let oracle = oracle_ate(&pop, None)?;
    let treat = pop.treatment.as_str();
    let d = &pop.dataset;
    let names = d.column_names();
    let covariates: Vec<&str> = names.iter().map(String::as_str).filter(|c| *c != treat).collect();

    let mut reports = Vec::with_capacity(cfg.methods.len());
    let mut space = None;
    let mut scores: Option<(Vec<f64>, u64)> = None;
    for &method in &cfg.methods {
        let (estimate, ms) = match method {
            Method::Sfe => {
                let fit_cfg = FitConfig {
                    seed: dgp.seed,
                    ..cfg.fit.clone()
                };
                let ((est, es), ms) = timed(|| {
                    let es = fit(&nd, &fit_cfg)?;
                    let est = ate(&es, &nd, treat, None, cfg.effect)?.ate_raw;
                    Ok((est, es))
                })?;
                space = Some(es);
                (est, ms)
            }
            Method::Diff => timed(|| ate_diff_means(d, treat))?,
            Method::Ols => timed(|| ate_ols(d, treat, &covariates))?,
            Method::PsMatch | Method::PsIptw => {
                if scores.is_none() {
                    scores = Some(timed(|| fit_propensity(d, treat, &covariates))?);
                }
                let (s, fit_ms) = scores.as_ref().expect("scores fitted above");
                let mode = if method == Method::PsMatch {
                    PsMode::Match
                } else {
                    PsMode::Iptw
                };
                let (est, ms) = timed(|| ate_ps(d, treat, s, mode))?;
                (est, ms + fit_ms)
            }
            Method::Mahab(k) => timed(|| ate_mahalanobis(d, treat, &covariates, k))?,
        };
        let mut report = EstimateReport::new(method.to_string(), r, estimate, oracle, ms);
        if method == Method::Sfe {
            report.iterations = Some(cfg.fit.iterations);
        }
        reports.push(report);
    }
    Ok(ReplicationOutcome {
        replication: r,
        population: pop,
        normalized: nd,
        space,
        reports,
    })
}

/// Runs all replications, in parallel, and returns the reports in
/// replication order, methods in configured order within each.
pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<EstimateReport>> {
    if cfg.reps == 0 {
        return Err(SfeError::InvalidConfig("reps must be at least 1".into()));
    }
    let per_rep: Vec<Vec<EstimateReport>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replication(cfg, r).map(|o| o.reports))
        .collect::<Result<_>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

pub fn write_reports_csv<W: io::Write>(w: W, reports: &[EstimateReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in reports {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_reports_csv<R: io::Read>(r: R) -> Result<Vec<EstimateReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(SfeError::InvalidDataset(format!(
            "benchmark header {header:?} does not match schema version {SCHEMA_VERSION}"
        )));
    }
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Serializable echo of a benchmark configuration, for run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkEcho {
    pub schema_version: u32,
    pub dgp: String,
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
    pub methods: Vec<String>,
    pub sfe: FitConfig,
    pub effect: EffectOptions,
}

impl From<&BenchmarkConfig> for BenchmarkEcho {
    fn from(c: &BenchmarkConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dgp: c.dgp.kind.to_string(),
            n: c.dgp.n,
            seed: c.dgp.seed,
            reps: c.reps,
            methods: c.methods.iter().map(Method::to_string).collect(),
            sfe: c.fit.clone(),
            effect: c.effect,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::DgpKind;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("mahab5".parse::<Method>(), Err(SfeError::UnknownMethod(_))));
        assert_eq!(Method::parse_list("diff, ols,diff").unwrap(), vec![Method::Diff, Method::Ols]);
    }

    #[test]
    fn row_count_and_csv_round_trip() {
        let mut dgp = DgpConfig::new(DgpKind::Basic, 11);
        dgp.n = 120;
        let mut cfg = BenchmarkConfig::new(dgp);
        cfg.reps = 3;
        cfg.methods = vec![Method::Sfe, Method::Diff, Method::PsIptw];
        cfg.fit.iterations = 20;
        let reports = run_benchmark(&cfg).unwrap();
        assert_eq!(reports.len(), 9);
        assert_eq!(reports[0].method, "sfe");
        assert_eq!(reports[0].iterations, Some(20));
        assert_eq!(reports[1].iterations, None);
        assert!(reports.windows(2).all(|w| w[0].replication <= w[1].replication));
        let mut buf = Vec::new();
        write_reports_csv(&mut buf, &reports).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&CSV_COLUMNS.join(",")));
        assert_eq!(read_reports_csv(buf.as_slice()).unwrap(), reports);
    }
}
