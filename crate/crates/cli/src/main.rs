//! `sfe`: fit effect spaces, query effects, simulate designs and run the
//! estimator benchmark.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or contract
//! error.

mod manifest;
mod mask;

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use sfe::baselines::summarize;
use sfe::benchmark::{run_benchmark, write_reports_csv, BenchmarkConfig, BenchmarkEcho, Method};
use sfe::effects::{mean_ite, DEFAULT_MODE};
use sfe::persist::meta_path;
use sfe::simulation::CUBE_EDGES;
use sfe::{
    ate, fit, ite, load_space, oracle_ate, save_space, select_variables, simulate, unity_normalize, Dataset,
    DgpConfig, DgpKind, EffectMode, EffectOptions, EffectSpace, FitConfig, NormalizedData, SfeError,
};

use manifest::{manifest_path, RunManifest};
use mask::Mask;

/// Full-scale replication count for `benchmark --full`.
const FULL_REPS: usize = 1000;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }
}

impl From<SfeError> for CliError {
    fn from(e: SfeError) -> Self {
        use SfeError::*;
        let code = match &e {
            EmptyDataset
            | InvalidDataset(_)
            | DegenerateOutcome
            | DimensionMismatch { .. }
            | IndexOutOfRange { .. }
            | InvalidConfig(_)
            | DegenerateSplit(_)
            | UnknownFactor(_)
            | Parse { .. }
            | MalformedSpace(_)
            | VersionMismatch { .. }
            | UnknownMethod(_)
            | Csv(_) => 2,
            Diverged { .. }
            | UndefinedAngle(_)
            | CoincidentPositions
            | RankDeficient(_)
            | NonConvergence { .. }
            | Io(_)
            | Json(_) => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self { code: 1, message: e.to_string() }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "sfe", version, about = "Stochastic factorial estimation of causal effects")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit an effect space to a CSV dataset.
    Fit(FitArgs),
    /// Average effect of one factor.
    Ate(QueryArgs),
    /// Individual effects of one factor.
    Ite(QueryArgs),
    /// Greedy selection of effective, non-redundant factors.
    Select(SelectArgs),
    /// Write simulated populations and their oracle effects.
    Simulate(SimulateArgs),
    /// Compare SFE with the baseline estimators on simulated data.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outcome: String,
    /// Value marking a missing covariate.
    #[arg(long)]
    missing_code: Option<f64>,
    #[arg(long, default_value_t = 0.025)]
    eta: f64,
    #[arg(long, default_value_t = 10_000)]
    iters: usize,
    /// Minibatch size; the whole sample when omitted.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, action = ArgAction::Set, default_value_t = true)]
    deterministic: bool,
    /// Early-stopping threshold on the windowed relative objective change.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct SpaceArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Outcome column; inferred as the one CSV column absent from the space.
    #[arg(long)]
    outcome: Option<String>,
    #[arg(long)]
    missing_code: Option<f64>,
    /// Subpopulation, e.g. `married=1` or `age>=30&black=0`.
    #[arg(long)]
    mask: Option<String>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EffectMode>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    space: SpaceArgs,
    #[arg(long)]
    factor: String,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    space: SpaceArgs,
    /// Number of factors; all columns when omitted.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(long, value_parser = parse_dgp)]
    dgp: DgpKind,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Consequence columns of the endogenous design.
    #[arg(long, default_value_t = 10)]
    t: usize,
    /// Sampled cube edges of the factorial design.
    #[arg(long, default_value_t = CUBE_EDGES)]
    gamma: usize,
    /// Per-subpopulation propensities are drawn from LO,HI.
    #[arg(long, value_parser = parse_pair, default_value = "0.2,0.5")]
    propensity_range: (f64, f64),
    /// Fixed propensities A,B,C of the three subpopulations.
    #[arg(long, value_parser = parse_triple, conflicts_with = "randomized")]
    propensities: Option<[f64; 3]>,
    /// Assign treatment with probability 1/2 to everyone.
    #[arg(long)]
    randomized: bool,
}

impl DesignArgs {
    fn config(&self) -> DgpConfig {
        let mut c = DgpConfig::new(self.dgp, self.seed);
        c.n = self.n;
        c.t = self.t;
        c.gamma = self.gamma;
        c.randomized = self.randomized;
        c.propensity_range = self.propensity_range;
        c.propensities = self.propensities;
        c
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    design: DesignArgs,
    #[arg(long, default_value_t = sfe::benchmark::DEFAULT_REPS, conflicts_with = "full")]
    reps: usize,
    /// Run the full-scale study of 1000 replications.
    #[arg(long)]
    full: bool,
    /// Comma-separated subset of sfe,diff,ols,ps-match,ps-iptw,mahab1..mahab4.
    #[arg(long, default_value = "sfe,diff,ols,ps-match,ps-iptw,mahab1,mahab2,mahab3,mahab4")]
    methods: String,
    /// SFE iteration budget per replication.
    #[arg(long, default_value_t = sfe::benchmark::DEFAULT_SFE_ITERATIONS)]
    sfe_iters: usize,
    #[arg(long, default_value_t = 0.025)]
    eta: f64,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<EffectMode>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<EffectMode, String> {
    match s {
        "sqrt" => Ok(EffectMode::Sqrt),
        "linear" => Ok(EffectMode::Linear),
        other => Err(format!("unknown mode `{other}` (expected sqrt or linear)")),
    }
}

fn parse_floats(s: &str, k: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    if v.len() != k {
        return Err(format!("expected {k} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let v = parse_floats(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s, 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_dgp(s: &str) -> Result<DgpKind, String> {
    s.parse().map_err(|e: SfeError| e.to_string())
}

fn mode_name(m: EffectMode) -> &'static str {
    match m {
        EffectMode::Sqrt => "sqrt",
        EffectMode::Linear => "linear",
    }
}

/// Drops trailing separators so sibling paths such as the manifest land
/// next to a directory rather than inside it.
fn clean(p: &Path) -> PathBuf {
    p.components().collect()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn read_dataset(path: &Path, outcome: &str, missing_code: Option<f64>) -> CliResult<Dataset> {
    match Dataset::from_csv_path(path, outcome, missing_code) {
        Err(SfeError::UnknownFactor(c)) if c == outcome => Err(CliError::usage(format!(
            "outcome column `{outcome}` not found in {}",
            path.display()
        ))),
        other => Ok(other?),
    }
}

fn cmd_fit(a: FitArgs) -> CliResult<()> {
    let cfg = FitConfig {
        eta: a.eta,
        iterations: a.iters,
        batch_size: a.batch,
        seed: a.seed,
        deterministic: a.deterministic,
        tolerance: a.tolerance,
    };
    let mut man = RunManifest::new(
        "fit",
        json!({ "input": a.input, "outcome": a.outcome, "missing_code": a.missing_code, "fit": cfg }),
        Some(a.seed),
    );
    man.add_input(&a.input)?;
    let d = read_dataset(&a.input, &a.outcome, a.missing_code)?;
    let nd = unity_normalize(&d)?;
    let es = match fit(&nd, &cfg) {
        Err(SfeError::Diverged { iteration, reason, trace }) => {
            let mut p = a.output.as_os_str().to_owned();
            p.push(".trace.json");
            let p = PathBuf::from(p);
            std::fs::write(&p, serde_json::to_string(&trace).expect("trace serializes"))?;
            return Err(CliError {
                code: 1,
                message: format!("diverged at iteration {iteration}: {reason}; objective trace written to {}", p.display()),
            });
        }
        other => other?,
    };
    save_space(&es, &a.output)?;
    let mp = manifest_path(&a.output);
    man.outputs = vec![a.output.display().to_string(), meta_path(&a.output).display().to_string()];
    man.finish();
    man.write(&mp)?;
    print_json(&json!({
        "output": a.output,
        "manifest": mp,
        "final_objective": es.final_objective(),
        "initial_objective": es.initial_objective,
        "iterations": es.iterations_run(),
    }));
    Ok(())
}

struct Loaded {
    es: EffectSpace,
    d: Dataset,
    nd: NormalizedData,
    rows: Option<Vec<usize>>,
    opts: EffectOptions,
    man: RunManifest,
}

fn infer_outcome(path: &Path, es: &EffectSpace) -> CliResult<String> {
    let extra: Vec<String> = csv_header(path)?
        .into_iter().filter(|h| !es.column_names.contains(h)).collect();
    match extra.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(CliError::usage(format!(
            "cannot infer the outcome column (candidates {extra:?}); pass --outcome"
        ))),
    }
}

fn csv_header(path: &Path) -> CliResult<Vec<String>> {
    let mut first = String::new();
    std::io::BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end().split(',').map(|h| h.trim().trim_matches('"').to_string()).collect())
}

fn load(command: &'static str, a: &SpaceArgs, extra: serde_json::Value) -> CliResult<Loaded> {
    let es = load_space(&a.space)?;
    let outcome = match &a.outcome {
        Some(o) => o.clone(),
        None => infer_outcome(&a.input, &es)?,
    };
    let mode = a.mode.unwrap_or(DEFAULT_MODE);
    let opts = EffectOptions { mode, ..EffectOptions::default() };
    let mut man = RunManifest::new(
        command,
        json!({
            "space": a.space, "input": a.input, "outcome": outcome, "missing_code": a.missing_code,
            "mask": a.mask, "mode": mode_name(mode), "query": extra,
        }),
        Some(es.config.seed),
    );
    man.add_input(&a.space)?;
    man.add_input(&meta_path(&a.space))?;
    man.add_input(&a.input)?;
    let d = read_dataset(&a.input, &outcome, a.missing_code)?;
    let nd = unity_normalize(&d)?;
    if nd.column_names != es.column_names {
        return Err(CliError::usage(format!(
            "space columns {:?} do not match dataset columns {:?}",
            es.column_names, nd.column_names
        )));
    }
    es.check_compatible(&nd)?;
    if nd.scaling() != es.scaling {
        return Err(CliError::usage("dataset scaling differs from the one the space was fitted on"));
    }
    let rows = match &a.mask {
        Some(expr) => Some(expr.parse::<Mask>()?.select(&d)?),
        None => None,
    };
    Ok(Loaded { es, d, nd, rows, opts, man })
}

fn finish_query(mut l: Loaded, mut body: serde_json::Value) {
    l.man.finish();
    body["manifest"] = serde_json::to_value(&l.man).expect("manifest serializes");
    print_json(&body);
}

fn cmd_ate(a: QueryArgs) -> CliResult<()> {
    let l = load("ate", &a.space, json!({ "factor": a.factor }))?;
    let r = ate(&l.es, &l.nd, &a.factor, l.rows.as_deref(), l.opts)?;
    let body = json!({
        "factor": r.factor,
        "ate": r.ate_raw,
        "ate_normalized": r.ate_normalized,
        "gap": r.gap,
        "n_treated": r.n_treated,
        "n_control": r.n_control,
        "mode": mode_name(r.mode),
        "mask": a.space.mask.clone().unwrap_or_else(|| "all".into()),
    });
    finish_query(l, body);
    Ok(())
}

fn cmd_ite(a: QueryArgs) -> CliResult<()> {
    let l = load("ite", &a.space, json!({ "factor": a.factor }))?;
    let rows: Vec<usize> = l.rows.clone().unwrap_or_else(|| (0..l.d.n()).collect());
    if rows.is_empty() {
        return Err(SfeError::DegenerateSplit("mask matches no individuals".into()).into());
    }
    let col = l.nd.column_index(&a.factor)?;
    let mut records = Vec::with_capacity(rows.len());
    for &i in &rows {
        // the mask picks who is reported; the comparison group is everyone
        let v = ite(&l.es, &l.nd, i, &a.factor, None, l.opts)?;
        records.push(json!({ "individual": i, "treated": l.nd.xn[[i, col]] > l.opts.threshold, "ite": v }));
    }
    let mean = mean_ite(&l.es, &l.nd, &rows, &a.factor, l.opts)?;
    let body = json!({
        "factor": a.factor,
        "mode": mode_name(l.opts.mode),
        "mask": a.space.mask.clone().unwrap_or_else(|| "all".into()),
        "mean_ite": mean,
        "individuals": records,
    });
    finish_query(l, body);
    Ok(())
}

fn cmd_select(a: SelectArgs) -> CliResult<()> {
    if a.space.mask.is_some() {
        return Err(CliError::usage("select does not take --mask"));
    }
    let l = load("select", &a.space, json!({ "k": a.k }))?;
    let k = a.k.unwrap_or(l.es.m());
    let chosen = select_variables(&l.es, &l.nd, k, l.opts)?;
    let ranked: Vec<serde_json::Value> = chosen
        .iter()
        .enumerate()
        .map(|(rank, f)| {
            let effect = ate(&l.es, &l.nd, f, None, l.opts).ok().map(|r| r.ate_raw);
            json!({ "rank": rank + 1, "factor": f, "ate": effect })
        })
        .collect();
    let body = json!({ "k": k, "mode": mode_name(l.opts.mode), "selected": ranked });
    finish_query(l, body);
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> CliResult<()> {
    if a.reps == 0 {
        return Err(CliError::usage("--reps must be at least 1"));
    }
    let base = a.design.config();
    let out = clean(&a.out);
    let mut man = RunManifest::new("simulate", json!({ "dgp": base, "reps": a.reps }), Some(base.seed));
    let pops = (0..a.reps)
        .into_par_iter()
        .map(|r| simulate(&base.replication(r as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    std::fs::create_dir_all(&out)?;
    let subpops = pops[0].subpop_names.clone();
    let mut oracle = csv_writer(&out.join("oracle.csv"))?;
    let mut header = vec!["replication".to_string(), "seed".to_string(), "oracle_ate".to_string()];
    header.extend(subpops.iter().map(|s| format!("oracle_{s}")));
    writeln!(oracle, "{}", header.join(","))?;
    for (r, pop) in pops.iter().enumerate() {
        let pop_path = out.join(format!("population_{r:04}.csv"));
        let mut w = csv_writer(&pop_path)?;
        pop.dataset.write_csv(&mut w)?;
        w.flush()?;
        let mut t = csv_writer(&out.join(format!("truth_{r:04}.csv")))?;
        writeln!(t, "id,subpop,propensity,ite_true,y_plus,y_minus")?;
        for i in 0..pop.dataset.n() {
            writeln!(
                t,
                "{i},{},{},{},{},{}",
                pop.subpop_names[pop.subpop[i]],
                pop.propensity[pop.subpop[i]],
                pop.ite_true[i],
                pop.y_plus[i],
                pop.y_minus[i]
            )?;
        }
        t.flush()?;
        let mut row = vec![r.to_string(), base.replication(r as u64).seed.to_string(), oracle_ate(pop, None)?.to_string()];
        for s in &subpops {
            let members = pop.members(s);
            row.push(if members.is_empty() { String::new() } else { oracle_ate(pop, Some(&members))?.to_string() });
        }
        writeln!(oracle, "{}", row.join(","))?;
    }
    oracle.flush()?;
    let mp = manifest_path(&out);
    man.outputs = vec![out.display().to_string()];
    man.finish();
    man.write(&mp)?;
    print_json(&json!({ "out": out, "manifest": mp, "replications": a.reps, "subpopulations": subpops }));
    Ok(())
}

fn csv_writer(p: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(p)?))
}

fn cmd_benchmark(a: BenchmarkArgs) -> CliResult<()> {
    let mut cfg = BenchmarkConfig::new(a.design.config());
    cfg.reps = if a.full { FULL_REPS } else { a.reps };
    cfg.methods = Method::parse_list(&a.methods)?;
    cfg.fit.iterations = a.sfe_iters;
    cfg.fit.eta = a.eta;
    cfg.effect.mode = a.mode.unwrap_or(DEFAULT_MODE);
    let echo = BenchmarkEcho::from(&cfg);
    let mut man = RunManifest::new(
        "benchmark",
        json!({ "benchmark": echo, "dgp": cfg.dgp }),
        Some(cfg.dgp.seed),
    );
    let reports = run_benchmark(&cfg)?;
    let mut w = csv_writer(&a.out)?;
    write_reports_csv(&mut w, &reports)?;
    w.flush()?;
    let mp = manifest_path(&a.out);
    man.outputs = vec![a.out.display().to_string()];
    man.finish();
    man.write(&mp)?;
    let summary: Vec<serde_json::Value> = summarize(&reports)
        .iter()
        .map(|s| {
            json!({
                "method": s.method, "replications": s.replications, "mean_estimate": s.mean_estimate,
                "mean_bias": s.mean_bias, "mse": s.mse, "variance": s.variance,
            })
        })
        .collect();
    print_json(&json!({ "out": a.out, "manifest": mp, "rows": reports.len(), "summary": summary }));
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("SFE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::usage(format!("SFE_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError { code: 1, message: e.to_string() })?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Ate(a) => cmd_ate(a),
        Command::Ite(a) => cmd_ite(a),
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
    }
}

fn main() -> ExitCode {
    // clap exits with code 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
