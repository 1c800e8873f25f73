use std::time::Instant;

use sfe::effects::{mean_ite, EffectMode, EffectOptions};
use sfe::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind: DgpKind = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(DgpKind::Basic);
    let iters: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let reps: u64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5);
    let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1000);
    for r in 0..reps {
        let mut cfg = DgpConfig::new(kind, 100 + r);
        cfg.n = n;
        let pop = simulate(&cfg).unwrap();
        let nd = unity_normalize(&pop.dataset).unwrap();
        let t = Instant::now();
        let es = fit(&nd, &FitConfig { iterations: iters, ..Default::default() }).unwrap();
        let el = t.elapsed();
        let oracle = oracle_ate(&pop, None).unwrap();
        let mut line = format!("rep {r} oracle {oracle:.3} range {:.3} obj {:.1}->{:.1} t={:?}", nd.y_max - nd.y_min, es.initial_objective, es.final_objective(), el);
        for mode in [EffectMode::Sqrt, EffectMode::Linear] {
            let o = EffectOptions { mode, threshold: 0.0 };
            let a = ate(&es, &nd, "treat", None, o).unwrap();
            line += &format!(" | {mode:?} gap {:.4} ate {:.3}", a.gap, a.ate_raw);
            for s in ["a", "b", "c"] {
                let mem = pop.members(s);
                let v = mean_ite(&es, &nd, &mem, "treat", o).unwrap();
                line += &format!(" {s}:{v:.2}");
            }
        }
        println!("{line}");
    }
}
