//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use cran_core::association::{fronthaul_cap, run_algorithm1, Selector};
use cran_core::channel::{generate_channels, generate_topology, GenConfig};
use cran_core::conic::{check_feasible, solve_max_min, MaxMinSolution, SolverTolerances};
use cran_core::harness::{run_sweep, ExperimentConfig, Scheme, SweepOptions, SweepTable};
use cran_core::model::{all_sinrs, norm_sqr, AssociationMap, ChannelState, NetworkConfig, SolveReport};
use cran_core::oracle::exhaustive_best;

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn desk() -> ExperimentConfig {
    ExperimentConfig::read(&configs_dir().join("desk.toml")).expect("desk profile parses")
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Every max-min result produced by the suite, for the bracketing check.
struct MaxMinCase {
    ch: ChannelState,
    assoc: AssociationMap,
    caps: Vec<f64>,
    sol: MaxMinSolution,
}

fn equal_sinr(cases: &mut Vec<MaxMinCase>) -> Outcome {
    let cfg = desk();
    let net = cfg.network(1e12).unwrap();
    let full = AssociationMap::full(cfg.n_rrh, cfg.n_users);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let (_, ch) = cfg.trial_instance(trial).unwrap();
        let sol = solve_max_min(&ch, &full, &net.power_cap_w, net.noise_power_w, &cfg.tolerances)
            .map_err(|e| format!("trial {trial}: {e}"))?;
        let s = all_sinrs(&ch, &sol.beamformers).unwrap();
        let (lo, hi) = s.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        let spread = (hi - lo) / hi;
        worst = worst.max(spread);
        check(spread <= 1e-3, || format!("trial {trial}: relative spread {spread:.3e}"))?;
        cases.push(MaxMinCase {
            ch,
            assoc: full.clone(),
            caps: net.power_cap_w.clone(),
            sol,
        });
    }
    Ok(format!("50 instances, worst relative SINR spread {worst:.2e}"))
}

fn combination_rule(traces: &[SolveReport]) -> Outcome {
    let mut rows = 0;
    for rep in traces {
        for r in &rep.iterations {
            check(r.gamma == r.gamma1.min(r.gamma2), || {
                format!("{} t={}: gamma {} vs min({}, {})", rep.scheme_label, r.t, r.gamma, r.gamma1, r.gamma2)
            })?;
            rows += 1;
        }
    }
    check(rows > 0, || "no traces collected".into())?;
    Ok(format!("{} traces, {rows} iterations, all exact", traces.len()))
}

fn convergence(traces: &mut Vec<SolveReport>) -> Outcome {
    let cfg = desk();
    let net = cfg.network(1e7).unwrap();
    let limit = cfg.n_rrh * cfg.n_users;
    let mut longest = 0;
    for trial in 0..50 {
        let (_, ch) = cfg.trial_instance(trial).unwrap();
        for sel in [Selector::RetainedSinr, Selector::InterferenceLeakage] {
            let rep = run_algorithm1(&ch, &net, &cfg.tolerances, sel).map_err(|e| format!("trial {trial}: {e}"))?;
            let it = &rep.iterations;
            check(it.len() <= limit, || format!("trial {trial}: {} iterations", it.len()))?;
            longest = longest.max(it.len());
            for w in it.windows(2) {
                check(w[1].gamma2 >= w[0].gamma2, || {
                    format!("trial {trial} t={}: gamma2 fell {} -> {}", w[1].t, w[0].gamma2, w[1].gamma2)
                })?;
                check(w[1].gamma1 <= w[0].gamma1 * (1.0 + 1e-3), || {
                    format!("trial {trial} t={}: gamma1 rose {} -> {}", w[1].t, w[0].gamma1, w[1].gamma1)
                })?;
            }
            traces.push(rep);
        }
    }
    Ok(format!("50 instances x 2 selectors, longest run {longest} of at most {limit} iterations"))
}

fn oracle_gap(traces: &mut Vec<SolveReport>) -> Outcome {
    let gen = GenConfig::default();
    let tol = SolverTolerances::default();
    let base = desk();
    let noise = base.noise_power_w().unwrap();
    let net = NetworkConfig {
        n_rrh: 2,
        n_users: 3,
        n_antennas: 2,
        bandwidth_hz: base.bandwidth_hz,
        power_cap_w: vec![1.0; 2],
        fronthaul_cap_bps: vec![1.5e7; 2],
        noise_power_w: noise,
    };
    let mut gaps = Vec::new();
    for seed in 0..30u64 {
        let topo = generate_topology(&gen, 2, 3, 1000 + seed);
        let ch = generate_channels(&topo, &gen, 2, noise, 2000 + seed).unwrap();
        let best = exhaustive_best(&ch, &net, &tol, true).map_err(|e| format!("seed {seed}: {e}"))?;
        let rep = run_algorithm1(&ch, &net, &tol, Selector::RetainedSinr).map_err(|e| format!("seed {seed}: {e}"))?;
        check(rep.final_gamma <= best.gamma * (1.0 + 1e-3), || {
            format!("seed {seed}: algorithm {} above optimum {}", rep.final_gamma, best.gamma)
        })?;
        gaps.push(1.0 - rep.final_gamma / best.gamma);
        traces.push(rep);
    }
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let worst = gaps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let optimal = gaps.iter().filter(|g| g.abs() <= 1e-3).count();
    Ok(format!(
        "30 instances, mean optimality gap {:.2}%, worst {:.2}%, optimal on {optimal}",
        100.0 * mean,
        100.0 * worst
    ))
}

fn means(table: &SweepTable, scheme: Scheme, sweep: &[f64]) -> Vec<f64> {
    sweep
        .iter()
        .map(|&t| table.mean(scheme, t).and_then(|r| r.gamma_linear).unwrap_or(f64::NAN))
        .collect()
}

fn sweep_shape() -> Outcome {
    let cfg = desk();
    check(cfg.trials >= 20, || "desk profile must run at least 20 trials".into())?;
    let table = run_sweep(&cfg, SweepOptions::default()).map_err(|e| e.to_string())?;
    let sweep = &cfg.fronthaul_sweep_bps;
    let last = sweep.len() - 1;
    let m = |s| means(&table, s, sweep);
    let (a1, b1, b2, b3) = (m(Scheme::Alg1), m(Scheme::Bench1), m(Scheme::Bench2), m(Scheme::Bench3));

    for (s, v) in [("alg1", &a1), ("bench1", &b1), ("bench2", &b2), ("bench3", &b3)] {
        for i in 1..v.len() {
            check(v[i] >= v[i - 1] * (1.0 - 1e-6), || {
                format!("(a) {s} mean drops from {} to {} at T={}", v[i - 1], v[i], sweep[i])
            })?;
        }
    }
    for (s, v) in [("bench1", &b1), ("bench2", &b2)] {
        check((v[last] - a1[last]).abs() <= 0.01 * a1[last], || {
            format!("(b) {s} {} vs alg1 {} at largest T", v[last], a1[last])
        })?;
    }
    for (s, v) in [("alg1", &a1), ("bench1", &b1), ("bench2", &b2)] {
        check(v[last] > b3[last], || format!("(b) {s} {} not above bench3 {}", v[last], b3[last]))?;
    }
    // Binding region: capacities where the fronthaul still costs alg1 over 1%.
    let binding: Vec<usize> = (0..sweep.len()).filter(|&i| a1[i] < 0.99 * a1[last]).collect();
    check(!binding.is_empty(), || "(c) sweep has no binding region".into())?;
    let avg = |v: &[f64]| binding.iter().map(|&i| v[i]).sum::<f64>() / binding.len() as f64;
    let (ma, mb1, mb2) = (avg(&a1), avg(&b1), avg(&b2));
    check(ma >= mb1 && ma >= mb2, || {
        format!("(c) binding-region means alg1 {ma:.4} bench1 {mb1:.4} bench2 {mb2:.4}")
    })?;
    Ok(format!(
        "{} trials; largest T: alg1 {:.4} bench3 {:.4}; binding region ({} points): alg1 {ma:.4} bench1 {mb1:.4} bench2 {mb2:.4}",
        cfg.trials,
        a1[last],
        b3[last],
        binding.len()
    ))
}

fn single_user(cases: &mut Vec<MaxMinCase>) -> Outcome {
    let gen = GenConfig::default();
    let tol = SolverTolerances::default();
    let noise = desk().noise_power_w().unwrap();
    let caps = [1.0, 0.5, 2.0];
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let topo = generate_topology(&gen, 3, 1, 300 + seed);
        let ch = generate_channels(&topo, &gen, 2, noise, 400 + seed).unwrap();
        let expected = (0..3)
            .map(|n| (caps[n] * norm_sqr(ch.h.link(0, n))).sqrt())
            .sum::<f64>()
            .powi(2)
            / noise;
        let assoc = AssociationMap::full(3, 1);
        let sol = solve_max_min(&ch, &assoc, &caps, noise, &tol).map_err(|e| e.to_string())?;
        let err = (sol.gamma - expected).abs() / expected;
        worst = worst.max(err);
        check(err <= 1e-3, || format!("seed {seed}: {} vs closed form {expected}", sol.gamma))?;
        cases.push(MaxMinCase {
            ch,
            assoc,
            caps: caps.to_vec(),
            sol,
        });
    }
    Ok(format!("20 draws, worst relative error {worst:.2e}"))
}

fn fronthaul_closed_form() -> Outcome {
    let sets = |omega: Vec<Vec<usize>>| {
        AssociationMap::from_sets(2, omega.into_iter().map(|s| s.into_iter().collect()).collect()).unwrap()
    };
    let cases = [
        (fronthaul_cap(&sets(vec![vec![0]]), &[1e7], 1e7), 1.0),
        (fronthaul_cap(&sets(vec![vec![0, 1]]), &[1e7], 1e7), 0.414213562373095),
        (fronthaul_cap(&sets(vec![vec![0], vec![0, 1]]), &[1e7, 1e7], 1e7), 0.414213562373095),
    ];
    for (i, (got, want)) in cases.iter().enumerate() {
        let digits = format!("{got:.12e}") == format!("{want:.12e}");
        check(digits, || format!("case {}: {got} vs {want}", i + 1))?;
    }
    Ok("1, 0.414213562373, 0.414213562373 reproduced to 12 significant digits".into())
}

fn bracketing(cases: &[MaxMinCase]) -> Outcome {
    let tol = SolverTolerances::default();
    let rel = tol.bisection_rel_tol;
    for (i, c) in cases.iter().enumerate() {
        let noise = c.ch.noise_power_w;
        let g = c.sol.gamma;
        let below = check_feasible(&c.ch, &c.assoc, g * (1.0 - 5.0 * rel), &c.caps, noise, &tol)
            .map_err(|e| format!("case {i}: {e}"))?;
        let above = check_feasible(&c.ch, &c.assoc, g * (1.0 + 5.0 * rel), &c.caps, noise, &tol)
            .map_err(|e| format!("case {i}: {e}"))?;
        check(below.is_feasible(), || format!("case {i}: {g} * (1 - 5 tol) infeasible"))?;
        check(!above.is_feasible(), || format!("case {i}: {g} * (1 + 5 tol) feasible"))?;
    }
    Ok(format!("{} max-min results bracketed", cases.len()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = configs_dir().join("desk.toml");
    let run = |name: &str, threads: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cran"))
            .args(["sweep", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads])
            .status()
            .map_err(|e| e.to_string())?;
        check(status.success(), || format!("sweep exited with {status}"))?;
        std::fs::read(&out).map_err(|e| e.to_string())
    };
    let a = run("a.csv", "1")?;
    let b = run("b.csv", "2")?;
    check(a == b, || "CSV files differ".into())?;
    Ok(format!("two sweeps (1 and 2 threads) wrote identical {} bytes", a.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    }
}

fn main() {
    let mut cases = Vec::new();
    let mut traces = Vec::new();
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let out = guarded(f);
        results.push((id, name, out, start.elapsed().as_secs_f64()));
    };

    run(1, "equal-SINR optimality", &mut || equal_sinr(&mut cases));
    run(3, "monotone convergence", &mut || convergence(&mut traces));
    run(4, "oracle dominance and gap", &mut || oracle_gap(&mut traces));
    run(2, "combination rule on traces", &mut || combination_rule(&traces));
    run(5, "fronthaul sweep shape", &mut sweep_shape);
    run(6, "single-user closed form", &mut || single_user(&mut cases));
    run(7, "fronthaul cap closed form", &mut fronthaul_closed_form);
    run(8, "bisection bracketing", &mut || bracketing(&cases));
    run(9, "sweep determinism", &mut determinism);

    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (id, name, out, secs) in &results {
        match out {
            Ok(detail) => println!("criterion {id} PASS  {name}: {detail} ({secs:.1}s)"),
            Err(why) => {
                failed += 1;
                println!("criterion {id} FAIL  {name}: {why} ({secs:.1}s)");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
