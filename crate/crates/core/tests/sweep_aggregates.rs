use std::collections::BTreeMap;

use cran_core::harness::{run_sweep, ExperimentConfig, SweepOptions};

const PROFILE: &str = r#"
n_rrh = 2
n_antennas = 2
n_users = 3
trials = 5
seed = 17
fronthaul_sweep_bps = [1e7, 3e7, 1e10]
"#;

#[test]
fn mean_rows_match_trial_rows() {
    let cfg = ExperimentConfig::from_toml_str(PROFILE).unwrap();
    let csv_text = run_sweep(&cfg, SweepOptions::default()).unwrap().to_csv_string().unwrap();
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let header = reader.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (t_col, s_col, tr_col, g_col, db_col, st_col) =
        (col("fronthaul_bps"), col("scheme"), col("trial"), col("gamma_linear"), col("gamma_db"), col("status"));

    let mut sums: BTreeMap<(String, String), (f64, f64, usize)> = BTreeMap::new();
    let mut means: BTreeMap<(String, String), (f64, f64)> = BTreeMap::new();
    let mut trial_gamma: BTreeMap<(String, String, String), f64> = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.unwrap();
        let key = (rec[t_col].to_string(), rec[s_col].to_string());
        let g: f64 = rec[g_col].parse().unwrap();
        let db: f64 = rec[db_col].parse().unwrap();
        if &rec[tr_col] == "mean" {
            means.insert(key, (g, db));
        } else {
            assert_eq!(&rec[st_col], "ok");
            trial_gamma.insert((key.0.clone(), key.1.clone(), rec[tr_col].to_string()), g);
            let e = sums.entry(key).or_insert((0.0, 0.0, 0));
            e.0 += g;
            e.1 += db;
            e.2 += 1;
        }
    }
    assert_eq!(means.len(), 3 * 4);
    for (key, (g, db, n)) in &sums {
        assert_eq!(*n, 5);
        let (mg, mdb) = means[key];
        assert!((mg - g / 5.0).abs() <= 1e-12 * mg.abs().max(1.0), "{key:?}");
        assert!((mdb - db / 5.0).abs() <= 1e-12 * mdb.abs().max(1.0), "{key:?}");
    }

    // With a slack fronthaul alg1 keeps full cooperation, which
    // dominates single-RRH service trial by trial.
    let slack = &sums.keys().map(|k| k.0.clone()).find(|t| t.parse::<f64>().unwrap() == 1e10).unwrap();
    for trial in 0..5 {
        let a = trial_gamma[&(slack.clone(), "alg1".into(), trial.to_string())];
        let b = trial_gamma[&(slack.clone(), "bench3".into(), trial.to_string())];
        assert!(a >= b * (1.0 - 2e-4), "trial {trial}: alg1 {a} below bench3 {b}");
    }
}
