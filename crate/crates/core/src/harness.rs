//! Experiment configuration and the Monte-Carlo fronthaul sweep.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::association::{
    nearest_rrh, run_algorithm1_with, run_benchmark2_with, run_benchmark3_with, Alg1Options,
    Selector,
};
use crate::channel::{
    derive_seed, generate_channels, generate_topology, noise_power, GenConfig, RrhPlacement,
    Topology,
};
use crate::conic::{Evaluator, SolverTolerances};
use crate::error::{Error, Result};
use crate::model::{dbm_to_watts, to_db, ChannelState, NetworkConfig, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Alg1,
    Bench1,
    Bench2,
    Bench3,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Alg1, Scheme::Bench1, Scheme::Bench2, Scheme::Bench3];

    pub fn label(self) -> &'static str {
        match self {
            Scheme::Alg1 => "alg1",
            Scheme::Bench1 => "bench1",
            Scheme::Bench2 => "bench2",
            Scheme::Bench3 => "bench3",
        }
    }

    pub fn parse(s: &str) -> Option<Scheme> {
        Scheme::ALL.into_iter().find(|x| x.label() == s)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// A value given once for all RRHs or once per RRH.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRrh {
    Common(f64),
    Each(Vec<f64>),
}

impl PerRrh {
    fn expand(&self, n_rrh: usize, field: &str) -> Result<Vec<f64>> {
        match self {
            PerRrh::Common(v) => Ok(vec![*v; n_rrh]),
            PerRrh::Each(v) if v.len() == n_rrh => Ok(v.clone()),
            PerRrh::Each(v) => Err(Error::config(
                field,
                format!("has {} entries for {n_rrh} RRHs", v.len()),
            )),
        }
    }
}

fn default_bandwidth() -> f64 {
    10e6
}
fn default_tx_power() -> PerRrh {
    PerRrh::Common(30.0)
}
fn default_trials() -> usize {
    1
}
fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_rrh: usize,
    pub n_antennas: usize,
    pub n_users: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_hz: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: PerRrh,
    #[serde(default)]
    pub fronthaul_sweep_bps: Vec<f64>,
    /// Fronthaul capacities for single-instance runs; defaults to the first
    /// sweep value.
    #[serde(default)]
    pub fronthaul_bps: Option<PerRrh>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default)]
    pub tolerances: SolverTolerances,

    #[serde(default = "defaults::radius_m")]
    pub radius_m: f64,
    #[serde(default = "defaults::pathloss_a_db")]
    pub pathloss_a_db: f64,
    #[serde(default = "defaults::pathloss_b")]
    pub pathloss_b: f64,
    #[serde(default = "defaults::noise_psd_dbm_hz")]
    pub noise_psd_dbm_hz: f64,
    #[serde(default = "defaults::noise_figure_db")]
    pub noise_figure_db: f64,
    #[serde(default = "defaults::min_distance_m")]
    pub min_distance_m: f64,
    #[serde(default)]
    pub rrh_placement: RrhPlacement,
}

mod defaults {
    use crate::channel::GenConfig;

    pub fn radius_m() -> f64 {
        GenConfig::default().radius_m
    }
    pub fn pathloss_a_db() -> f64 {
        GenConfig::default().pathloss_a_db
    }
    pub fn pathloss_b() -> f64 {
        GenConfig::default().pathloss_b
    }
    pub fn noise_psd_dbm_hz() -> f64 {
        GenConfig::default().noise_psd_dbm_hz
    }
    pub fn noise_figure_db() -> f64 {
        GenConfig::default().noise_figure_db
    }
    pub fn min_distance_m() -> f64 {
        GenConfig::default().min_distance_m
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<config>".into(),
            reason: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            radius_m: self.radius_m,
            pathloss_a_db: self.pathloss_a_db,
            pathloss_b: self.pathloss_b,
            noise_psd_dbm_hz: self.noise_psd_dbm_hz,
            noise_figure_db: self.noise_figure_db,
            min_distance_m: self.min_distance_m,
            rrh_placement: self.rrh_placement,
        }
    }

    pub fn noise_power_w(&self) -> Result<f64> {
        noise_power(self.noise_psd_dbm_hz, self.noise_figure_db, self.bandwidth_hz)
    }

    /// Network parameters with a common fronthaul capacity.
    pub fn network(&self, fronthaul_bps: f64) -> Result<NetworkConfig> {
        let cfg = NetworkConfig {
            n_rrh: self.n_rrh,
            n_users: self.n_users,
            n_antennas: self.n_antennas,
            bandwidth_hz: self.bandwidth_hz,
            power_cap_w: self
                .tx_power_dbm
                .expand(self.n_rrh, "tx_power_dbm")?
                .into_iter()
                .map(dbm_to_watts)
                .collect(),
            fronthaul_cap_bps: vec![fronthaul_bps; self.n_rrh],
            noise_power_w: self.noise_power_w()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Network parameters for a single-instance run.
    pub fn single_network(&self) -> Result<NetworkConfig> {
        let mut cfg = self.network(self.fronthaul_sweep_bps.first().copied().unwrap_or(0.0))?;
        match &self.fronthaul_bps {
            Some(spec) => cfg.fronthaul_cap_bps = spec.expand(self.n_rrh, "fronthaul_bps")?,
            None if self.fronthaul_sweep_bps.is_empty() => {
                return Err(Error::config(
                    "fronthaul_bps",
                    "required when fronthaul_sweep_bps is empty",
                ))
            }
            None => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_rrh", self.n_rrh),
            ("n_antennas", self.n_antennas),
            ("n_users", self.n_users),
            ("trials", self.trials),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::config("bandwidth_hz", "must be positive and finite"));
        }
        let power = self.tx_power_dbm.expand(self.n_rrh, "tx_power_dbm")?;
        if power.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("tx_power_dbm", "must be finite"));
        }
        if let Some(spec) = &self.fronthaul_bps {
            let caps = spec.expand(self.n_rrh, "fronthaul_bps")?;
            if caps.iter().any(|c| !(*c >= 0.0)) {
                return Err(Error::config("fronthaul_bps", "must be non-negative"));
            }
        }
        if self.fronthaul_sweep_bps.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::config("fronthaul_sweep_bps", "values must be finite and non-negative"));
        }
        if self.fronthaul_sweep_bps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("fronthaul_sweep_bps", "must be strictly increasing"));
        }
        if self.schemes.is_empty() {
            return Err(Error::config("schemes", "must list at least one scheme"));
        }
        let mut seen = self.schemes.clone();
        seen.sort_by_key(|s| s.label());
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::config("schemes", "lists a scheme twice"));
        }
        self.tolerances.validate()?;
        self.gen_config().validate()?;
        Ok(())
    }

    /// Topology and channels of trial `trial`.
    pub fn trial_instance(&self, trial: usize) -> Result<(Topology, ChannelState)> {
        let gen = self.gen_config();
        let topo = generate_topology(&gen, self.n_rrh, self.n_users, derive_seed(self.seed, 2 * trial as u64));
        let ch = generate_channels(
            &topo,
            &gen,
            self.n_antennas,
            self.noise_power_w()?,
            derive_seed(self.seed, 2 * trial as u64 + 1),
        )?;
        Ok((topo, ch))
    }
}

/// Runs one scheme on one instance, sharing wireless solves through `eval`.
pub fn run_scheme(
    scheme: Scheme,
    eval: &Evaluator<'_>,
    cfg: &NetworkConfig,
    topo: Option<&Topology>,
) -> Result<SolveReport> {
    match scheme {
        Scheme::Alg1 => run_algorithm1_with(eval, cfg, Alg1Options::default()),
        Scheme::Bench1 => run_algorithm1_with(
            eval,
            cfg,
            Alg1Options {
                selector: Selector::InterferenceLeakage,
                ..Alg1Options::default()
            },
        ),
        Scheme::Bench2 => run_benchmark2_with(eval, cfg, &nearest_rrh(eval.ch, topo)),
        Scheme::Bench3 => run_benchmark3_with(eval, cfg, &nearest_rrh(eval.ch, topo)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub fronthaul_bps: f64,
    pub scheme: Scheme,
    /// Trial index, or `"mean"` for aggregate rows.
    pub trial: String,
    pub gamma_linear: Option<f64>,
    pub gamma_db: Option<f64>,
    pub iterations: Option<f64>,
    pub runtime_ms: Option<f64>,
    pub status: RowStatus,
    /// Indeterminate trials left out of an aggregate row.
    pub failed: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn means(&self) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(|r| r.trial == "mean")
    }

    /// Aggregate mean of `scheme` at capacity `fronthaul_bps`.
    pub fn mean(&self, scheme: Scheme, fronthaul_bps: f64) -> Option<&SweepRow> {
        self.means()
            .find(|r| r.scheme == scheme && r.fronthaul_bps == fronthaul_bps)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Domain(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()?).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SweepOptions {
    /// Record wall-clock time per run. Off by default so output depends
    /// only on the config.
    pub timing: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

struct TrialResult {
    gamma: Option<f64>,
    iterations: usize,
    runtime_ms: f64,
}

fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<Vec<TrialResult>>> {
    let (topo, ch) = cfg.trial_instance(trial)?;
    let base = cfg.network(0.0)?;
    let eval = Evaluator::new(&ch, &base.power_cap_w, base.noise_power_w, cfg.tolerances);
    let mut out = Vec::with_capacity(cfg.fronthaul_sweep_bps.len());
    for &t in &cfg.fronthaul_sweep_bps {
        let net = base.with_common_fronthaul(t);
        let mut per_scheme = Vec::with_capacity(cfg.schemes.len());
        for &scheme in &cfg.schemes {
            let start = Instant::now();
            let res = run_scheme(scheme, &eval, &net, Some(&topo));
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            per_scheme.push(match res {
                Ok(rep) => TrialResult {
                    gamma: Some(rep.final_gamma),
                    iterations: rep.iterations.len(),
                    runtime_ms,
                },
                Err(Error::IndeterminateRun { partial, .. }) => TrialResult {
                    gamma: None,
                    iterations: partial.iterations.len(),
                    runtime_ms,
                },
                Err(e) if e.is_indeterminate() => TrialResult {
                    gamma: None,
                    iterations: 0,
                    runtime_ms,
                },
                Err(e) => return Err(e),
            });
        }
        out.push(per_scheme);
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs every scheme on every trial at every fronthaul capacity. Trials run
/// in parallel; rows come out ordered by capacity, then
/// trial, then scheme, followed by one mean row per scheme.
pub fn run_sweep(cfg: &ExperimentConfig, opts: SweepOptions) -> Result<SweepTable> {
    cfg.validate()?;
    if cfg.fronthaul_sweep_bps.is_empty() {
        return Err(Error::config("fronthaul_sweep_bps", "must not be empty"));
    }
    let run = || -> Result<Vec<Vec<Vec<TrialResult>>>> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|trial| run_trial(cfg, trial))
            .collect()
    };
    let results = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    };

    let runtime = |r: &TrialResult| opts.timing.then_some(r.runtime_ms);
    let mut table = SweepTable::default();
    for (ti, &t) in cfg.fronthaul_sweep_bps.iter().enumerate() {
        for (trial, per_t) in results.iter().enumerate() {
            for (si, &scheme) in cfg.schemes.iter().enumerate() {
                let r = &per_t[ti][si];
                table.rows.push(SweepRow {
                    fronthaul_bps: t,
                    scheme,
                    trial: trial.to_string(),
                    gamma_linear: r.gamma,
                    gamma_db: r.gamma.map(to_db),
                    iterations: Some(r.iterations as f64),
                    runtime_ms: runtime(r),
                    status: if r.gamma.is_some() {
                        RowStatus::Ok
                    } else {
                        RowStatus::Indeterminate
                    },
                    failed: None,
                });
            }
        }
        for (si, &scheme) in cfg.schemes.iter().enumerate() {
            let ok: Vec<&TrialResult> = results
                .iter()
                .map(|per_t| &per_t[ti][si])
                .filter(|r| r.gamma.is_some())
                .collect();
            let failed = cfg.trials - ok.len();
            table.rows.push(SweepRow {
                fronthaul_bps: t,
                scheme,
                trial: "mean".to_string(),
                gamma_linear: mean(ok.iter().filter_map(|r| r.gamma)),
                gamma_db: mean(ok.iter().filter_map(|r| r.gamma.map(to_db))),
                iterations: mean(ok.iter().map(|r| r.iterations as f64)),
                runtime_ms: if opts.timing {
                    mean(ok.iter().map(|r| r.runtime_ms))
                } else {
                    None
                },
                status: if ok.is_empty() {
                    RowStatus::Indeterminate
                } else {
                    RowStatus::Ok
                },
                failed: Some(failed),
            });
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            n_rrh = 2
            n_antennas = 2
            n_users = 3
            fronthaul_sweep_bps = [2e7, 1e9]
            trials = 2
            seed = 9
            schemes = ["alg1", "bench3"]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults_follow_the_reference_deployment() {
        let cfg = tiny();
        assert_eq!(cfg.bandwidth_hz, 1e7);
        assert_eq!(cfg.tx_power_dbm, PerRrh::Common(30.0));
        assert_eq!(cfg.gen_config(), GenConfig::default());
        let net = cfg.network(5e7).unwrap();
        assert_eq!(net.power_cap_w, vec![1.0, 1.0]);
        assert_eq!(net.fronthaul_cap_bps, vec![5e7, 5e7]);
    }

    #[test]
    fn config_errors_name_the_field() {
        let bad = |extra: &str| {
            let text = format!("n_rrh = 2\nn_antennas = 1\nn_users = 2\n{extra}");
            match ExperimentConfig::from_toml_str(&text) {
                Err(Error::Config { field, .. }) => field,
                other => panic!("expected config error, got {other:?}"),
            }
        };
        assert_eq!(bad("trials = 0"), "trials");
        assert_eq!(bad("fronthaul_sweep_bps = [2e7, 1e7]"), "fronthaul_sweep_bps");
        assert_eq!(bad("tx_power_dbm = [30.0]"), "tx_power_dbm");
        assert_eq!(bad("schemes = []"), "schemes");
        assert!(matches!(
            ExperimentConfig::from_toml_str("n_rrh = 2\nn_antennas = 1\nn_users = 2\nbogus = 1"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn single_row_shape() {
        let mut cfg = tiny();
        cfg.trials = 1;
        cfg.fronthaul_sweep_bps = vec![1e12];
        cfg.schemes = vec![Scheme::Bench3];
        let table = run_sweep(&cfg, SweepOptions::default()).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0].trial, "0");
        assert_eq!(table.rows[1].trial, "mean");
        assert_eq!(table.rows[0].gamma_linear, table.rows[1].gamma_linear);
    }

    #[test]
    fn sweep_is_reproducible_and_ordered() {
        let cfg = tiny();
        let a = run_sweep(&cfg, SweepOptions::default()).unwrap();
        let b = run_sweep(&cfg, SweepOptions::default()).unwrap();
        let csv = a.to_csv_string().unwrap();
        assert_eq!(csv, b.to_csv_string().unwrap());
        assert!(csv.starts_with(
            "fronthaul_bps,scheme,trial,gamma_linear,gamma_db,iterations,runtime_ms,status,failed\n"
        ));
        assert_eq!(a.rows.len(), 2 * (2 * 2 + 2));
        let order: Vec<(String, &str)> = a.rows[..6]
            .iter()
            .map(|r| (r.trial.clone(), r.scheme.label()))
            .collect();
        assert_eq!(
            order,
            [("0", "alg1"), ("0", "bench3"), ("1", "alg1"), ("1", "bench3"), ("mean", "alg1"), ("mean", "bench3")]
                .map(|(t, s)| (t.to_string(), s))
        );
    }
}
