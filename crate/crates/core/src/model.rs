//! Network description and the closed-form signal-model quantities.
//!
//! Channels and beamformers are stored as flat `K x N x M` arrays of complex
//! numbers, indexed `(user, rrh, antenna)`. Everything here is linear scale:
//! SINR as a ratio, power in watts, rate in bits per second.

use std::collections::BTreeSet;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which a beamformer counts as switched off.
pub const DEFAULT_ZERO_TOL_REL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub n_rrh: usize,
    pub n_users: usize,
    pub n_antennas: usize,
    pub bandwidth_hz: f64,
    pub power_cap_w: Vec<f64>,
    pub fronthaul_cap_bps: Vec<f64>,
    pub noise_power_w: f64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rrh == 0 {
            return Err(Error::config("n_rrh", "must be at least 1"));
        }
        if self.n_users == 0 {
            return Err(Error::config("n_users", "must be at least 1"));
        }
        if self.n_antennas == 0 {
            return Err(Error::config("n_antennas", "must be at least 1"));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return Err(Error::config("bandwidth_hz", "must be positive and finite"));
        }
        if !(self.noise_power_w > 0.0 && self.noise_power_w.is_finite()) {
            return Err(Error::config("noise_power_w", "must be positive and finite"));
        }
        if self.power_cap_w.len() != self.n_rrh {
            return Err(Error::config(
                "power_cap_w",
                format!("expected {} entries, got {}", self.n_rrh, self.power_cap_w.len()),
            ));
        }
        if self.power_cap_w.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
            return Err(Error::config("power_cap_w", "every cap must be positive and finite"));
        }
        if self.fronthaul_cap_bps.len() != self.n_rrh {
            return Err(Error::config(
                "fronthaul_cap_bps",
                format!(
                    "expected {} entries, got {}",
                    self.n_rrh,
                    self.fronthaul_cap_bps.len()
                ),
            ));
        }
        if self.fronthaul_cap_bps.iter().any(|t| !(*t >= 0.0) || t.is_nan()) {
            return Err(Error::config("fronthaul_cap_bps", "every cap must be non-negative"));
        }
        Ok(())
    }

    /// Copy of this config with every fronthaul cap set to `cap_bps`.
    pub fn with_common_fronthaul(&self, cap_bps: f64) -> Self {
        NetworkConfig {
            fronthaul_cap_bps: vec![cap_bps; self.n_rrh],
            ..self.clone()
        }
    }
}

/// Dense `K x N x M` array of complex vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkArray {
    n_users: usize,
    n_rrh: usize,
    n_antennas: usize,
    data: Vec<Complex64>,
}

impl LinkArray {
    pub fn zeros(n_users: usize, n_rrh: usize, n_antennas: usize) -> Self {
        LinkArray {
            n_users,
            n_rrh,
            n_antennas,
            data: vec![Complex64::new(0.0, 0.0); n_users * n_rrh * n_antennas],
        }
    }

    pub fn from_vec(
        n_users: usize,
        n_rrh: usize,
        n_antennas: usize,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        if data.len() != n_users * n_rrh * n_antennas {
            return Err(Error::Dimension(format!(
                "expected {}x{}x{} = {} entries, got {}",
                n_users,
                n_rrh,
                n_antennas,
                n_users * n_rrh * n_antennas,
                data.len()
            )));
        }
        Ok(LinkArray {
            n_users,
            n_rrh,
            n_antennas,
            data,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_rrh(&self) -> usize {
        self.n_rrh
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    #[inline]
    pub fn link(&self, k: usize, n: usize) -> &[Complex64] {
        let start = (k * self.n_rrh + n) * self.n_antennas;
        &self.data[start..start + self.n_antennas]
    }

    #[inline]
    pub fn link_mut(&mut self, k: usize, n: usize) -> &mut [Complex64] {
        let start = (k * self.n_rrh + n) * self.n_antennas;
        &mut self.data[start..start + self.n_antennas]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    fn same_shape(&self, other: &LinkArray) -> bool {
        self.n_users == other.n_users
            && self.n_rrh == other.n_rrh
            && self.n_antennas == other.n_antennas
    }
}

/// Squared Euclidean norm of a complex vector.
#[inline]
pub fn norm_sqr(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum()
}

/// `a^H b`.
#[inline]
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Channels `h[k][n]` from every RRH to every user, plus receiver noise power.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub h: LinkArray,
    pub noise_power_w: f64,
}

impl ChannelState {
    pub fn new(h: LinkArray, noise_power_w: f64) -> Result<Self> {
        if !h.is_finite() {
            return Err(Error::Domain("channel entries must be finite".into()));
        }
        if !(noise_power_w > 0.0 && noise_power_w.is_finite()) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        Ok(ChannelState { h, noise_power_w })
    }

    pub fn n_users(&self) -> usize {
        self.h.n_users()
    }

    pub fn n_rrh(&self) -> usize {
        self.h.n_rrh()
    }

    pub fn n_antennas(&self) -> usize {
        self.h.n_antennas()
    }

    pub fn check_against(&self, cfg: &NetworkConfig) -> Result<()> {
        if self.n_users() != cfg.n_users
            || self.n_rrh() != cfg.n_rrh
            || self.n_antennas() != cfg.n_antennas
        {
            return Err(Error::Dimension(format!(
                "channels are {}x{}x{} (KxNxM) but config says {}x{}x{}",
                self.n_users(),
                self.n_rrh(),
                self.n_antennas(),
                cfg.n_users,
                cfg.n_rrh,
                cfg.n_antennas
            )));
        }
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ChannelFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<channel file>".into(),
            reason: e.to_string(),
        })?;
        file.into_state()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&ChannelFile::from_state(self))
            .expect("channel file serialisation cannot fail")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// On-disk channel file: `h` is a `K x N x M x 2` array of (re, im) pairs.
#[derive(Debug, Serialize, Deserialize)]
struct ChannelFile {
    n_rrh: usize,
    n_users: usize,
    n_antennas: usize,
    noise_power_w: f64,
    h: Vec<Vec<Vec<[f64; 2]>>>,
}

impl ChannelFile {
    fn from_state(ch: &ChannelState) -> Self {
        let h = (0..ch.n_users())
            .map(|k| {
                (0..ch.n_rrh())
                    .map(|n| ch.h.link(k, n).iter().map(|c| [c.re, c.im]).collect())
                    .collect()
            })
            .collect();
        ChannelFile {
            n_rrh: ch.n_rrh(),
            n_users: ch.n_users(),
            n_antennas: ch.n_antennas(),
            noise_power_w: ch.noise_power_w,
            h,
        }
    }

    fn into_state(self) -> Result<ChannelState> {
        let (k_dim, n_dim, m_dim) = (self.n_users, self.n_rrh, self.n_antennas);
        if self.h.len() != k_dim {
            return Err(Error::Dimension(format!(
                "h has {} user rows, n_users is {}",
                self.h.len(),
                k_dim
            )));
        }
        let mut data = Vec::with_capacity(k_dim * n_dim * m_dim);
        for (k, row) in self.h.into_iter().enumerate() {
            if row.len() != n_dim {
                return Err(Error::Dimension(format!(
                    "h[{k}] has {} RRH entries, n_rrh is {n_dim}",
                    row.len()
                )));
            }
            for (n, vec) in row.into_iter().enumerate() {
                if vec.len() != m_dim {
                    return Err(Error::Dimension(format!(
                        "h[{k}][{n}] has {} antennas, n_antennas is {m_dim}",
                        vec.len()
                    )));
                }
                data.extend(vec.into_iter().map(|[re, im]| Complex64::new(re, im)));
            }
        }
        ChannelState::new(
            LinkArray::from_vec(k_dim, n_dim, m_dim, data)?,
            self.noise_power_w,
        )
    }
}

/// Beamformer `w[k][n]` used by RRH `n` for user `k`, in sqrt(watts).
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub w: LinkArray,
}

impl BeamformerSet {
    pub fn zeros(n_users: usize, n_rrh: usize, n_antennas: usize) -> Self {
        BeamformerSet {
            w: LinkArray::zeros(n_users, n_rrh, n_antennas),
        }
    }

    pub fn zeros_like(ch: &ChannelState) -> Self {
        Self::zeros(ch.n_users(), ch.n_rrh(), ch.n_antennas())
    }

    pub fn total_power(&self) -> f64 {
        norm_sqr(self.w.as_slice())
    }
}

/// Per-RRH served-user sets.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AssociationMap {
    n_users: usize,
    omega: Vec<BTreeSet<usize>>,
}

impl AssociationMap {
    /// Every RRH serves every user.
    pub fn full(n_rrh: usize, n_users: usize) -> Self {
        AssociationMap {
            n_users,
            omega: vec![(0..n_users).collect(); n_rrh],
        }
    }

    pub fn empty(n_rrh: usize, n_users: usize) -> Self {
        AssociationMap {
            n_users,
            omega: vec![BTreeSet::new(); n_rrh],
        }
    }

    pub fn from_sets(n_users: usize, omega: Vec<BTreeSet<usize>>) -> Result<Self> {
        if let Some(bad) = omega.iter().flatten().find(|&&k| k >= n_users) {
            return Err(Error::Dimension(format!(
                "user index {bad} out of range for {n_users} users"
            )));
        }
        Ok(AssociationMap { n_users, omega })
    }

    /// Each user served by exactly the RRH given in `serving[k]`.
    pub fn single_serving(n_rrh: usize, serving: &[usize]) -> Result<Self> {
        let mut map = Self::empty(n_rrh, serving.len());
        for (k, &n) in serving.iter().enumerate() {
            if n >= n_rrh {
                return Err(Error::Dimension(format!(
                    "RRH index {n} out of range for {n_rrh} RRHs"
                )));
            }
            map.omega[n].insert(k);
        }
        Ok(map)
    }

    /// Association read off a `K x N` indicator matrix.
    pub fn from_indicator(alpha: &[Vec<bool>]) -> Self {
        let n_users = alpha.len();
        let n_rrh = alpha.first().map_or(0, |r| r.len());
        let mut map = Self::empty(n_rrh, n_users);
        for (k, row) in alpha.iter().enumerate() {
            for (n, &on) in row.iter().enumerate() {
                if on {
                    map.omega[n].insert(k);
                }
            }
        }
        map
    }

    pub fn n_rrh(&self) -> usize {
        self.omega.len()
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn served_by(&self, n: usize) -> &BTreeSet<usize> {
        &self.omega[n]
    }

    pub fn sets(&self) -> &[BTreeSet<usize>] {
        &self.omega
    }

    pub fn contains(&self, k: usize, n: usize) -> bool {
        self.omega[n].contains(&k)
    }

    pub fn insert(&mut self, k: usize, n: usize) -> bool {
        self.omega[n].insert(k)
    }

    pub fn remove(&mut self, k: usize, n: usize) -> bool {
        self.omega[n].remove(&k)
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.omega.iter().map(BTreeSet::len).collect()
    }

    pub fn link_count(&self) -> usize {
        self.omega.iter().map(BTreeSet::len).sum()
    }

    /// RRHs currently serving user `k`, ascending.
    pub fn serving_rrhs(&self, k: usize) -> Vec<usize> {
        (0..self.n_rrh()).filter(|&n| self.contains(k, n)).collect()
    }

    pub fn all_served(&self) -> bool {
        (0..self.n_users).all(|k| self.omega.iter().any(|s| s.contains(&k)))
    }

    /// `K x N` indicator view.
    pub fn indicator(&self) -> Vec<Vec<bool>> {
        (0..self.n_users)
            .map(|k| (0..self.n_rrh()).map(|n| self.contains(k, n)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    /// Max-min SINR over the wireless links alone.
    pub gamma1: f64,
    /// Max-min SINR allowed by the fronthaul alone; `+inf` when vacuous.
    pub gamma2: f64,
    pub gamma: f64,
    /// Link switched off at the end of this iteration.
    pub removed: Option<(usize, usize)>,
    /// Link switched on before this iteration (greedy activation scheme).
    pub activated: Option<(usize, usize)>,
    pub omega_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub scheme_label: String,
    pub iterations: Vec<IterationRecord>,
    pub final_gamma: f64,
    pub final_beamformers: BeamformerSet,
    pub final_association: AssociationMap,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    t: usize,
    gamma1: f64,
    #[serde(serialize_with = "finite_or_null")]
    gamma2: f64,
    gamma: f64,
    removed_user: Option<usize>,
    removed_rrh: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activated_user: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    activated_rrh: Option<usize>,
    omega_sizes: &'a [usize],
}

#[derive(Serialize)]
struct TraceDoc<'a> {
    scheme: &'a str,
    final_gamma: f64,
    final_gamma_db: f64,
    final_association: Vec<Vec<usize>>,
    iterations: Vec<TraceRow<'a>>,
}

fn finite_or_null<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

impl SolveReport {
    /// Trace document, one record per iteration. `gamma2` is `null` when
    /// no RRH carries any user.
    pub fn trace_json(&self) -> String {
        let doc = TraceDoc {
            scheme: &self.scheme_label,
            final_gamma: self.final_gamma,
            final_gamma_db: to_db(self.final_gamma),
            final_association: self
                .final_association
                .sets()
                .iter()
                .map(|s| s.iter().copied().collect())
                .collect(),
            iterations: self
                .iterations
                .iter()
                .map(|r| TraceRow {
                    t: r.t,
                    gamma1: r.gamma1,
                    gamma2: r.gamma2,
                    gamma: r.gamma,
                    removed_user: r.removed.map(|l| l.0),
                    removed_rrh: r.removed.map(|l| l.1),
                    activated_user: r.activated.map(|l| l.0),
                    activated_rrh: r.activated.map(|l| l.1),
                    omega_sizes: &r.omega_sizes,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("trace serialisation cannot fail")
    }
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

pub fn from_db(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    from_db(dbm - 30.0)
}

fn check_pair(ch: &ChannelState, bf: &BeamformerSet) -> Result<()> {
    if !ch.h.same_shape(&bf.w) {
        return Err(Error::Dimension(format!(
            "channels are {}x{}x{} but beamformers are {}x{}x{}",
            ch.n_users(),
            ch.n_rrh(),
            ch.n_antennas(),
            bf.w.n_users(),
            bf.w.n_rrh(),
            bf.w.n_antennas()
        )));
    }
    Ok(())
}

/// Effective scalar channel `sum_n h[k][n]^H w[j][n]` seen by user `k` from
/// user `j`'s beam.
pub fn effective_gain(ch: &ChannelState, bf: &BeamformerSet, k: usize, j: usize) -> Complex64 {
    (0..ch.n_rrh())
        .map(|n| inner(ch.h.link(k, n), bf.w.link(j, n)))
        .sum()
}

/// Decoding SINR of user `k`.
pub fn compute_sinr(
    ch: &ChannelState,
    bf: &BeamformerSet,
    noise_power_w: f64,
    k: usize,
) -> Result<f64> {
    check_pair(ch, bf)?;
    if k >= ch.n_users() {
        return Err(Error::Dimension(format!(
            "user {k} out of range for {} users",
            ch.n_users()
        )));
    }
    let signal = effective_gain(ch, bf, k, k).norm_sqr();
    let interference: f64 = (0..ch.n_users())
        .filter(|&j| j != k)
        .map(|j| effective_gain(ch, bf, k, j).norm_sqr())
        .sum();
    Ok(signal / (interference + noise_power_w))
}

/// SINR of every user, using the channel's own noise power.
pub fn all_sinrs(ch: &ChannelState, bf: &BeamformerSet) -> Result<Vec<f64>> {
    (0..ch.n_users())
        .map(|k| compute_sinr(ch, bf, ch.noise_power_w, k))
        .collect()
}

/// Shannon rate `B log2(1 + gamma)` in bits per second.
pub fn achievable_rate(gamma: f64, bandwidth_hz: f64) -> Result<f64> {
    if gamma.is_nan() || gamma < 0.0 {
        return Err(Error::Domain(format!("SINR must be non-negative, got {gamma}")));
    }
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth_hz}"
        )));
    }
    Ok(bandwidth_hz * gamma.ln_1p() / std::f64::consts::LN_2)
}

/// `alpha[k][n]` is set when `|w[k][n]|^2 > zero_tol_rel * P_n`.
pub fn association_indicator(
    bf: &BeamformerSet,
    power_cap_w: &[f64],
    zero_tol_rel: f64,
) -> Vec<Vec<bool>> {
    (0..bf.w.n_users())
        .map(|k| {
            (0..bf.w.n_rrh())
                .map(|n| norm_sqr(bf.w.link(k, n)) > zero_tol_rel * power_cap_w[n])
                .collect()
        })
        .collect()
}

/// Fronthaul traffic of each RRH: the sum of the rates of the users it serves.
pub fn fronthaul_load(assoc: &AssociationMap, per_user_rates: &[f64]) -> Vec<f64> {
    assoc
        .sets()
        .iter()
        .map(|set| set.iter().map(|&k| per_user_rates[k]).sum())
        .collect()
}

/// Transmit power of each RRH.
pub fn per_rrh_power(bf: &BeamformerSet) -> Vec<f64> {
    (0..bf.w.n_rrh())
        .map(|n| (0..bf.w.n_users()).map(|k| norm_sqr(bf.w.link(k, n))).sum())
        .collect()
}
