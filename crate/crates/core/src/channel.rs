//! Seeded topology and Rayleigh channel generation.
//!
//! All randomness comes from ChaCha8 streams keyed by a 64-bit seed
//! (`ChaCha8Rng::seed_from_u64`), so a `(config, seed)` pair reproduces the
//! same bits on every platform. Independent sub-streams are derived with
//! [`derive_seed`].

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dbm_to_watts, ChannelState, LinkArray};

/// Where the RRHs go.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RrhPlacement {
    /// Area-uniform in the deployment disk, like the users.
    #[default]
    Uniform,
    /// Evenly spaced on a circle of radius `fraction * radius_m`.
    Ring { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub radius_m: f64,
    pub pathloss_a_db: f64,
    pub pathloss_b: f64,
    pub noise_psd_dbm_hz: f64,
    pub noise_figure_db: f64,
    pub min_distance_m: f64,
    pub rrh_placement: RrhPlacement,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            radius_m: 500.0,
            pathloss_a_db: 30.6,
            pathloss_b: 36.7,
            noise_psd_dbm_hz: -169.0,
            noise_figure_db: 7.0,
            min_distance_m: 1.0,
            rrh_placement: RrhPlacement::Uniform,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_m > 0.0 && self.radius_m.is_finite()) {
            return Err(Error::config("radius_m", "must be positive"));
        }
        if !(self.min_distance_m > 0.0) {
            return Err(Error::config("min_distance_m", "must be positive"));
        }
        if let RrhPlacement::Ring { fraction } = self.rrh_placement {
            if !(0.0..=1.0).contains(&fraction) {
                return Err(Error::config("rrh_placement", "ring fraction must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Path loss in dB at distance `d_m`, clamped at the minimum distance.
    pub fn path_loss_db(&self, d_m: f64) -> f64 {
        self.pathloss_a_db + self.pathloss_b * d_m.max(self.min_distance_m).log10()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub rrh_pos: Vec<(f64, f64)>,
    pub user_pos: Vec<(f64, f64)>,
    pub radius_m: f64,
}

impl Topology {
    pub fn distance(&self, k: usize, n: usize) -> f64 {
        let (ux, uy) = self.user_pos[k];
        let (rx, ry) = self.rrh_pos[n];
        (ux - rx).hypot(uy - ry)
    }

    /// Index of the closest RRH to each user; ties go to the lower index.
    pub fn nearest_rrh(&self) -> Vec<usize> {
        (0..self.user_pos.len())
            .map(|k| {
                (0..self.rrh_pos.len())
                    .min_by(|&a, &b| self.distance(k, a).total_cmp(&self.distance(k, b)))
                    .expect("topology has at least one RRH")
            })
            .collect()
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for stream `index` under `seed`: `seed ^ mix64(index)`, mixed once more.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index))
}

fn uniform_in_disk(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    (r * theta.cos(), r * theta.sin())
}

pub fn generate_topology(cfg: &GenConfig, n_rrh: usize, n_users: usize, seed: u64) -> Topology {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rrh_pos = match cfg.rrh_placement {
        RrhPlacement::Uniform => (0..n_rrh)
            .map(|_| uniform_in_disk(&mut rng, cfg.radius_m))
            .collect(),
        RrhPlacement::Ring { fraction } => (0..n_rrh)
            .map(|n| {
                let theta = std::f64::consts::TAU * n as f64 / n_rrh as f64;
                let r = fraction * cfg.radius_m;
                (r * theta.cos(), r * theta.sin())
            })
            .collect(),
    };
    let user_pos = (0..n_users)
        .map(|_| uniform_in_disk(&mut rng, cfg.radius_m))
        .collect();
    Topology {
        rrh_pos,
        user_pos,
        radius_m: cfg.radius_m,
    }
}

/// Receiver noise power in watts for a PSD in dBm/Hz over `bandwidth_hz`.
pub fn noise_power(psd_dbm_hz: f64, noise_figure_db: f64, bandwidth_hz: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0) {
        return Err(Error::Domain(format!(
            "bandwidth must be positive, got {bandwidth_hz}"
        )));
    }
    Ok(dbm_to_watts(
        psd_dbm_hz + 10.0 * bandwidth_hz.log10() + noise_figure_db,
    ))
}

/// Circularly-symmetric complex Gaussian with unit variance.
fn cn01(rng: &mut ChaCha8Rng) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Rayleigh channels with distance path loss. Entries are drawn in
/// `(user, rrh, antenna)` order from a single stream.
pub fn generate_channels(
    topo: &Topology,
    cfg: &GenConfig,
    n_antennas: usize,
    noise_power_w: f64,
    seed: u64,
) -> Result<ChannelState> {
    let (n_users, n_rrh) = (topo.user_pos.len(), topo.rrh_pos.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = LinkArray::zeros(n_users, n_rrh, n_antennas);
    for k in 0..n_users {
        for n in 0..n_rrh {
            let amp = 10f64.powf(-cfg.path_loss_db(topo.distance(k, n)) / 20.0);
            for entry in h.link_mut(k, n) {
                *entry = cn01(&mut rng) * amp;
            }
        }
    }
    ChannelState::new(h, noise_power_w)
}
