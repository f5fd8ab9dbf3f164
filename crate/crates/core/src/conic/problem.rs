//! Real-valued cone programs for SINR-constrained beamforming.
//!
//! Only the beamformers of active links become variables; each complex
//! antenna weight contributes a `(re, im)` pair. Channels are rescaled so
//! the noise power is 1 and the largest power cap is 1, which keeps the
//! conic data well conditioned over the wide range of path losses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::socp::{Cone, ConeProgram};
use crate::model::{inner, norm_sqr, AssociationMap, BeamformerSet, ChannelState};

pub(crate) struct Instance<'a> {
    ch: &'a ChannelState,
    n_users: usize,
    n_antennas: usize,
    /// Serving RRHs of each user.
    pub links: Vec<Vec<usize>>,
    /// Start of each user's variable block.
    offsets: Vec<usize>,
    pub dim_w: usize,
    /// Multiplies original channels into normalised ones.
    chan_scale: f64,
    /// sqrt of the largest power cap; normalised beamformers times this are watts^1/2.
    w_scale: f64,
    /// sqrt of normalised power caps.
    sqrt_caps: Vec<f64>,
    /// Norm of each user's normalised channel over its serving links.
    pub chan_norm: Vec<f64>,
    /// `re[k][j]`, `im[k][j]`: coefficients of Re/Im of user `k`'s received
    /// amplitude from beam `j`, over `j`'s variable block.
    re: Vec<Vec<Vec<f64>>>,
    im: Vec<Vec<Vec<f64>>>,
}

impl<'a> Instance<'a> {
    pub fn new(
        ch: &'a ChannelState,
        assoc: &AssociationMap,
        power_cap_w: &[f64],
        noise_power_w: f64,
    ) -> Self {
        let (n_users, n_antennas) = (ch.n_users(), ch.n_antennas());
        let links: Vec<Vec<usize>> = (0..n_users).map(|k| assoc.serving_rrhs(k)).collect();
        let mut offsets = Vec::with_capacity(n_users);
        let mut dim_w = 0;
        for l in &links {
            offsets.push(dim_w);
            dim_w += 2 * n_antennas * l.len();
        }
        let p0 = power_cap_w.iter().cloned().fold(0.0, f64::max);
        let chan_scale = (p0 / noise_power_w).sqrt();
        let sqrt_caps = power_cap_w.iter().map(|p| (p / p0).sqrt()).collect();
        let chan_norm = (0..n_users)
            .map(|k| {
                links[k]
                    .iter()
                    .map(|&n| norm_sqr(ch.h.link(k, n)))
                    .sum::<f64>()
                    .sqrt()
                    * chan_scale
            })
            .collect();

        let mut re = vec![Vec::with_capacity(n_users); n_users];
        let mut im = vec![Vec::with_capacity(n_users); n_users];
        for k in 0..n_users {
            for j in 0..n_users {
                let len = 2 * n_antennas * links[j].len();
                let (mut r, mut i) = (vec![0.0; len], vec![0.0; len]);
                for (p, &n) in links[j].iter().enumerate() {
                    for (m, a) in ch.h.link(k, n).iter().enumerate() {
                        let a = a * chan_scale;
                        let at = 2 * (p * n_antennas + m);
                        // conj(a) w = (ar wr + ai wi) + i (ar wi - ai wr)
                        r[at] = a.re;
                        r[at + 1] = a.im;
                        i[at] = -a.im;
                        i[at + 1] = a.re;
                    }
                }
                re[k].push(r);
                im[k].push(i);
            }
        }
        Instance {
            ch,
            n_users,
            n_antennas,
            links,
            offsets,
            dim_w,
            chan_scale,
            w_scale: p0.sqrt(),
            sqrt_caps,
            chan_norm,
            re,
            im,
        }
    }

    /// Normalised single-user SNR bound `(sum_n sqrt(P_n) |h_kn|)^2` for each user.
    pub fn mrt_bounds(&self) -> Vec<f64> {
        (0..self.n_users)
            .map(|k| {
                self.links[k]
                    .iter()
                    .map(|&n| self.sqrt_caps[n] * norm_sqr(self.ch.h.link(k, n)).sqrt() * self.chan_scale)
                    .sum::<f64>()
                    .powi(2)
            })
            .collect()
    }

    /// Users with nothing to decode: no serving RRH or an all-zero channel.
    pub fn has_dead_user(&self) -> bool {
        (0..self.n_users).any(|k| self.links[k].is_empty() || self.chan_norm[k] == 0.0)
    }

    fn active_users(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_users).filter(|&j| !self.links[j].is_empty())
    }

    /// Rows of one SINR cone; `extra_col` gets a unit coefficient in the head
    /// row (the margin variable).
    fn push_sinr_cone(
        &self,
        k: usize,
        sqrt_gamma: f64,
        extra_col: Option<usize>,
        rows: &mut Vec<(Vec<(usize, f64)>, f64)>,
        cones: &mut Vec<Cone>,
    ) {
        let ck = self.chan_norm[k];
        let off_k = self.offsets[k];
        let mut head: Vec<(usize, f64)> = self.re[k][k]
            .iter()
            .enumerate()
            .map(|(i, &v)| (off_k + i, -v / ck))
            .collect();
        if let Some(col) = extra_col {
            head.push((col, 1.0));
        }
        rows.push((head, 0.0));
        let mut dim = 1;
        let scale = sqrt_gamma / ck;
        for j in self.active_users().filter(|&j| j != k) {
            let off = self.offsets[j];
            for coefs in [&self.re[k][j], &self.im[k][j]] {
                rows.push((
                    coefs
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (off + i, -scale * v))
                        .collect(),
                    0.0,
                ));
                dim += 1;
            }
        }
        rows.push((Vec::new(), scale));
        dim += 1;
        cones.push(Cone::Soc(dim));
    }

    fn push_power_cones(&self, rows: &mut Vec<(Vec<(usize, f64)>, f64)>, cones: &mut Vec<Cone>) {
        let n_rrh = self.sqrt_caps.len();
        for n in 0..n_rrh {
            let mut vars = Vec::new();
            for k in 0..self.n_users {
                if let Some(p) = self.links[k].iter().position(|&x| x == n) {
                    let base = self.offsets[k] + 2 * p * self.n_antennas;
                    vars.extend(base..base + 2 * self.n_antennas);
                }
            }
            if vars.is_empty() {
                continue;
            }
            rows.push((Vec::new(), self.sqrt_caps[n]));
            for &v in &vars {
                rows.push((vec![(v, -1.0)], 0.0));
            }
            cones.push(Cone::Soc(1 + vars.len()));
        }
    }

    fn assemble(
        n_cols: usize,
        c: DVector<f64>,
        rows: Vec<(Vec<(usize, f64)>, f64)>,
        cones: Vec<Cone>,
    ) -> ConeProgram {
        let mut g = DMatrix::zeros(rows.len(), n_cols);
        let mut h = DVector::zeros(rows.len());
        for (r, (entries, hv)) in rows.into_iter().enumerate() {
            for (col, v) in entries {
                g[(r, col)] = v;
            }
            h[r] = hv;
        }
        ConeProgram { c, g, h, cones }
    }

    /// Maximise the common margin `t` by which every SINR cone holds at
    /// target `gamma`. The last variable is `t`.
    pub fn margin_program(&self, gamma: f64) -> ConeProgram {
        let n_cols = self.dim_w + 1;
        let t_col = self.dim_w;
        let sg = gamma.sqrt();
        let mut rows = Vec::new();
        let mut cones = Vec::new();
        for k in 0..self.n_users {
            self.push_sinr_cone(k, sg, Some(t_col), &mut rows, &mut cones);
        }
        self.push_power_cones(&mut rows, &mut cones);
        let mut c = DVector::zeros(n_cols);
        c[t_col] = -1.0;
        Self::assemble(n_cols, c, rows, cones)
    }

    /// Minimise the norm of all beamformers subject to the SINR target and
    /// power caps. The last variable is the norm bound.
    pub fn power_program(&self, gamma: f64) -> ConeProgram {
        let n_cols = self.dim_w + 1;
        let p_col = self.dim_w;
        let sg = gamma.sqrt();
        let mut rows = Vec::new();
        let mut cones = Vec::new();
        rows.push((vec![(p_col, -1.0)], 0.0));
        for v in 0..self.dim_w {
            rows.push((vec![(v, -1.0)], 0.0));
        }
        cones.push(Cone::Soc(1 + self.dim_w));
        for k in 0..self.n_users {
            self.push_sinr_cone(k, sg, None, &mut rows, &mut cones);
        }
        self.push_power_cones(&mut rows, &mut cones);
        let mut c = DVector::zeros(n_cols);
        c[p_col] = 1.0;
        Self::assemble(n_cols, c, rows, cones)
    }

    /// Unpacks the variable vector into physical beamformers, rotating each
    /// user's beam so its received amplitude is real and non-negative.
    pub fn beamformers(&self, x: &[f64]) -> BeamformerSet {
        let ch = self.ch;
        let mut bf = BeamformerSet::zeros(self.n_users, ch.n_rrh(), self.n_antennas);
        for k in 0..self.n_users {
            for (p, &n) in self.links[k].iter().enumerate() {
                let base = self.offsets[k] + 2 * p * self.n_antennas;
                for (m, w) in bf.w.link_mut(k, n).iter_mut().enumerate() {
                    *w = Complex64::new(x[base + 2 * m], x[base + 2 * m + 1]) * self.w_scale;
                }
            }
            let amp: Complex64 = self.links[k]
                .iter()
                .map(|&n| inner(ch.h.link(k, n), bf.w.link(k, n)))
                .sum();
            if amp.norm() > 0.0 {
                let rot = amp.conj() / amp.norm();
                for &n in &self.links[k] {
                    bf.w.link_mut(k, n).iter_mut().for_each(|w| *w *= rot);
                }
            }
        }
        bf
    }

    /// MRT beams with per-user powers set by SINR balancing; returns the
    /// largest common SINR reached within the power caps.
    pub fn mrt_balanced_sinr(&self, noise_power_w: f64) -> f64 {
        let ch = self.ch;
        let mut bf = BeamformerSet::zeros(self.n_users, ch.n_rrh(), self.n_antennas);
        for k in 0..self.n_users {
            let norm = self.chan_norm[k] / self.chan_scale;
            if norm == 0.0 {
                continue;
            }
            for &n in &self.links[k] {
                let dst = bf.w.link_mut(k, n);
                for (w, h) in dst.iter_mut().zip(ch.h.link(k, n)) {
                    *w = h / norm;
                }
            }
        }
        let caps: Vec<f64> = self
            .sqrt_caps
            .iter()
            .map(|s| s * s * self.w_scale * self.w_scale)
            .collect();
        let fits = |gamma: f64| -> bool {
            match super::balanced_powers(ch, &bf, noise_power_w, gamma) {
                Some(p) => (0..ch.n_rrh()).all(|n| {
                    let used: f64 = (0..self.n_users)
                        .map(|k| p[k] * norm_sqr(bf.w.link(k, n)))
                        .sum();
                    used <= caps[n]
                }),
                None => false,
            }
        };
        let upper = self.mrt_bounds().into_iter().fold(f64::INFINITY, f64::min);
        if !(upper > 0.0) || !fits(upper * 1e-12) {
            return 0.0;
        }
        let (mut lo, mut hi) = ((upper * 1e-12).ln(), upper.ln());
        for _ in 0..50 {
            let mid = 0.5 * (lo + hi);
            if fits(mid.exp()) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo.exp()
    }
}
