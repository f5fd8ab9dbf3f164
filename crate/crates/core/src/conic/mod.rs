//! Beamforming on the wireless links: SINR-target feasibility, max-min SINR
//! and minimum-power beamforming for a fixed user association.
//!
//! Every query is a second-order cone program solved by the in-crate
//! interior-point method in [`socp`]. Zero-forced links (`k` not in
//! `omega[n]`) are never variables, so their beamformers come back exactly
//! zero.

mod problem;
pub mod socp;

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{effective_gain, AssociationMap, BeamformerSet, ChannelState};
use problem::Instance;
use socp::{IpmSettings, IpmSolution, IpmStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTolerances {
    /// Relative width of the final SINR bracket.
    pub bisection_rel_tol: f64,
    /// A target counts as feasible when the optimal margin is at least `-cone_feas_tol`.
    pub cone_feas_tol: f64,
    pub max_bisection_iters: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances {
            bisection_rel_tol: 1e-4,
            cone_feas_tol: 1e-7,
            max_bisection_iters: 60,
        }
    }
}

impl SolverTolerances {
    pub fn validate(&self) -> Result<()> {
        if !(self.bisection_rel_tol > 0.0 && self.bisection_rel_tol < 1.0) {
            return Err(Error::config("tolerances.bisection_rel_tol", "must lie in (0, 1)"));
        }
        if !(self.cone_feas_tol > 0.0) {
            return Err(Error::config("tolerances.cone_feas_tol", "must be positive"));
        }
        if self.max_bisection_iters == 0 {
            return Err(Error::config("tolerances.max_bisection_iters", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    Feasible,
    Infeasible,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolverStats {
    pub ipm_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Optimal common margin of the SINR cones (normalised units).
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityOutcome {
    pub status: Feasibility,
    /// Present iff feasible.
    pub beamformers: Option<BeamformerSet>,
    pub stats: SolverStats,
}

impl FeasibilityOutcome {
    pub fn is_feasible(&self) -> bool {
        self.status == Feasibility::Feasible
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxMinSolution {
    pub gamma: f64,
    pub beamformers: BeamformerSet,
    /// Feasibility probes spent by the search.
    pub probes: usize,
}

/// Residuals below which a stalled interior-point run is still trusted.
const STALL_ACCEPT: f64 = 1e-6;

fn check_inputs(
    ch: &ChannelState,
    assoc: &AssociationMap,
    power_cap_w: &[f64],
    noise_power_w: f64,
) -> Result<()> {
    if assoc.n_rrh() != ch.n_rrh() || assoc.n_users() != ch.n_users() {
        return Err(Error::Dimension(format!(
            "association is {} users x {} RRHs, channels are {} x {}",
            assoc.n_users(),
            assoc.n_rrh(),
            ch.n_users(),
            ch.n_rrh()
        )));
    }
    if power_cap_w.len() != ch.n_rrh() {
        return Err(Error::Dimension(format!(
            "{} power caps for {} RRHs",
            power_cap_w.len(),
            ch.n_rrh()
        )));
    }
    if power_cap_w.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::Domain("power caps must be positive and finite".into()));
    }
    if !(noise_power_w > 0.0 && noise_power_w.is_finite()) {
        return Err(Error::Domain("noise power must be positive".into()));
    }
    Ok(())
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_nan() || gamma < 0.0 || gamma.is_infinite() {
        return Err(Error::Domain(format!("SINR target must be finite and >= 0, got {gamma}")));
    }
    Ok(())
}

fn usable(sol: &IpmSolution) -> bool {
    match sol.status {
        IpmStatus::Optimal => true,
        IpmStatus::MaxIterations | IpmStatus::NumericalFailure => {
            sol.primal_res < STALL_ACCEPT && sol.dual_res < STALL_ACCEPT && sol.gap < STALL_ACCEPT
        }
        _ => false,
    }
}

fn stats_of(sol: &IpmSolution, margin: f64) -> SolverStats {
    SolverStats {
        ipm_iterations: sol.iterations,
        primal_residual: sol.primal_res,
        dual_residual: sol.dual_res,
        margin,
    }
}

fn probe(
    inst: &Instance<'_>,
    gamma: f64,
    tol: &SolverTolerances,
) -> Result<FeasibilityOutcome> {
    let prog = inst.margin_program(gamma);
    let sol = socp::solve(&prog, IpmSettings::default());
    if !usable(&sol) {
        return Err(Error::Indeterminate(format!(
            "feasibility probe at SINR {gamma:.6e} ended with {:?} after {} iterations",
            sol.status, sol.iterations
        )));
    }
    let margin = sol.x[inst.dim_w];
    let stats = stats_of(&sol, margin);
    if margin >= -tol.cone_feas_tol {
        Ok(FeasibilityOutcome {
            status: Feasibility::Feasible,
            beamformers: Some(inst.beamformers(&sol.x.as_slice()[..inst.dim_w])),
            stats,
        })
    } else {
        Ok(FeasibilityOutcome {
            status: Feasibility::Infeasible,
            beamformers: None,
            stats,
        })
    }
}

/// Decides whether every user can reach SINR `gamma_target` with the given
/// association and per-RRH power caps.
pub fn check_feasible(
    ch: &ChannelState,
    assoc: &AssociationMap,
    gamma_target: f64,
    power_cap_w: &[f64],
    noise_power_w: f64,
    tol: &SolverTolerances,
) -> Result<FeasibilityOutcome> {
    check_inputs(ch, assoc, power_cap_w, noise_power_w)?;
    check_gamma(gamma_target)?;
    if gamma_target == 0.0 {
        return Ok(FeasibilityOutcome {
            status: Feasibility::Feasible,
            beamformers: Some(BeamformerSet::zeros_like(ch)),
            stats: SolverStats::default(),
        });
    }
    let inst = Instance::new(ch, assoc, power_cap_w, noise_power_w);
    if inst.has_dead_user() {
        return Ok(FeasibilityOutcome {
            status: Feasibility::Infeasible,
            beamformers: None,
            stats: SolverStats::default(),
        });
    }
    probe(&inst, gamma_target, tol)
}

/// Powers `p` such that scaling beam `k` by `sqrt(p_k)` gives every user
/// SINR exactly `gamma`; `None` if no non-negative solution exists.
pub(crate) fn balanced_powers(
    ch: &ChannelState,
    bf: &BeamformerSet,
    noise_power_w: f64,
    gamma: f64,
) -> Option<Vec<f64>> {
    let k_users = ch.n_users();
    let gains = DMatrix::from_fn(k_users, k_users, |k, j| effective_gain(ch, bf, k, j).norm_sqr());
    // (D - gamma G_off) p = gamma sigma^2 1
    let mut a = DMatrix::zeros(k_users, k_users);
    for k in 0..k_users {
        for j in 0..k_users {
            a[(k, j)] = if j == k { gains[(k, k)] } else { -gamma * gains[(k, j)] };
        }
    }
    let rhs = DVector::from_element(k_users, gamma * noise_power_w);
    let p = a.lu().solve(&rhs)?;
    if p.iter().all(|v| v.is_finite() && *v >= 0.0) {
        Some(p.iter().copied().collect())
    } else {
        None
    }
}

/// Rescales each user's beam so that all users sit at exactly `target`.
///
/// When every user already meets `target` the scale factors are at most 1,
/// so per-RRH power only goes down. Returns `None` if the target cannot be
/// balanced with the current beam directions.
pub fn equalize_sinr(
    ch: &ChannelState,
    bf: &BeamformerSet,
    noise_power_w: f64,
    target: f64,
) -> Option<BeamformerSet> {
    if target == 0.0 {
        return Some(BeamformerSet::zeros_like(ch));
    }
    let p = balanced_powers(ch, bf, noise_power_w, target)?;
    let mut out = bf.clone();
    for (k, pk) in p.iter().enumerate() {
        let s = pk.sqrt();
        for n in 0..ch.n_rrh() {
            out.w.link_mut(k, n).iter_mut().for_each(|w| *w *= s);
        }
    }
    Some(out)
}

fn settle(
    ch: &ChannelState,
    bf: BeamformerSet,
    noise_power_w: f64,
    gamma: f64,
) -> BeamformerSet {
    let achieved = crate::model::all_sinrs(ch, &bf)
        .map(|g| g.into_iter().fold(f64::INFINITY, f64::min))
        .unwrap_or(0.0);
    let target = gamma.min(achieved);
    if !(target > 0.0) {
        return bf;
    }
    equalize_sinr(ch, &bf, noise_power_w, target)
        .filter(|eq| crate::model::per_rrh_power(eq)
            .iter()
            .zip(crate::model::per_rrh_power(&bf))
            .all(|(a, b)| *a <= b * (1.0 + 1e-9) + 1e-300))
        .unwrap_or(bf)
}

/// Max-min SINR over the wireless links for a fixed association.
///
/// The search keeps a bracket `[lo, hi]` with `lo` feasible and `hi`
/// infeasible, starting from the interference-free single-user bound, and
/// stops once `hi - lo <= bisection_rel_tol * hi`. Probe points come from
/// false position on the optimal margin in `sqrt(gamma)` (Illinois
/// variant), falling back to plain bisection whenever the bracket fails to
/// halve. The returned beamformers are those of the last feasible probe,
/// rescaled so every user sits at the same SINR.
pub fn solve_max_min(
    ch: &ChannelState,
    assoc: &AssociationMap,
    power_cap_w: &[f64],
    noise_power_w: f64,
    tol: &SolverTolerances,
) -> Result<MaxMinSolution> {
    check_inputs(ch, assoc, power_cap_w, noise_power_w)?;
    let inst = Instance::new(ch, assoc, power_cap_w, noise_power_w);
    let zero = MaxMinSolution {
        gamma: 0.0,
        beamformers: BeamformerSet::zeros_like(ch),
        probes: 0,
    };
    if inst.has_dead_user() {
        return Ok(zero);
    }
    let ub = inst.mrt_bounds().into_iter().fold(f64::INFINITY, f64::min);
    if !(ub > 0.0) {
        return Ok(zero);
    }

    let mut probes = 0;
    let mut run = |gamma: f64| -> Result<FeasibilityOutcome> {
        probes += 1;
        probe(&inst, gamma, tol)
    };

    let top = run(ub)?;
    if let Some(bf) = top.beamformers {
        return Ok(MaxMinSolution {
            gamma: ub,
            beamformers: settle(ch, bf, noise_power_w, ub),
            probes: 1,
        });
    }

    // Work in y = sqrt(gamma); the margin is close to affine there.
    let (mut y_hi, mut f_hi) = (ub.sqrt(), top.stats.margin);
    let heuristic = inst.mrt_balanced_sinr(noise_power_w).min(ub);
    let mut y_lo = heuristic.sqrt();
    let first = run(heuristic)?;
    let (mut f_lo, mut bf_lo) = if first.is_feasible() {
        (first.stats.margin, first.beamformers.expect("feasible outcome has beamformers"))
    } else {
        // Heuristic overshot (can only happen at the edge of the margin tolerance).
        y_hi = y_lo;
        f_hi = first.stats.margin;
        y_lo = 0.0;
        let base = run(0.0)?;
        (base.stats.margin, BeamformerSet::zeros_like(ch))
    };

    let rel = tol.bisection_rel_tol;
    let mut side = 0i8;
    let mut width_before = y_hi - y_lo;
    let mut stale = 0;
    for _ in 0..tol.max_bisection_iters {
        if y_hi * y_hi - y_lo * y_lo <= rel * y_hi * y_hi {
            break;
        }
        let width = y_hi - y_lo;
        // Keep probes off the endpoints so both sides of the bracket move.
        let guard = 0.25 * rel * y_hi;
        let mut y = if stale >= 2 || !(f_lo > f_hi) {
            stale = 0;
            0.5 * (y_lo + y_hi)
        } else {
            y_lo + f_lo / (f_lo - f_hi) * width
        };
        y = y.clamp(y_lo + guard.min(0.5 * width), y_hi - guard.min(0.5 * width));
        let out = run(y * y)?;
        if let Some(bf) = out.beamformers {
            y_lo = y;
            f_lo = out.stats.margin;
            bf_lo = bf;
            if side == 1 {
                f_hi *= 0.5;
            }
            side = 1;
        } else {
            y_hi = y;
            f_hi = out.stats.margin;
            if side == -1 {
                f_lo *= 0.5;
            }
            side = -1;
        }
        let new_width = y_hi - y_lo;
        if new_width > 0.5 * width_before {
            stale += 1;
        } else {
            stale = 0;
            width_before = new_width;
        }
    }
    let gamma = y_lo * y_lo;
    Ok(MaxMinSolution {
        gamma,
        beamformers: settle(ch, bf_lo, noise_power_w, gamma),
        probes,
    })
}

/// Minimum-total-power beamformers meeting SINR `gamma_target` for every
/// user within the per-RRH caps.
pub fn solve_power_min(
    ch: &ChannelState,
    assoc: &AssociationMap,
    gamma_target: f64,
    power_cap_w: &[f64],
    noise_power_w: f64,
) -> Result<BeamformerSet> {
    check_inputs(ch, assoc, power_cap_w, noise_power_w)?;
    check_gamma(gamma_target)?;
    if gamma_target == 0.0 {
        return Ok(BeamformerSet::zeros_like(ch));
    }
    let inst = Instance::new(ch, assoc, power_cap_w, noise_power_w);
    if inst.has_dead_user() {
        return Err(Error::InfeasibleTarget(gamma_target));
    }
    let prog = inst.power_program(gamma_target);
    let sol = socp::solve(&prog, IpmSettings::default());
    if sol.status == IpmStatus::PrimalInfeasible {
        return Err(Error::InfeasibleTarget(gamma_target));
    }
    if !usable(&sol) {
        return Err(Error::Indeterminate(format!(
            "power minimisation at SINR {gamma_target:.6e} ended with {:?}",
            sol.status
        )));
    }
    let bf = inst.beamformers(&sol.x.as_slice()[..inst.dim_w]);
    Ok(equalize_sinr(ch, &bf, noise_power_w, gamma_target).unwrap_or(bf))
}

/// Memoising front end for repeated wireless-side solves on one channel
/// realisation. Results depend only on the association (and target), so
/// cached values are exactly what a fresh solve would return.
pub struct Evaluator<'a> {
    pub ch: &'a ChannelState,
    pub power_cap_w: &'a [f64],
    pub noise_power_w: f64,
    pub tol: SolverTolerances,
    max_min: RefCell<HashMap<AssociationMap, MaxMinSolution>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        ch: &'a ChannelState,
        power_cap_w: &'a [f64],
        noise_power_w: f64,
        tol: SolverTolerances,
    ) -> Self {
        Evaluator {
            ch,
            power_cap_w,
            noise_power_w,
            tol,
            max_min: RefCell::new(HashMap::new()),
        }
    }

    pub fn max_min(&self, assoc: &AssociationMap) -> Result<MaxMinSolution> {
        if let Some(hit) = self.max_min.borrow().get(assoc) {
            return Ok(hit.clone());
        }
        let sol = solve_max_min(self.ch, assoc, self.power_cap_w, self.noise_power_w, &self.tol)?;
        self.max_min.borrow_mut().insert(assoc.clone(), sol.clone());
        Ok(sol)
    }

    /// Beamformers reaching `target` (no more than the wireless max-min
    /// value `wireless`). Minimum power when the cone solver manages it;
    /// otherwise the max-min beamformers scaled down to the target.
    pub fn achieve(
        &self,
        assoc: &AssociationMap,
        target: f64,
        wireless: &MaxMinSolution,
    ) -> Result<BeamformerSet> {
        match solve_power_min(self.ch, assoc, target, self.power_cap_w, self.noise_power_w) {
            Ok(bf) => Ok(bf),
            Err(Error::InfeasibleTarget(_)) | Err(Error::Indeterminate(_))
                if target <= wireless.gamma =>
            {
                Ok(equalize_sinr(self.ch, &wireless.beamformers, self.noise_power_w, target)
                    .unwrap_or_else(|| wireless.beamformers.clone()))
            }
            Err(e) => Err(e),
        }
    }

    pub fn cached_solves(&self) -> usize {
        self.max_min.borrow().len()
    }
}
