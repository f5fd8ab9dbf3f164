//! Fixed-association evaluation and a brute-force search over all
//! associations for small networks.

use rayon::prelude::*;

use crate::association::fronthaul_cap;
use crate::conic::{Evaluator, MaxMinSolution, SolverTolerances};
use crate::error::{Error, Result};
use crate::model::{AssociationMap, BeamformerSet, ChannelState, NetworkConfig};

/// Largest `n_rrh * n_users` the exhaustive search accepts.
pub const MAX_EXHAUSTIVE_LINKS: usize = 12;

#[derive(Debug, Clone)]
pub struct FixedEvaluation {
    /// Wireless-only max-min SINR.
    pub gamma1: f64,
    /// Fronthaul-limited SINR.
    pub gamma2: f64,
    /// `min(gamma1, gamma2)`.
    pub gamma: f64,
    pub beamformers: BeamformerSet,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub gamma: f64,
    pub association: AssociationMap,
    pub beamformers: BeamformerSet,
    /// Number of associations evaluated.
    pub evaluated: usize,
}

/// Value of one association under both wireless and fronthaul limits.
pub fn solve_fixed_association(
    ch: &ChannelState,
    assoc: &AssociationMap,
    cfg: &NetworkConfig,
    tol: &SolverTolerances,
) -> Result<FixedEvaluation> {
    cfg.validate()?;
    ch.check_against(cfg)?;
    let eval = Evaluator::new(ch, &cfg.power_cap_w, cfg.noise_power_w, *tol);
    solve_fixed_association_with(&eval, assoc, cfg)
}

pub fn solve_fixed_association_with(
    eval: &Evaluator<'_>,
    assoc: &AssociationMap,
    cfg: &NetworkConfig,
) -> Result<FixedEvaluation> {
    if assoc.n_rrh() != cfg.n_rrh || assoc.n_users() != cfg.n_users {
        return Err(Error::Dimension(format!(
            "association is {}x{}, network is {}x{}",
            assoc.n_rrh(),
            assoc.n_users(),
            cfg.n_rrh,
            cfg.n_users
        )));
    }
    let (gamma1, gamma2, wireless) = fixed_value(eval, assoc, cfg)?;
    let beamformers = fixed_beamformers(eval, assoc, gamma2, &wireless)?;
    Ok(FixedEvaluation {
        gamma1,
        gamma2,
        gamma: gamma1.min(gamma2),
        beamformers,
    })
}

/// `(gamma1, gamma2, wireless optimum)` without computing final beamformers.
pub(crate) fn fixed_value(
    eval: &Evaluator<'_>,
    assoc: &AssociationMap,
    cfg: &NetworkConfig,
) -> Result<(f64, f64, MaxMinSolution)> {
    let wireless = eval.max_min(assoc)?;
    let gamma2 = fronthaul_cap(assoc, &cfg.fronthaul_cap_bps, cfg.bandwidth_hz);
    Ok((wireless.gamma, gamma2, wireless))
}

/// Beamformers achieving `min(gamma1, gamma2)`: the wireless optimum when the
/// fronthaul is slack, otherwise minimum-power beams at the fronthaul limit.
pub(crate) fn fixed_beamformers(
    eval: &Evaluator<'_>,
    assoc: &AssociationMap,
    gamma2: f64,
    wireless: &MaxMinSolution,
) -> Result<BeamformerSet> {
    if wireless.gamma <= gamma2 {
        Ok(wireless.beamformers.clone())
    } else if gamma2 > 0.0 {
        eval.achieve(assoc, gamma2, wireless)
    } else {
        Ok(BeamformerSet::zeros_like(eval.ch))
    }
}

/// Best association by enumeration. Masks are visited in increasing order
/// with bit `k * n_rrh + n` set when RRH `n` serves user `k`; the first
/// mask reaching the best value wins.
pub fn exhaustive_best(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    tol: &SolverTolerances,
    require_all_served: bool,
) -> Result<OracleResult> {
    cfg.validate()?;
    ch.check_against(cfg)?;
    let links = cfg.n_rrh * cfg.n_users;
    if links > MAX_EXHAUSTIVE_LINKS {
        return Err(Error::TooLarge {
            links,
            cap: MAX_EXHAUSTIVE_LINKS,
        });
    }
    let masks: Vec<AssociationMap> = (0u32..(1u32 << links))
        .map(|mask| {
            let mut assoc = AssociationMap::empty(cfg.n_rrh, cfg.n_users);
            for bit in (0..links).filter(|b| mask >> b & 1 == 1) {
                assoc.insert(bit / cfg.n_rrh, bit % cfg.n_rrh);
            }
            assoc
        })
        .filter(|assoc| !require_all_served || assoc.all_served())
        .collect();
    let values: Vec<FixedEvaluation> = masks
        .par_iter()
        .map(|assoc| {
            let eval = Evaluator::new(ch, &cfg.power_cap_w, cfg.noise_power_w, *tol);
            solve_fixed_association_with(&eval, assoc, cfg)
        })
        .collect::<Result<_>>()?;
    let evaluated = values.len();
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.iter().enumerate() {
        if best.map_or(true, |(_, g)| v.gamma > g) {
            best = Some((i, v.gamma));
        }
    }
    let (i, gamma) =
        best.ok_or_else(|| Error::Domain("no association satisfies the constraints".into()))?;
    Ok(OracleResult {
        gamma,
        association: masks[i].clone(),
        beamformers: values[i].beamformers.clone(),
        evaluated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::{run_algorithm1, Selector};
    use crate::channel::{generate_channels, generate_topology, noise_power, GenConfig};
    use crate::conic::solve_max_min;
    use crate::model::{all_sinrs, per_rrh_power, LinkArray};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn small(seed: u64, cap_bps: f64) -> (ChannelState, NetworkConfig) {
        let gen = GenConfig::default();
        let topo = generate_topology(&gen, 2, 3, seed);
        let noise = noise_power(-169.0, 7.0, 1e7).unwrap();
        let ch = generate_channels(&topo, &gen, 2, noise, seed ^ 0xabc).unwrap();
        let cfg = NetworkConfig {
            n_rrh: 2,
            n_users: 3,
            n_antennas: 2,
            bandwidth_hz: 1e7,
            power_cap_w: vec![1.0; 2],
            fronthaul_cap_bps: vec![cap_bps; 2],
            noise_power_w: noise,
        };
        (ch, cfg)
    }

    #[test]
    fn single_link_network() {
        let h = LinkArray::from_vec(1, 1, 1, vec![Complex64::new(2.0, 0.0)]).unwrap();
        let ch = ChannelState::new(h, 1.0).unwrap();
        let cfg = NetworkConfig {
            n_rrh: 1,
            n_users: 1,
            n_antennas: 1,
            bandwidth_hz: 1.0,
            power_cap_w: vec![1.0],
            fronthaul_cap_bps: vec![1e12],
            noise_power_w: 1.0,
        };
        let tol = SolverTolerances::default();
        let best = exhaustive_best(&ch, &cfg, &tol, true).unwrap();
        assert_eq!(best.evaluated, 1);
        let fixed = solve_fixed_association(&ch, &AssociationMap::full(1, 1), &cfg, &tol).unwrap();
        assert_eq!(best.gamma, fixed.gamma);
        assert_relative_eq!(best.gamma, 4.0, max_relative = 1e-3);
        // Tight fronthaul: only the closed-form branch binds.
        let tight = cfg.with_common_fronthaul(1.0);
        let fixed = solve_fixed_association(&ch, &AssociationMap::full(1, 1), &tight, &tol).unwrap();
        assert_eq!(fixed.gamma, 1.0);
        let s = all_sinrs(&ch, &fixed.beamformers).unwrap();
        assert_relative_eq!(s[0], 1.0, max_relative = 1e-6);
    }

    #[test]
    fn unconstrained_optimum_is_full_association() {
        let (ch, cfg) = small(4, 1e12);
        let tol = SolverTolerances::default();
        let best = exhaustive_best(&ch, &cfg, &tol, true).unwrap();
        let full = solve_max_min(&ch, &AssociationMap::full(2, 3), &cfg.power_cap_w, cfg.noise_power_w, &tol).unwrap();
        assert_relative_eq!(best.gamma, full.gamma, max_relative = 2e-4);
        let unguarded = exhaustive_best(&ch, &cfg, &tol, false).unwrap();
        assert_eq!(unguarded.evaluated, 64);
        assert_eq!(unguarded.gamma, best.gamma);
    }

    #[test]
    fn dominates_algorithm1_and_respects_constraints() {
        let tol = SolverTolerances::default();
        for seed in 0..3 {
            let (ch, cfg) = small(seed, 3e7);
            let best = exhaustive_best(&ch, &cfg, &tol, true).unwrap();
            let rep = run_algorithm1(&ch, &cfg, &tol, Selector::RetainedSinr).unwrap();
            assert!(rep.final_gamma <= best.gamma * (1.0 + 1e-3));
            let power = per_rrh_power(&best.beamformers);
            assert!(power.iter().all(|&p| p <= 1.0 + 1e-6));
            let s = all_sinrs(&ch, &best.beamformers).unwrap();
            assert!(s.iter().all(|&x| x >= best.gamma * (1.0 - 1e-6)));
        }
    }

    #[test]
    fn refuses_large_networks() {
        let gen = GenConfig::default();
        let topo = generate_topology(&gen, 3, 5, 0);
        let ch = generate_channels(&topo, &gen, 1, 1e-13, 0).unwrap();
        let cfg = NetworkConfig {
            n_rrh: 3,
            n_users: 5,
            n_antennas: 1,
            bandwidth_hz: 1e7,
            power_cap_w: vec![1.0; 3],
            fronthaul_cap_bps: vec![1e8; 3],
            noise_power_w: 1e-13,
        };
        assert!(matches!(
            exhaustive_best(&ch, &cfg, &SolverTolerances::default(), true),
            Err(Error::TooLarge { links: 15, cap: 12 })
        ));
    }
}
