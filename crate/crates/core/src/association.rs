//! User association: the iterative link-removal algorithm and the benchmark
//! association schemes.
//!
//! Every scheme evaluates a candidate association the same way: the wireless
//! max-min SINR `gamma1` from the cone solver, the fronthaul-limited SINR
//! `gamma2` in closed form, and `min(gamma1, gamma2)` as the value of the
//! association.

use crate::channel::Topology;
use crate::conic::{Evaluator, MaxMinSolution, SolverTolerances};
use crate::error::{Error, Result};
use crate::model::{
    effective_gain, inner, norm_sqr, AssociationMap, BeamformerSet, ChannelState,
    IterationRecord, NetworkConfig, SolveReport,
};
use crate::oracle::{fixed_beamformers, fixed_value, solve_fixed_association_with};

/// Relative tolerance for treating two scores (or fronthaul ratios) as tied.
pub const TIE_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkChoice {
    pub user: usize,
    pub rrh: usize,
    pub score: f64,
}

/// Rule for picking the link to switch off.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// Keep the removed link's user as strong as possible: maximise the
    /// SINR it retains from its other serving RRHs.
    RetainedSinr,
    /// Remove the link leaking the most interference to other users.
    InterferenceLeakage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alg1Options {
    pub selector: Selector,
    /// Never remove a user's last serving link.
    pub last_link_guard: bool,
}

impl Default for Alg1Options {
    fn default() -> Self {
        Alg1Options {
            selector: Selector::RetainedSinr,
            last_link_guard: true,
        }
    }
}

fn ties(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_REL_TOL * a.abs().max(b.abs())
}

/// Largest SINR the fronthaul alone allows: `min_n 2^(T_n / (B |omega_n|)) - 1`
/// over RRHs serving someone; `+inf` if no RRH serves anyone.
pub fn fronthaul_cap(assoc: &AssociationMap, fronthaul_cap_bps: &[f64], bandwidth_hz: f64) -> f64 {
    assoc
        .sets()
        .iter()
        .zip(fronthaul_cap_bps)
        .filter(|(set, _)| !set.is_empty())
        .map(|(set, &cap)| (cap / (bandwidth_hz * set.len() as f64)).exp2() - 1.0)
        .fold(f64::INFINITY, f64::min)
}

/// RRHs with the smallest per-user fronthaul share `T_n / |omega_n|`.
pub fn bottleneck_rrhs(assoc: &AssociationMap, fronthaul_cap_bps: &[f64]) -> Result<Vec<usize>> {
    let ratios: Vec<(usize, f64)> = assoc
        .sets()
        .iter()
        .enumerate()
        .filter(|(_, set)| !set.is_empty())
        .map(|(n, set)| (n, fronthaul_cap_bps[n] / set.len() as f64))
        .collect();
    let best = ratios
        .iter()
        .map(|r| r.1)
        .fold(f64::INFINITY, f64::min);
    if ratios.is_empty() {
        return Err(Error::Domain("no RRH serves any user".into()));
    }
    Ok(ratios
        .into_iter()
        .filter(|&(_, r)| ties(r, best))
        .map(|(n, _)| n)
        .collect())
}

/// Active links at the bottleneck RRHs, ordered by `(user, rrh)`.
pub fn candidate_links(
    psi: &[usize],
    assoc: &AssociationMap,
    last_link_guard: bool,
) -> Vec<(usize, usize)> {
    let mut links: Vec<(usize, usize)> = psi
        .iter()
        .flat_map(|&n| assoc.served_by(n).iter().map(move |&k| (k, n)))
        .filter(|&(k, _)| !last_link_guard || assoc.serving_rrhs(k).len() > 1)
        .collect();
    links.sort_unstable();
    links.dedup();
    links
}

fn argmax_lex(
    phi: &[(usize, usize)],
    mut score: impl FnMut(usize, usize) -> f64,
) -> Result<LinkChoice> {
    let mut sorted = phi.to_vec();
    sorted.sort_unstable();
    let mut best: Option<LinkChoice> = None;
    for (k, n) in sorted {
        let s = score(k, n);
        let better = match best {
            None => true,
            Some(b) => s > b.score && !ties(s, b.score),
        };
        if better {
            best = Some(LinkChoice {
                user: k,
                rrh: n,
                score: s,
            });
        }
    }
    best.ok_or_else(|| Error::Domain("candidate link set is empty".into()))
}

/// Picks the link whose removal leaves its user with the highest SINR,
/// evaluated on the current max-min beamformers.
pub fn select_removal(
    ch: &ChannelState,
    bf1: &BeamformerSet,
    phi: &[(usize, usize)],
    noise_power_w: f64,
) -> Result<LinkChoice> {
    argmax_lex(phi, |k, n_off| {
        let retained: f64 = (0..ch.n_rrh())
            .filter(|&n| n != n_off)
            .map(|n| inner(ch.h.link(k, n), bf1.w.link(k, n)).norm_sqr())
            .sum();
        let interference: f64 = (0..ch.n_users())
            .filter(|&j| j != k)
            .map(|j| effective_gain(ch, bf1, k, j).norm_sqr())
            .sum();
        retained / (interference + noise_power_w)
    })
}

/// Picks the link that leaks the most interference to the other users.
pub fn benchmark1_select(
    ch: &ChannelState,
    bf1: &BeamformerSet,
    phi: &[(usize, usize)],
) -> Result<LinkChoice> {
    argmax_lex(phi, |k, n| {
        (0..ch.n_users())
            .filter(|&j| j != k)
            .map(|j| inner(ch.h.link(j, n), bf1.w.link(k, n)).norm_sqr())
            .sum()
    })
}

fn check_config(ch: &ChannelState, cfg: &NetworkConfig) -> Result<()> {
    cfg.validate()?;
    ch.check_against(cfg)
}

fn scheme_label(opts: &Alg1Options) -> &'static str {
    match opts.selector {
        Selector::RetainedSinr => "alg1",
        Selector::InterferenceLeakage => "bench1",
    }
}

/// Iterative link removal starting from full cooperation.
pub fn run_algorithm1(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    tol: &SolverTolerances,
    selector: Selector,
) -> Result<SolveReport> {
    check_config(ch, cfg)?;
    let eval = Evaluator::new(ch, &cfg.power_cap_w, cfg.noise_power_w, *tol);
    run_algorithm1_with(
        &eval,
        cfg,
        Alg1Options {
            selector,
            ..Alg1Options::default()
        },
    )
}

/// An evaluated association whose beamformers are only built if it is
/// the one reported.
struct Candidate {
    gamma: f64,
    gamma2: f64,
    association: AssociationMap,
    wireless: MaxMinSolution,
}

impl Candidate {
    fn report(
        self,
        eval: &Evaluator<'_>,
        label: &str,
        iterations: Vec<IterationRecord>,
    ) -> Result<SolveReport> {
        let beamformers = match fixed_beamformers(eval, &self.association, self.gamma2, &self.wireless) {
            Ok(bf) => bf,
            Err(e) => return Err(indeterminate(e, label, iterations, eval.ch, &self.association)),
        };
        Ok(SolveReport {
            scheme_label: label.to_string(),
            iterations,
            final_gamma: self.gamma,
            final_beamformers: beamformers,
            final_association: self.association,
        })
    }
}

fn indeterminate(err: Error, label: &str, iterations: Vec<IterationRecord>, ch: &ChannelState, assoc: &AssociationMap) -> Error {
    if !err.is_indeterminate() {
        return err;
    }
    let reason = err.to_string();
    Error::IndeterminateRun {
        reason,
        partial: Box::new(SolveReport {
            scheme_label: label.to_string(),
            iterations,
            final_gamma: f64::NAN,
            final_beamformers: BeamformerSet::zeros_like(ch),
            final_association: assoc.clone(),
        }),
    }
}

/// [`run_algorithm1`] on a shared evaluator (reuses cached wireless solves).
pub fn run_algorithm1_with(
    eval: &Evaluator<'_>,
    cfg: &NetworkConfig,
    opts: Alg1Options,
) -> Result<SolveReport> {
    let ch = eval.ch;
    check_config(ch, cfg)?;
    let label = scheme_label(&opts);
    let mut omega = AssociationMap::full(cfg.n_rrh, cfg.n_users);
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut best: Option<Candidate> = None;
    let max_iters = cfg.n_rrh * cfg.n_users;

    for t in 1..=max_iters {
        let wireless: MaxMinSolution = eval
            .max_min(&omega)
            .map_err(|e| indeterminate(e, label, records.clone(), ch, &omega))?;
        let gamma1 = wireless.gamma;
        let gamma2 = fronthaul_cap(&omega, &cfg.fronthaul_cap_bps, cfg.bandwidth_hz);
        let gamma = gamma1.min(gamma2);
        let stop = gamma1 <= gamma2;

        // Ties go to the later iterate.
        if best.as_ref().map_or(true, |b| gamma >= b.gamma) {
            best = Some(Candidate {
                gamma,
                gamma2,
                association: omega.clone(),
                wireless: wireless.clone(),
            });
        }

        let mut record = IterationRecord {
            t,
            gamma1,
            gamma2,
            gamma,
            removed: None,
            activated: None,
            omega_sizes: omega.sizes(),
        };
        if stop {
            records.push(record);
            break;
        }
        let psi = bottleneck_rrhs(&omega, &cfg.fronthaul_cap_bps)?;
        let phi = candidate_links(&psi, &omega, opts.last_link_guard);
        if phi.is_empty() {
            records.push(record);
            break;
        }
        let choice = match opts.selector {
            Selector::RetainedSinr => {
                select_removal(ch, &wireless.beamformers, &phi, cfg.noise_power_w)?
            }
            Selector::InterferenceLeakage => benchmark1_select(ch, &wireless.beamformers, &phi)?,
        };
        omega.remove(choice.user, choice.rrh);
        record.removed = Some((choice.user, choice.rrh));
        records.push(record);
    }

    best.expect("at least one iteration runs")
        .report(eval, label, records)
}

/// Serving RRH per user for the cellular baselines: the geometrically
/// nearest RRH when positions are known, otherwise the strongest channel.
pub fn nearest_rrh(ch: &ChannelState, topo: Option<&Topology>) -> Vec<usize> {
    match topo {
        Some(t) => t.nearest_rrh(),
        None => (0..ch.n_users())
            .map(|k| {
                (0..ch.n_rrh())
                    .max_by(|&a, &b| {
                        norm_sqr(ch.h.link(k, a))
                            .total_cmp(&norm_sqr(ch.h.link(k, b)))
                            .then(b.cmp(&a))
                    })
                    .expect("at least one RRH")
            })
            .collect(),
    }
}

/// Greedy activation: start from nearest-RRH association, switch on the
/// strongest inactive link one at a time, stop at the first drop in value.
pub fn run_benchmark2(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    tol: &SolverTolerances,
    topo: Option<&Topology>,
) -> Result<SolveReport> {
    check_config(ch, cfg)?;
    let eval = Evaluator::new(ch, &cfg.power_cap_w, cfg.noise_power_w, *tol);
    run_benchmark2_with(&eval, cfg, &nearest_rrh(ch, topo))
}

pub fn run_benchmark2_with(
    eval: &Evaluator<'_>,
    cfg: &NetworkConfig,
    serving: &[usize],
) -> Result<SolveReport> {
    let ch = eval.ch;
    check_config(ch, cfg)?;
    let label = "bench2";
    // Decreases smaller than the solver's own resolution are noise.
    let drop_tol = 2.0 * eval.tol.bisection_rel_tol;

    let mut omega = AssociationMap::single_serving(cfg.n_rrh, serving)?;
    let mut inactive: Vec<(usize, usize)> = (0..cfg.n_users)
        .flat_map(|k| (0..cfg.n_rrh).map(move |n| (k, n)))
        .filter(|&(k, n)| !omega.contains(k, n))
        .collect();
    // Strongest first; equal strengths in (user, rrh) order.
    inactive.sort_by(|&(k1, n1), &(k2, n2)| {
        norm_sqr(ch.h.link(k2, n2))
            .total_cmp(&norm_sqr(ch.h.link(k1, n1)))
            .then((k1, n1).cmp(&(k2, n2)))
    });

    let mut records = Vec::new();
    let (gamma1, gamma2, wireless) = fixed_value(eval, &omega, cfg)
        .map_err(|e| indeterminate(e, label, records.clone(), ch, &omega))?;
    records.push(IterationRecord {
        t: 1,
        gamma1,
        gamma2,
        gamma: gamma1.min(gamma2),
        removed: None,
        activated: None,
        omega_sizes: omega.sizes(),
    });
    let mut current = Candidate {
        gamma: gamma1.min(gamma2),
        gamma2,
        association: omega.clone(),
        wireless,
    };

    for (t, &(k, n)) in (2..).zip(&inactive) {
        omega.insert(k, n);
        let (gamma1, gamma2, wireless) = fixed_value(eval, &omega, cfg)
            .map_err(|e| indeterminate(e, label, records.clone(), ch, &omega))?;
        let gamma = gamma1.min(gamma2);
        records.push(IterationRecord {
            t,
            gamma1,
            gamma2,
            gamma,
            removed: None,
            activated: Some((k, n)),
            omega_sizes: omega.sizes(),
        });
        if gamma < current.gamma * (1.0 - drop_tol) {
            break;
        }
        current = Candidate {
            gamma,
            gamma2,
            association: omega.clone(),
            wireless,
        };
    }

    current.report(eval, label, records)
}

/// Conventional cellular network: every user served by its nearest RRH only.
pub fn run_benchmark3(
    ch: &ChannelState,
    cfg: &NetworkConfig,
    tol: &SolverTolerances,
    topo: Option<&Topology>,
) -> Result<SolveReport> {
    check_config(ch, cfg)?;
    let eval = Evaluator::new(ch, &cfg.power_cap_w, cfg.noise_power_w, *tol);
    run_benchmark3_with(&eval, cfg, &nearest_rrh(ch, topo))
}

pub fn run_benchmark3_with(
    eval: &Evaluator<'_>,
    cfg: &NetworkConfig,
    serving: &[usize],
) -> Result<SolveReport> {
    let ch = eval.ch;
    check_config(ch, cfg)?;
    let omega = AssociationMap::single_serving(cfg.n_rrh, serving)?;
    let fixed = solve_fixed_association_with(eval, &omega, cfg)
        .map_err(|e| indeterminate(e, "bench3", Vec::new(), ch, &omega))?;
    Ok(SolveReport {
        scheme_label: "bench3".to_string(),
        iterations: vec![IterationRecord {
            t: 1,
            gamma1: fixed.gamma1,
            gamma2: fixed.gamma2,
            gamma: fixed.gamma,
            removed: None,
            activated: None,
            omega_sizes: omega.sizes(),
        }],
        final_gamma: fixed.gamma,
        final_beamformers: fixed.beamformers,
        final_association: omega,
    })
}
