//! Checks of the privacy conditions and of the dimension requirements.

mod nogo;

pub use nogo::{
    qubit_nogo_search, qubit_residual, qubit_terms, NogoResult, QubitSchemeParams,
    DEFAULT_ITERATIONS, DEFAULT_RESTARTS,
};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ballots::{prepare_tb_ballot, shift_unitary, BallotConfig, Scheme, VoteChoice};
use crate::error::{config as invalid, Error, Result};
use crate::protocols::{db_stages, tb_stages};
use crate::qstate::{phase, CorrelatedState, LocalUnitary, PureState, C64};

/// Largest voter count for exhaustive enumeration of yes/no vote vectors.
pub const MAX_ENUMERATED_VOTERS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub scheme: Scheme,
    pub d: usize,
    pub n: usize,
    pub tolerance: f64,
    pub pass: bool,
    /// Largest `| |⟨Ω_v|Ω_w⟩| − 1 |` over pairs with equal tallies.
    pub worst_same_tally_deviation: f64,
    /// Largest `|⟨Ω_v|Ω_w⟩|` over pairs with different tallies.
    pub worst_cross_tally_overlap: f64,
    pub same_tally_pairs: usize,
    pub cross_tally_pairs: usize,
}

/// Final ballot state for a vote vector, in the form overlaps are taken.
enum Final {
    Compact(CorrelatedState),
    Dense(PureState),
}

impl Final {
    fn overlap(&self, other: &Final) -> Result<C64> {
        match (self, other) {
            (Final::Compact(a), Final::Compact(b)) => a.inner(b),
            (Final::Dense(a), Final::Dense(b)) => a.inner(b),
            _ => unreachable!("one scheme per report"),
        }
    }
}

fn final_state(scheme: Scheme, d: usize, n: usize, mask: u64) -> Result<Final> {
    let yes = mask.count_ones() as usize;
    match scheme {
        // each yes vote multiplies digit k by e^{2πik/d}; built without the d > N check
        Scheme::Db => {
            let base = CorrelatedState::uniform(d, n.max(1))?;
            let phases: Vec<C64> = (0..d)
                .map(|k| phase(2.0 * PI * ((k * yes) % d) as f64 / d as f64))
                .collect();
            Ok(Final::Compact(base.apply_phases(&phases)?))
        }
        Scheme::Tb => {
            let mut st = prepare_tb_ballot(d)?;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    st = st.apply_local(1, &shift_unitary(d))?;
                }
            }
            Ok(Final::Dense(st))
        }
        other => invalid(format!("privacy check covers db and tb, not {other}")),
    }
}

/// Enumerates every yes/no vote vector and checks that equal tallies give
/// the same state up to phase and different tallies give orthogonal states.
///
/// Up to 10 voters every pair is compared. Beyond that each state is
/// compared with the first state of its tally class, and the class
/// representatives are compared with each other.
pub fn check_privacy(scheme: Scheme, d: usize, n: usize, tolerance: f64) -> Result<PrivacyReport> {
    if n > MAX_ENUMERATED_VOTERS {
        return invalid(format!(
            "refusing to enumerate 2^{n} vote vectors (limit N ≤ {MAX_ENUMERATED_VOTERS})"
        ));
    }
    if d < 2 {
        return invalid(format!("qudit dimension d={d} must be at least 2"));
    }
    let states: Vec<(usize, Final)> = (0..1u64 << n)
        .map(|mask| Ok((mask.count_ones() as usize, final_state(scheme, d, n, mask)?)))
        .collect::<Result<_>>()?;
    let mut report = PrivacyReport {
        scheme,
        d,
        n,
        tolerance,
        pass: false,
        worst_same_tally_deviation: 0.0,
        worst_cross_tally_overlap: 0.0,
        same_tally_pairs: 0,
        cross_tally_pairs: 0,
    };
    let mut compare = |a: &(usize, Final), b: &(usize, Final)| -> Result<()> {
        let o = a.1.overlap(&b.1)?.norm();
        if a.0 == b.0 {
            report.same_tally_pairs += 1;
            report.worst_same_tally_deviation =
                report.worst_same_tally_deviation.max((o - 1.0).abs());
        } else {
            report.cross_tally_pairs += 1;
            report.worst_cross_tally_overlap = report.worst_cross_tally_overlap.max(o);
        }
        Ok(())
    };
    if n <= 10 {
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                compare(&states[i], &states[j])?;
            }
        }
    } else {
        let mut reps: Vec<usize> = vec![];
        for (i, s) in states.iter().enumerate() {
            match reps.iter().find(|&&r| states[r].0 == s.0) {
                Some(&r) => compare(&states[r], s)?,
                None => reps.push(i),
            }
        }
        for a in 0..reps.len() {
            for b in a + 1..reps.len() {
                compare(&states[reps[a]], &states[reps[b]])?;
            }
        }
    }
    report.pass = report.worst_same_tally_deviation <= tolerance
        && report.worst_cross_tally_overlap <= tolerance;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedReport {
    pub sites: Vec<usize>,
    pub deviation: f64,
    pub pass: bool,
}

/// Max-norm distance between the reduced state of `sites` and `I/D`.
pub fn check_reduced_identity(
    state: &PureState,
    sites: &[usize],
    tolerance: f64,
) -> Result<ReducedReport> {
    if sites.is_empty() {
        return invalid("subset must not be empty");
    }
    let mut sorted = sites.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != sites.len() {
        return invalid("subset has repeated sites");
    }
    if sorted.len() >= state.num_sites() {
        return invalid(
            "subset must be strict: the full register is pure, never proportional to I",
        );
    }
    let deviation = state.reduced_density(sites)?.identity_deviation();
    Ok(ReducedReport {
        sites: sites.to_vec(),
        deviation,
        pass: deviation <= tolerance,
    })
}

/// Every strict, non-empty subset of `0..n`, as site lists.
pub fn strict_subsets(n: usize) -> Vec<Vec<usize>> {
    (1..(1u64 << n) - 1)
        .map(|mask| (0..n).filter(|&i| mask >> i & 1 == 1).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: usize,
    /// Worst `‖ρ_S − I/D‖_max` over subsets of each size, index 0 for size 1.
    pub worst_by_size: Vec<f64>,
    pub worst_subset: Vec<usize>,
    /// Worst `‖ρ_S − ρ_S(prepared)‖_max`: what the subset learns from the votes.
    pub worst_vote_dependence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateReport {
    pub scheme: Scheme,
    pub d: usize,
    pub n: usize,
    pub votes: Vec<VoteChoice>,
    pub tolerance: f64,
    pub stages: Vec<StageReport>,
    /// Every single site is maximally mixed at every stage.
    pub single_sites_pass: bool,
    /// No reduced state of a strict subset depends on the votes.
    pub vote_independent: bool,
    /// Every strict subset is maximally mixed at every stage.
    pub pass: bool,
}

/// Reduced states of every strict subset after preparation and after each
/// honest vote of a distributed or travelling ballot.
pub fn check_intermediate_privacy(
    config: &BallotConfig,
    votes: &[VoteChoice],
    tolerance: f64,
) -> Result<IntermediateReport> {
    let states = match config.scheme {
        Scheme::Db => db_stages(config, votes)?,
        Scheme::Tb => tb_stages(config, votes)?,
        other => return invalid(format!("intermediate check covers db and tb, not {other}")),
    };
    let sites = states[0].num_sites();
    let subsets = strict_subsets(sites);
    let prepared: Vec<_> = subsets
        .iter()
        .map(|s| states[0].reduced_density(s))
        .collect::<Result<_>>()?;
    let mut stages = Vec::with_capacity(states.len());
    for (stage, st) in states.iter().enumerate() {
        let mut report = StageReport {
            stage,
            worst_by_size: vec![0.0; sites - 1],
            worst_subset: vec![],
            worst_vote_dependence: 0.0,
        };
        let mut worst = -1.0;
        for (sub, before) in subsets.iter().zip(&prepared) {
            let rho = st.reduced_density(sub)?;
            let dev = rho.identity_deviation();
            let slot = &mut report.worst_by_size[sub.len() - 1];
            *slot = slot.max(dev);
            if dev > worst {
                worst = dev;
                report.worst_subset = sub.clone();
            }
            report.worst_vote_dependence =
                report.worst_vote_dependence.max(rho.max_abs_diff(before));
        }
        stages.push(report);
    }
    let single_sites_pass = stages.iter().all(|s| s.worst_by_size[0] <= tolerance);
    let vote_independent = stages.iter().all(|s| s.worst_vote_dependence <= tolerance);
    let pass = stages
        .iter()
        .all(|s| s.worst_by_size.iter().all(|&w| w <= tolerance));
    Ok(IntermediateReport {
        scheme: config.scheme,
        d: config.d,
        n: config.n,
        votes: votes.to_vec(),
        tolerance,
        stages,
        single_sites_pass,
        vote_independent,
        pass,
    })
}

const NOGO_GRID: &str = include_str!("../../tests/fixtures/nogo_grid.json");

/// Slack allowed below the grid floor for optimizer round-off.
pub const NOGO_FLOOR_SLACK: f64 = 1e-9;

/// Minimum of the qubit residual over the coarse `(ν, θ)` grid, with the
/// inner minimisation over `Ω` solved exactly.
pub fn nogo_floor() -> f64 {
    let v: serde_json::Value = serde_json::from_str(NOGO_GRID).expect("grid fixture is valid JSON");
    v["exact_grid_min"]
        .as_f64()
        .expect("grid fixture has exact_grid_min")
}

/// Minimum over the same grid from 50 random `Ω` per point, an upper estimate.
pub fn nogo_random_grid_min() -> f64 {
    let v: serde_json::Value = serde_json::from_str(NOGO_GRID).expect("grid fixture is valid JSON");
    v["random_grid_min"]
        .as_f64()
        .expect("grid fixture has random_grid_min")
}

/// `|⟨U⊗I⟩|² + |⟨I⊗V⟩|² + |⟨U⊗V⟩|² + |1 − ⟨U⊗V†⟩|²` on a two-site `Ω`.
pub fn privacy_residual(u: &LocalUnitary, v: &LocalUnitary, omega: &PureState) -> Result<f64> {
    if omega.num_sites() != 2 || omega.dims()[0] != u.dim() || omega.dims()[1] != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim() * v.dim(),
            actual: omega.total_dim(),
        });
    }
    let ev = |s: PureState| omega.inner(&s);
    let ui = ev(omega.apply_local(0, u)?)?;
    let iv = ev(omega.apply_local(1, v)?)?;
    let uv = ev(omega.apply_local(0, u)?.apply_local(1, v)?)?;
    let uvd = ev(omega.apply_local(0, u)?.apply_local(1, &v.adjoint())?)?;
    Ok(ui.norm_sqr() + iv.norm_sqr() + uv.norm_sqr() + (C64::new(1.0, 0.0) - uvd).norm_sqr())
}

/// Residual of the qutrit scheme with eigenphases `angles` for both voters
/// on `(|00⟩ + |11⟩ + |22⟩)/√3`.
pub fn qutrit_residual(angles: [f64; 3]) -> Result<f64> {
    let u = LocalUnitary::diagonal(&angles);
    let omega = CorrelatedState::uniform(3, 2)?.to_pure()?;
    privacy_residual(&u, &u, &omega)
}

/// The published qutrit solution, `U = diag(e^{2πi/3}, e^{4πi/3}, e^{6πi/3})`.
pub fn qutrit_solution_check() -> Result<f64> {
    qutrit_residual([2.0 * PI / 3.0, 4.0 * PI / 3.0, 2.0 * PI])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnsatzReport {
    /// `|Σ_j |α_j|² e^{2iη_j}|`, `|Σ_j |α_j|² e^{iη_j}|`, `|Σ_j |α_j|² − 1|`.
    pub residuals: [f64; 3],
    pub holds: bool,
}

/// The eigenbasis conditions on eigenphases `η_j` and moduli `|α_j|`.
pub fn ansatz_check(d: usize, etas: &[f64], alphas: &[f64]) -> Result<AnsatzReport> {
    if etas.len() != d || alphas.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: etas.len().min(alphas.len()),
        });
    }
    let w: Vec<f64> = alphas.iter().map(|a| a * a).collect();
    let second: C64 = w.iter().zip(etas).map(|(w, e)| phase(2.0 * e) * *w).sum();
    let first: C64 = w.iter().zip(etas).map(|(w, e)| phase(*e) * *w).sum();
    let residuals = [
        second.norm(),
        first.norm(),
        (w.iter().sum::<f64>() - 1.0).abs(),
    ];
    Ok(AnsatzReport {
        residuals,
        holds: residuals.iter().all(|&r| r <= 1e-10),
    })
}
