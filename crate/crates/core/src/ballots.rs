//! Ballot states, voting operators and the authority's decoders.
//!
//! Three ballot families are supported:
//!
//! * distributed ballots (`Db`, `Survey`): `(1/√d) Σ_j |j⟩^⊗N`, one qudit per
//!   voter, votes are powers of the phase operator `Σ_k e^{2πik/d}|k⟩⟨k|`;
//! * the travelling ballot (`Tb`): a maximally entangled pair whose second
//!   qudit visits every voter, votes are cyclic shifts;
//! * secure ballots (`Secure`): distributed ballots where each vote is
//!   transferred from a single-use voting qudit `|ψ(θ)⟩` with a secret angle.
//!
//! Secure ballots have `2N` sites once every vote is in: the ballot qudits
//! `0..N` followed by the voting qudits in voter order.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config, Error, Result};
use crate::qstate::{
    phase, sample_index, CorrelatedState, LocalUnitary, Outcome, ProjectorSet, PureState,
    SparseVector, C64,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Tb,
    Db,
    Secure,
    Survey,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scheme::Tb => "tb",
            Scheme::Db => "db",
            Scheme::Secure => "secure",
            Scheme::Survey => "survey",
        };
        f.write_str(s)
    }
}

/// The authority's secret voting angles: `θ_y = 2πl_y/d + δ`, `θ_n = 2πl_n/d + δ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Secrets {
    pub l_y: usize,
    pub l_n: usize,
    pub delta: f64,
}

impl Secrets {
    pub fn theta_yes(&self, d: usize) -> f64 {
        2.0 * PI * self.l_y as f64 / d as f64 + self.delta
    }

    pub fn theta_no(&self, d: usize) -> f64 {
        2.0 * PI * self.l_n as f64 / d as f64 + self.delta
    }

    /// `l_y − l_n`.
    pub fn label_gap(&self) -> i64 {
        self.l_y as i64 - self.l_n as i64
    }

    pub fn validate(&self, d: usize, n: usize) -> Result<()> {
        if self.l_y >= d || self.l_n >= d {
            return config(format!(
                "secret labels must lie in 0..{d} (l_y={}, l_n={})",
                self.l_y, self.l_n
            ));
        }
        if self.l_y == self.l_n {
            return config("l_y and l_n must differ");
        }
        if self.label_gap().unsigned_abs() as usize * n >= d {
            return config(format!(
                "|l_y - l_n|·N = {} must be below d = {d}",
                self.label_gap().unsigned_abs() as usize * n
            ));
        }
        if !(0.0..2.0 * PI / d as f64).contains(&self.delta) {
            return config(format!("delta {} outside [0, 2π/d)", self.delta));
        }
        Ok(())
    }

    /// Uniform draw over valid label pairs, `δ` uniform on `[0, 2π/d)`.
    pub fn draw(d: usize, n: usize, rng: &mut impl Rng) -> Result<Self> {
        if n == 0 || n >= d {
            return config(format!("no valid secrets for d={d}, N={n}"));
        }
        let pairs: Vec<(usize, usize)> = (0..d)
            .flat_map(|y| (0..d).map(move |x| (y, x)))
            .filter(|&(y, x)| y != x && y.abs_diff(x) * n < d)
            .collect();
        let (l_y, l_n) = pairs[rng.random_range(0..pairs.len())];
        let delta = rng.random::<f64>() * 2.0 * PI / d as f64;
        Ok(Secrets { l_y, l_n, delta })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallotConfig {
    pub d: usize,
    pub n: usize,
    pub scheme: Scheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secrets: Option<Secrets>,
    /// Declared upper bound on a survey total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_max: Option<usize>,
}

impl BallotConfig {
    pub fn db(d: usize, n: usize) -> Result<Self> {
        Self::checked(BallotConfig {
            d,
            n,
            scheme: Scheme::Db,
            secrets: None,
            survey_max: None,
        })
    }

    pub fn tb(d: usize, n: usize) -> Result<Self> {
        Self::checked(BallotConfig {
            d,
            n,
            scheme: Scheme::Tb,
            secrets: None,
            survey_max: None,
        })
    }

    pub fn secure(d: usize, n: usize, secrets: Secrets) -> Result<Self> {
        Self::checked(BallotConfig {
            d,
            n,
            scheme: Scheme::Secure,
            secrets: Some(secrets),
            survey_max: None,
        })
    }

    pub fn survey(d: usize, n: usize, max_total: usize) -> Result<Self> {
        Self::checked(BallotConfig {
            d,
            n,
            scheme: Scheme::Survey,
            secrets: None,
            survey_max: Some(max_total),
        })
    }

    fn checked(c: Self) -> Result<Self> {
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let (d, n) = (self.d, self.n);
        if d < 2 {
            return config(format!("qudit dimension d={d} must be at least 2"));
        }
        match self.scheme {
            Scheme::Db | Scheme::Survey => {
                if n == 0 {
                    return config("at least one voter is required");
                }
                if d <= n {
                    return config(format!("d={d} must exceed N={n}"));
                }
                if self.scheme == Scheme::Survey {
                    match self.survey_max {
                        Some(m) if m < d => {}
                        Some(m) => {
                            return config(format!("survey maximum {m} must be below d={d}"))
                        }
                        None => return config("survey requires a declared maximum total"),
                    }
                }
            }
            Scheme::Tb => {
                if d < n + 1 {
                    return config(format!("travelling ballot needs d ≥ N+1 (d={d}, N={n})"));
                }
            }
            Scheme::Secure => {
                if n == 0 {
                    return config("at least one voter is required");
                }
                match &self.secrets {
                    Some(s) => s.validate(d, n)?,
                    None => return config("secure scheme requires secrets"),
                }
            }
        }
        Ok(())
    }

    pub(crate) fn require(&self, scheme: Scheme) -> Result<()> {
        if self.scheme != scheme {
            return config(format!(
                "expected a {scheme} configuration, got {}",
                self.scheme
            ));
        }
        self.validate()
    }

    pub(crate) fn secrets(&self) -> Result<Secrets> {
        self.secrets
            .ok_or_else(|| Error::Config("secure scheme requires secrets".into()))
    }
}

/// One voter's choice: yes/no, or a survey amount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VoteChoice {
    No,
    Yes,
    Amount(usize),
}

impl VoteChoice {
    /// Number of phase-operator applications this choice stands for.
    pub fn multiplicity(&self) -> usize {
        match self {
            VoteChoice::No => 0,
            VoteChoice::Yes => 1,
            VoteChoice::Amount(a) => *a,
        }
    }

    pub fn is_yes(&self) -> bool {
        self.multiplicity() > 0
    }

    pub fn from_bool(yes: bool) -> Self {
        if yes {
            VoteChoice::Yes
        } else {
            VoteChoice::No
        }
    }
}

impl fmt::Display for VoteChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VoteChoice::No => f.write_str("no"),
            VoteChoice::Yes => f.write_str("yes"),
            VoteChoice::Amount(a) => write!(f, "{a}"),
        }
    }
}

impl Serialize for VoteChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            VoteChoice::Amount(a) => s.serialize_u64(*a as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for VoteChoice {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Amount(u64),
        }
        match Raw::deserialize(de)? {
            Raw::Amount(a) => Ok(VoteChoice::Amount(a as usize)),
            Raw::Word(w) => match w.to_ascii_lowercase().as_str() {
                "yes" | "y" => Ok(VoteChoice::Yes),
                "no" | "n" => Ok(VoteChoice::No),
                other => Err(serde::de::Error::custom(format!(
                    "unknown vote '{other}', expected yes/no or an amount"
                ))),
            },
        }
    }
}

/// Decoded tally, or why there is none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tally {
    Count(usize),
    /// The measurement landed outside the tally subspace.
    Invalid,
    /// The phase index was not a multiple of `l_y − l_n`, or repetitions disagreed.
    CheatDetected,
}

impl Tally {
    pub fn count(&self) -> Option<usize> {
        match self {
            Tally::Count(m) => Some(*m),
            _ => None,
        }
    }
}

impl fmt::Display for Tally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tally::Count(m) => write!(f, "{m}"),
            Tally::Invalid => f.write_str("INVALID"),
            Tally::CheatDetected => f.write_str("CHEAT_DETECTED"),
        }
    }
}

impl Serialize for Tally {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Tally::Count(m) => s.serialize_u64(*m as u64),
            Tally::Invalid => s.serialize_str("invalid"),
            Tally::CheatDetected => s.serialize_str("cheat_detected"),
        }
    }
}

impl<'de> Deserialize<'de> for Tally {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Count(u64),
        }
        match Raw::deserialize(de)? {
            Raw::Count(m) => Ok(Tally::Count(m as usize)),
            Raw::Word(w) => match w.as_str() {
                "invalid" => Ok(Tally::Invalid),
                "cheat_detected" => Ok(Tally::CheatDetected),
                other => Err(serde::de::Error::custom(format!("unknown tally '{other}'"))),
            },
        }
    }
}

/// Human-readable result of a two-voter travelling-ballot vote.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoVoterVerdict {
    Refusal,
    Undecided,
    Acceptance,
}

impl TwoVoterVerdict {
    pub fn from_tally(m: usize) -> Option<Self> {
        match m {
            0 => Some(TwoVoterVerdict::Refusal),
            1 => Some(TwoVoterVerdict::Undecided),
            2 => Some(TwoVoterVerdict::Acceptance),
            _ => None,
        }
    }
}

fn uniform_amp(d: usize) -> C64 {
    C64::new(1.0 / (d as f64).sqrt(), 0.0)
}

/// `(1/√d) Σ_j |j⟩^⊗N`.
pub fn prepare_db_ballot(d: usize, n: usize) -> Result<PureState> {
    prepare_db_ballot_correlated(d, n)?.to_pure()
}

pub fn prepare_db_ballot_correlated(d: usize, n: usize) -> Result<CorrelatedState> {
    if n == 0 || d <= n {
        return config(format!("distributed ballot needs d > N ≥ 1 (d={d}, N={n})"));
    }
    CorrelatedState::uniform(d, n)
}

/// `(1/√d) Σ_k |k⟩|k⟩`; site 0 stays with the authority, site 1 travels.
pub fn prepare_tb_ballot(d: usize) -> Result<PureState> {
    if d < 2 {
        return config(format!("travelling ballot needs d ≥ 2 (d={d})"));
    }
    CorrelatedState::uniform(d, 2)?.to_pure()
}

/// `Σ_k e^{2πik/d} |k⟩⟨k|`.
pub fn phase_vote_unitary(d: usize) -> LocalUnitary {
    LocalUnitary::diagonal(&phase_vote_angles(d, 1))
}

fn phase_vote_angles(d: usize, power: usize) -> Vec<f64> {
    (0..d)
        .map(|k| 2.0 * PI * ((k * power) % d) as f64 / d as f64)
        .collect()
}

/// `|k⟩ → |k+1 mod d⟩`.
pub fn shift_unitary(d: usize) -> LocalUnitary {
    let mut m = vec![C64::new(0.0, 0.0); d * d];
    for k in 0..d {
        m[((k + 1) % d) * d + k] = C64::new(1.0, 0.0);
    }
    LocalUnitary::new(d, m).expect("permutation matrices are unitary")
}

/// Amplitudes of `|ψ(θ)⟩ = (1/√d) Σ_k e^{ikθ} |k⟩`.
pub fn voting_qudit_amplitudes(d: usize, theta: f64) -> Vec<C64> {
    (0..d)
        .map(|k| phase(k as f64 * theta) * uniform_amp(d))
        .collect()
}

pub fn voting_qudit_state(d: usize, theta: f64) -> Result<PureState> {
    if d < 2 {
        return config(format!("voting qudit needs d ≥ 2 (d={d})"));
    }
    PureState::single(voting_qudit_amplitudes(d, theta))
}

/// Applies `U_yes^(multiplicity·repeat)` at the voter's site.
pub fn cast_vote_db(
    state: &PureState,
    voter_site: usize,
    choice: VoteChoice,
    repeat: usize,
) -> Result<PureState> {
    let d = *state.dims().get(voter_site).ok_or(Error::SiteOutOfRange {
        site: voter_site,
        sites: state.num_sites(),
    })?;
    let power = (choice.multiplicity() * repeat) % d;
    if power == 0 {
        return Ok(state.clone());
    }
    let phases: Vec<C64> = phase_vote_angles(d, power).into_iter().map(phase).collect();
    state.apply_diagonal(voter_site, &phases)
}

/// The same operation on a correlated ballot.
pub fn cast_vote_db_correlated(
    state: &CorrelatedState,
    choice: VoteChoice,
    repeat: usize,
) -> Result<CorrelatedState> {
    let d = state.d();
    let phases: Vec<C64> = phase_vote_angles(d, (choice.multiplicity() * repeat) % d)
        .into_iter()
        .map(phase)
        .collect();
    state.apply_phases(&phases)
}

/// Voter-side transfer of a voting qudit onto a ballot qudit.
///
/// Appends the voting qudit as a new last site, measures
/// `P_r = Σ_j |j+r⟩⟨j+r|_b ⊗ |j⟩⟨j|_v` and applies the correction
/// `|j⟩_v → |j+r⟩_v`. Returns the corrected state and the outcome `r`.
pub fn cast_vote_secure(
    state: &PureState,
    ballot_site: usize,
    voting_state: &PureState,
    rng: &mut impl Rng,
) -> Result<(PureState, usize)> {
    let d = *state.dims().get(ballot_site).ok_or(Error::SiteOutOfRange {
        site: ballot_site,
        sites: state.num_sites(),
    })?;
    if voting_state.dims() != [d] {
        return config(format!(
            "voting state must be a single qudit of dimension {d}, got dims {:?}",
            voting_state.dims()
        ));
    }
    let joint = state.tensor(voting_state)?;
    let vsite = state.num_sites();
    let labels = (0..joint.total_dim())
        .map(|i| {
            let digits = joint.digits_of(i);
            Some((digits[ballot_site] + d - digits[vsite]) % d)
        })
        .collect();
    let proj = ProjectorSet::partition(labels, d)?;
    let m = joint.measure_projective(&proj, rng)?;
    let r = match m.outcome {
        Outcome::Index(r) => r,
        Outcome::Invalid => unreachable!("shift projectors are complete"),
    };
    let corrected = m.post_state.apply_local(vsite, &shift_unitary(d).pow(r))?;
    Ok((corrected, r))
}

/// Distribution of the transfer outcome `r` on a correlated ballot:
/// `p_r = Σ_k |α_k|² |β_{k−r}|²`.
pub fn secure_shift_distribution(state: &CorrelatedState, voting_amps: &[C64]) -> Vec<f64> {
    let d = state.d();
    (0..d)
        .map(|r| {
            (0..d)
                .map(|k| state.amps()[k].norm_sqr() * voting_amps[(k + d - r) % d].norm_sqr())
                .sum()
        })
        .collect()
}

/// [`cast_vote_secure`] on a correlated ballot. The corrected state stays in
/// the correlated subspace with one more site.
pub fn cast_vote_secure_correlated(
    state: &CorrelatedState,
    voting_amps: &[C64],
    rng: &mut impl Rng,
) -> Result<(CorrelatedState, usize)> {
    let d = state.d();
    if voting_amps.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: voting_amps.len(),
        });
    }
    let mut probs = secure_shift_distribution(state, voting_amps);
    // same sampling rule as the dense measurement, residual included
    probs.push(0.0);
    let r = sample_index(&probs, rng);
    let amps = (0..d)
        .map(|k| state.amps()[k] * voting_amps[(k + d - r) % d])
        .collect();
    Ok((state.with_amps(1, amps)?, r))
}

/// `|Ω_m⟩ = (1/√d) Σ_k e^{2πimk/d} |k⟩^⊗sites` as a sparse vector.
pub fn tally_vector(d: usize, sites: usize, m: usize) -> SparseVector {
    let step: usize = (0..sites).map(|i| d.pow(i as u32)).sum();
    (0..d)
        .map(|k| {
            (
                k * step,
                phase(2.0 * PI * ((m * k) % d) as f64 / d as f64) * uniform_amp(d),
            )
        })
        .collect()
}

pub fn tally_state(d: usize, sites: usize, m: usize) -> Result<PureState> {
    let amps: Vec<C64> = tally_vector(d, 1, m).into_iter().map(|(_, a)| a).collect();
    CorrelatedState::new(d, sites, amps)?.to_pure()
}

/// `{|Ω_m⟩⟨Ω_m| : m = 0..d}` over `sites` qudits.
pub fn tally_projectors(d: usize, sites: usize) -> Result<ProjectorSet> {
    let dim = (d as u128).pow(sites as u32);
    if dim > crate::qstate::MAX_TOTAL_DIM as u128 {
        return Err(Error::TooLarge {
            dim: dim as usize,
            limit: crate::qstate::MAX_TOTAL_DIM,
        });
    }
    ProjectorSet::rank_one(
        dim as usize,
        (0..d).map(|m| tally_vector(d, sites, m)).collect(),
    )
}

/// Distributed-ballot readout: projects onto the tally states.
pub fn decode_db(
    state: &PureState,
    d: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(Tally, f64)> {
    if state.dims().len() != n || state.dims().iter().any(|&x| x != d) {
        return config(format!(
            "expected {n} sites of dimension {d}, got {:?}",
            state.dims()
        ));
    }
    let m = state.measure_projective(&tally_projectors(d, n)?, rng)?;
    let tally = match m.outcome {
        Outcome::Index(k) => Tally::Count(k),
        Outcome::Invalid => Tally::Invalid,
    };
    Ok((tally, m.prob))
}

/// Probability of each tally state, `|⟨Ω_m|ψ⟩|²`, for a correlated ballot.
pub fn phase_index_distribution(state: &CorrelatedState) -> Vec<f64> {
    let d = state.d();
    (0..d)
        .map(|p| {
            tally_vector(d, 1, p)
                .iter()
                .zip(state.amps())
                .map(|(&(_, t), &a)| t.conj() * a)
                .sum::<C64>()
                .norm_sqr()
        })
        .collect()
}

pub fn decode_db_correlated(state: &CorrelatedState, rng: &mut impl Rng) -> (Tally, f64) {
    let mut probs = phase_index_distribution(state);
    probs.push(0.0);
    let m = sample_index(&probs, rng);
    (Tally::Count(m), probs[m])
}

/// Travelling-ballot readout: measures `(site1 − site0) mod d`.
pub fn decode_tb(state: &PureState, d: usize, rng: &mut impl Rng) -> Result<(usize, f64)> {
    if state.dims() != [d, d] {
        return config(format!(
            "expected two sites of dimension {d}, got {:?}",
            state.dims()
        ));
    }
    let labels = (0..d * d).map(|i| Some((i % d + d - i / d) % d)).collect();
    let m = state.measure_projective(&ProjectorSet::partition(labels, d)?, rng)?;
    match m.outcome {
        Outcome::Index(k) => Ok((k, m.prob)),
        Outcome::Invalid => unreachable!("difference projectors are complete"),
    }
}

/// Maps a phase index `p` back to a tally given `l_y − l_n`, or `None` when
/// `p` is not a multiple of the gap modulo `d`.
pub fn tally_from_phase_index(p: usize, d: usize, gap: i64) -> Option<usize> {
    let s = gap.rem_euclid(d as i64) as usize;
    let g = gcd(s, d);
    if !p.is_multiple_of(g) {
        return None;
    }
    let modulus = d / g;
    if modulus == 1 {
        return Some(0);
    }
    let inv = mod_inverse(s / g, modulus)?;
    Some((p / g) * inv % modulus)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn mod_inverse(a: usize, m: usize) -> Option<usize> {
    (1..m).find(|&x| (a * x) % m == 1)
}

/// Phase the authority removes before the secure readout, digit by digit:
/// `e^{−i(kNθ_n + dδ·#{r_i > k})}`.
///
/// The second factor undoes the wrap-around of the voting-qudit index: after
/// a transfer with outcome `r` the digits `k < r` carry an extra `e^{idθ}`,
/// which equals `e^{idδ}` for both voting angles. Voters announce `r`; it is
/// uniform whatever they voted.
pub fn secure_compensation(config: &BallotConfig, announced_shifts: &[usize]) -> Result<Vec<C64>> {
    config.require(Scheme::Secure)?;
    let s = config.secrets()?;
    let (d, n) = (config.d, config.n);
    if announced_shifts.len() != n {
        return Err(Error::Config(format!(
            "expected {n} announced shifts, got {}",
            announced_shifts.len()
        )));
    }
    let theta_n = s.theta_no(d);
    Ok((0..d)
        .map(|k| {
            let wraps = announced_shifts.iter().filter(|&&r| r > k).count();
            phase(-(k as f64 * n as f64 * theta_n) - d as f64 * s.delta * wraps as f64)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecureReadout {
    /// Measured phase index; `None` when the residual projector fired.
    pub p: Option<usize>,
    pub tally: Tally,
    pub prob: f64,
}

fn readout(config: &BallotConfig, p: Option<usize>, prob: f64) -> Result<SecureReadout> {
    let gap = config.secrets()?.label_gap();
    let tally = match p {
        None => Tally::CheatDetected,
        Some(p) => {
            tally_from_phase_index(p, config.d, gap).map_or(Tally::CheatDetected, Tally::Count)
        }
    };
    Ok(SecureReadout { p, tally, prob })
}

/// Secure-ballot readout on the dense `2N`-site state.
pub fn decode_secure(
    state: &PureState,
    config: &BallotConfig,
    announced_shifts: &[usize],
    rng: &mut impl Rng,
) -> Result<SecureReadout> {
    let comp = secure_compensation(config, announced_shifts)?;
    let (d, sites) = (config.d, 2 * config.n);
    if state.dims().len() != sites || state.dims().iter().any(|&x| x != d) {
        return Err(Error::Config(format!(
            "expected {sites} sites of dimension {d}, got {:?}",
            state.dims()
        )));
    }
    let compensated = state.apply_diagonal(0, &comp)?;
    let m = compensated.measure_projective(&tally_projectors(d, sites)?, rng)?;
    let p = match m.outcome {
        Outcome::Index(p) => Some(p),
        Outcome::Invalid => None,
    };
    readout(config, p, m.prob)
}

/// Secure-ballot readout on the compact representation.
pub fn decode_secure_correlated(
    state: &CorrelatedState,
    config: &BallotConfig,
    announced_shifts: &[usize],
    rng: &mut impl Rng,
) -> Result<SecureReadout> {
    let comp = secure_compensation(config, announced_shifts)?;
    if state.d() != config.d || state.sites() != 2 * config.n {
        return Err(Error::Config(format!(
            "expected {} correlated sites of dimension {}, got {} of {}",
            2 * config.n,
            config.d,
            state.sites(),
            state.d()
        )));
    }
    let compensated = state.apply_phases(&comp)?;
    let mut probs = phase_index_distribution(&compensated);
    let residual = (1.0 - probs.iter().sum::<f64>()).max(0.0);
    probs.push(if residual < crate::qstate::EXACT_TOL {
        0.0
    } else {
        residual
    });
    let k = sample_index(&probs, rng);
    let p = (k < config.d).then_some(k);
    readout(config, p, probs[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{EXACT_TOL, PIPELINE_TOL};
    use crate::rng::Seed;

    fn secrets(l_y: usize, l_n: usize, delta: f64) -> Secrets {
        Secrets { l_y, l_n, delta }
    }

    #[test]
    fn config_invariants() {
        assert!(BallotConfig::db(3, 2).is_ok());
        assert!(BallotConfig::db(3, 3).is_err());
        assert!(BallotConfig::tb(3, 2).is_ok());
        assert!(BallotConfig::tb(3, 3).is_err());
        assert!(BallotConfig::tb(2, 0).is_ok());
        assert!(BallotConfig::survey(7, 3, 6).is_ok());
        assert!(BallotConfig::survey(7, 3, 7).is_err());
        assert!(BallotConfig::secure(7, 2, secrets(1, 0, 0.3)).is_ok());
        assert!(BallotConfig::secure(7, 2, secrets(1, 1, 0.3)).is_err());
        assert!(BallotConfig::secure(7, 2, secrets(4, 0, 0.3)).is_err());
        assert!(BallotConfig::secure(7, 2, secrets(1, 0, 2.0 * PI / 7.0)).is_err());
        assert!(BallotConfig::secure(7, 2, secrets(7, 0, 0.0)).is_err());
    }

    #[test]
    fn drawn_secrets_are_valid() {
        let mut rng = Seed(3).stream("authority", 0);
        for _ in 0..200 {
            let s = Secrets::draw(11, 3, &mut rng).unwrap();
            s.validate(11, 3).unwrap();
        }
        assert!(Secrets::draw(3, 3, &mut rng).is_err());
    }

    #[test]
    fn db_ballots() {
        let s = 1.0 / 3f64.sqrt();
        let b = prepare_db_ballot(3, 2).unwrap();
        for (i, a) in b.amps().iter().enumerate() {
            let expect = if i % 4 == 0 { s } else { 0.0 };
            assert!((a - C64::new(expect, 0.0)).norm() < EXACT_TOL);
        }
        let one = prepare_db_ballot(2, 1).unwrap();
        assert!((one.amps()[0].re - 0.5f64.sqrt()).abs() < EXACT_TOL);
        assert!((one.amps()[1].re - 0.5f64.sqrt()).abs() < EXACT_TOL);

        // direct construction oracle: nonzero exactly at |jjjj⟩ = j·(1+5+25+125)
        let big = prepare_db_ballot(5, 4).unwrap();
        assert_eq!(big.total_dim(), 625);
        let nonzero: Vec<usize> = (0..625).filter(|&i| big.amps()[i].norm() > 0.0).collect();
        assert_eq!(nonzero, vec![0, 156, 312, 468, 624]);
        for i in nonzero {
            assert!((big.amps()[i].re - 1.0 / 5f64.sqrt()).abs() < EXACT_TOL);
        }
        assert!(prepare_db_ballot(3, 3).is_err());
    }

    #[test]
    fn tb_ballots_are_locally_mixed() {
        let b = prepare_tb_ballot(3).unwrap();
        assert_eq!(b, prepare_db_ballot(3, 2).unwrap());
        let bell = prepare_tb_ballot(2).unwrap();
        assert!((bell.amps()[3].re - 0.5f64.sqrt()).abs() < EXACT_TOL);
        assert!(b.reduced_density(&[1]).unwrap().identity_deviation() < EXACT_TOL);
    }

    #[test]
    fn phase_operator() {
        let z = phase_vote_unitary(2);
        assert!((z.entry(0, 0) - C64::new(1.0, 0.0)).norm() < EXACT_TOL);
        assert!((z.entry(1, 1) - C64::new(-1.0, 0.0)).norm() < EXACT_TOL);

        // the published qutrit operator is ours times a global e^{2πi/3}
        let published = LocalUnitary::diagonal(&[2.0 * PI / 3.0, 4.0 * PI / 3.0, 6.0 * PI / 3.0]);
        let ours = phase_vote_unitary(3);
        let g = phase(2.0 * PI / 3.0);
        for k in 0..3 {
            assert!((published.entry(k, k) - g * ours.entry(k, k)).norm() < EXACT_TOL);
        }

        // repeated multiplication oracle
        let u7 = phase_vote_unitary(7);
        let mut acc = LocalUnitary::identity(7);
        for _ in 0..7 {
            acc = acc.mul(&u7).unwrap();
        }
        assert!(acc.max_abs_diff(&LocalUnitary::identity(7)) < EXACT_TOL);
    }

    #[test]
    fn shift_operator() {
        let two = PureState::basis(vec![3], &[2]).unwrap();
        assert_eq!(
            two.apply_local(0, &shift_unitary(3)).unwrap(),
            PureState::basis(vec![3], &[0]).unwrap()
        );
        let x = shift_unitary(2);
        assert_eq!(x.entry(0, 1), C64::new(1.0, 0.0));
        assert_eq!(x.entry(1, 0), C64::new(1.0, 0.0));
        assert!(
            shift_unitary(5)
                .pow(5)
                .max_abs_diff(&LocalUnitary::identity(5))
                < EXACT_TOL
        );
    }

    #[test]
    fn voting_qudits() {
        let plus = voting_qudit_state(2, 0.0).unwrap();
        assert!((plus.amps()[1].re - 0.5f64.sqrt()).abs() < EXACT_TOL);

        let v = voting_qudit_state(3, 2.0 * PI / 3.0).unwrap();
        for k in 0..3 {
            let expect = C64::from_polar(1.0 / 3f64.sqrt(), 2.0 * PI * k as f64 / 3.0);
            assert!((v.amps()[k] - expect).norm() < EXACT_TOL);
        }

        // geometric sum oracle: Σ_k e^{2πikl/d} = 0 for l ≢ 0
        let theta = 0.37;
        let a = voting_qudit_state(5, theta).unwrap();
        let b = voting_qudit_state(5, theta + 2.0 * PI * 2.0 / 5.0).unwrap();
        let geometric: C64 = (0..5)
            .map(|k| phase(2.0 * PI * 2.0 * k as f64 / 5.0))
            .sum::<C64>()
            / 5.0;
        assert!(geometric.norm() < EXACT_TOL);
        assert!(a.inner(&b).unwrap().norm() < EXACT_TOL);
    }

    #[test]
    fn db_vote_casting() {
        let b = prepare_db_ballot(3, 2).unwrap();
        let after = cast_vote_db(&b, 0, VoteChoice::Yes, 1).unwrap();
        let after = cast_vote_db(&after, 1, VoteChoice::No, 1).unwrap();
        let omega1 = tally_state(3, 2, 1).unwrap();
        assert!((after.inner(&omega1).unwrap().norm() - 1.0).abs() < EXACT_TOL);
        assert_eq!(cast_vote_db(&b, 1, VoteChoice::No, 1).unwrap(), b);

        // statevector oracle: U^d = I
        let wrapped = cast_vote_db(&b, 0, VoteChoice::Yes, 3).unwrap();
        let mut manual = b.clone();
        for _ in 0..3 {
            manual = manual.apply_local(0, &phase_vote_unitary(3)).unwrap();
        }
        assert!((wrapped.inner(&b).unwrap().norm() - 1.0).abs() < EXACT_TOL);
        assert!((manual.inner(&b).unwrap() - C64::new(1.0, 0.0)).norm() < EXACT_TOL);
    }

    #[test]
    fn secure_transfer_outcomes_are_uniform() {
        let d = 3;
        let s = secrets(1, 0, 0.2);
        let ballot = prepare_db_ballot(d, 1).unwrap();
        for theta in [s.theta_yes(d), s.theta_no(d)] {
            let v = voting_qudit_state(d, theta).unwrap();
            // oracle: ⟨ψ|P_r|ψ⟩ summed by hand over the joint basis
            let joint = ballot.tensor(&v).unwrap();
            for r in 0..d {
                let p: f64 = (0..d * d)
                    .filter(|i| (i / d + d - i % d) % d == r)
                    .map(|i| joint.amps()[i].norm_sqr())
                    .sum();
                assert!((p - 1.0 / 3.0).abs() < EXACT_TOL);
            }
            let cs = prepare_db_ballot_correlated(d, 1).unwrap();
            for p in secure_shift_distribution(&cs, v.amps()) {
                assert!((p - 1.0 / 3.0).abs() < EXACT_TOL);
            }
        }
    }

    #[test]
    fn secure_transfer_without_offset_matches_ideal_state() {
        let d = 3;
        let theta = 2.0 * PI / 3.0;
        let ballot = prepare_db_ballot(d, 1).unwrap();
        let v = voting_qudit_state(d, theta).unwrap();
        for t in 0..20 {
            let (post, r) = cast_vote_secure(&ballot, 0, &v, &mut Seed(11).stream("v", t)).unwrap();
            let ideal_amps: Vec<C64> = (0..d)
                .map(|k| phase(k as f64 * theta - r as f64 * theta) / 3f64.sqrt())
                .collect();
            let ideal = CorrelatedState::new(d, 2, ideal_amps)
                .unwrap()
                .to_pure()
                .unwrap();
            assert!((post.inner(&ideal).unwrap() - C64::new(1.0, 0.0)).norm() < PIPELINE_TOL);
        }
    }

    #[test]
    fn secure_transfer_wraps_by_d_delta() {
        // with δ ≠ 0 the digits k < r pick up e^{idδ}; compensation removes it
        let d = 5;
        let s = secrets(1, 0, 0.3);
        let theta = s.theta_yes(d);
        let ballot = prepare_db_ballot_correlated(d, 1).unwrap();
        let mut rng = Seed(2).stream("v", 0);
        let (mut post, mut r) =
            cast_vote_secure_correlated(&ballot, &voting_qudit_amplitudes(d, theta), &mut rng)
                .unwrap();
        while r == 0 {
            (post, r) =
                cast_vote_secure_correlated(&ballot, &voting_qudit_amplitudes(d, theta), &mut rng)
                    .unwrap();
        }
        let ideal: Vec<C64> = (0..d)
            .map(|k| phase(k as f64 * theta) / (d as f64).sqrt())
            .collect();
        let naive: C64 = ideal
            .iter()
            .zip(post.amps())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!(naive.norm() < 1.0 - 1e-3, "wrap-around should be visible");
        let fix: Vec<C64> = (0..d)
            .map(|k| phase(if k < r { -(d as f64) * s.delta } else { 0.0 }))
            .collect();
        let fixed = post.apply_phases(&fix).unwrap();
        let overlap: C64 = ideal
            .iter()
            .zip(fixed.amps())
            .map(|(a, b)| a.conj() * b)
            .sum();
        assert!((overlap.norm() - 1.0).abs() < EXACT_TOL);
    }

    #[test]
    fn dense_and_correlated_transfers_agree() {
        let d = 5;
        let s = secrets(2, 0, 0.41);
        let mut dense = prepare_db_ballot(d, 2).unwrap();
        let mut compact = prepare_db_ballot_correlated(d, 2).unwrap();
        for (voter, yes) in [(0usize, true), (1, false)] {
            let theta = if yes { s.theta_yes(d) } else { s.theta_no(d) };
            let v = voting_qudit_state(d, theta).unwrap();
            let (a, ra) = cast_vote_secure(
                &dense,
                voter,
                &v,
                &mut Seed(4).stream("voter", voter as u64),
            )
            .unwrap();
            let (b, rb) = cast_vote_secure_correlated(
                &compact,
                v.amps(),
                &mut Seed(4).stream("voter", voter as u64),
            )
            .unwrap();
            assert_eq!(ra, rb);
            dense = a;
            compact = b;
        }
        // the dense vector has ballot sites first; the correlated form is site-order agnostic
        assert!(
            (dense.inner(&compact.to_pure().unwrap()).unwrap().norm() - 1.0).abs() < PIPELINE_TOL
        );
    }

    #[test]
    fn cast_vote_secure_checks_dimensions() {
        let ballot = prepare_db_ballot(3, 1).unwrap();
        let bad = voting_qudit_state(4, 0.0).unwrap();
        assert!(cast_vote_secure(&ballot, 0, &bad, &mut Seed(0).stream("v", 0)).is_err());
    }

    #[test]
    fn decode_db_tallies() {
        let mut rng = Seed(5).stream("measure", 0);
        let mut st = prepare_db_ballot(5, 3).unwrap();
        for (site, c) in [VoteChoice::Yes, VoteChoice::Yes, VoteChoice::No]
            .into_iter()
            .enumerate()
        {
            st = cast_vote_db(&st, site, c, 1).unwrap();
        }
        let (t, p) = decode_db(&st, 5, 3, &mut rng).unwrap();
        assert_eq!(t, Tally::Count(2));
        assert!((p - 1.0).abs() < PIPELINE_TOL);
        let (t0, _) = decode_db(&prepare_db_ballot(5, 3).unwrap(), 5, 3, &mut rng).unwrap();
        assert_eq!(t0, Tally::Count(0));
    }

    #[test]
    fn decode_db_on_collapsed_ballot_is_uniform() {
        let zero = PureState::basis(vec![5; 3], &[0, 0, 0]).unwrap();
        // oracle: |⟨Ω_m|000⟩|² = |1/√5|² for every m
        let (probs, residual) = zero
            .outcome_probabilities(&tally_projectors(5, 3).unwrap())
            .unwrap();
        for p in probs {
            assert!((p - 0.2).abs() < EXACT_TOL);
        }
        assert_eq!(residual, 0.0);
        let mut counts = [0usize; 5];
        for t in 0..500 {
            let (m, _) = decode_db(&zero, 5, 3, &mut Seed(1).stream("m", t)).unwrap();
            counts[m.count().unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c > 60), "{counts:?}");
    }

    #[test]
    fn decode_tb_reads_the_shift() {
        let mut rng = Seed(9).stream("measure", 0);
        let mut st = prepare_tb_ballot(3).unwrap();
        for _ in 0..2 {
            st = st.apply_local(1, &shift_unitary(3)).unwrap();
        }
        let (m, p) = decode_tb(&st, 3, &mut rng).unwrap();
        assert_eq!(m, 2);
        assert!((p - 1.0).abs() < EXACT_TOL);
        assert_eq!(
            TwoVoterVerdict::from_tally(m),
            Some(TwoVoterVerdict::Acceptance)
        );
        assert_eq!(
            decode_tb(&prepare_tb_ballot(3).unwrap(), 3, &mut rng)
                .unwrap()
                .0,
            0
        );

        // a computational collapse keeps the difference
        let (_, collapsed) = prepare_tb_ballot(4)
            .unwrap()
            .measure_computational(1, &mut rng)
            .unwrap();
        let shifted = collapsed.apply_local(1, &shift_unitary(4).pow(3)).unwrap();
        assert_eq!(decode_tb(&shifted, 4, &mut rng).unwrap().0, 3);
        // while the phase readout of the collapsed pair is no longer deterministic
        let (probs, _) = collapsed
            .outcome_probabilities(&tally_projectors(4, 2).unwrap())
            .unwrap();
        assert!(probs.iter().all(|&p| (p - 0.25).abs() < EXACT_TOL));
    }

    #[test]
    fn phase_index_to_tally() {
        assert_eq!(tally_from_phase_index(2, 7, 1), Some(2));
        assert_eq!(tally_from_phase_index(6, 11, 3), Some(2));
        // negative gap: p = m·(l_y − l_n) mod d
        assert_eq!(tally_from_phase_index(11 - 4, 11, -2), Some(2));
        // composite d: p must share the gcd
        assert_eq!(tally_from_phase_index(3, 8, 2), None);
        assert_eq!(tally_from_phase_index(4, 8, 2), Some(2));
    }

    /// Final secure state built directly from its closed form, without any transfer steps.
    fn closed_form_secure_state(d: usize, n: usize, s: &Secrets, votes: &[bool]) -> PureState {
        let total: f64 = votes
            .iter()
            .map(|&y| if y { s.theta_yes(d) } else { s.theta_no(d) })
            .sum();
        let amps = (0..d)
            .map(|k| phase(k as f64 * total) / (d as f64).sqrt())
            .collect();
        CorrelatedState::new(d, 2 * n, amps)
            .unwrap()
            .to_pure()
            .unwrap()
    }

    #[test]
    fn decode_secure_recovers_tally() {
        let (d, n) = (7, 2);
        let s = secrets(1, 0, 0.3);
        let cfg = BallotConfig::secure(d, n, s).unwrap();

        // oracle: compensated closed-form phase is 2·Δ, so p = 2 with certainty
        let oracle = closed_form_secure_state(d, n, &s, &[true, true]);
        let (probs, _) = oracle
            .apply_diagonal(0, &secure_compensation(&cfg, &[0, 0]).unwrap())
            .unwrap()
            .outcome_probabilities(&tally_projectors(d, 2 * n).unwrap())
            .unwrap();
        assert!((probs[2] - 1.0).abs() < PIPELINE_TOL);

        // full pipeline through the voter transfers
        let mut st = prepare_db_ballot(d, n).unwrap();
        let mut shifts = vec![];
        for voter in 0..n {
            let v = voting_qudit_state(d, s.theta_yes(d)).unwrap();
            let (next, r) =
                cast_vote_secure(&st, voter, &v, &mut Seed(21).stream("voter", voter as u64))
                    .unwrap();
            st = next;
            shifts.push(r);
        }
        let out = decode_secure(&st, &cfg, &shifts, &mut Seed(21).stream("measure", 0)).unwrap();
        assert_eq!(out.p, Some(2));
        assert_eq!(out.tally, Tally::Count(2));
        assert!((out.prob - 1.0).abs() < PIPELINE_TOL);

        let none = closed_form_secure_state(d, n, &s, &[false, false]);
        let out = decode_secure(&none, &cfg, &[0, 0], &mut Seed(1).stream("m", 0)).unwrap();
        assert_eq!((out.p, out.tally), (Some(0), Tally::Count(0)));
    }

    #[test]
    fn decode_secure_rejects_other_schemes() {
        let cfg = BallotConfig::db(5, 2).unwrap();
        let st = prepare_db_ballot(5, 2).unwrap();
        assert!(decode_secure(&st, &cfg, &[0, 0], &mut Seed(1).stream("m", 0)).is_err());
    }

    #[test]
    fn forged_phase_scatters_readout() {
        // a phase error of half a step spreads p over neighbouring values
        let (d, n) = (11, 1);
        let s = secrets(1, 0, 0.1);
        let cfg = BallotConfig::secure(d, n, s).unwrap();
        let mut st = CorrelatedState::uniform(d, 2).unwrap();
        let total = s.theta_yes(d) + 2.0 * PI / d as f64 + PI / d as f64;
        st = st
            .apply_phases(&(0..d).map(|k| phase(k as f64 * total)).collect::<Vec<_>>())
            .unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for t in 0..200 {
            seen.insert(
                decode_secure_correlated(&st, &cfg, &[0], &mut Seed(8).stream("m", t))
                    .unwrap()
                    .p,
            );
        }
        assert!(seen.len() > 1);
        let dense = decode_secure(
            &st.to_pure().unwrap(),
            &cfg,
            &[0],
            &mut Seed(8).stream("m", 0),
        )
        .unwrap();
        let compact =
            decode_secure_correlated(&st, &cfg, &[0], &mut Seed(8).stream("m", 0)).unwrap();
        assert_eq!(dense.p, compact.p);
    }

    #[test]
    fn vote_choice_serde() {
        let v: Vec<VoteChoice> = serde_json::from_str(r#"["yes","N",3]"#).unwrap();
        assert_eq!(
            v,
            vec![VoteChoice::Yes, VoteChoice::No, VoteChoice::Amount(3)]
        );
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"["yes","no",3]"#);
        assert!(serde_json::from_str::<VoteChoice>(r#""maybe""#).is_err());
        let t: Vec<Tally> = serde_json::from_str(r#"[2,"invalid","cheat_detected"]"#).unwrap();
        assert_eq!(
            t,
            vec![Tally::Count(2), Tally::Invalid, Tally::CheatDetected]
        );
    }
}
