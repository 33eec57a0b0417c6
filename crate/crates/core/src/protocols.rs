//! End-to-end protocol runs.
//!
//! Every run is driven by one [`Seed`]. Repetition `k` uses the child seed
//! `seed.derive("rep", k)`, whose streams are `voter/i` (voting-qudit
//! transfer), `salt/i` (vote commitments) and `measure/0` (authority readout).

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ballots::{
    cast_vote_db, cast_vote_secure_correlated, decode_db, decode_secure_correlated, decode_tb,
    prepare_db_ballot, prepare_tb_ballot, shift_unitary, voting_qudit_amplitudes, BallotConfig,
    Scheme, Tally, TwoVoterVerdict, VoteChoice,
};
use crate::error::{config as invalid, Error, Result};
use crate::qstate::{CorrelatedState, PureState};
use crate::rng::Seed;
use crate::transcript::{commit, Step, Transcript};

pub const DEFAULT_REPETITIONS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub tally: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    pub prob: f64,
    /// Transfer outcomes announced by the voters (secure scheme).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shifts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub scheme: Scheme,
    pub d: usize,
    pub n: usize,
    pub seed: Seed,
    /// Common tally of all repetitions, or `CheatDetected` when they differ.
    pub tally: Tally,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<TwoVoterVerdict>,
    pub repetitions: Vec<RepOutcome>,
}

impl RunResult {
    pub fn is_clean(&self) -> bool {
        matches!(self.tally, Tally::Count(_))
    }
}

#[derive(Debug, Clone)]
pub struct Run {
    pub result: RunResult,
    pub transcript: Transcript,
}

/// The common tally if every entry is the same count, `CheatDetected` otherwise.
pub fn aggregate_tallies(tallies: &[Tally]) -> Tally {
    match tallies.first() {
        Some(&Tally::Count(m)) if tallies.iter().all(|t| *t == Tally::Count(m)) => Tally::Count(m),
        Some(Tally::Invalid) if tallies.len() == 1 => Tally::Invalid,
        _ => Tally::CheatDetected,
    }
}

fn run_id(scheme: Scheme, seed: Seed) -> String {
    format!("{scheme}-{}", seed.0)
}

fn check_votes(config: &BallotConfig, votes: &[VoteChoice]) -> Result<()> {
    if votes.len() != config.n {
        return invalid(format!("expected {} votes, got {}", config.n, votes.len()));
    }
    if config.scheme != Scheme::Survey {
        if let Some(v) = votes.iter().find(|v| v.multiplicity() > 1) {
            return invalid(format!("vote {v} is only allowed in surveys"));
        }
    }
    Ok(())
}

fn prepare_event(
    t: &mut Transcript,
    id: &str,
    rep: usize,
    config: &BallotConfig,
    seed: Seed,
    reps: usize,
) {
    if !t.is_recording() {
        return;
    }
    let payload = json!({
        "scheme": config.scheme,
        "d": config.d,
        "n": config.n,
        "seed": seed,
        "repetitions": reps,
    });
    t.push(id, rep, Step::Prepare, None, payload, None);
}

fn vote_event(
    t: &mut Transcript,
    id: &str,
    rep: usize,
    voter: usize,
    choice: VoteChoice,
    salt_seed: Seed,
    extra: Value,
) {
    if !t.is_recording() {
        return;
    }
    let (c, _) = commit(choice, &mut salt_seed.stream("salt", voter as u64));
    let mut payload = json!({ "commitment": c });
    if let (Value::Object(p), Value::Object(e)) = (&mut payload, extra) {
        p.extend(e);
    }
    t.push(id, rep, Step::Vote, Some(voter), payload, None);
}

fn result_event(
    t: &mut Transcript,
    id: &str,
    rep: usize,
    tally: Tally,
    p: Option<usize>,
    verdict: Option<TwoVoterVerdict>,
) {
    let mut outcome = json!({ "m": tally });
    if let Some(p) = p {
        outcome["p"] = json!(p);
    }
    if let Some(v) = verdict {
        outcome["verdict"] = json!(v);
    }
    t.push(id, rep, Step::Result, None, json!({}), Some(outcome));
}

/// States of a distributed ballot after preparation and after each vote.
pub fn db_stages(config: &BallotConfig, votes: &[VoteChoice]) -> Result<Vec<PureState>> {
    check_votes(config, votes)?;
    let mut states = vec![prepare_db_ballot(config.d, config.n)?];
    for (i, &v) in votes.iter().enumerate() {
        let next = cast_vote_db(states.last().expect("non-empty"), i, v, 1)?;
        states.push(next);
    }
    Ok(states)
}

/// Distributed-ballot run; `extra` adds `(voter, count)` unauthorised phase votes.
pub(crate) fn run_distributed(
    config: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
    extra: Option<(usize, usize)>,
) -> Result<Run> {
    check_votes(config, votes)?;
    let id = run_id(config.scheme, seed);
    let rs = seed.derive("rep", 0);
    let mut t = Transcript::new();
    prepare_event(&mut t, &id, 0, config, seed, 1);
    let mut state = prepare_db_ballot(config.d, config.n)?;
    for site in 0..config.n {
        t.push(
            &id,
            0,
            Step::Distribute,
            Some(site),
            json!({ "to": site }),
            None,
        );
    }
    for (i, &v) in votes.iter().enumerate() {
        state = cast_vote_db(&state, i, v, 1)?;
        if let Some((cheater, count)) = extra {
            if cheater == i {
                state = cast_vote_db(&state, i, VoteChoice::Yes, count)?;
            }
        }
        vote_event(&mut t, &id, 0, i, v, rs, json!({}));
    }
    for site in 0..config.n {
        t.push(
            &id,
            0,
            Step::Return,
            Some(site),
            json!({ "from": site }),
            None,
        );
    }
    let (tally, prob) = decode_db(&state, config.d, config.n, &mut rs.stream("measure", 0))?;
    t.push(
        &id,
        0,
        Step::Measure,
        None,
        json!({ "basis": "tally" }),
        Some(json!({ "m": tally, "prob": prob })),
    );
    result_event(&mut t, &id, 0, tally, None, None);
    let result = RunResult {
        run_id: id,
        scheme: config.scheme,
        d: config.d,
        n: config.n,
        seed,
        tally,
        p: None,
        verdict: None,
        repetitions: vec![RepOutcome {
            rep: 0,
            tally,
            p: None,
            prob,
            shifts: vec![],
        }],
    };
    Ok(Run {
        result,
        transcript: t,
    })
}

pub fn run_db_vote(config: &BallotConfig, votes: &[VoteChoice], seed: Seed) -> Result<Run> {
    config.require(Scheme::Db)?;
    run_distributed(config, votes, seed, None)
}

/// Each participant applies `U_yes^euros[i]`; the readout is the total.
pub fn run_survey(config: &BallotConfig, euros: &[usize], seed: Seed) -> Result<Run> {
    config.require(Scheme::Survey)?;
    let total: usize = euros.iter().sum();
    let max = config.survey_max.unwrap_or(config.d - 1);
    if total >= config.d || total > max {
        return invalid(format!(
            "survey total {total} exceeds the declared maximum {max} (d={}); the readout would alias",
            config.d
        ));
    }
    let votes: Vec<VoteChoice> = euros.iter().map(|&e| VoteChoice::Amount(e)).collect();
    run_distributed(config, &votes, seed, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookPoint {
    /// The voter has just received the travelling qudit.
    BeforeVote,
    /// The voter has applied their operation and is about to pass it on.
    AfterVote,
}

/// Access to the travelling-ballot state while a voter holds it.
pub trait TbIntercept {
    fn intercept(&mut self, voter: usize, point: HookPoint, state: PureState) -> Result<PureState>;
}

fn tb_vote(state: &PureState, d: usize, choice: VoteChoice) -> Result<PureState> {
    if choice.is_yes() {
        state.apply_local(1, &shift_unitary(d).pow(choice.multiplicity()))
    } else {
        Ok(state.clone())
    }
}

/// Travelling-ballot states after preparation and after each vote.
pub fn tb_stages(config: &BallotConfig, votes: &[VoteChoice]) -> Result<Vec<PureState>> {
    config.require(Scheme::Tb)?;
    check_votes(config, votes)?;
    let mut states = vec![prepare_tb_ballot(config.d)?];
    for &v in votes {
        let next = tb_vote(states.last().expect("non-empty"), config.d, v)?;
        states.push(next);
    }
    Ok(states)
}

pub fn run_tb_vote(
    config: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
    mut hooks: Option<&mut dyn TbIntercept>,
) -> Result<Run> {
    config.require(Scheme::Tb)?;
    check_votes(config, votes)?;
    let d = config.d;
    let id = run_id(Scheme::Tb, seed);
    let rs = seed.derive("rep", 0);
    let mut t = Transcript::new();
    prepare_event(&mut t, &id, 0, config, seed, 1);
    let mut state = prepare_tb_ballot(d)?;
    t.push(&id, 0, Step::Distribute, Some(1), json!({ "to": 0 }), None);
    for (i, &v) in votes.iter().enumerate() {
        if let Some(h) = hooks.as_deref_mut() {
            state = h.intercept(i, HookPoint::BeforeVote, state)?;
        }
        state = tb_vote(&state, d, v)?;
        if let Some(h) = hooks.as_deref_mut() {
            state = h.intercept(i, HookPoint::AfterVote, state)?;
        }
        let next = if i + 1 < votes.len() {
            json!(i + 1)
        } else {
            json!("authority")
        };
        vote_event(&mut t, &id, 0, i, v, rs, json!({ "pass_to": next }));
    }
    t.push(
        &id,
        0,
        Step::Return,
        Some(1),
        json!({ "from": votes.len().checked_sub(1) }),
        None,
    );
    let (m, prob) = decode_tb(&state, d, &mut rs.stream("measure", 0))?;
    let tally = Tally::Count(m);
    let verdict = if config.n == 2 {
        TwoVoterVerdict::from_tally(m)
    } else {
        None
    };
    t.push(
        &id,
        0,
        Step::Measure,
        None,
        json!({ "basis": "difference" }),
        Some(json!({ "m": tally, "prob": prob })),
    );
    result_event(&mut t, &id, 0, tally, None, verdict);
    let result = RunResult {
        run_id: id,
        scheme: Scheme::Tb,
        d,
        n: config.n,
        seed,
        tally,
        p: None,
        verdict,
        repetitions: vec![RepOutcome {
            rep: 0,
            tally,
            p: None,
            prob,
            shifts: vec![],
        }],
    };
    Ok(Run {
        result,
        transcript: t,
    })
}

/// Voting angles the authority issues to each voter, `(θ_y, θ_n)`.
pub fn honest_angles(config: &BallotConfig) -> Result<Vec<(f64, f64)>> {
    config.require(Scheme::Secure)?;
    let s = config.secrets()?;
    Ok(vec![
        (s.theta_yes(config.d), s.theta_no(config.d));
        config.n
    ])
}

/// One repetition of the secure scheme on the compact state.
///
/// `tamper[i]` is an extra phase angle voter `i` applies to their ballot
/// qudit as `Σ_k e^{ikα}|k⟩⟨k|` after the transfer (zero when honest).
pub(crate) fn secure_repetition(
    config: &BallotConfig,
    votes: &[VoteChoice],
    rep_seed: Seed,
    angles: &[(f64, f64)],
    tamper: &[f64],
) -> Result<(RepOutcome, CorrelatedState)> {
    let d = config.d;
    let mut state = CorrelatedState::uniform(d, config.n)?;
    let mut shifts = Vec::with_capacity(config.n);
    for (i, &v) in votes.iter().enumerate() {
        let theta = if v.is_yes() { angles[i].0 } else { angles[i].1 };
        let (next, r) = cast_vote_secure_correlated(
            &state,
            &voting_qudit_amplitudes(d, theta),
            &mut rep_seed.stream("voter", i as u64),
        )?;
        state = next;
        if tamper[i] != 0.0 {
            let phases: Vec<_> = (0..d)
                .map(|k| crate::qstate::phase(k as f64 * tamper[i]))
                .collect();
            state = state.apply_phases(&phases)?;
        }
        shifts.push(r);
    }
    let out =
        decode_secure_correlated(&state, config, &shifts, &mut rep_seed.stream("measure", 0))?;
    Ok((
        RepOutcome {
            rep: 0,
            tally: out.tally,
            p: out.p,
            prob: out.prob,
            shifts,
        },
        state,
    ))
}

/// Secure run with caller-chosen voting angles and per-repetition tampering.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_secure_with(
    config: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
    repetitions: usize,
    angles: &[(f64, f64)],
    tamper: &mut dyn FnMut(usize) -> Vec<f64>,
    run_name: &str,
    t: &mut Transcript,
) -> Result<RunResult> {
    config.require(Scheme::Secure)?;
    check_votes(config, votes)?;
    if repetitions == 0 {
        return invalid("at least one repetition is required");
    }
    if angles.len() != config.n {
        return Err(Error::DimensionMismatch {
            expected: config.n,
            actual: angles.len(),
        });
    }
    let n = config.n;
    let mut reps = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let rs = seed.derive("rep", rep as u64);
        let extra = tamper(rep);
        if extra.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: extra.len(),
            });
        }
        let (mut out, _) = secure_repetition(config, votes, rs, angles, &extra)?;
        out.rep = rep;
        if t.is_recording() {
            prepare_event(t, run_name, rep, config, seed, repetitions);
            for site in 0..n {
                t.push(
                    run_name,
                    rep,
                    Step::Distribute,
                    Some(site),
                    json!({ "to": site, "voting_qudit": true }),
                    None,
                );
            }
            for (i, &v) in votes.iter().enumerate() {
                vote_event(
                    t,
                    run_name,
                    rep,
                    i,
                    v,
                    rs,
                    json!({ "shift": out.shifts[i] }),
                );
            }
            for site in 0..n {
                t.push(
                    run_name,
                    rep,
                    Step::Return,
                    Some(site),
                    json!({ "from": site, "sites": [site, n + site] }),
                    None,
                );
            }
            t.push(
                run_name,
                rep,
                Step::Measure,
                None,
                json!({ "basis": "phase_index" }),
                Some(json!({ "p": out.p, "prob": out.prob })),
            );
            result_event(t, run_name, rep, out.tally, out.p, None);
        }
        reps.push(out);
    }
    let tallies: Vec<Tally> = reps.iter().map(|r| r.tally).collect();
    let tally = aggregate_tallies(&tallies);
    let p = match reps[0].p {
        Some(p) if reps.iter().all(|r| r.p == Some(p)) => Some(p),
        _ => None,
    };
    Ok(RunResult {
        run_id: run_name.to_string(),
        scheme: Scheme::Secure,
        d: config.d,
        n,
        seed,
        tally,
        p,
        verdict: None,
        repetitions: reps,
    })
}

/// `repetitions` independent executions; the tally stands only if all agree.
pub fn run_secure_vote(
    config: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
    repetitions: usize,
) -> Result<Run> {
    let angles = honest_angles(config)?;
    let n = config.n;
    let mut t = Transcript::new();
    let id = run_id(Scheme::Secure, seed);
    let result = run_secure_with(
        config,
        votes,
        seed,
        repetitions,
        &angles,
        &mut |_| vec![0.0; n],
        &id,
        &mut t,
    )?;
    Ok(Run {
        result,
        transcript: t,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiningOutcome {
    pub announcements: Vec<u8>,
    pub parity: u8,
    /// True when nobody at the table paid.
    pub nsa_paid: bool,
}

/// Number of shared coins among `n` participants.
pub fn dining_pairs(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Dining cryptographers with explicit coins, one per pair `j < k` in
/// lexicographic order.
pub fn dining_with_coins(n: usize, payer: Option<usize>, coins: &[bool]) -> Result<DiningOutcome> {
    if n < 3 {
        return invalid(format!(
            "dining cryptographers needs at least 3 participants, got {n}"
        ));
    }
    if coins.len() != dining_pairs(n) {
        return Err(Error::DimensionMismatch {
            expected: dining_pairs(n),
            actual: coins.len(),
        });
    }
    if let Some(p) = payer {
        if p >= n {
            return Err(Error::SiteOutOfRange { site: p, sites: n });
        }
    }
    let mut announcements = vec![0u8; n];
    let mut c = coins.iter();
    for j in 0..n {
        for k in j + 1..n {
            let bit = *c.next().expect("length checked") as u8;
            announcements[j] ^= bit;
            announcements[k] ^= bit;
        }
    }
    if let Some(p) = payer {
        announcements[p] ^= 1;
    }
    let parity = announcements.iter().fold(0, |a, b| a ^ b);
    Ok(DiningOutcome {
        announcements,
        parity,
        nsa_paid: parity == 0,
    })
}

pub fn classical_dining(
    n: usize,
    payer: Option<usize>,
    rng: &mut impl Rng,
) -> Result<DiningOutcome> {
    let coins: Vec<bool> = (0..dining_pairs(n)).map(|_| rng.random()).collect();
    dining_with_coins(n, payer, &coins)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModularVote {
    pub modulus: usize,
    pub announcements: Vec<usize>,
    pub total: usize,
}

/// Key-masked classical tally with explicit keys `c_jk`, `j < k`, in
/// lexicographic order; `c_kj = −c_jk`. Arithmetic is modulo `N + 1` so a
/// unanimous vote does not wrap to zero.
pub fn modular_vote_with_keys(votes: &[bool], keys: &[i64]) -> Result<ModularVote> {
    let n = votes.len();
    if n < 2 {
        return invalid(format!("modular vote needs at least 2 voters, got {n}"));
    }
    if keys.len() != dining_pairs(n) {
        return Err(Error::DimensionMismatch {
            expected: dining_pairs(n),
            actual: keys.len(),
        });
    }
    let modulus = (n + 1) as i64;
    let mut sums: Vec<i64> = votes.iter().map(|&v| v as i64).collect();
    let mut c = keys.iter();
    for j in 0..n {
        for k in j + 1..n {
            let key = *c.next().expect("length checked");
            sums[j] += key;
            sums[k] -= key;
        }
    }
    let announcements: Vec<usize> = sums
        .iter()
        .map(|s| s.rem_euclid(modulus) as usize)
        .collect();
    let total = announcements.iter().sum::<usize>() % modulus as usize;
    Ok(ModularVote {
        modulus: modulus as usize,
        announcements,
        total,
    })
}

pub fn classical_modular_vote(votes: &[bool], rng: &mut impl Rng) -> Result<ModularVote> {
    let n = votes.len() as i64;
    let keys: Vec<i64> = (0..dining_pairs(votes.len()))
        .map(|_| rng.random_range(-n..=n))
        .collect();
    modular_vote_with_keys(votes, &keys)
}
