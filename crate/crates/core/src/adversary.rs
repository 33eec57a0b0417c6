//! Attacks on the voting protocols and the tests that expose them.
//!
//! Voter indices are 0-based throughout.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::ballots::{
    cast_vote_db, decode_db, phase_index_distribution, phase_vote_unitary, prepare_tb_ballot,
    secure_compensation, tally_from_phase_index, voting_qudit_amplitudes, BallotConfig, Scheme,
    Tally, VoteChoice,
};
use crate::error::{config as invalid, Error, Result};
use crate::protocols::{
    honest_angles, run_distributed, run_secure_with, run_tb_vote, secure_repetition, HookPoint,
    Run, TbIntercept,
};
use crate::qstate::{ProjectorSet, PureState, SparseVector, C64};
use crate::rng::{ChaCha20Rng, Seed};
use crate::transcript::Transcript;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Clean,
    Cheating,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: String,
    pub seed: Seed,
    pub trials: usize,
    /// What the attacker learned in each trial.
    pub inferred: Vec<i64>,
    /// Authority outcome counts by tally value.
    pub histogram: Vec<usize>,
    /// Trials whose authority outcome was not a tally.
    pub unresolved: usize,
    /// Whether the protocol's own checks fired, per trial.
    pub detections: Vec<bool>,
    pub detection_rate: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl AttackReport {
    fn new(attack: &str, seed: Seed, d: usize) -> Self {
        AttackReport {
            attack: attack.to_string(),
            seed,
            trials: 0,
            inferred: vec![],
            histogram: vec![0; d],
            unresolved: 0,
            detections: vec![],
            detection_rate: 0.0,
            metrics: BTreeMap::new(),
        }
    }

    fn record(&mut self, outcome: Tally, detected: bool) {
        match outcome {
            Tally::Count(m) => self.histogram[m] += 1,
            _ => self.unresolved += 1,
        }
        self.detections.push(detected);
        self.trials += 1;
    }

    fn finish(mut self) -> Self {
        let hits = self.detections.iter().filter(|&&x| x).count();
        self.detection_rate = if self.trials == 0 {
            0.0
        } else {
            hits as f64 / self.trials as f64
        };
        self
    }
}

/// Pearson statistic against the uniform distribution and its upper-tail p-value.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    if counts.len() < 2 || total == 0 {
        return (0.0, 1.0);
    }
    let expected = total as f64 / counts.len() as f64;
    let stat = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("positive degrees of freedom");
    (stat, dist.sf(stat))
}

struct Colluders {
    first: usize,
    last: usize,
    rng: ChaCha20Rng,
    seen_first: Option<usize>,
    seen_last: Option<usize>,
}

impl Colluders {
    fn new(first: usize, last: usize, rng: ChaCha20Rng) -> Self {
        Colluders {
            first,
            last,
            rng,
            seen_first: None,
            seen_last: None,
        }
    }

    fn inferred(&self, d: usize) -> usize {
        (self.seen_last.unwrap_or(0) + d - self.seen_first.unwrap_or(0)) % d
    }
}

impl TbIntercept for Colluders {
    fn intercept(&mut self, voter: usize, point: HookPoint, state: PureState) -> Result<PureState> {
        let here = match point {
            HookPoint::AfterVote if voter == self.first => &mut self.seen_first,
            HookPoint::BeforeVote if voter == self.last => &mut self.seen_last,
            _ => return Ok(state),
        };
        let (k, post) = state.measure_computational(1, &mut self.rng)?;
        *here = Some(k);
        Ok(post)
    }
}

/// Two voters read the travelling qudit in the computational basis: `first`
/// right after casting their own vote, `last` as soon as it arrives. The
/// difference of their readings is the number of yes votes strictly between
/// them.
///
/// Each trial also replays the same interception on a phase-voting pair
/// decoded by tally-state projection; `metrics["phase_chi2_p"]` tests that
/// readout for uniformity and `metrics["phase_histogram_k"]` holds its counts.
pub fn collusion_attack_tb(
    config: &BallotConfig,
    votes: &[VoteChoice],
    colluders: (usize, usize),
    trials: usize,
    seed: Seed,
) -> Result<AttackReport> {
    config.require(Scheme::Tb)?;
    let (first, last) = colluders;
    if first >= last || last >= config.n {
        return invalid(format!(
            "colluders must satisfy first < last < N, got {colluders:?} with N={}",
            config.n
        ));
    }
    let d = config.d;
    let between = votes[first + 1..last]
        .iter()
        .map(|v| v.multiplicity())
        .sum::<usize>()
        % d;
    let honest = votes.iter().map(|v| v.multiplicity()).sum::<usize>() % d;
    let mut report = AttackReport::new("collusion_tb", seed, d);
    let mut phase_hist = vec![0usize; d];
    let mut exact = 0usize;
    for t in 0..trials {
        let ts = seed.derive("trial", t as u64);
        let mut hook = Colluders::new(first, last, ts.stream("colluders", 0));
        let run = run_tb_vote(config, votes, ts, Some(&mut hook))?;
        let inferred = hook.inferred(d);
        exact += (inferred == between) as usize;
        report.inferred.push(inferred as i64);
        report.record(run.result.tally, run.result.tally != Tally::Count(honest));

        let (m, _) = phase_vote_collusion_trial(d, votes, first, last, ts)?;
        phase_hist[m] += 1;
    }
    let (stat, p) = chi_square_uniform(&phase_hist);
    report.metrics.insert("between_yes".into(), between as f64);
    report.metrics.insert(
        "inferred_exact_rate".into(),
        exact as f64 / trials.max(1) as f64,
    );
    report.metrics.insert("phase_chi2".into(), stat);
    report.metrics.insert("phase_chi2_p".into(), p);
    for (k, c) in phase_hist.iter().enumerate() {
        report
            .metrics
            .insert(format!("phase_histogram_{k}"), *c as f64);
    }
    Ok(report.finish())
}

/// The same interception on a two-qudit ballot carrying phase votes.
/// Returns the authority's tally-state readout and the colluders' difference.
pub fn phase_vote_collusion_trial(
    d: usize,
    votes: &[VoteChoice],
    first: usize,
    last: usize,
    seed: Seed,
) -> Result<(usize, usize)> {
    let mut state = prepare_tb_ballot(d)?;
    let mut hook = Colluders::new(first, last, seed.stream("colluders", 1));
    let u = phase_vote_unitary(d);
    for (i, v) in votes.iter().enumerate() {
        state = hook.intercept(i, HookPoint::BeforeVote, state)?;
        state = state.apply_local(1, &u.pow(v.multiplicity()))?;
        state = hook.intercept(i, HookPoint::AfterVote, state)?;
    }
    let (m, _) = decode_db(&state, d, 2, &mut seed.stream("measure", 1))?;
    Ok((
        m.count().expect("tally states span the collapsed pair"),
        hook.inferred(d),
    ))
}

/// One voter applies `extra` additional yes operations on a plain distributed ballot.
pub fn multi_vote_plain(
    config: &BallotConfig,
    votes: &[VoteChoice],
    cheater: usize,
    extra: usize,
    seed: Seed,
) -> Result<Run> {
    config.require(Scheme::Db)?;
    if cheater >= config.n {
        return Err(Error::SiteOutOfRange {
            site: cheater,
            sites: config.n,
        });
    }
    run_distributed(config, votes, seed, Some((cheater, extra)))
}

/// Error model of the forger's estimate of the yes/no phase gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgerError {
    /// The same error in every repetition.
    Fixed(f64),
    /// Uniform on `[−π·scale/d, π·scale/d]`, drawn afresh per repetition.
    Uniform { scale: f64 },
}

impl ForgerError {
    fn draw(&self, d: usize, rng: &mut impl Rng) -> f64 {
        match *self {
            ForgerError::Fixed(e) => e,
            ForgerError::Uniform { scale } => {
                let w = PI * scale / d as f64;
                if w == 0.0 {
                    0.0
                } else {
                    rng.random_range(-w..=w)
                }
            }
        }
    }
}

/// A voter adds one forged yes vote by imprinting an estimated phase gap.
///
/// The cheater casts their own vote honestly, then applies
/// `Σ_k e^{ik(Δ+ε)}|k⟩⟨k|` to their ballot qudit, where `Δ = θ_y − θ_n`
/// and `ε` is the estimation error. A trial counts as detected when the
/// repetitions disagree or a readout is not a valid phase index.
#[allow(clippy::too_many_arguments)]
pub fn phase_estimate_attack(
    config: &BallotConfig,
    votes: &[VoteChoice],
    cheater: usize,
    error: ForgerError,
    repetitions: usize,
    trials: usize,
    seed: Seed,
    transcript: &mut Transcript,
) -> Result<AttackReport> {
    config.require(Scheme::Secure)?;
    if cheater >= config.n {
        return Err(Error::SiteOutOfRange {
            site: cheater,
            sites: config.n,
        });
    }
    let (d, n) = (config.d, config.n);
    let s = config.secrets()?;
    let gap = s.theta_yes(d) - s.theta_no(d);
    let honest = votes.iter().filter(|v| v.is_yes()).count();
    let angles = honest_angles(config)?;
    let mut report = AttackReport::new("phase_estimate", seed, d);
    let mut forged = 0usize;
    for t in 0..trials {
        let ts = seed.derive("trial", t as u64);
        let mut tamper = |rep: usize| {
            let mut v = vec![0.0; n];
            v[cheater] = gap + error.draw(d, &mut ts.stream("forger", rep as u64));
            v
        };
        let name = format!("forge-{t}");
        let result = run_secure_with(
            config,
            votes,
            ts,
            repetitions,
            &angles,
            &mut tamper,
            &name,
            transcript,
        )?;
        let detected = !result.is_clean();
        if !detected && result.tally != Tally::Count(honest) {
            forged += 1;
        }
        report.inferred.push(result.p.map_or(-1, |p| p as i64));
        report.record(result.tally, detected);
    }
    report.metrics.insert(
        "forgery_success_rate".into(),
        forged as f64 / trials.max(1) as f64,
    );
    report
        .metrics
        .insert("repetitions".into(), repetitions as f64);
    Ok(report.finish())
}

/// Exact detection probability of the same forger, averaged over the error
/// draws `phase_estimate_attack` makes with this seed: per trial,
/// `1 − Σ_{p valid} Π_r q_r(p)` with `q_r` the readout distribution of
/// repetition `r`. Shares the voter and forger streams, so gaps compared
/// under one seed see identical errors.
pub fn phase_estimate_detection_exact(
    config: &BallotConfig,
    votes: &[VoteChoice],
    cheater: usize,
    error: ForgerError,
    repetitions: usize,
    trials: usize,
    seed: Seed,
) -> Result<f64> {
    config.require(Scheme::Secure)?;
    if cheater >= config.n {
        return Err(Error::SiteOutOfRange {
            site: cheater,
            sites: config.n,
        });
    }
    if repetitions == 0 || trials == 0 {
        return invalid("need at least one repetition and one trial");
    }
    let (d, n) = (config.d, config.n);
    let s = config.secrets()?;
    let gap = s.theta_yes(d) - s.theta_no(d);
    let angles = honest_angles(config)?;
    let valid: Vec<bool> = (0..d)
        .map(|p| tally_from_phase_index(p, d, s.label_gap()).is_some())
        .collect();
    let mut total = 0.0;
    for t in 0..trials {
        let ts = seed.derive("trial", t as u64);
        let mut agree = valid
            .iter()
            .map(|&v| if v { 1.0 } else { 0.0 })
            .collect::<Vec<f64>>();
        for rep in 0..repetitions {
            let mut tamper = vec![0.0; n];
            tamper[cheater] = gap + error.draw(d, &mut ts.stream("forger", rep as u64));
            let (out, state) = secure_repetition(
                config,
                votes,
                ts.derive("rep", rep as u64),
                &angles,
                &tamper,
            )?;
            let comp = secure_compensation(config, &out.shifts)?;
            let q = phase_index_distribution(&state.apply_phases(&comp)?);
            agree.iter_mut().zip(q).for_each(|(a, q)| *a *= q);
        }
        total += 1.0 - agree.iter().sum::<f64>();
    }
    Ok(total / trials as f64)
}

/// `|ψ(2πl/d)⟩` for `l = 0..d`, the basis the authority reads product ballots in.
pub fn fourier_basis(d: usize) -> Vec<Vec<C64>> {
    (0..d)
        .map(|l| voting_qudit_amplitudes(d, 2.0 * PI * l as f64 / d as f64))
        .collect()
}

/// Probability that a Fourier-basis readout of `site` names the vote.
fn identification_probability(state: &PureState, site: usize, choice: VoteChoice) -> Result<f64> {
    let d = state.dims()[site];
    let rho = state.reduced_density(&[site])?;
    let v = &fourier_basis(d)[choice.multiplicity() % d];
    let mut p = C64::new(0.0, 0.0);
    for a in 0..d {
        for b in 0..d {
            p += v[a].conj() * rho.entry(a, b) * v[b];
        }
    }
    Ok(p.re)
}

/// The authority hands out `⊗|ψ(0)⟩` instead of the entangled ballot and
/// reads each returned qudit in the Fourier basis.
///
/// `metrics["accuracy_i"]` is the exact probability of naming voter `i`'s
/// vote; `metrics["control_accuracy_i"]` is the same readout on the honest
/// ballot. `inferred` holds one sampled readout per voter.
pub fn authority_product_ballot(
    config: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
) -> Result<AttackReport> {
    config.require(Scheme::Db)?;
    if votes.len() != config.n {
        return invalid(format!("expected {} votes, got {}", config.n, votes.len()));
    }
    let d = config.d;
    let plus = PureState::single(voting_qudit_amplitudes(d, 0.0))?;
    let mut product = plus.clone();
    for _ in 1..config.n {
        product = product.tensor(&plus)?;
    }
    let mut honest = crate::ballots::prepare_db_ballot(d, config.n)?;
    for (i, &v) in votes.iter().enumerate() {
        product = cast_vote_db(&product, i, v, 1)?;
        honest = cast_vote_db(&honest, i, v, 1)?;
    }
    let mut report = AttackReport::new("product_ballot", seed, d);
    let (mut worst, mut control) = (1.0f64, 0.0f64);
    for (i, &v) in votes.iter().enumerate() {
        let a = identification_probability(&product, i, v)?;
        let c = identification_probability(&honest, i, v)?;
        worst = worst.min(a);
        control = control.max(c);
        report.metrics.insert(format!("accuracy_{i}"), a);
        report.metrics.insert(format!("control_accuracy_{i}"), c);
    }
    report.metrics.insert("min_accuracy".into(), worst);
    report
        .metrics
        .insert("max_control_accuracy".into(), control);
    let mut rng = seed.stream("authority", 0);
    let basis = fourier_basis(d);
    let mut state = product;
    for i in 0..config.n {
        let (l, post, _) = state.measure_in_basis(i, &basis, &mut rng)?;
        report.inferred.push(l as i64);
        state = post;
    }
    let total = votes.iter().map(|v| v.multiplicity()).sum::<usize>() % d;
    report.record(Tally::Count(total), false);
    Ok(report.finish())
}

/// The authority issues individual `(θ_y, θ_n)` to each voter.
///
/// `metrics["distinct_p"]` counts distinct phase indices over every vote
/// pattern with the same number of yes votes; more than one means the
/// readout tags individual voters. Each trial also lets the yes voters pool
/// their voting qudits into a 7-comparison symmetry test, whose outcome is
/// the per-trial detection flag.
pub fn mismatched_voting_states(
    config: &BallotConfig,
    angles: &[(f64, f64)],
    votes: &[VoteChoice],
    trials: usize,
    seed: Seed,
) -> Result<AttackReport> {
    config.require(Scheme::Secure)?;
    let (d, n) = (config.d, config.n);
    if angles.len() != n || votes.len() != n {
        return invalid(format!("expected {n} angle pairs and votes"));
    }
    let mut report = AttackReport::new("mismatched_states", seed, d);
    let zeros = vec![0.0; n];
    let run = run_secure_with(
        config,
        votes,
        seed,
        1,
        angles,
        &mut |_| zeros.clone(),
        "mismatch",
        &mut Transcript::discard(),
    )?;
    report.inferred.push(run.p.map_or(-1, |p| p as i64));
    report.metrics.insert(
        "tally_ok".into(),
        (run.tally == Tally::Count(votes.iter().filter(|v| v.is_yes()).count())) as u8 as f64,
    );

    let weight = votes.iter().filter(|v| v.is_yes()).count();
    let mut ps = std::collections::BTreeSet::new();
    for mask in 0u64..(1 << n) {
        if mask.count_ones() as usize != weight {
            continue;
        }
        let pattern: Vec<VoteChoice> = (0..n)
            .map(|i| VoteChoice::from_bool(mask >> i & 1 == 1))
            .collect();
        let r = run_secure_with(
            config,
            &pattern,
            seed.derive("pattern", mask),
            1,
            angles,
            &mut |_| zeros.clone(),
            "p",
            &mut Transcript::discard(),
        )?;
        ps.insert(r.repetitions[0].p);
    }
    report.metrics.insert("distinct_p".into(), ps.len() as f64);

    let yes_states: Vec<PureState> = votes
        .iter()
        .zip(angles)
        .filter(|(v, _)| v.is_yes())
        .map(|(_, a)| PureState::single(voting_qudit_amplitudes(d, a.0)))
        .collect::<Result<_>>()?;
    for t in 0..trials {
        let mut rng = seed.derive("trial", t as u64).stream("symmetry", 0);
        let detected = if yes_states.len() >= 2 {
            detect_symmetry(&yes_states, 7, &mut rng)?.verdict == Verdict::Cheating
        } else {
            false
        };
        report.record(run.tally, detected);
    }
    Ok(report.finish())
}

/// Same-claimed-θ pool, issued per voter: `θ_y = 2π(l_y + i)/d + δ`.
pub fn tagged_angles(config: &BallotConfig) -> Result<Vec<(f64, f64)>> {
    config.require(Scheme::Secure)?;
    let s = config.secrets()?;
    let d = config.d as f64;
    Ok((0..config.n)
        .map(|i| {
            (
                2.0 * PI * (s.l_y + i) as f64 / d + s.delta,
                s.theta_no(config.d),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub verdict: Verdict,
    pub comparisons: usize,
    pub failures: usize,
}

/// `(1 + |⟨a|b⟩|²)/2`, the probability that a swap test accepts `a ⊗ b`.
pub fn swap_test_pass_probability(a: &PureState, b: &PureState) -> Result<f64> {
    Ok((1.0 + a.inner(b)?.norm_sqr()) / 2.0)
}

/// Symmetric and antisymmetric subspaces of two `d`-level qudits.
pub fn symmetry_projectors(d: usize) -> Result<ProjectorSet> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut sym: Vec<SparseVector> = vec![];
    let mut anti: Vec<SparseVector> = vec![];
    for i in 0..d {
        sym.push(vec![(i * d + i, C64::new(1.0, 0.0))]);
        for j in i + 1..d {
            sym.push(vec![
                (i * d + j, C64::new(h, 0.0)),
                (j * d + i, C64::new(h, 0.0)),
            ]);
            anti.push(vec![
                (i * d + j, C64::new(h, 0.0)),
                (j * d + i, C64::new(-h, 0.0)),
            ]);
        }
    }
    ProjectorSet::spans(d * d, vec![sym, anti])
}

/// Pairwise swap tests on fresh copies of the pooled states.
///
/// Comparison `c` pairs state `c mod k` with state `(c+1) mod k`. The
/// verdict is `Cheating` when any comparison lands in the antisymmetric
/// subspace.
pub fn detect_symmetry(
    states: &[PureState],
    comparisons: usize,
    rng: &mut impl Rng,
) -> Result<TestOutcome> {
    if states.len() < 2 {
        return invalid("symmetry test needs at least two states");
    }
    let dims = states[0].dims().to_vec();
    if dims.len() != 1 || states.iter().any(|s| s.dims() != dims) {
        return invalid("symmetry test needs single qudits of equal dimension");
    }
    let proj = symmetry_projectors(dims[0])?;
    let k = states.len();
    let mut failures = 0;
    for c in 0..comparisons {
        let pair = states[c % k].tensor(&states[(c + 1) % k])?;
        let m = pair.measure_projective(&proj, rng)?;
        if m.outcome != crate::qstate::Outcome::Index(0) {
            failures += 1;
        }
    }
    let verdict = if failures > 0 {
        Verdict::Cheating
    } else {
        Verdict::Clean
    };
    Ok(TestOutcome {
        verdict,
        comparisons,
        failures,
    })
}

/// Sacrifices `trials` fresh copies of a ballot and reads `subset` in the
/// computational basis; any unequal readout flags the ballot.
pub fn detect_subset_correlation(
    ballot: &PureState,
    subset: &[usize],
    trials: usize,
    rng: &mut impl Rng,
) -> Result<TestOutcome> {
    if subset.iter().any(|&s| s >= ballot.num_sites()) {
        return Err(Error::SiteOutOfRange {
            site: *subset.iter().max().unwrap_or(&0),
            sites: ballot.num_sites(),
        });
    }
    if subset.len() < 2 {
        return Ok(TestOutcome {
            verdict: Verdict::Inconclusive,
            comparisons: 0,
            failures: 0,
        });
    }
    let mut failures = 0;
    for _ in 0..trials {
        let mut state = ballot.clone();
        let mut digits = Vec::with_capacity(subset.len());
        for &s in subset {
            let (k, post) = state.measure_computational(s, rng)?;
            digits.push(k);
            state = post;
        }
        if digits.iter().any(|&k| k != digits[0]) {
            failures += 1;
        }
    }
    let verdict = if failures > 0 {
        Verdict::Cheating
    } else {
        Verdict::Clean
    };
    Ok(TestOutcome {
        verdict,
        comparisons: trials,
        failures,
    })
}

/// Repetitions must all yield the same valid tally.
pub fn detect_inconsistent_results(outcomes: &[Tally]) -> Result<Verdict> {
    if outcomes.len() < 2 {
        return invalid("consistency check needs at least two outcomes");
    }
    Ok(match crate::protocols::aggregate_tallies(outcomes) {
        Tally::Count(_) => Verdict::Clean,
        _ => Verdict::Cheating,
    })
}

/// A ballot of `sites` independent `|ψ(0)⟩` qudits, for the correlation test.
pub fn product_ballot(d: usize, sites: usize) -> Result<PureState> {
    let plus = PureState::single(voting_qudit_amplitudes(d, 0.0))?;
    let mut out = plus.clone();
    for _ in 1..sites {
        out = out.tensor(&plus)?;
    }
    Ok(out)
}
