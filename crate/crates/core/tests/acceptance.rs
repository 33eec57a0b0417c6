//! Acceptance criteria, one line per criterion.
//!
//! Runs without the libtest harness so the PASS/FAIL lines always reach the
//! output. A criterion listed in `KNOWN_UNATTAINABLE` is checked literally and
//! reported as FAIL; the run only fails if such a criterion unexpectedly
//! passes or if its corrected statement does not hold.

use std::path::Path;
use std::time::Instant;

use rand::Rng;

use qvote::adversary::{
    authority_product_ballot, collusion_attack_tb, detect_subset_correlation,
    mismatched_voting_states, multi_vote_plain, phase_estimate_attack,
    phase_estimate_detection_exact, product_ballot, swap_test_pass_probability, tagged_angles,
    ForgerError, Verdict,
};
use qvote::ballots::{
    prepare_db_ballot, voting_qudit_amplitudes, BallotConfig, Scheme, Secrets, Tally,
    TwoVoterVerdict, VoteChoice,
};
use qvote::cli::{load_scenario, run_scenario};
use qvote::protocols::{
    classical_dining, classical_modular_vote, dining_pairs, dining_with_coins, run_db_vote,
    run_secure_vote, run_tb_vote,
};
use qvote::qstate::PureState;
use qvote::rng::Seed;
use qvote::transcript::Transcript;
use qvote::verify::{
    check_intermediate_privacy, check_privacy, nogo_floor, nogo_random_grid_min, qubit_nogo_search,
    qutrit_solution_check, DEFAULT_ITERATIONS, NOGO_FLOOR_SLACK,
};

const TOL: f64 = 1e-10;

/// Criteria whose literal statement does not hold for the physics being
/// simulated, with the statement that is checked in its place.
const KNOWN_UNATTAINABLE: &[(usize, &str)] = &[(
    3,
    "multi-site subsets of a GHZ ballot are classically correlated, not maximally mixed; \
     checked instead: single sites maximally mixed, every subset vote-independent, \
     deviation of an s-site subset exactly 1/d - 1/d^s",
)];

struct Outcome {
    pass: bool,
    detail: String,
    /// For known-unattainable criteria: whether the corrected statement holds.
    corrected: Option<bool>,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome {
            pass,
            detail,
            corrected: None,
        }
    }
}

type Criterion = fn() -> qvote::Result<Outcome>;

fn yn(mask: u64, n: usize) -> Vec<VoteChoice> {
    (0..n)
        .map(|i| VoteChoice::from_bool(mask >> i & 1 == 1))
        .collect()
}

fn db_sweep() -> impl Iterator<Item = (usize, usize)> {
    [3usize, 5, 8].into_iter().flat_map(|d| {
        [2usize, 3, 4]
            .into_iter()
            .filter(move |&n| d > n)
            .map(move |n| (d, n))
    })
}

fn c1_db_correctness() -> qvote::Result<Outcome> {
    let start = Instant::now();
    let (mut cases, mut worst) = (0usize, 0.0f64);
    let mut wrong = 0usize;
    for (d, n) in db_sweep() {
        let cfg = BallotConfig::db(d, n)?;
        for mask in 0..1u64 << n {
            let run = run_db_vote(&cfg, &yn(mask, n), Seed(1000 * d as u64 + mask))?;
            let rep = &run.result.repetitions[0];
            wrong += (rep.tally != Tally::Count(mask.count_ones() as usize)) as usize;
            worst = worst.max((1.0 - rep.prob).abs());
            cases += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(Outcome::new(
        wrong == 0 && worst <= TOL && secs < 30.0,
        format!("{cases} vote vectors, {wrong} wrong, worst |1-P| {worst:.1e}, {secs:.2}s"),
    ))
}

fn c2_privacy() -> qvote::Result<Outcome> {
    let (mut same, mut cross, mut pass) = (0.0f64, 0.0f64, true);
    for (d, n) in db_sweep() {
        for scheme in [Scheme::Db, Scheme::Tb] {
            let r = check_privacy(scheme, d, n, TOL)?;
            pass &= r.pass;
            same = same.max(r.worst_same_tally_deviation);
            cross = cross.max(r.worst_cross_tally_overlap);
        }
    }
    Ok(Outcome::new(pass, format!("db and tb: worst same-tally |1-|<.>|| {same:.1e}, worst cross-tally overlap {cross:.1e}")))
}

fn c3_intermediate() -> qvote::Result<Outcome> {
    let (d, n) = (5, 4);
    let mut literal = true;
    let mut corrected = true;
    let (mut single, mut multi, mut dependence, mut off_oracle) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    // partial trace of a GHZ ballot over all but s sites: (1/d) Σ_k |k..k⟩⟨k..k|
    let oracle = |s: usize| 1.0 / d as f64 - 1.0 / (d as f64).powi(s as i32);
    for mask in 0..1u64 << n {
        let votes = yn(mask, n);
        for cfg in [BallotConfig::db(d, n)?, BallotConfig::tb(d, n)?] {
            let r = check_intermediate_privacy(&cfg, &votes, TOL)?;
            literal &= r.pass;
            corrected &= r.single_sites_pass && r.vote_independent;
            for s in &r.stages {
                single = single.max(s.worst_by_size[0]);
                dependence = dependence.max(s.worst_vote_dependence);
                for (size, &w) in s.worst_by_size.iter().enumerate().skip(1) {
                    multi = multi.max(w);
                    off_oracle = off_oracle.max((w - oracle(size + 1)).abs());
                }
            }
        }
    }
    corrected &= off_oracle <= TOL;
    Ok(Outcome {
        pass: literal,
        detail: format!(
            "single sites {single:.1e}; multi-site subsets up to {multi:.4} (oracle 1/d-1/d^s: {:.4}, {:.4}; off by {off_oracle:.1e}); \
             vote dependence {dependence:.1e}",
            oracle(2),
            oracle(3)
        ),
        corrected: Some(corrected),
    })
}

fn c4_tb_qutrit() -> qvote::Result<Outcome> {
    let cfg = BallotConfig::tb(3, 2)?;
    let expected = [
        TwoVoterVerdict::Refusal,
        TwoVoterVerdict::Undecided,
        TwoVoterVerdict::Undecided,
        TwoVoterVerdict::Acceptance,
    ];
    let mut pass = true;
    let mut got = vec![];
    for (mask, want) in [0u64, 1, 2, 3].into_iter().zip(expected) {
        for s in 0..20 {
            let r = run_tb_vote(&cfg, &yn(mask, 2), Seed(s), None)?.result;
            pass &= r.verdict == Some(want) && (1.0 - r.repetitions[0].prob).abs() <= TOL;
            if s == 0 {
                got.push(format!("{:?}", r.verdict.unwrap()).to_lowercase());
            }
        }
    }
    Ok(Outcome::new(
        pass,
        format!(
            "(N,N),(Y,N),(N,Y),(Y,Y) -> {} over 20 seeds each",
            got.join(", ")
        ),
    ))
}

fn c5_secure_decoding() -> qvote::Result<Outcome> {
    let mut rng = Seed(5).stream("configs", 0);
    let (mut bad_p, mut bad_m, mut false_cheat) = (0usize, 0usize, 0usize);
    for c in 0..100u64 {
        let d = [7usize, 11, 13][rng.random_range(0..3)];
        let n = rng.random_range(1..=4);
        let secrets = Secrets::draw(d, n, &mut rng)?;
        let cfg = BallotConfig::secure(d, n, secrets)?;
        let votes: Vec<VoteChoice> = (0..n)
            .map(|_| VoteChoice::from_bool(rng.random()))
            .collect();
        let m = votes.iter().filter(|v| v.is_yes()).count();
        let expected_p = (m as i64 * secrets.label_gap()).rem_euclid(d as i64) as usize;
        let r = run_secure_vote(&cfg, &votes, Seed(c), 3)?.result;
        false_cheat += (!r.is_clean()) as usize;
        for rep in &r.repetitions {
            bad_p += (rep.p != Some(expected_p)) as usize;
            bad_m += (rep.tally != Tally::Count(m)) as usize;
        }
    }
    Ok(Outcome::new(
        bad_p + bad_m + false_cheat == 0,
        format!("100 configs x 3 repetitions: {bad_p} wrong p, {bad_m} wrong m, {false_cheat} false CHEAT_DETECTED"),
    ))
}

fn c6_collusion() -> qvote::Result<Outcome> {
    let cfg = BallotConfig::tb(5, 4)?;
    let votes = [
        VoteChoice::Yes,
        VoteChoice::Yes,
        VoteChoice::No,
        VoteChoice::Yes,
    ];
    let r = collusion_attack_tb(&cfg, &votes, (0, 3), 1000, Seed(6))?;
    let exact = r.metrics["inferred_exact_rate"];
    let p = r.metrics["phase_chi2_p"];
    let hist: Vec<String> = (0..5)
        .map(|k| format!("{}", r.metrics[&format!("phase_histogram_{k}")]))
        .collect();
    Ok(Outcome::new(
        exact == 1.0 && r.trials == 1000 && p >= 0.01,
        format!(
            "in-between yes count exact in {}/1000; phase readout [{}] chi2 {:.2}, p-value {p:.3}",
            (exact * 1000.0).round(),
            hist.join(" "),
            r.metrics["phase_chi2"]
        ),
    ))
}

fn c7_multi_vote() -> qvote::Result<Outcome> {
    let cfg = BallotConfig::db(5, 3)?;
    let (mut cases, mut wrong) = (0usize, 0usize);
    for mask in 0..8u64 {
        let w = mask.count_ones() as usize;
        for cheater in 0..3 {
            for extra in 0..=9 {
                let r = multi_vote_plain(
                    &cfg,
                    &yn(mask, 3),
                    cheater,
                    extra,
                    Seed(mask * 100 + extra as u64),
                )?
                .result;
                wrong += (r.tally != Tally::Count((w + extra) % 5)) as usize;
                cases += 1;
            }
        }
    }
    Ok(Outcome::new(
        wrong == 0,
        format!("{cases} cases (votes x cheater x extra 0..9), {wrong} off (tally + extra) mod 5"),
    ))
}

fn fixture(name: &str) -> serde_json::Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture exists"))
        .expect("fixture is JSON")
}

fn c8_forgery() -> qvote::Result<Outcome> {
    let f = fixture("forgery_rate.json");
    let oracle = f["detection_rate"].as_f64().expect("detection_rate");
    let d = f["d"].as_u64().expect("d") as usize;
    let reps = f["repetitions"].as_u64().expect("repetitions") as usize;
    let error = ForgerError::Uniform {
        scale: f["scale"].as_f64().expect("scale"),
    };
    let votes = [VoteChoice::Yes, VoteChoice::No, VoteChoice::No];
    let adjacent = BallotConfig::secure(
        d,
        3,
        Secrets {
            l_y: 1,
            l_n: 0,
            delta: 0.37,
        },
    )?;
    let wide = BallotConfig::secure(
        d,
        3,
        Secrets {
            l_y: 3,
            l_n: 0,
            delta: 0.37,
        },
    )?;
    let trials = 10_000;
    let rate = |cfg: &BallotConfig| -> qvote::Result<f64> {
        Ok(phase_estimate_attack(
            cfg,
            &votes,
            1,
            error,
            reps,
            trials,
            Seed(8),
            &mut Transcript::discard(),
        )?
        .detection_rate)
    };
    let (r1, r3) = (rate(&adjacent)?, rate(&wide)?);
    let (e1, e3) = (
        phase_estimate_detection_exact(&adjacent, &votes, 1, error, reps, 2000, Seed(8))?,
        phase_estimate_detection_exact(&wide, &votes, 1, error, reps, 2000, Seed(8))?,
    );
    let matches = (r1 - oracle).abs() <= 0.03;
    Ok(Outcome::new(
        matches && r1 >= r3,
        format!(
            "gap 1: {r1:.4} vs oracle {oracle:.4} (|diff| {:.4} <= 0.03: {matches}); gap 3: {r3:.4}; \
             exact paired rates {e1:.6} / {e3:.6}",
            (r1 - oracle).abs()
        ),
    ))
}

fn c9_nogo() -> qvote::Result<Outcome> {
    let start = Instant::now();
    let r = qubit_nogo_search(200, DEFAULT_ITERATIONS, Seed(7))?;
    let secs = start.elapsed().as_secs_f64();
    let floor = nogo_floor();
    let qutrit = qutrit_solution_check()?;
    Ok(Outcome::new(
        floor > 0.0 && r.min_residual >= floor - NOGO_FLOOR_SLACK && qutrit <= 1e-12 && secs < 60.0,
        format!(
            "min residual {:.10} over 200 restarts vs grid floor {floor} (random-grid estimate {:.4}); qutrit residual {qutrit:.1e}; {secs:.2}s",
            r.min_residual,
            nogo_random_grid_min()
        ),
    ))
}

fn c10_classical() -> qvote::Result<Outcome> {
    let mut wrong = 0usize;
    let mut cases = 0usize;
    for payer in [None, Some(0), Some(1), Some(2)] {
        for coins in 0..1u32 << dining_pairs(3) {
            let bits: Vec<bool> = (0..dining_pairs(3)).map(|i| coins >> i & 1 == 1).collect();
            wrong += (dining_with_coins(3, payer, &bits)?.nsa_paid != payer.is_none()) as usize;
            cases += 1;
        }
    }
    let mut rng = Seed(10).stream("dining", 0);
    for _ in 0..1000 {
        let payer = rng.random_range(0..8usize).checked_sub(1);
        wrong += (classical_dining(7, payer, &mut rng)?.nsa_paid != payer.is_none()) as usize;
        cases += 1;
    }
    let mut rng = Seed(10).stream("modular", 0);
    for mask in 0..16u64 {
        let votes: Vec<bool> = (0..4).map(|i| mask >> i & 1 == 1).collect();
        for _ in 0..50 {
            wrong += (classical_modular_vote(&votes, &mut rng)?.total != mask.count_ones() as usize)
                as usize;
            cases += 1;
        }
    }
    Ok(Outcome::new(wrong == 0, format!("dining n=3 exhaustive + n=7 x1000, modular N=4 exhaustive x50 keys: {wrong}/{cases} wrong")))
}

fn c11_malicious_authority() -> qvote::Result<Outcome> {
    let (d, n) = (5, 4);
    let votes = [
        VoteChoice::Yes,
        VoteChoice::No,
        VoteChoice::Yes,
        VoteChoice::Yes,
    ];
    let leak = authority_product_ballot(&BallotConfig::db(d, n)?, &votes, Seed(11))?;
    let accuracy = leak.metrics["min_accuracy"];
    let sites: Vec<usize> = (0..n).collect();
    let fake = product_ballot(d, n)?;
    let honest = prepare_db_ballot(d, n)?;
    let mut rng = Seed(11).stream("voters", 0);
    let copies = 3;
    let (mut flagged_fake, mut flagged_honest) = (0, 0);
    for _ in 0..500 {
        flagged_fake += (detect_subset_correlation(&fake, &sites, copies, &mut rng)?.verdict
            == Verdict::Cheating) as usize;
        flagged_honest += (detect_subset_correlation(&honest, &sites, copies, &mut rng)?.verdict
            == Verdict::Cheating) as usize;
    }
    let cfg = BallotConfig::secure(
        7,
        3,
        Secrets {
            l_y: 2,
            l_n: 0,
            delta: 0.1,
        },
    )?;
    let angles = tagged_angles(&cfg)?;
    let a = PureState::single(voting_qudit_amplitudes(7, angles[0].0))?;
    let b = PureState::single(voting_qudit_amplitudes(7, angles[1].0))?;
    let per_comparison = swap_test_pass_probability(&a, &b)?;
    let analytic = 1.0 - per_comparison.powi(7);
    let sym = mismatched_voting_states(
        &cfg,
        &angles,
        &[VoteChoice::Yes, VoteChoice::Yes, VoteChoice::No],
        10_000,
        Seed(11),
    )?;
    Ok(Outcome::new(
        (accuracy - 1.0).abs() <= TOL
            && flagged_fake >= 499
            && flagged_honest == 0
            && (per_comparison - 0.5).abs() <= 1e-12
            && analytic >= 0.99
            && sym.detection_rate >= 0.99,
        format!(
            "product-ballot accuracy {accuracy:.12}; correlation test ({copies} copies) flags fake {flagged_fake}/500, honest {flagged_honest}/500; \
             swap pass {per_comparison:.3}, 7 comparisons detect {:.4} (analytic {analytic:.4})",
            sym.detection_rate
        ),
    ))
}

fn c12_determinism() -> qvote::Result<Outcome> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/scenarios");
    let mut names: Vec<_> = std::fs::read_dir(&dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    names.sort();
    let (mut compared, mut rejected, mut differ) = (0usize, 0usize, vec![]);
    for path in names {
        let text = std::fs::read_to_string(&path)?;
        let Ok(cfg) = load_scenario(&text, &[]) else {
            rejected += 1;
            continue;
        };
        let (a, b) = (run_scenario(&cfg)?, run_scenario(&cfg)?);
        let same = a.transcript.to_jsonl() == b.transcript.to_jsonl()
            && serde_json::to_string_pretty(&a.result).ok()
                == serde_json::to_string_pretty(&b.result).ok();
        if !same {
            differ.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
        compared += 1;
    }
    Ok(Outcome::new(
        differ.is_empty() && compared > 0,
        format!(
            "{compared} scenarios rerun byte-identical ({rejected} rejected at load by design){}",
            if differ.is_empty() {
                String::new()
            } else {
                format!("; differ: {differ:?}")
            }
        ),
    ))
}

fn main() {
    let criteria: [(&str, Criterion); 12] = [
        ("DB correctness", c1_db_correctness),
        ("privacy conditions", c2_privacy),
        ("intermediate privacy", c3_intermediate),
        ("TB qutrit mapping", c4_tb_qutrit),
        ("SECURE decoding", c5_secure_decoding),
        ("collusion attack", c6_collusion),
        ("multi-vote modulo", c7_multi_vote),
        ("forgery detection", c8_forgery),
        ("qubit no-go", c9_nogo),
        ("classical baselines", c10_classical),
        ("malicious authority", c11_malicious_authority),
        ("determinism", c12_determinism),
    ];
    let mut failures = 0;
    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        let start = Instant::now();
        let known = KNOWN_UNATTAINABLE.iter().find(|(k, _)| *k == id);
        let line = match check() {
            Err(e) => {
                failures += 1;
                format!("FAIL  error: {e}")
            }
            Ok(o) => {
                let status = if o.pass { "PASS" } else { "FAIL" };
                match (known, o.pass, o.corrected) {
                    (None, true, _) => passed += 1,
                    (None, false, _) => failures += 1,
                    (Some(_), true, _) => failures += 1,
                    (Some(_), false, c) => failures += (c != Some(true)) as usize,
                }
                let note = match (known, o.corrected) {
                    (Some((_, why)), Some(c)) => {
                        format!("\n      known unattainable: {why}; corrected statement holds: {c}")
                    }
                    _ => String::new(),
                };
                format!("{status}  {}{note}", o.detail)
            }
        };
        println!(
            "criterion {id:>2} [{name}] {line}  ({:.2}s)",
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {passed}/12 PASS, {} known unattainable, {failures} unexpected",
        KNOWN_UNATTAINABLE.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
