//! Scenario files: schema, overrides and execution.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::adversary::{
    authority_product_ballot, collusion_attack_tb, detect_subset_correlation,
    mismatched_voting_states, multi_vote_plain, phase_estimate_attack, product_ballot,
    tagged_angles, AttackReport, ForgerError, TestOutcome, Verdict,
};
use crate::ballots::{BallotConfig, Scheme, Secrets, VoteChoice};
use crate::error::{Error, Result};
use crate::protocols::{
    run_db_vote, run_secure_vote, run_survey, run_tb_vote, Run, RunResult, DEFAULT_REPETITIONS,
};
use crate::rng::Seed;
use crate::transcript::Transcript;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scheme: Scheme,
    pub d: usize,
    #[serde(alias = "N")]
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<Vec<VoteChoice>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote_distribution: Option<VoteDistribution>,
    #[serde(default)]
    pub secrets: SecretsPolicy,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survey_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default = "one")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn one() -> usize {
    1
}

/// Votes drawn per trial from the `votes` stream of the trial seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteDistribution {
    pub yes_probability: f64,
}

/// `"drawn"` takes the secrets from the master seed's `authority` stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SecretsPolicy {
    #[default]
    Drawn,
    Explicit(Secrets),
}

impl Serialize for SecretsPolicy {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SecretsPolicy::Drawn => s.serialize_str("drawn"),
            SecretsPolicy::Explicit(x) => x.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for SecretsPolicy {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Word(String),
            Explicit(Secrets),
        }
        match Raw::deserialize(de)? {
            Raw::Word(w) if w == "drawn" => Ok(SecretsPolicy::Drawn),
            Raw::Word(w) => Err(serde::de::Error::custom(format!(
                "secrets must be \"drawn\" or an object, got \"{w}\""
            ))),
            Raw::Explicit(s) => Ok(SecretsPolicy::Explicit(s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackConfig {
    /// Two travelling-ballot voters read the qudit (0-based, `first < last`).
    Collusion { colluders: (usize, usize) },
    /// One voter applies `extra` additional yes operations (plain distributed ballot).
    MultiVote { cheater: usize, extra: usize },
    /// One voter forges a yes vote from an estimate of the phase gap.
    PhaseEstimate {
        cheater: usize,
        #[serde(default = "default_forger_error")]
        error: ForgerError,
    },
    /// The authority distributes a product state; voters run the correlation test.
    ProductBallot {},
    /// The authority tags voters with individual voting states; voters run swap tests.
    MismatchedStates {},
}

fn default_forger_error() -> ForgerError {
    ForgerError::Uniform { scale: 1.0 }
}

impl AttackConfig {
    fn scheme(&self) -> Scheme {
        match self {
            AttackConfig::Collusion { .. } => Scheme::Tb,
            AttackConfig::MultiVote { .. } | AttackConfig::ProductBallot {} => Scheme::Db,
            AttackConfig::PhaseEstimate { .. } | AttackConfig::MismatchedStates {} => {
                Scheme::Secure
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_transcript")]
    pub transcript: String,
    #[serde(default = "default_result")]
    pub result: String,
}

fn default_transcript() -> String {
    "transcript.jsonl".into()
}

fn default_result() -> String {
    "result.json".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Outputs {
            dir: None,
            transcript: default_transcript(),
            result: default_result(),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Sets `path` (dot-separated) in `root` to `raw`, parsed as JSON when possible.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| bad(format!("override '{spec}' is not key=value")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(bad(format!("override '{spec}' has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => {
                return Err(bad(format!(
                    "override '{key}': '{}' is not an object",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses a scenario, applies `key=value` overrides and validates it.
pub fn load_scenario(text: &str, overrides: &[String]) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = if overrides.is_empty() {
        serde_json::from_str(text).map_err(|e| bad(format!("scenario: {e}")))?
    } else {
        let mut v: Value = serde_json::from_str(text).map_err(|e| bad(format!("scenario: {e}")))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        serde_json::from_value(v).map_err(|e| bad(format!("scenario after overrides: {e}")))?
    };
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.ballot_config()?;
        match (&self.votes, &self.vote_distribution) {
            (Some(v), None) if v.len() != self.n => {
                return Err(bad(format!(
                    "votes: expected {} entries, got {}",
                    self.n,
                    v.len()
                )));
            }
            (Some(_), None) => {}
            (None, Some(dist)) => {
                if !(0.0..=1.0).contains(&dist.yes_probability) {
                    return Err(bad(format!(
                        "vote_distribution.yes_probability {} is not in [0, 1]",
                        dist.yes_probability
                    )));
                }
                if self.scheme == Scheme::Survey {
                    return Err(bad("surveys need explicit votes"));
                }
            }
            _ => return Err(bad("give exactly one of votes and vote_distribution")),
        }
        if self.trials == 0 {
            return Err(bad("trials must be at least 1"));
        }
        if self.repetitions == 0 {
            return Err(bad("repetitions must be at least 1"));
        }
        if let Some(a) = &self.attack {
            if a.scheme() != self.scheme {
                return Err(bad(format!(
                    "attack '{}' needs scheme {}, got {}",
                    attack_name(a),
                    a.scheme(),
                    self.scheme
                )));
            }
        }
        if self.scheme != Scheme::Secure && matches!(self.secrets, SecretsPolicy::Explicit(_)) {
            return Err(bad(format!(
                "secrets only apply to the secure scheme, not {}",
                self.scheme
            )));
        }
        for name in [&self.outputs.transcript, &self.outputs.result] {
            if name.is_empty() {
                return Err(bad("output file names must not be empty"));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> Seed {
        Seed(self.seed)
    }

    /// The ballot configuration, with drawn secrets resolved from the seed.
    pub fn ballot_config(&self) -> Result<BallotConfig> {
        let (d, n) = (self.d, self.n);
        match self.scheme {
            Scheme::Db => BallotConfig::db(d, n),
            Scheme::Tb => BallotConfig::tb(d, n),
            Scheme::Survey => {
                BallotConfig::survey(d, n, self.survey_max.unwrap_or(d.saturating_sub(1)))
            }
            Scheme::Secure => {
                let secrets = match self.secrets {
                    SecretsPolicy::Explicit(s) => s,
                    SecretsPolicy::Drawn => {
                        Secrets::draw(d, n, &mut self.seed().stream("authority", 0))?
                    }
                };
                BallotConfig::secure(d, n, secrets)
            }
        }
    }

    fn trial_seed(&self, t: usize) -> Seed {
        if self.trials == 1 {
            self.seed()
        } else {
            self.seed().derive("trial", t as u64)
        }
    }

    fn votes_for(&self, seed: Seed) -> Vec<VoteChoice> {
        match (&self.votes, &self.vote_distribution) {
            (Some(v), _) => v.clone(),
            (None, Some(dist)) => {
                let mut rng = seed.stream("votes", 0);
                (0..self.n)
                    .map(|_| VoteChoice::from_bool(rng.random_bool(dist.yes_probability)))
                    .collect()
            }
            (None, None) => unreachable!("validated"),
        }
    }
}

fn attack_name(a: &AttackConfig) -> &'static str {
    match a {
        AttackConfig::Collusion { .. } => "collusion",
        AttackConfig::MultiVote { .. } => "multi_vote",
        AttackConfig::PhaseEstimate { .. } => "phase_estimate",
        AttackConfig::ProductBallot {} => "product_ballot",
        AttackConfig::MismatchedStates {} => "mismatched_states",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Clean,
    CheatDetected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scheme: Scheme,
    pub d: usize,
    pub n: usize,
    pub seed: Seed,
    pub trials: usize,
    pub status: Status,
    pub runs: Vec<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackReport>,
    /// The voters' own test against the attack, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub countermeasure: Option<TestOutcome>,
}

impl ScenarioResult {
    pub fn summary_lines(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .runs
            .iter()
            .take(10)
            .map(|r| {
                let mut l = format!(
                    "{}: m={}",
                    r.run_id,
                    serde_json::to_string(&r.tally).expect("tally serializes")
                );
                if let Some(p) = r.p {
                    l += &format!(", p={p}");
                }
                if let Some(v) = r.verdict {
                    l += &format!(
                        ", {}",
                        serde_json::to_string(&v).expect("verdict serializes")
                    );
                }
                l
            })
            .collect();
        if self.runs.len() > 10 {
            lines.push(format!("... {} more runs", self.runs.len() - 10));
        }
        if let Some(a) = &self.attack {
            lines.push(format!(
                "attack {}: {} trials, detection rate {:.4}",
                a.attack, a.trials, a.detection_rate
            ));
        }
        if let Some(c) = &self.countermeasure {
            lines.push(format!(
                "countermeasure: {:?} ({} of {} checks failed)",
                c.verdict, c.failures, c.comparisons
            ));
        }
        lines.push(match self.status {
            Status::Clean => "status: CLEAN".into(),
            Status::CheatDetected => "status: CHEAT_DETECTED".into(),
        });
        lines
    }
}

pub struct ScenarioOutcome {
    pub result: ScenarioResult,
    pub transcript: Transcript,
}

fn honest_run(
    config: &ScenarioConfig,
    ballot: &BallotConfig,
    votes: &[VoteChoice],
    seed: Seed,
) -> Result<Run> {
    match config.scheme {
        Scheme::Db => run_db_vote(ballot, votes, seed),
        Scheme::Tb => run_tb_vote(ballot, votes, seed, None),
        Scheme::Secure => run_secure_vote(ballot, votes, seed, config.repetitions),
        Scheme::Survey => {
            let euros: Vec<usize> = votes.iter().map(|v| v.multiplicity()).collect();
            run_survey(ballot, &euros, seed)
        }
    }
}

/// Executes a validated scenario. Equal configs give byte-identical outputs.
pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioOutcome> {
    config.validate()?;
    let ballot = config.ballot_config()?;
    let seed = config.seed();
    let mut transcript = Transcript::new();
    let mut runs = vec![];
    let mut attack = None;
    let mut countermeasure = None;
    match config.attack {
        None => {
            for t in 0..config.trials {
                let ts = config.trial_seed(t);
                let run = honest_run(config, &ballot, &config.votes_for(ts), ts)?;
                transcript.extend(run.transcript);
                runs.push(run.result);
            }
        }
        Some(AttackConfig::MultiVote { cheater, extra }) => {
            for t in 0..config.trials {
                let ts = config.trial_seed(t);
                let run = multi_vote_plain(&ballot, &config.votes_for(ts), cheater, extra, ts)?;
                transcript.extend(run.transcript);
                runs.push(run.result);
            }
        }
        Some(AttackConfig::Collusion { colluders }) => {
            attack = Some(collusion_attack_tb(
                &ballot,
                &config.votes_for(seed),
                colluders,
                config.trials,
                seed,
            )?);
        }
        Some(AttackConfig::PhaseEstimate { cheater, error }) => {
            let votes = config.votes_for(seed);
            attack = Some(phase_estimate_attack(
                &ballot,
                &votes,
                cheater,
                error,
                config.repetitions,
                config.trials,
                seed,
                &mut transcript,
            )?);
        }
        Some(AttackConfig::ProductBallot {}) => {
            attack = Some(authority_product_ballot(
                &ballot,
                &config.votes_for(seed),
                seed,
            )?);
            let sites: Vec<usize> = (0..config.n).collect();
            let fake = product_ballot(config.d, config.n)?;
            countermeasure = Some(detect_subset_correlation(
                &fake,
                &sites,
                config.trials,
                &mut seed.stream("voters", 0),
            )?);
        }
        Some(AttackConfig::MismatchedStates {}) => {
            let angles = tagged_angles(&ballot)?;
            attack = Some(mismatched_voting_states(
                &ballot,
                &angles,
                &config.votes_for(seed),
                config.trials,
                seed,
            )?);
        }
    }
    let flagged = runs.iter().any(|r| !r.is_clean())
        || attack.as_ref().is_some_and(|a| a.detection_rate > 0.0)
        || countermeasure
            .as_ref()
            .is_some_and(|c| c.verdict == Verdict::Cheating);
    let result = ScenarioResult {
        scheme: config.scheme,
        d: config.d,
        n: config.n,
        seed,
        trials: config.trials,
        status: if flagged {
            Status::CheatDetected
        } else {
            Status::Clean
        },
        runs,
        attack,
        countermeasure,
    };
    Ok(ScenarioOutcome { result, transcript })
}
