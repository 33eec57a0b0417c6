//! The `qvote` command-line front end.
//!
//! `qvote run` executes a JSON scenario and writes a JSONL transcript plus a
//! JSON result, `qvote verify` drives the checks in [`crate::verify`], and
//! `qvote report` summarises a transcript. Exit codes: 0 clean or passed,
//! 1 cheating detected or check failed, 2 bad configuration or input.

mod scenario;

pub use scenario::{
    load_scenario, run_scenario, AttackConfig, Outputs, ScenarioConfig, ScenarioOutcome,
    ScenarioResult, SecretsPolicy, Status, VoteDistribution,
};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::ballots::{BallotConfig, Scheme, Tally, VoteChoice};
use crate::error::{Error, Result};
use crate::rng::Seed;
use crate::transcript::{Step, Transcript};
use crate::verify;

/// Environment variable that redirects `run` outputs when `--out` is absent.
pub const OUT_DIR_ENV: &str = "QVOTE_OUT_DIR";

pub const EXIT_CLEAN: i32 = 0;
pub const EXIT_FLAGGED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "qvote",
    version,
    about = "Simulate and audit entangled-qudit anonymous voting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Execute a scenario and write its transcript and result.
    Run(RunArgs),
    /// Run one of the privacy or feasibility checks.
    Verify {
        #[command(subcommand)]
        target: VerifyTarget,
    },
    /// Summarise a transcript.
    Report { transcript: PathBuf },
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory; overrides the config and the environment.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` with a dotted key path and a JSON (or bare string) value.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum VerifyTarget {
    /// Overlap conditions over every yes/no vote vector.
    Privacy {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Reduced states of every strict subset at every honest stage.
    Reduced {
        #[arg(long, value_parser = parse_scheme)]
        scheme: Scheme,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        n: usize,
        /// Comma-separated yes/no votes; all yes when omitted.
        #[arg(long, value_delimiter = ',')]
        votes: Option<Vec<String>>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Multi-start search for a two-qubit ballot.
    Nogo {
        #[arg(long, default_value_t = verify::DEFAULT_RESTARTS)]
        restarts: usize,
        #[arg(long, default_value_t = verify::DEFAULT_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Eigenbasis conditions; defaults to the qutrit solution.
    Ansatz {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        etas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown scheme '{s}', expected tb, db, secure or survey"))
}

/// Parses `args` (program name first) and runs the command, writing all
/// human-readable output to `out`. Returns the process exit code.
pub fn execute<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(out, "{}", e.render());
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_CLEAN
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(&a, out),
        Command::Verify { target } => cmd_verify(&target, out),
        Command::Report { transcript } => cmd_report(&transcript, out),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(out, "error: {e}");
            EXIT_INVALID
        }
    }
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

fn output_dir(flag: Option<&Path>, config: &ScenarioConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config
        .outputs
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn cmd_run(args: &RunArgs, out: &mut dyn Write) -> Result<i32> {
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(t) = args.trials {
        overrides.push(format!("trials={t}"));
    }
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Error::Io(format!("{}: {e}", args.config.display())))?;
    let config = load_scenario(&text, &overrides)?;
    let outcome = run_scenario(&config)?;
    let dir = output_dir(args.out.as_deref(), &config);
    std::fs::create_dir_all(&dir).map_err(io)?;
    let result_path = dir.join(&config.outputs.result);
    let result_json =
        serde_json::to_string_pretty(&outcome.result).expect("results serialize") + "\n";
    std::fs::write(&result_path, result_json).map_err(io)?;
    if outcome.transcript.is_empty() {
        writeln!(
            out,
            "no transcript: this attack runs on internal copies only"
        )
        .map_err(io)?;
    } else {
        let path = dir.join(&config.outputs.transcript);
        outcome.transcript.write_jsonl(&path)?;
        writeln!(
            out,
            "transcript: {} ({} events)",
            path.display(),
            outcome.transcript.len()
        )
        .map_err(io)?;
    }
    writeln!(out, "result: {}", result_path.display()).map_err(io)?;
    for line in outcome.result.summary_lines() {
        writeln!(out, "{line}").map_err(io)?;
    }
    Ok(match outcome.result.status {
        Status::Clean => EXIT_CLEAN,
        Status::CheatDetected => EXIT_FLAGGED,
    })
}

fn print_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(value).expect("reports serialize")
    )
    .map_err(io)
}

fn verdict(out: &mut dyn Write, pass: bool) -> Result<i32> {
    writeln!(out, "{}", if pass { "PASS" } else { "FAIL" }).map_err(io)?;
    Ok(if pass { EXIT_CLEAN } else { EXIT_FLAGGED })
}

pub fn cmd_verify(target: &VerifyTarget, out: &mut dyn Write) -> Result<i32> {
    match target {
        VerifyTarget::Privacy { scheme, d, n, tol } => {
            let r = verify::check_privacy(*scheme, *d, *n, *tol)?;
            print_json(out, &r)?;
            verdict(out, r.pass)
        }
        VerifyTarget::Reduced {
            scheme,
            d,
            n,
            votes,
            tol,
        } => {
            let config = match scheme {
                Scheme::Db => BallotConfig::db(*d, *n)?,
                Scheme::Tb => BallotConfig::tb(*d, *n)?,
                other => {
                    return Err(Error::Config(format!(
                        "reduced check covers db and tb, not {other}"
                    )))
                }
            };
            let votes: Vec<VoteChoice> = match votes {
                Some(v) => v
                    .iter()
                    .map(|w| serde_json::from_value(serde_json::Value::String(w.trim().into())))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Config(format!("--votes: {e}")))?,
                None => vec![VoteChoice::Yes; *n],
            };
            let r = verify::check_intermediate_privacy(&config, &votes, *tol)?;
            print_json(out, &r)?;
            writeln!(
                out,
                "single sites maximally mixed: {}; reduced states vote-independent: {}",
                r.single_sites_pass, r.vote_independent
            )
            .map_err(io)?;
            verdict(out, r.pass)
        }
        VerifyTarget::Nogo {
            restarts,
            iterations,
            seed,
        } => {
            let r = verify::qubit_nogo_search(*restarts, *iterations, Seed(*seed))?;
            let floor = verify::nogo_floor();
            print_json(out, &r)?;
            writeln!(
                out,
                "min residual {:.12} vs grid floor {floor} (random-grid estimate {})",
                r.min_residual,
                verify::nogo_random_grid_min()
            )
            .map_err(io)?;
            verdict(out, r.min_residual >= floor - verify::NOGO_FLOOR_SLACK)
        }
        VerifyTarget::Ansatz { d, etas, alphas } => {
            let etas = etas.clone().unwrap_or_else(|| {
                (1..=*d)
                    .map(|j| 2.0 * std::f64::consts::PI * j as f64 / *d as f64)
                    .collect()
            });
            let alphas = alphas
                .clone()
                .unwrap_or_else(|| vec![1.0 / (*d as f64).sqrt(); *d]);
            let r = verify::ansatz_check(*d, &etas, &alphas)?;
            print_json(out, &r)?;
            let mut pass = r.holds;
            if *d == 3 {
                let q = verify::qutrit_solution_check()?;
                writeln!(out, "qutrit solution residual {q:.3e}").map_err(io)?;
                pass &= q <= 1e-12;
            }
            verdict(out, pass)
        }
    }
}

/// Per-run facts gathered from a transcript.
#[derive(Debug, Default)]
struct RunSummary {
    scheme: Option<Scheme>,
    d: Option<usize>,
    n: Option<usize>,
    reps: Vec<(usize, Tally, Option<usize>)>,
}

/// Human-readable report of a transcript and whether every run is clean.
pub fn report_text(t: &Transcript) -> Result<(String, bool)> {
    t.validate()?;
    let mut order: Vec<String> = vec![];
    let mut runs: BTreeMap<String, RunSummary> = BTreeMap::new();
    for e in t.events() {
        if !runs.contains_key(&e.run_id) {
            order.push(e.run_id.clone());
        }
        let r = runs.entry(e.run_id.clone()).or_default();
        if e.step == Step::Prepare && r.scheme.is_none() {
            r.scheme = e
                .payload
                .get("scheme")
                .and_then(|v| serde_json::from_value(v.clone()).ok());
            r.d = e
                .payload
                .get("d")
                .and_then(|v| v.as_u64())
                .map(|v| v as usize);
            r.n = e
                .payload
                .get("n")
                .and_then(|v| v.as_u64())
                .map(|v| v as usize);
        }
    }
    for (id, rep, tally, p) in t.rep_results() {
        if let Some(r) = runs.get_mut(&id) {
            r.reps.push((rep, tally, p));
        }
    }
    let mut s = String::new();
    let mut m_hist: BTreeMap<(u8, usize), usize> = BTreeMap::new();
    let mut p_hist: BTreeMap<usize, usize> = BTreeMap::new();
    let mut flagged = 0usize;
    s += &format!("{} events, {} run(s)\n", t.len(), order.len());
    for id in &order {
        let r = &runs[id];
        if r.reps.is_empty() {
            return Err(Error::Corrupt {
                lines: vec![],
                detail: format!("run {id} has no RESULT event"),
            });
        }
        let tallies: Vec<Tally> = r.reps.iter().map(|x| x.1).collect();
        for (_, tally, p) in &r.reps {
            *m_hist.entry(tally_key(*tally)).or_default() += 1;
            if let Some(p) = p {
                *p_hist.entry(*p).or_default() += 1;
            }
        }
        let agree = crate::protocols::aggregate_tallies(&tallies);
        let ps: Vec<Option<usize>> = r.reps.iter().map(|x| x.2).collect();
        let listing = tallies
            .iter()
            .map(|t| tally_label(*t))
            .collect::<Vec<_>>()
            .join(",");
        let line = match agree {
            Tally::Count(m) => {
                let mut l = format!("CLEAN, m={m}");
                if let Some(Some(p)) = ps.first().filter(|p| ps.iter().all(|q| q == *p)) {
                    l += &format!(", p={p}");
                }
                l
            }
            _ => {
                flagged += 1;
                "CHEATING suspected".to_string()
            }
        };
        s += &format!(
            "{id}: {} repetition(s) [{listing}] -> {line}\n",
            r.reps.len()
        );
    }
    let hist = |h: &mut dyn Iterator<Item = String>| h.collect::<Vec<_>>().join(" ");
    s += &format!(
        "tally histogram: {}\n",
        hist(
            &mut m_hist
                .iter()
                .map(|(k, v)| format!("{}:{v}", tally_label(tally_unkey(*k))))
        )
    );
    if !p_hist.is_empty() {
        s += &format!(
            "phase-index histogram: {}\n",
            hist(&mut p_hist.iter().map(|(k, v)| format!("{k}:{v}")))
        );
    }
    if let Some(r) = order.first().map(|id| &runs[id]) {
        if let (Some(scheme), Some(d), Some(n)) = (r.scheme, r.d, r.n) {
            let (x, y) = match scheme {
                Scheme::Survey => (d, d),
                _ => (2, n + 1),
            };
            s += &format!(
                "information (labels only): I_i = N log2|X| = {:.3} bits (|X|={x}), I_f = log2|Y| = {:.3} bits (|Y|={y})\n",
                n as f64 * (x as f64).log2(),
                (y as f64).log2()
            );
        }
    }
    if flagged == 0 {
        s += "verdict: CLEAN\n";
    } else {
        s += &format!(
            "verdict: CHEATING suspected in {flagged} of {} run(s); those results are discarded\n",
            order.len()
        );
    }
    Ok((s, flagged == 0))
}

/// Histogram key ordering counts numerically, then invalid, then cheat flags.
fn tally_key(t: Tally) -> (u8, usize) {
    match t {
        Tally::Count(m) => (0, m),
        Tally::Invalid => (1, 0),
        Tally::CheatDetected => (2, 0),
    }
}

fn tally_unkey(k: (u8, usize)) -> Tally {
    match k.0 {
        0 => Tally::Count(k.1),
        1 => Tally::Invalid,
        _ => Tally::CheatDetected,
    }
}

fn tally_label(t: Tally) -> String {
    match t {
        Tally::Count(m) => m.to_string(),
        Tally::Invalid => "invalid".into(),
        Tally::CheatDetected => "cheat_detected".into(),
    }
}

pub fn cmd_report(path: &Path, out: &mut dyn Write) -> Result<i32> {
    let t = Transcript::read_jsonl(path)?;
    let (text, clean) = report_text(&t)?;
    write!(out, "{text}").map_err(io)?;
    Ok(if clean { EXIT_CLEAN } else { EXIT_FLAGGED })
}
