//! Protocol transcripts persisted as JSON Lines.
//!
//! One event per line: `{run_id, rep, step, site, payload, outcome}`. Votes
//! appear only as salted SHA-256 commitments.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::ballots::{Tally, VoteChoice};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Step {
    Prepare,
    Distribute,
    Vote,
    Return,
    Measure,
    Result,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variants serialize");
        f.write_str(s.as_str().unwrap_or_default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Event {
    pub run_id: String,
    pub rep: usize,
    pub step: Step,
    pub site: Option<usize>,
    pub payload: Value,
    pub outcome: Option<Value>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    events: Vec<Event>,
    discard: bool,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    /// A sink that drops every event, for bulk Monte Carlo.
    pub fn discard() -> Self {
        Transcript {
            events: vec![],
            discard: true,
        }
    }

    pub fn is_recording(&self) -> bool {
        !self.discard
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(
        &mut self,
        run_id: &str,
        rep: usize,
        step: Step,
        site: Option<usize>,
        payload: Value,
        outcome: Option<Value>,
    ) {
        if self.discard {
            return;
        }
        self.events.push(Event {
            run_id: run_id.to_string(),
            rep,
            step,
            site,
            payload,
            outcome,
        });
    }

    pub fn extend(&mut self, other: Transcript) {
        if !self.discard {
            self.events.extend(other.events);
        }
    }

    /// Checks event order: runs are contiguous, repetitions ascend, steps
    /// never go backwards within a repetition, one MEASURE per repetition.
    pub fn validate(&self) -> Result<()> {
        let mut measures: BTreeMap<(&str, usize), usize> = BTreeMap::new();
        let mut finished: Vec<&str> = vec![];
        let mut prev: Option<&Event> = None;
        for (i, e) in self.events.iter().enumerate() {
            let line = i + 1;
            let bad = |detail: String| {
                Err(Error::Corrupt {
                    lines: vec![line],
                    detail,
                })
            };
            if let Some(p) = prev {
                if p.run_id != e.run_id {
                    if finished.contains(&e.run_id.as_str()) {
                        return bad(format!("run {} resumes after other runs", e.run_id));
                    }
                    finished.push(p.run_id.as_str());
                } else if e.rep < p.rep || (e.rep == p.rep && e.step < p.step) {
                    return bad(format!(
                        "{} of rep {} follows {} of rep {}",
                        e.step, e.rep, p.step, p.rep
                    ));
                }
            }
            if e.step == Step::Measure {
                *measures.entry((e.run_id.as_str(), e.rep)).or_default() += 1;
            } else {
                measures.entry((e.run_id.as_str(), e.rep)).or_default();
            }
            prev = Some(e);
        }
        for ((run, rep), n) in measures {
            if n != 1 {
                return Err(Error::Corrupt {
                    lines: vec![],
                    detail: format!("run {run} rep {rep} has {n} MEASURE events"),
                });
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    /// Parses JSONL, collecting every bad line number before failing.
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut events = vec![];
        let mut bad = vec![];
        let mut first_err = String::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<Event>(line) {
                Ok(e) => events.push(e),
                Err(err) => {
                    if bad.is_empty() {
                        first_err = err.to_string();
                    }
                    bad.push(i + 1);
                }
            }
        }
        if !bad.is_empty() {
            return Err(Error::Corrupt {
                lines: bad,
                detail: first_err,
            });
        }
        if events.is_empty() {
            return Err(Error::Corrupt {
                lines: vec![],
                detail: "transcript is empty".into(),
            });
        }
        Ok(Transcript {
            events,
            discard: false,
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::parse_jsonl(&fs::read_to_string(path)?)
    }

    /// Decoded tally of each `(run_id, rep)`, in transcript order.
    pub fn rep_results(&self) -> Vec<(String, usize, Tally, Option<usize>)> {
        self.events
            .iter()
            .filter(|e| e.step == Step::Result)
            .filter_map(|e| {
                let o = e.outcome.as_ref()?;
                let m: Tally = serde_json::from_value(o.get("m")?.clone()).ok()?;
                let p = o.get("p").and_then(Value::as_u64).map(|p| p as usize);
                Some((e.run_id.clone(), e.rep, m, p))
            })
            .collect()
    }
}

const COMMIT_DOMAIN: &[u8] = b"qvote/commit/v1";

pub fn commitment(choice: VoteChoice, salt: &[u8; 16]) -> String {
    let mut h = Sha256::new();
    h.update(COMMIT_DOMAIN);
    h.update(salt);
    h.update(choice.to_string().as_bytes());
    hex::encode(h.finalize())
}

/// Draws a fresh salt and commits to `choice`; the salt stays with the voter.
pub fn commit(choice: VoteChoice, rng: &mut impl Rng) -> (String, [u8; 16]) {
    let mut salt = [0u8; 16];
    rng.fill(&mut salt);
    (commitment(choice, &salt), salt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Seed;
    use serde_json::json;

    fn sample() -> Transcript {
        let mut t = Transcript::new();
        t.push("r", 0, Step::Prepare, None, json!({"d": 3}), None);
        t.push(
            "r",
            0,
            Step::Vote,
            Some(0),
            json!({"commitment": "ab"}),
            None,
        );
        t.push(
            "r",
            0,
            Step::Measure,
            None,
            json!({}),
            Some(json!({"m": 1})),
        );
        t.push("r", 0, Step::Result, None, json!({}), Some(json!({"m": 1})));
        t
    }

    #[test]
    fn jsonl_roundtrip() {
        let t = sample();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with(r#"{"run_id":"r","rep":0,"step":"PREPARE","site":null"#));
        let back = Transcript::parse_jsonl(&text).unwrap();
        assert_eq!(back, t);
        back.validate().unwrap();
        assert_eq!(
            back.rep_results(),
            vec![("r".to_string(), 0, Tally::Count(1), None)]
        );
    }

    #[test]
    fn corrupt_lines_are_listed() {
        let mut text = sample().to_jsonl();
        text.push_str("{not json\n");
        text.push_str(r#"{"run_id":"r","rep":0,"step":"VOTE","site":0,"payload":{},"outcome":null,"extra":1}"#);
        match Transcript::parse_jsonl(&text) {
            Err(Error::Corrupt { lines, .. }) => assert_eq!(lines, vec![5, 6]),
            other => panic!("{other:?}"),
        }
        assert!(Transcript::parse_jsonl("\n").is_err());
    }

    #[test]
    fn ordering_is_checked() {
        let mut t = sample();
        t.push("r", 0, Step::Vote, Some(1), json!({}), None);
        assert!(t.validate().is_err());

        let mut twice = Transcript::new();
        twice.push("r", 0, Step::Measure, None, json!({}), None);
        twice.push("r", 0, Step::Measure, None, json!({}), None);
        assert!(twice.validate().is_err());

        let mut interleaved = sample();
        interleaved.extend(
            sample()
                .events
                .iter()
                .fold(Transcript::new(), |mut acc, e| {
                    acc.push(
                        "s",
                        e.rep,
                        e.step,
                        e.site,
                        e.payload.clone(),
                        e.outcome.clone(),
                    );
                    acc
                }),
        );
        interleaved.validate().unwrap();
        interleaved.push("r", 1, Step::Measure, None, json!({}), None);
        assert!(interleaved.validate().is_err());
    }

    #[test]
    fn discard_sink_records_nothing() {
        let mut t = Transcript::discard();
        t.push("r", 0, Step::Prepare, None, json!({}), None);
        assert!(t.is_empty());
    }

    #[test]
    fn commitments_hide_and_bind() {
        let mut rng = Seed(1).stream("salt", 0);
        let (a, salt) = commit(VoteChoice::Yes, &mut rng);
        let (b, _) = commit(VoteChoice::Yes, &mut rng);
        assert_ne!(a, b);
        assert_eq!(a, commitment(VoteChoice::Yes, &salt));
        assert_ne!(a, commitment(VoteChoice::No, &salt));
        assert_eq!(a.len(), 64);
    }
}
