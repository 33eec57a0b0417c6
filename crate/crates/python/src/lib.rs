//! Python bindings. Structured results cross the boundary as plain
//! dicts and lists (via JSON), so they mirror the Rust serde shapes.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use qvote::adversary::{self, ForgerError};
use qvote::ballots::{BallotConfig as CoreConfig, Scheme, Secrets, VoteChoice};
use qvote::protocols::{self, Run};
use qvote::rng::Seed;
use qvote::transcript::Transcript as CoreTranscript;
use qvote::{cli, verify, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn parse_scheme(s: &str) -> PyResult<Scheme> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| PyValueError::new_err(format!("unknown scheme '{s}'")))
}

fn votes(raw: Vec<bool>) -> Vec<VoteChoice> {
    raw.into_iter().map(VoteChoice::from_bool).collect()
}

/// Ballot parameters; secure ballots carry the authority's secrets.
#[pyclass(frozen, skip_from_py_object, module = "qvote")]
#[derive(Clone)]
struct BallotConfig {
    inner: CoreConfig,
}

#[pymethods]
impl BallotConfig {
    #[staticmethod]
    fn db(d: usize, n: usize) -> PyResult<Self> {
        Ok(BallotConfig {
            inner: CoreConfig::db(d, n).map_err(err)?,
        })
    }

    #[staticmethod]
    fn tb(d: usize, n: usize) -> PyResult<Self> {
        Ok(BallotConfig {
            inner: CoreConfig::tb(d, n).map_err(err)?,
        })
    }

    /// Explicit `l_y, l_n, delta`, or all omitted to draw them from `seed`.
    #[staticmethod]
    #[pyo3(signature = (d, n, l_y=None, l_n=None, delta=None, seed=0))]
    fn secure(
        d: usize,
        n: usize,
        l_y: Option<usize>,
        l_n: Option<usize>,
        delta: Option<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let secrets = match (l_y, l_n, delta) {
            (Some(l_y), Some(l_n), Some(delta)) => Secrets { l_y, l_n, delta },
            (None, None, None) => {
                Secrets::draw(d, n, &mut Seed(seed).stream("authority", 0)).map_err(err)?
            }
            _ => return Err(PyValueError::new_err("give all of l_y, l_n, delta or none")),
        };
        Ok(BallotConfig {
            inner: CoreConfig::secure(d, n, secrets).map_err(err)?,
        })
    }

    #[staticmethod]
    fn survey(d: usize, n: usize, max_total: usize) -> PyResult<Self> {
        Ok(BallotConfig {
            inner: CoreConfig::survey(d, n, max_total).map_err(err)?,
        })
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn scheme(&self) -> String {
        self.inner.scheme.to_string()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "BallotConfig(scheme='{}', d={}, n={})",
            self.inner.scheme, self.inner.d, self.inner.n
        )
    }
}

/// Protocol transcript, one event per JSONL line.
#[pyclass(module = "qvote")]
struct Transcript {
    inner: CoreTranscript,
}

#[pymethods]
impl Transcript {
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(Transcript {
            inner: CoreTranscript::parse_jsonl(text).map_err(err)?,
        })
    }

    fn to_jsonl(&self) -> String {
        self.inner.to_jsonl()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(err)
    }

    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.events())
    }

    /// The `report` text and whether every run is clean.
    fn report(&self) -> PyResult<(String, bool)> {
        cli::report_text(&self.inner).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

fn finish(py: Python<'_>, run: Run) -> PyResult<(Py<PyAny>, Transcript)> {
    Ok((
        to_py(py, &run.result)?,
        Transcript {
            inner: run.transcript,
        },
    ))
}

/// Runs an honest vote on `config`; returns `(result, transcript)`.
#[pyfunction]
#[pyo3(signature = (config, votes, seed, repetitions=protocols::DEFAULT_REPETITIONS))]
fn run_vote(
    py: Python<'_>,
    config: &BallotConfig,
    votes: Vec<bool>,
    seed: u64,
    repetitions: usize,
) -> PyResult<(Py<PyAny>, Transcript)> {
    let (c, v, s) = (&config.inner, self::votes(votes), Seed(seed));
    let run = match c.scheme {
        Scheme::Db => protocols::run_db_vote(c, &v, s),
        Scheme::Tb => protocols::run_tb_vote(c, &v, s, None),
        Scheme::Secure => protocols::run_secure_vote(c, &v, s, repetitions),
        Scheme::Survey => return Err(PyValueError::new_err("use run_survey for surveys")),
    }
    .map_err(err)?;
    finish(py, run)
}

#[pyfunction]
fn run_survey(
    py: Python<'_>,
    config: &BallotConfig,
    amounts: Vec<usize>,
    seed: u64,
) -> PyResult<(Py<PyAny>, Transcript)> {
    finish(
        py,
        protocols::run_survey(&config.inner, &amounts, Seed(seed)).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (scheme, d, n, tol=1e-10))]
fn check_privacy(
    py: Python<'_>,
    scheme: &str,
    d: usize,
    n: usize,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &verify::check_privacy(parse_scheme(scheme)?, d, n, tol).map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (config, votes, tol=1e-10))]
fn check_intermediate_privacy(
    py: Python<'_>,
    config: &BallotConfig,
    votes: Vec<bool>,
    tol: f64,
) -> PyResult<Py<PyAny>> {
    to_py(
        py,
        &verify::check_intermediate_privacy(&config.inner, &self::votes(votes), tol)
            .map_err(err)?,
    )
}

#[pyfunction]
#[pyo3(signature = (restarts=verify::DEFAULT_RESTARTS, iterations=verify::DEFAULT_ITERATIONS, seed=0))]
fn qubit_nogo_search(
    py: Python<'_>,
    restarts: usize,
    iterations: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let r = py
        .detach(|| verify::qubit_nogo_search(restarts, iterations, Seed(seed)))
        .map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn nogo_floor() -> f64 {
    verify::nogo_floor()
}

#[pyfunction]
fn qutrit_solution_check() -> PyResult<f64> {
    verify::qutrit_solution_check().map_err(err)
}

/// Forger adds a yes vote with phase error uniform on `±π·scale/d`.
#[pyfunction]
#[pyo3(signature = (config, votes, cheater, scale=1.0, repetitions=protocols::DEFAULT_REPETITIONS, trials=1000, seed=0))]
#[allow(clippy::too_many_arguments)]
fn phase_estimate_attack(
    py: Python<'_>,
    config: &BallotConfig,
    votes: Vec<bool>,
    cheater: usize,
    scale: f64,
    repetitions: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let v = self::votes(votes);
    let r = adversary::phase_estimate_attack(
        &config.inner,
        &v,
        cheater,
        ForgerError::Uniform { scale },
        repetitions,
        trials,
        Seed(seed),
        &mut CoreTranscript::discard(),
    )
    .map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
#[pyo3(signature = (config, votes, first, last, trials=1000, seed=0))]
fn collusion_attack_tb(
    py: Python<'_>,
    config: &BallotConfig,
    votes: Vec<bool>,
    first: usize,
    last: usize,
    trials: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let r = adversary::collusion_attack_tb(
        &config.inner,
        &self::votes(votes),
        (first, last),
        trials,
        Seed(seed),
    )
    .map_err(err)?;
    to_py(py, &r)
}

/// Executes a JSON scenario (the `qvote run` schema); returns `(result, transcript)`.
#[pyfunction]
#[pyo3(signature = (config_json, overrides=Vec::new()))]
fn run_scenario(
    py: Python<'_>,
    config_json: &str,
    overrides: Vec<String>,
) -> PyResult<(Py<PyAny>, Transcript)> {
    let cfg = cli::load_scenario(config_json, &overrides).map_err(err)?;
    let out = cli::run_scenario(&cfg).map_err(err)?;
    Ok((
        to_py(py, &out.result)?,
        Transcript {
            inner: out.transcript,
        },
    ))
}

#[pymodule]
#[pyo3(name = "qvote")]
pub fn qvote_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<BallotConfig>()?;
    m.add_class::<Transcript>()?;
    m.add_function(wrap_pyfunction!(run_vote, m)?)?;
    m.add_function(wrap_pyfunction!(run_survey, m)?)?;
    m.add_function(wrap_pyfunction!(check_privacy, m)?)?;
    m.add_function(wrap_pyfunction!(check_intermediate_privacy, m)?)?;
    m.add_function(wrap_pyfunction!(qubit_nogo_search, m)?)?;
    m.add_function(wrap_pyfunction!(nogo_floor, m)?)?;
    m.add_function(wrap_pyfunction!(qutrit_solution_check, m)?)?;
    m.add_function(wrap_pyfunction!(phase_estimate_attack, m)?)?;
    m.add_function(wrap_pyfunction!(collusion_attack_tb, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
