//! Numerical witness that two-qubit ballots cannot satisfy the privacy and
//! tally conditions simultaneously.
//!
//! For `U = I cos ν + i(m̂·σ) sin ν`, `V = I cos θ + i(n̂·σ) sin θ` and a
//! two-qubit `Ω`, the residual
//!
//! `f = |⟨U⊗I⟩|² + |⟨I⊗V⟩|² + |⟨U⊗V⟩|² + |1 − ⟨U⊗V†⟩|²`
//!
//! vanishes exactly when a qubit scheme exists. Its infimum is 1/2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config as invalid, Result};
use crate::qstate::C64;
use crate::rng::Seed;
use rand::Rng;

type M2 = [[C64; 2]; 2];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitSchemeParams {
    pub nu: f64,
    pub m_hat: [f64; 3],
    pub theta: f64,
    pub n_hat: [f64; 3],
    /// Amplitudes of `|00⟩, |01⟩, |10⟩, |11⟩`.
    pub omega: [C64; 4],
}

impl QubitSchemeParams {
    pub fn new(
        nu: f64,
        m_hat: [f64; 3],
        theta: f64,
        n_hat: [f64; 3],
        omega: [C64; 4],
    ) -> Result<Self> {
        let unit =
            |v: &[f64; 3]| (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-10;
        if !unit(&m_hat) || !unit(&n_hat) {
            return invalid("rotation axes must be unit vectors");
        }
        let norm = omega.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-10 {
            return invalid(format!("Ω has norm {norm}"));
        }
        Ok(QubitSchemeParams {
            nu,
            m_hat,
            theta,
            n_hat,
            omega,
        })
    }

    /// Unconstrained coordinates: angles, spherical axes, raw `Ω` (normalised here).
    fn from_coords(x: &[f64; 14]) -> Self {
        let axis = |a: f64, b: f64| [a.sin() * b.cos(), a.sin() * b.sin(), a.cos()];
        let mut omega = [ZERO; 4];
        for k in 0..4 {
            omega[k] = C64::new(x[6 + k], x[10 + k]);
        }
        let norm = omega
            .iter()
            .map(|a| a.norm_sqr())
            .sum::<f64>()
            .sqrt()
            .max(1e-300);
        omega.iter_mut().for_each(|a| *a /= norm);
        QubitSchemeParams {
            nu: x[0],
            m_hat: axis(x[1], x[2]),
            theta: x[3],
            n_hat: axis(x[4], x[5]),
            omega,
        }
    }

    pub fn u(&self) -> [[C64; 2]; 2] {
        rotation(self.nu, &self.m_hat)
    }

    pub fn v(&self) -> [[C64; 2]; 2] {
        rotation(self.theta, &self.n_hat)
    }
}

fn rotation(angle: f64, axis: &[f64; 3]) -> M2 {
    let (c, s) = (angle.cos(), angle.sin());
    let [x, y, z] = *axis;
    // cos·I + i sin·(xX + yY + zZ)
    [
        [C64::new(c, 0.0) + I * s * z, I * s * C64::new(x, -y)],
        [I * s * C64::new(x, y), C64::new(c, 0.0) - I * s * z],
    ]
}

fn adjoint(a: &M2) -> M2 {
    [
        [a[0][0].conj(), a[1][0].conj()],
        [a[0][1].conj(), a[1][1].conj()],
    ]
}

const IDENTITY: M2 = [[ONE, ZERO], [ZERO, ONE]];

/// `⟨Ω|A⊗B|Ω⟩` with `Ω` indexed as `|ab⟩ → 2a + b`.
fn expect(omega: &[C64; 4], a: &M2, b: &M2) -> C64 {
    let mut acc = ZERO;
    for i in 0..2 {
        for j in 0..2 {
            let bra = omega[2 * i + j].conj();
            for k in 0..2 {
                for l in 0..2 {
                    acc += bra * a[i][k] * b[j][l] * omega[2 * k + l];
                }
            }
        }
    }
    acc
}

/// The four expectation values entering the residual.
pub fn qubit_terms(p: &QubitSchemeParams) -> [C64; 4] {
    let (u, v) = (p.u(), p.v());
    [
        expect(&p.omega, &u, &IDENTITY),
        expect(&p.omega, &IDENTITY, &v),
        expect(&p.omega, &u, &v),
        expect(&p.omega, &u, &adjoint(&v)),
    ]
}

pub fn qubit_residual(p: &QubitSchemeParams) -> f64 {
    let t = qubit_terms(p);
    t[0].norm_sqr() + t[1].norm_sqr() + t[2].norm_sqr() + (ONE - t[3]).norm_sqr()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NogoResult {
    pub min_residual: f64,
    pub best: QubitSchemeParams,
    pub restarts: usize,
    pub iterations: usize,
}

pub const DEFAULT_RESTARTS: usize = 200;
pub const DEFAULT_ITERATIONS: usize = 500;

fn objective(x: &[f64; 14]) -> f64 {
    qubit_residual(&QubitSchemeParams::from_coords(x))
}

fn gradient(x: &[f64; 14]) -> [f64; 14] {
    const H: f64 = 1e-6;
    let mut g = [0.0; 14];
    let mut y = *x;
    for k in 0..14 {
        y[k] = x[k] + H;
        let up = objective(&y);
        y[k] = x[k] - H;
        let down = objective(&y);
        y[k] = x[k];
        g[k] = (up - down) / (2.0 * H);
    }
    g
}

/// Gradient descent with Armijo backtracking from one starting point.
fn descend(mut x: [f64; 14], iterations: usize) -> ([f64; 14], f64) {
    let mut fx = objective(&x);
    let mut step: f64 = 1.0;
    for _ in 0..iterations {
        let g = gradient(&x);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg < 1e-24 {
            break;
        }
        step = (step * 2.0).min(10.0);
        loop {
            let mut y = x;
            for k in 0..14 {
                y[k] -= step * g[k];
            }
            let fy = objective(&y);
            if fy <= fx - 1e-4 * step * gg {
                x = y;
                fx = fy;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return (x, fx);
            }
        }
    }
    (x, fx)
}

/// Multi-start local search; restart `r` starts from `seed.stream("restart", r)`.
pub fn qubit_nogo_search(restarts: usize, iterations: usize, seed: Seed) -> Result<NogoResult> {
    if restarts == 0 {
        return invalid("at least one restart is required");
    }
    let runs: Vec<([f64; 14], f64)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed.stream("restart", r as u64);
            let mut x = [0.0; 14];
            for (k, v) in x.iter_mut().enumerate() {
                *v = if k < 6 {
                    rng.random_range(0.0..std::f64::consts::TAU)
                } else {
                    rng.random_range(-1.0..1.0)
                };
            }
            descend(x, iterations)
        })
        .collect();
    let (x, f) = runs
        .into_iter()
        .fold(None, |best: Option<([f64; 14], f64)>, cur| match best {
            Some(b) if b.1 <= cur.1 => Some(b),
            _ => Some(cur),
        })
        .expect("restarts ≥ 1");
    Ok(NogoResult {
        min_residual: f,
        best: QubitSchemeParams::from_coords(&x),
        restarts,
        iterations,
    })
}
