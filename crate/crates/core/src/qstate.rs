//! Dense multi-qudit pure states.
//!
//! Amplitudes are stored as a flat vector indexed big-endian over the
//! subsystem order: site 0 is the most significant digit, so for dims
//! `[d0, d1, d2]` the basis state `|a b c⟩` lives at `(a*d1 + b)*d2 + c`.
//!
//! [`CorrelatedState`] is a compact representation for states supported on
//! `span{|k⟩^⊗M}`. Honest ballots never leave that subspace, which lets the
//! secure protocol run at sizes where the dense vector would not fit.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Tolerance for exact algebraic identities.
pub const EXACT_TOL: f64 = 1e-12;
/// Tolerance for results of composed pipelines.
pub const PIPELINE_TOL: f64 = 1e-10;
/// Largest dense state the simulator will allocate.
pub const MAX_TOTAL_DIM: usize = 2_000_000;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

pub(crate) fn phase(angle: f64) -> C64 {
    C64::from_polar(1.0, angle)
}

fn total_dim(dims: &[usize]) -> Result<usize> {
    let mut total: u128 = 1;
    for &d in dims {
        if d < 2 {
            return Err(Error::Config(format!("subsystem dimension {d} < 2")));
        }
        total = total.saturating_mul(d as u128);
    }
    if total > MAX_TOTAL_DIM as u128 {
        return Err(Error::TooLarge {
            dim: usize::try_from(total).unwrap_or(usize::MAX),
            limit: MAX_TOTAL_DIM,
        });
    }
    Ok(total as usize)
}

fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

pub(crate) fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    dims: Vec<usize>,
    amps: Vec<C64>,
}

impl PureState {
    /// Builds a state, checking the length and the unit norm.
    pub fn new(dims: Vec<usize>, amps: Vec<C64>) -> Result<Self> {
        let total = total_dim(&dims)?;
        if amps.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                actual: amps.len(),
            });
        }
        let n = norm_sqr(&amps).sqrt();
        if (n - 1.0).abs() > EXACT_TOL {
            return Err(Error::Invariant(format!("state norm {n} is not 1")));
        }
        Ok(PureState { dims, amps })
    }

    /// Builds a state from an unnormalized amplitude vector.
    pub fn normalized(dims: Vec<usize>, mut amps: Vec<C64>) -> Result<Self> {
        let total = total_dim(&dims)?;
        if amps.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                actual: amps.len(),
            });
        }
        let n = norm_sqr(&amps).sqrt();
        if n < 1e-300 {
            return Err(Error::Invariant("zero vector cannot be normalized".into()));
        }
        amps.iter_mut().for_each(|a| *a /= n);
        Ok(PureState { dims, amps })
    }

    /// Computational basis state `|digits⟩`.
    pub fn basis(dims: Vec<usize>, digits: &[usize]) -> Result<Self> {
        let total = total_dim(&dims)?;
        if digits.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                actual: digits.len(),
            });
        }
        let mut amps = vec![ZERO; total];
        let mut idx = 0;
        for (&k, &d) in digits.iter().zip(&dims) {
            if k >= d {
                return Err(Error::Config(format!(
                    "digit {k} out of range for dimension {d}"
                )));
            }
            idx = idx * d + k;
        }
        amps[idx] = ONE;
        Ok(PureState { dims, amps })
    }

    /// Single site with the given amplitudes.
    pub fn single(amps: Vec<C64>) -> Result<Self> {
        Self::new(vec![amps.len()], amps)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    pub fn num_sites(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm(&self) -> f64 {
        norm_sqr(&self.amps).sqrt()
    }

    /// Digits of a flat index, site 0 first.
    pub fn digits_of(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dims.len()];
        for (slot, &d) in out.iter_mut().zip(&self.dims).rev() {
            *slot = index % d;
            index /= d;
        }
        out
    }

    fn stride(&self, site: usize) -> usize {
        self.dims[site + 1..].iter().product()
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.dims.len() {
            return Err(Error::SiteOutOfRange {
                site,
                sites: self.dims.len(),
            });
        }
        Ok(())
    }

    pub fn tensor(&self, other: &PureState) -> Result<PureState> {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        total_dim(&dims)?;
        let mut amps = Vec::with_capacity(self.amps.len() * other.amps.len());
        for &a in &self.amps {
            amps.extend(other.amps.iter().map(|&b| a * b));
        }
        Ok(PureState { dims, amps })
    }

    /// `(I ⊗ … ⊗ u ⊗ … ⊗ I)|ψ⟩` with `u` acting on `site`.
    pub fn apply_local(&self, site: usize, u: &LocalUnitary) -> Result<PureState> {
        self.check_site(site)?;
        let d = self.dims[site];
        if u.dim != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: u.dim,
            });
        }
        let inner = self.stride(site);
        let block = d * inner;
        let mut out = vec![ZERO; self.amps.len()];
        let mut col = vec![ZERO; d];
        for base in (0..self.amps.len()).step_by(block) {
            for off in 0..inner {
                for (k, c) in col.iter_mut().enumerate() {
                    *c = self.amps[base + k * inner + off];
                }
                for row in 0..d {
                    let mut acc = ZERO;
                    for (k, &c) in col.iter().enumerate() {
                        acc += u.mat[row * d + k] * c;
                    }
                    out[base + row * inner + off] = acc;
                }
            }
        }
        Ok(PureState {
            dims: self.dims.clone(),
            amps: out,
        })
    }

    /// Multiplies the amplitude of every basis state by `phases[digit at site]`.
    pub fn apply_diagonal(&self, site: usize, phases: &[C64]) -> Result<PureState> {
        self.check_site(site)?;
        let d = self.dims[site];
        if phases.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: phases.len(),
            });
        }
        let inner = self.stride(site);
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, &a)| a * phases[(i / inner) % d])
            .collect();
        Ok(PureState {
            dims: self.dims.clone(),
            amps,
        })
    }

    /// `⟨self|other⟩`, conjugate-linear in `self`.
    pub fn inner(&self, other: &PureState) -> Result<C64> {
        if self.dims != other.dims {
            return Err(Error::Config(format!(
                "inner product of states with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Partial trace onto `keep`, ordered as given.
    pub fn reduced_density(&self, keep: &[usize]) -> Result<DensityMatrix> {
        for (i, &s) in keep.iter().enumerate() {
            self.check_site(s)?;
            if keep[..i].contains(&s) {
                return Err(Error::Config(format!("site {s} listed twice")));
            }
        }
        let rest: Vec<usize> = (0..self.dims.len()).filter(|s| !keep.contains(s)).collect();
        let dk: usize = keep.iter().map(|&s| self.dims[s]).product();
        let dr: usize = rest.iter().map(|&s| self.dims[s]).product();
        let strides: Vec<usize> = (0..self.dims.len()).map(|s| self.stride(s)).collect();

        // offsets of kept/traced multi-indices inside the flat vector
        let offsets = |sites: &[usize], count: usize| -> Vec<usize> {
            (0..count)
                .map(|mut j| {
                    let mut off = 0;
                    for &s in sites.iter().rev() {
                        off += (j % self.dims[s]) * strides[s];
                        j /= self.dims[s];
                    }
                    off
                })
                .collect()
        };
        let ko = offsets(keep, dk);
        let ro = offsets(&rest, dr);

        let mut mat = vec![ZERO; dk * dk];
        for &r in &ro {
            for a in 0..dk {
                let x = self.amps[ko[a] + r];
                if x == ZERO {
                    continue;
                }
                for b in 0..dk {
                    mat[a * dk + b] += x * self.amps[ko[b] + r].conj();
                }
            }
        }
        Ok(DensityMatrix { dim: dk, mat })
    }

    /// Outcome probabilities for each projector, plus the residual `I − ΣP`.
    pub fn outcome_probabilities(&self, proj: &ProjectorSet) -> Result<(Vec<f64>, f64)> {
        if proj.dim != self.amps.len() {
            return Err(Error::DimensionMismatch {
                expected: self.amps.len(),
                actual: proj.dim,
            });
        }
        let probs = proj.probabilities(&self.amps);
        let residual = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        let residual = if residual < EXACT_TOL { 0.0 } else { residual };
        Ok((probs, residual))
    }

    pub fn measure_projective(
        &self,
        proj: &ProjectorSet,
        rng: &mut impl Rng,
    ) -> Result<Measurement> {
        let (mut probs, residual) = self.outcome_probabilities(proj)?;
        probs.push(residual);
        let k = sample_index(&probs, rng);
        let prob = probs[k];
        let projected = if k < proj.len() {
            proj.apply(k, &self.amps)
        } else {
            let mut v = self.amps.clone();
            for j in 0..proj.len() {
                for (x, y) in v.iter_mut().zip(proj.apply(j, &self.amps)) {
                    *x -= y;
                }
            }
            v
        };
        let post_state = PureState::normalized(self.dims.clone(), projected)?;
        let outcome = if k < proj.len() {
            Outcome::Index(k)
        } else {
            Outcome::Invalid
        };
        Ok(Measurement {
            outcome,
            post_state,
            prob,
        })
    }

    /// Marginal distribution of the digit at `site`.
    pub fn site_marginal(&self, site: usize) -> Result<Vec<f64>> {
        self.check_site(site)?;
        let d = self.dims[site];
        let inner = self.stride(site);
        let mut p = vec![0.0; d];
        for (i, a) in self.amps.iter().enumerate() {
            p[(i / inner) % d] += a.norm_sqr();
        }
        Ok(p)
    }

    /// Measures `site` in the computational basis and collapses it.
    pub fn measure_computational(
        &self,
        site: usize,
        rng: &mut impl Rng,
    ) -> Result<(usize, PureState)> {
        let marginal = self.site_marginal(site)?;
        let k = sample_index(&marginal, rng);
        Ok((k, self.collapse(site, k)?))
    }

    /// Projects `site` onto `|digit⟩` and renormalizes.
    pub fn collapse(&self, site: usize, digit: usize) -> Result<PureState> {
        self.check_site(site)?;
        let d = self.dims[site];
        let inner = self.stride(site);
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, &a)| if (i / inner) % d == digit { a } else { ZERO })
            .collect();
        PureState::normalized(self.dims.clone(), amps)
    }

    /// Measures one site in an orthonormal basis given as state vectors.
    pub fn measure_in_basis(
        &self,
        site: usize,
        basis: &[Vec<C64>],
        rng: &mut impl Rng,
    ) -> Result<(usize, PureState, f64)> {
        self.check_site(site)?;
        let d = self.dims[site];
        if basis.len() != d || basis.iter().any(|v| v.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: basis.len(),
            });
        }
        // rows are ⟨v_l|, so the change of basis maps |v_l⟩ to |l⟩
        let mat: Vec<C64> = basis
            .iter()
            .flat_map(|v| v.iter().map(|x| x.conj()))
            .collect();
        let w = LocalUnitary::new(d, mat)?;
        let rotated = self.apply_local(site, &w)?;
        let marginal = rotated.site_marginal(site)?;
        let l = sample_index(&marginal, rng);
        let post = rotated.collapse(site, l)?.apply_local(site, &w.adjoint())?;
        Ok((l, post, marginal[l]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Index(usize),
    /// The residual projector `I − ΣP` fired.
    Invalid,
}

#[derive(Debug, Clone)]
pub struct Measurement {
    pub outcome: Outcome,
    pub post_state: PureState,
    pub prob: f64,
}

/// Single-site unitary stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUnitary {
    dim: usize,
    mat: Vec<C64>,
}

impl LocalUnitary {
    pub fn new(dim: usize, mat: Vec<C64>) -> Result<Self> {
        if mat.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: mat.len(),
            });
        }
        let u = LocalUnitary { dim, mat };
        let prod = u.adjoint().mul(&u)?;
        for i in 0..dim {
            for j in 0..dim {
                let target = if i == j { ONE } else { ZERO };
                if (prod.mat[i * dim + j] - target).norm() > EXACT_TOL {
                    return Err(Error::Invariant("matrix is not unitary".into()));
                }
            }
        }
        Ok(u)
    }

    pub fn identity(dim: usize) -> Self {
        let mut mat = vec![ZERO; dim * dim];
        (0..dim).for_each(|i| mat[i * dim + i] = ONE);
        LocalUnitary { dim, mat }
    }

    /// `diag(e^{iφ_k})`.
    pub fn diagonal(angles: &[f64]) -> Self {
        let dim = angles.len();
        let mut mat = vec![ZERO; dim * dim];
        for (i, &a) in angles.iter().enumerate() {
            mat[i * dim + i] = phase(a);
        }
        LocalUnitary { dim, mat }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.mat[row * self.dim + col]
    }

    pub fn matrix(&self) -> &[C64] {
        &self.mat
    }

    pub fn adjoint(&self) -> Self {
        let d = self.dim;
        let mut mat = vec![ZERO; d * d];
        for i in 0..d {
            for j in 0..d {
                mat[j * d + i] = self.mat[i * d + j].conj();
            }
        }
        LocalUnitary { dim: d, mat }
    }

    /// Matrix product `self · other`.
    pub fn mul(&self, other: &LocalUnitary) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let d = self.dim;
        let mut mat = vec![ZERO; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.mat[i * d + k];
                if a == ZERO {
                    continue;
                }
                for j in 0..d {
                    mat[i * d + j] += a * other.mat[k * d + j];
                }
            }
        }
        Ok(LocalUnitary { dim: d, mat })
    }

    pub fn pow(&self, n: usize) -> Self {
        let mut acc = LocalUnitary::identity(self.dim);
        for _ in 0..n {
            acc = acc.mul(self).expect("same dimension");
        }
        acc
    }

    /// Diagonal entries, when the matrix is diagonal.
    pub fn as_diagonal(&self) -> Option<Vec<C64>> {
        let d = self.dim;
        for i in 0..d {
            for j in 0..d {
                if i != j && self.mat[i * d + j] != ZERO {
                    return None;
                }
            }
        }
        Some((0..d).map(|i| self.mat[i * d + i]).collect())
    }

    pub fn max_abs_diff(&self, other: &LocalUnitary) -> f64 {
        self.mat
            .iter()
            .zip(&other.mat)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityMatrix {
    dim: usize,
    mat: Vec<C64>,
}

impl DensityMatrix {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> C64 {
        self.mat[row * self.dim + col]
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.mat[i * self.dim + i]).sum()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| (self.mat[i * d + j] - self.mat[j * d + i].conj()).norm() <= tol)
        })
    }

    /// `|ψ⟩⟨ψ|` of a state.
    pub fn from_pure(state: &PureState) -> Self {
        let a = state.amps();
        let dim = a.len();
        let mut mat = Vec::with_capacity(dim * dim);
        for x in a {
            mat.extend(a.iter().map(|y| x * y.conj()));
        }
        DensityMatrix { dim, mat }
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        self.mat
            .iter()
            .zip(&other.mat)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Max-norm distance to the maximally mixed state `I/D`.
    pub fn identity_deviation(&self) -> f64 {
        let d = self.dim;
        let id = 1.0 / d as f64;
        let mut worst: f64 = 0.0;
        for i in 0..d {
            for j in 0..d {
                let target = if i == j { C64::new(id, 0.0) } else { ZERO };
                worst = worst.max((self.mat[i * d + j] - target).norm());
            }
        }
        worst
    }
}

/// Sparse vector as `(index, amplitude)` pairs.
pub type SparseVector = Vec<(usize, C64)>;

#[derive(Debug, Clone)]
pub enum Projector {
    /// Full `dim × dim` matrix, row-major.
    Dense(Vec<C64>),
    /// `Σ |v⟩⟨v|` over orthonormal sparse vectors.
    Span(Vec<SparseVector>),
}

#[derive(Debug, Clone)]
enum Projectors {
    Operators(Vec<Projector>),
    /// Diagonal projectors: basis state `i` belongs to outcome `labels[i]`.
    Partition {
        labels: Vec<Option<usize>>,
        count: usize,
    },
}

/// Mutually orthogonal projectors. Completeness is not required: the
/// residual `I − ΣP` is reported as [`Outcome::Invalid`].
#[derive(Debug, Clone)]
pub struct ProjectorSet {
    dim: usize,
    projectors: Projectors,
}

impl ProjectorSet {
    /// Dense projectors, validated for Hermiticity, idempotence and orthogonality.
    pub fn dense(dim: usize, mats: Vec<Vec<C64>>) -> Result<Self> {
        let tol = PIPELINE_TOL;
        let mul = |a: &[C64], b: &[C64]| -> Vec<C64> {
            let mut out = vec![ZERO; dim * dim];
            for i in 0..dim {
                for k in 0..dim {
                    let x = a[i * dim + k];
                    if x == ZERO {
                        continue;
                    }
                    for j in 0..dim {
                        out[i * dim + j] += x * b[k * dim + j];
                    }
                }
            }
            out
        };
        for (a, p) in mats.iter().enumerate() {
            if p.len() != dim * dim {
                return Err(Error::DimensionMismatch {
                    expected: dim * dim,
                    actual: p.len(),
                });
            }
            for i in 0..dim {
                for j in 0..dim {
                    if (p[i * dim + j] - p[j * dim + i].conj()).norm() > tol {
                        return Err(Error::Invariant(format!("projector {a} is not Hermitian")));
                    }
                }
            }
            let sq = mul(p, p);
            if sq.iter().zip(p).any(|(x, y)| (x - y).norm() > tol) {
                return Err(Error::Invariant(format!("projector {a} is not idempotent")));
            }
            for (b, q) in mats.iter().enumerate().skip(a + 1) {
                if mul(p, q).iter().any(|x| x.norm() > tol) {
                    return Err(Error::Invariant(format!("projectors {a} and {b} overlap")));
                }
            }
        }
        Ok(ProjectorSet {
            dim,
            projectors: Projectors::Operators(mats.into_iter().map(Projector::Dense).collect()),
        })
    }

    /// One rank-one projector per vector; the vectors must be orthonormal.
    pub fn rank_one(dim: usize, vectors: Vec<SparseVector>) -> Result<Self> {
        Self::spans(dim, vectors.into_iter().map(|v| vec![v]).collect())
    }

    /// Each projector spans a group of vectors; all vectors must be orthonormal.
    pub fn spans(dim: usize, groups: Vec<Vec<SparseVector>>) -> Result<Self> {
        let all: Vec<&SparseVector> = groups.iter().flatten().collect();
        let dense: Vec<Vec<C64>> = all
            .iter()
            .map(|v| {
                let mut out = vec![ZERO; dim];
                for &(i, a) in v.iter() {
                    if i >= dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            actual: i + 1,
                        });
                    }
                    out[i] += a;
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for (a, va) in all.iter().enumerate() {
            for (b, vb) in dense.iter().enumerate().skip(a) {
                let ip: C64 = va.iter().map(|&(i, x)| x.conj() * vb[i]).sum();
                let target = if a == b { 1.0 } else { 0.0 };
                if (ip - target).norm() > PIPELINE_TOL {
                    return Err(Error::Invariant(format!(
                        "vectors {a} and {b} are not orthonormal"
                    )));
                }
            }
        }
        Ok(ProjectorSet {
            dim,
            projectors: Projectors::Operators(groups.into_iter().map(Projector::Span).collect()),
        })
    }

    /// Diagonal projectors from a labelling of basis states.
    pub fn partition(labels: Vec<Option<usize>>, count: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= count) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {count} outcomes"
            )));
        }
        Ok(ProjectorSet {
            dim: labels.len(),
            projectors: Projectors::Partition { labels, count },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        match &self.projectors {
            Projectors::Operators(p) => p.len(),
            Projectors::Partition { count, .. } => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn probabilities(&self, psi: &[C64]) -> Vec<f64> {
        match &self.projectors {
            Projectors::Operators(ps) => ps
                .iter()
                .map(|p| match p {
                    Projector::Span(vs) => vs
                        .iter()
                        .map(|v| {
                            v.iter()
                                .map(|&(i, a)| a.conj() * psi[i])
                                .sum::<C64>()
                                .norm_sqr()
                        })
                        .sum(),
                    Projector::Dense(_) => norm_sqr(&p_apply(p, psi, self.dim)),
                })
                .collect(),
            Projectors::Partition { labels, count } => {
                let mut out = vec![0.0; *count];
                for (l, a) in labels.iter().zip(psi) {
                    if let Some(l) = l {
                        out[*l] += a.norm_sqr();
                    }
                }
                out
            }
        }
    }

    /// `P_k |ψ⟩`.
    pub fn apply(&self, k: usize, psi: &[C64]) -> Vec<C64> {
        match &self.projectors {
            Projectors::Operators(ps) => p_apply(&ps[k], psi, self.dim),
            Projectors::Partition { labels, .. } => labels
                .iter()
                .zip(psi)
                .map(|(l, &a)| if *l == Some(k) { a } else { ZERO })
                .collect(),
        }
    }
}

fn p_apply(p: &Projector, psi: &[C64], dim: usize) -> Vec<C64> {
    match p {
        Projector::Dense(m) => (0..dim)
            .map(|i| {
                m[i * dim..(i + 1) * dim]
                    .iter()
                    .zip(psi)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect(),
        Projector::Span(vs) => {
            let mut out = vec![ZERO; dim];
            for v in vs {
                let c: C64 = v.iter().map(|&(i, a)| a.conj() * psi[i]).sum();
                for &(i, a) in v {
                    out[i] += a * c;
                }
            }
            out
        }
    }
}

/// `Σ_k amps[k] |k⟩^⊗sites` over `sites` qudits of dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedState {
    d: usize,
    sites: usize,
    amps: Vec<C64>,
}

impl CorrelatedState {
    pub fn new(d: usize, sites: usize, amps: Vec<C64>) -> Result<Self> {
        if d < 2 || sites == 0 {
            return Err(Error::Config(format!(
                "correlated state needs d ≥ 2 and at least one site (d={d}, sites={sites})"
            )));
        }
        if amps.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: amps.len(),
            });
        }
        let n = norm_sqr(&amps).sqrt();
        if (n - 1.0).abs() > EXACT_TOL {
            return Err(Error::Invariant(format!("state norm {n} is not 1")));
        }
        Ok(CorrelatedState { d, sites, amps })
    }

    /// `(1/√d) Σ_k |k⟩^⊗sites`.
    pub fn uniform(d: usize, sites: usize) -> Result<Self> {
        Self::new(d, sites, vec![C64::new(1.0 / (d as f64).sqrt(), 0.0); d])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    pub fn amps(&self) -> &[C64] {
        &self.amps
    }

    /// Diagonal local unitary on any site; every site carries the same digit.
    pub fn apply_phases(&self, phases: &[C64]) -> Result<Self> {
        if phases.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                actual: phases.len(),
            });
        }
        Ok(CorrelatedState {
            d: self.d,
            sites: self.sites,
            amps: self.amps.iter().zip(phases).map(|(a, p)| a * p).collect(),
        })
    }

    /// Appends `sites` more copies of the shared digit, amplitudes replaced by `amps`.
    pub(crate) fn with_amps(&self, extra_sites: usize, amps: Vec<C64>) -> Result<Self> {
        let n = norm_sqr(&amps).sqrt();
        CorrelatedState::new(
            self.d,
            self.sites + extra_sites,
            amps.into_iter().map(|a| a / n).collect(),
        )
    }

    pub fn inner(&self, other: &CorrelatedState) -> Result<C64> {
        if self.d != other.d || self.sites != other.sites {
            return Err(Error::Config(
                "inner product of differently shaped correlated states".into(),
            ));
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn to_pure(&self) -> Result<PureState> {
        let dims = vec![self.d; self.sites];
        let total = total_dim(&dims)?;
        let mut amps = vec![ZERO; total];
        // index of |k…k⟩ is k·(1 + d + d² + …)
        let step: usize = (0..self.sites).map(|i| self.d.pow(i as u32)).sum();
        for (k, &a) in self.amps.iter().enumerate() {
            amps[k * step] = a;
        }
        PureState::new(dims, amps)
    }

    /// Recovers the compact form when `state` lies in the correlated subspace.
    pub fn from_pure(state: &PureState, tol: f64) -> Option<Self> {
        let d = *state.dims().first()?;
        if state.dims().iter().any(|&x| x != d) {
            return None;
        }
        let sites = state.num_sites();
        let step: usize = (0..sites).map(|i| d.pow(i as u32)).sum();
        let amps: Vec<C64> = (0..d).map(|k| state.amps()[k * step]).collect();
        if (norm_sqr(&amps) - 1.0).abs() > tol {
            return None;
        }
        CorrelatedState::new(d, sites, amps).ok()
    }
}
