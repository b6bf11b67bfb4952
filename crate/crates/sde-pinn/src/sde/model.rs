//! Model and distribution types for the SDE class
//! `dX = a(X)dt + b(X)dB + c(X)dC`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Polynomial, SdeError};

const MEAN_TOL: f64 = 1e-12;

/// Jump-size distribution with zero mean (standing assumption of the model
/// class; enforced at construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JumpDist {
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Gaussian { variance: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl JumpDist {
    pub fn discrete(values: Vec<f64>, probs: Vec<f64>) -> Result<Self, SdeError> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(SdeError::InvalidDistribution(
                "discrete jump law needs matching, non-empty values/probs".into(),
            ));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(SdeError::InvalidDistribution("probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(SdeError::InvalidDistribution(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        let mean: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        if mean.abs() > 1e-9 {
            return Err(SdeError::InvalidDistribution(format!(
                "jump sizes must have zero mean, got {mean}"
            )));
        }
        Ok(JumpDist::Discrete { values, probs })
    }

    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, SdeError> {
        if mean.abs() > MEAN_TOL {
            return Err(SdeError::InvalidDistribution(format!(
                "jump sizes must have zero mean, got {mean}"
            )));
        }
        if !(variance > 0.0) || !variance.is_finite() {
            return Err(SdeError::InvalidDistribution("gaussian jump variance must be positive".into()));
        }
        Ok(JumpDist::Gaussian { variance })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, SdeError> {
        if !(lo < hi) {
            return Err(SdeError::InvalidDistribution("uniform jump law needs lo < hi".into()));
        }
        if (lo + hi).abs() > MEAN_TOL {
            return Err(SdeError::InvalidDistribution(
                "uniform jump law must be centered (lo = -hi) to have zero mean".into(),
            ));
        }
        Ok(JumpDist::Uniform { lo, hi })
    }

    /// Closed-form characteristic function `E[exp(i s Y)]`.
    pub fn chf(&self, s: f64) -> Complex64 {
        match self {
            JumpDist::Discrete { values, probs } => {
                let mut acc = Complex64::new(0.0, 0.0);
                for (&z, &p) in values.iter().zip(probs) {
                    acc += p * Complex64::new(0.0, s * z).exp();
                }
                acc
            }
            JumpDist::Gaussian { variance } => Complex64::new((-0.5 * variance * s * s).exp(), 0.0),
            JumpDist::Uniform { lo: _, hi } => {
                // centered uniform on [-a, a]: sin(a s) / (a s)
                let a = *hi;
                let arg = a * s;
                let v = if arg.abs() < 1e-8 {
                    1.0 - arg * arg / 6.0
                } else {
                    arg.sin() / arg
                };
                Complex64::new(v, 0.0)
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            JumpDist::Discrete { values, probs } => {
                values.iter().zip(probs).map(|(v, p)| v * v * p).sum()
            }
            JumpDist::Gaussian { variance } => *variance,
            JumpDist::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
        }
    }

    /// Whether Y and -Y are identically distributed.
    pub fn is_symmetric(&self) -> bool {
        match self {
            JumpDist::Discrete { values, probs } => {
                let mut pairs: Vec<(f64, f64)> =
                    values.iter().copied().zip(probs.iter().copied()).collect();
                pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
                let n = pairs.len();
                (0..n).all(|i| {
                    let (v, p) = pairs[i];
                    let (w, q) = pairs[n - 1 - i];
                    (v + w).abs() <= 1e-12 && (p - q).abs() <= 1e-12
                })
            }
            JumpDist::Gaussian { .. } => true,
            JumpDist::Uniform { .. } => true,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            JumpDist::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (&v, &p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                *values.last().unwrap()
            }
            JumpDist::Gaussian { variance } => {
                let z: f64 = StandardNormal.sample(rng);
                z * variance.sqrt()
            }
            JumpDist::Uniform { lo, hi } => rng.random_range(*lo..*hi),
        }
    }
}

/// A compound Poisson forcing component: event intensity and jump-size law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpProcess {
    pub intensity: f64,
    pub dist: JumpDist,
}

impl JumpProcess {
    pub fn new(intensity: f64, dist: JumpDist) -> Result<Self, SdeError> {
        if !(intensity > 0.0) || !intensity.is_finite() {
            return Err(SdeError::InvalidDistribution("jump intensity must be finite and positive".into()));
        }
        Ok(JumpProcess { intensity, dist })
    }
}

/// The column of the jump diffusion matrix multiplying one compound Poisson
/// component. Only the two structures for which the chf evolution equation
/// closes are supported: a constant column (additive noise) and the
/// componentwise-linear map `c(x) = x` (multiplicative noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JumpCoeff {
    Constant(Vec<f64>),
    LinearState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpColumn {
    pub coeff: JumpCoeff,
    pub process: JumpProcess,
}

/// SDE model with polynomial drift and Gaussian diffusion coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeModel {
    dim: usize,
    drift: Vec<Polynomial>,
    gwn: Vec<Vec<Polynomial>>,
    jumps: Vec<JumpColumn>,
}

impl SdeModel {
    /// `drift` has length `d`; `gwn` is a `d x m_B` matrix stored row-major
    /// (one Vec per state coordinate); `jumps` holds one column per compound
    /// Poisson component. `m_B = 0` and/or `m_C = 0` are permitted.
    pub fn new(
        dim: usize,
        drift: Vec<Polynomial>,
        gwn: Vec<Vec<Polynomial>>,
        jumps: Vec<JumpColumn>,
    ) -> Result<Self, SdeError> {
        if dim == 0 {
            return Err(SdeError::InvalidModel("state dimension must be at least 1".into()));
        }
        if drift.len() != dim {
            return Err(SdeError::InvalidModel(format!(
                "drift has {} rows, expected {dim}",
                drift.len()
            )));
        }
        for (i, p) in drift.iter().enumerate() {
            if p.dim() != dim {
                return Err(SdeError::InvalidModel(format!("drift[{i}] is over {} variables", p.dim())));
            }
        }
        if !gwn.is_empty() {
            if gwn.len() != dim {
                return Err(SdeError::InvalidModel(format!(
                    "gwn diffusion has {} rows, expected {dim}",
                    gwn.len()
                )));
            }
            let m_b = gwn[0].len();
            for (i, row) in gwn.iter().enumerate() {
                if row.len() != m_b {
                    return Err(SdeError::InvalidModel("gwn diffusion rows have unequal length".into()));
                }
                for (j, p) in row.iter().enumerate() {
                    if p.dim() != dim {
                        return Err(SdeError::InvalidModel(format!(
                            "gwn[{i}][{j}] is over {} variables",
                            p.dim()
                        )));
                    }
                }
            }
        }
        for (r, col) in jumps.iter().enumerate() {
            if let JumpCoeff::Constant(c) = &col.coeff {
                if c.len() != dim {
                    return Err(SdeError::InvalidModel(format!(
                        "jump column {r} has {} entries, expected {dim}",
                        c.len()
                    )));
                }
            }
        }
        Ok(SdeModel { dim, drift, gwn, jumps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn drift(&self) -> &[Polynomial] {
        &self.drift
    }

    pub fn gwn(&self) -> &[Vec<Polynomial>] {
        &self.gwn
    }

    pub fn n_gwn(&self) -> usize {
        self.gwn.first().map_or(0, |row| row.len())
    }

    pub fn jumps(&self) -> &[JumpColumn] {
        &self.jumps
    }

    pub fn drift_eval(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.drift) {
            *o = p.eval(x);
        }
    }

    /// `(b b')_{kl}` as a polynomial in the state.
    pub fn gwn_covariance(&self, k: usize, l: usize) -> Polynomial {
        let mut acc = Polynomial::zero(self.dim);
        if self.gwn.is_empty() {
            return acc;
        }
        for w in 0..self.n_gwn() {
            acc = acc.add(&self.gwn[k][w].mul(&self.gwn[l][w]));
        }
        acc
    }
}

/// Initial state distribution with pdf, chf, and sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialDist {
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
        #[serde(skip)]
        chol: Vec<Vec<f64>>,
    },
    Uniform { lo: f64, hi: f64 },
    Gamma { shape: f64, scale: f64 },
}

impl InitialDist {
    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self, SdeError> {
        let d = mean.len();
        if cov.len() != d || cov.iter().any(|row| row.len() != d) {
            return Err(SdeError::InvalidDistribution("covariance shape mismatch".into()));
        }
        for i in 0..d {
            for j in 0..d {
                if (cov[i][j] - cov[j][i]).abs() > 1e-12 {
                    return Err(SdeError::InvalidDistribution("covariance must be symmetric".into()));
                }
            }
        }
        let chol = cholesky(&cov)
            .ok_or_else(|| SdeError::InvalidDistribution("covariance must be positive-definite".into()))?;
        Ok(InitialDist::Gaussian { mean, cov, chol })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self, SdeError> {
        if !(lo < hi) {
            return Err(SdeError::InvalidDistribution("uniform initial law needs lo < hi".into()));
        }
        Ok(InitialDist::Uniform { lo, hi })
    }

    pub fn gamma(shape: f64, scale: f64) -> Result<Self, SdeError> {
        if !(shape > 0.0 && scale > 0.0) {
            return Err(SdeError::InvalidDistribution("gamma shape and scale must be positive".into()));
        }
        Ok(InitialDist::Gamma { shape, scale })
    }

    /// Rebuilds cached factorizations after deserialization.
    pub fn finalize(self) -> Result<Self, SdeError> {
        match self {
            InitialDist::Gaussian { mean, cov, .. } => InitialDist::gaussian(mean, cov),
            other => Ok(other),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialDist::Gaussian { mean, .. } => mean.len(),
            _ => 1,
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            InitialDist::Gaussian { mean, chol, .. } => {
                let d = mean.len();
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                for i in 0..d {
                    let mut v = mean[i];
                    for j in 0..=i {
                        v += chol[i][j] * z[j];
                    }
                    out[i] = v;
                }
            }
            InitialDist::Uniform { lo, hi } => out[0] = rng.random_range(*lo..*hi),
            InitialDist::Gamma { shape, scale } => {
                let g = rand_distr::Gamma::new(*shape, *scale).expect("validated at construction");
                out[0] = g.sample(rng);
            }
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        match self {
            InitialDist::Gaussian { mean, cov, chol } => {
                let d = mean.len();
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                let q = quad_form_inv(chol, &diff);
                let det: f64 = (0..d).map(|i| chol[i][i]).product::<f64>().powi(2);
                let norm = ((2.0 * std::f64::consts::PI).powi(d as i32) * det).sqrt();
                let _ = cov;
                (-0.5 * q).exp() / norm
            }
            InitialDist::Uniform { lo, hi } => {
                if x[0] >= *lo && x[0] <= *hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            InitialDist::Gamma { shape, scale } => {
                let x0 = x[0];
                if x0 <= 0.0 {
                    return 0.0;
                }
                let k = *shape;
                let t = *scale;
                (x0.powf(k - 1.0) * (-x0 / t).exp()) / (gamma_fn(k) * t.powf(k))
            }
        }
    }

    /// Initial value of the transformed variable `v` with `f = e^{-v}/∫e^{-v}`,
    /// i.e. `-log pdf` up to an additive constant (the normalization quotient
    /// absorbs constants).
    pub fn v0(&self, x: &[f64]) -> Result<f64, SdeError> {
        match self {
            InitialDist::Gaussian { mean, chol, .. } => {
                let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
                Ok(0.5 * quad_form_inv(chol, &diff))
            }
            InitialDist::Gamma { shape, scale } => {
                let k = *shape;
                if k != 1.0 && x[0] <= 0.0 {
                    return Err(SdeError::InvalidDistribution(
                        "gamma v(x,0) is singular at x=0 unless shape k=1".into(),
                    ));
                }
                Ok(x[0] / scale - (k - 1.0) * if k == 1.0 { 0.0 } else { x[0].ln() })
            }
            InitialDist::Uniform { .. } => Err(SdeError::InvalidDistribution(
                "uniform initial law has no smooth v(x,0); use the chf route".into(),
            )),
        }
    }

    /// Characteristic function `E[exp(i u'X(0))]`.
    pub fn chf(&self, u: &[f64]) -> Complex64 {
        match self {
            InitialDist::Gaussian { mean, cov, .. } => {
                let d = mean.len();
                let mut dot = 0.0;
                let mut quad = 0.0;
                for i in 0..d {
                    dot += u[i] * mean[i];
                    for j in 0..d {
                        quad += u[i] * cov[i][j] * u[j];
                    }
                }
                Complex64::new(-0.5 * quad, dot).exp()
            }
            InitialDist::Uniform { lo, hi } => {
                let u0 = u[0];
                let w = hi - lo;
                if u0.abs() < 1e-8 {
                    let m = 0.5 * (lo + hi);
                    // series of (e^{iub} - e^{iua})/(iuw) around u = 0
                    let re = 1.0 - u0 * u0 * (hi * hi + hi * lo + lo * lo) / 6.0;
                    let im = u0 * m;
                    Complex64::new(re, im)
                } else {
                    (Complex64::new(0.0, u0 * hi).exp() - Complex64::new(0.0, u0 * lo).exp())
                        / Complex64::new(0.0, u0 * w)
                }
            }
            InitialDist::Gamma { shape, scale } => {
                // (1 - i u theta)^{-k}
                let base = Complex64::new(1.0, -u[0] * scale);
                base.powf(-shape)
            }
        }
    }

    /// Whether X(0) and -X(0) are identically distributed. A real-valued chf
    /// network is only valid when this holds and the operator preserves
    /// realness.
    pub fn is_symmetric_about_origin(&self) -> bool {
        match self {
            InitialDist::Gaussian { mean, .. } => mean.iter().all(|&m| m == 0.0),
            InitialDist::Uniform { lo, hi } => (lo + hi).abs() <= 1e-12,
            InitialDist::Gamma { .. } => false,
        }
    }
}

/// Lower-triangular Cholesky factor of a small SPD matrix.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// `diff' (L L')^{-1} diff` via two triangular solves.
fn quad_form_inv(chol: &[Vec<f64>], diff: &[f64]) -> f64 {
    let n = diff.len();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = diff[i];
        for j in 0..i {
            s -= chol[i][j] * y[j];
        }
        y[i] = s / chol[i][i];
    }
    y.iter().map(|v| v * v).sum()
}

/// Lanczos approximation of the gamma function, accurate to ~1e-13 for the
/// parameter ranges used here.
fn gamma_fn(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        std::f64::consts::PI / ((std::f64::consts::PI * x).sin() * gamma_fn(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + G + 0.5;
        for (i, &c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        (2.0 * std::f64::consts::PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * a
    }
}
