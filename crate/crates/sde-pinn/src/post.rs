//! Post-processing: normalization, Fourier inversion, marginalization, error
//! metrics, and the constraint/boundary audits used to sanity-check trained
//! networks.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde::SdeModel;

#[derive(Debug, Error)]
pub enum PostError {
    #[error("grids do not match")]
    GridMismatch,
    #[error("u-grid must be symmetric about 0")]
    AsymmetricGrid,
    #[error("field kind mismatch: {0}")]
    KindMismatch(String),
    #[error("normalization overflowed even after clamping")]
    NormalizationOverflow,
    #[error("expected a {0}-dimensional field")]
    WrongDimension(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Network,
    MonteCarlo,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// Probability density values.
    Pdf,
    /// Characteristic function values (complex unless the field is known to
    /// be real-valued).
    Chf,
    /// The transformed variable v with f = e^{-v}/∫e^{-v}; defined up to an
    /// additive constant.
    V,
}

/// A sampled scalar or complex field on a regular tensor grid at one time.
/// Values are stored row-major with the last axis fastest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldEstimate {
    pub axes: Vec<Vec<f64>>,
    pub re: Vec<f64>,
    pub im: Option<Vec<f64>>,
    pub time: f64,
    pub provenance: Provenance,
    pub kind: FieldKind,
}

impl FieldEstimate {
    pub fn grid_len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn value(&self, flat: usize) -> Complex64 {
        Complex64::new(self.re[flat], self.im.as_ref().map_or(0.0, |im| im[flat]))
    }

    pub fn same_grid(&self, other: &FieldEstimate) -> bool {
        self.axes.len() == other.axes.len()
            && self
                .axes
                .iter()
                .zip(&other.axes)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12))
    }
}

/// Trapezoid quadrature weights for a sorted 1-D axis.
pub fn trapezoid_weights(nodes: &[f64]) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![0.0; n];
    if n == 1 {
        w[0] = 1.0;
        return w;
    }
    for i in 0..n - 1 {
        let h = nodes[i + 1] - nodes[i];
        w[i] += 0.5 * h;
        w[i + 1] += 0.5 * h;
    }
    w
}

/// Tensor-product trapezoid weights over all axes, flattened row-major.
pub fn tensor_trapezoid_weights(axes: &[Vec<f64>]) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = axes.iter().map(|a| trapezoid_weights(a)).collect();
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut w = vec![1.0; total];
    for (flat, wv) in w.iter_mut().enumerate() {
        let mut rem = flat;
        for ax in (0..axes.len()).rev() {
            let m = axes[ax].len();
            *wv *= per_axis[ax][rem % m];
            rem /= m;
        }
    }
    w
}

pub const V_CLAMP: f64 = 30.0;

/// Turns a sampled v-field into a density via f = e^{-v} / Σ w e^{-v}.
/// The result integrates to 1 under its own trapezoid weights by
/// construction; v is clamped to ±30 first.
pub fn normalize_density(v_field: &FieldEstimate) -> Result<FieldEstimate, PostError> {
    if v_field.im.is_some() {
        return Err(PostError::KindMismatch("v-field must be real-valued".into()));
    }
    let w = tensor_trapezoid_weights(&v_field.axes);
    let mut vals: Vec<f64> = Vec::with_capacity(v_field.re.len());
    let mut z = 0.0;
    for (v, wi) in v_field.re.iter().zip(&w) {
        let e = (-v.clamp(-V_CLAMP, V_CLAMP)).exp();
        vals.push(e);
        z += wi * e;
    }
    if !z.is_finite() || z <= 0.0 {
        return Err(PostError::NormalizationOverflow);
    }
    for v in &mut vals {
        *v /= z;
    }
    Ok(FieldEstimate {
        axes: v_field.axes.clone(),
        re: vals,
        im: None,
        time: v_field.time,
        provenance: v_field.provenance,
        kind: FieldKind::Pdf,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionReport {
    /// Largest |imaginary part| of the inverted density (should be small for
    /// conjugate-symmetric chf data).
    pub max_imag: f64,
    /// Most negative density value (excursions are reported, not clipped).
    pub min_value: f64,
    /// |chf| at the two ends of the u-grid; large values mean the grid is too
    /// narrow.
    pub edge_modulus: f64,
    pub edge_warning: bool,
}

/// 1-D Fourier inversion f(x) = (1/2π) ∫ e^{-iux} φ(u) du by direct trapezoid
/// sum over a symmetric u-grid.
pub fn fourier_invert_1d(
    chf_field: &FieldEstimate,
    x_nodes: &[f64],
) -> Result<(FieldEstimate, InversionReport), PostError> {
    if chf_field.axes.len() != 1 {
        return Err(PostError::WrongDimension(1));
    }
    let u = &chf_field.axes[0];
    let n = u.len();
    for i in 0..n {
        if (u[i] + u[n - 1 - i]).abs() > 1e-9 {
            return Err(PostError::AsymmetricGrid);
        }
    }
    let w = trapezoid_weights(u);
    let edge = chf_field.value(0).norm().max(chf_field.value(n - 1).norm());
    let edge_warning = edge > 0.05;
    if edge_warning {
        eprintln!("warning: |chf| = {edge:.3} at the u-grid edge; inversion may be inaccurate");
    }
    let mut re = Vec::with_capacity(x_nodes.len());
    let mut max_imag: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for &x in x_nodes {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..n {
            acc += w[i] * Complex64::new(0.0, -u[i] * x).exp() * chf_field.value(i);
        }
        acc /= 2.0 * std::f64::consts::PI;
        max_imag = max_imag.max(acc.im.abs());
        min_value = min_value.min(acc.re);
        re.push(acc.re);
    }
    Ok((
        FieldEstimate {
            axes: vec![x_nodes.to_vec()],
            re,
            im: None,
            time: chf_field.time,
            provenance: chf_field.provenance,
            kind: FieldKind::Pdf,
        },
        InversionReport { max_imag, min_value, edge_modulus: edge, edge_warning },
    ))
}

/// Clip negative excursions to zero and renormalize; offered as an explicit
/// post-step, never applied silently.
pub fn clip_and_renormalize(pdf: &FieldEstimate) -> Result<FieldEstimate, PostError> {
    if pdf.axes.len() != 1 {
        return Err(PostError::WrongDimension(1));
    }
    let w = trapezoid_weights(&pdf.axes[0]);
    let clipped: Vec<f64> = pdf.re.iter().map(|&v| v.max(0.0)).collect();
    let z: f64 = clipped.iter().zip(&w).map(|(v, wi)| v * wi).sum();
    if z <= 0.0 {
        return Err(PostError::NormalizationOverflow);
    }
    Ok(FieldEstimate {
        axes: pdf.axes.clone(),
        re: clipped.into_iter().map(|v| v / z).collect(),
        im: None,
        time: pdf.time,
        provenance: pdf.provenance,
        kind: FieldKind::Pdf,
    })
}

/// Integrates a 2-D real field along its last axis with trapezoid weights.
pub fn marginalize(field: &FieldEstimate) -> Result<FieldEstimate, PostError> {
    if field.axes.len() != 2 {
        return Err(PostError::WrongDimension(2));
    }
    if field.im.is_some() {
        return Err(PostError::KindMismatch("marginalize expects a real field".into()));
    }
    let (n0, n1) = (field.axes[0].len(), field.axes[1].len());
    let w1 = trapezoid_weights(&field.axes[1]);
    let mut out = vec![0.0; n0];
    for i in 0..n0 {
        let mut acc = 0.0;
        for j in 0..n1 {
            acc += w1[j] * field.re[i * n1 + j];
        }
        out[i] = acc;
    }
    Ok(FieldEstimate {
        axes: vec![field.axes[0].clone()],
        re: out,
        im: None,
        time: field.time,
        provenance: field.provenance,
        kind: field.kind,
    })
}

/// Maximum absolute (complex: modulus of) difference between two fields on
/// identical grids.
pub fn sup_error(a: &FieldEstimate, b: &FieldEstimate) -> Result<f64, PostError> {
    if !a.same_grid(b) {
        return Err(PostError::GridMismatch);
    }
    let mut sup: f64 = 0.0;
    for i in 0..a.grid_len() {
        sup = sup.max((a.value(i) - b.value(i)).norm());
    }
    Ok(sup)
}

/// A density plus its gradient, as needed by the Fokker-Planck boundary
/// conditions. Implemented by trained v-networks and by closed-form test
/// densities.
pub trait DensityField {
    fn density(&self, x: &[f64]) -> f64;
    fn density_grad(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundaryRow {
    /// e.g. "x1 = -4".
    pub face: String,
    /// e.g. "a_1 f" or "d/dx_1[(bb')_{11} f]".
    pub condition: String,
    pub max_abs: f64,
}

/// Evaluates the decay conditions `a_i f -> 0`, `(bb')_{ij} f -> 0` and
/// `d/dx_i [(bb')_{ij} f] -> 0` on the faces of the truncation box.
pub fn boundary_audit(
    model: &SdeModel,
    density: &dyn DensityField,
    lo: &[f64],
    hi: &[f64],
    nodes_per_face_axis: usize,
) -> Vec<BoundaryRow> {
    let d = model.dim();
    let mut rows = Vec::new();
    for axis in 0..d {
        for (side, bound) in [("lo", lo[axis]), ("hi", hi[axis])] {
            let pts = face_grid(lo, hi, axis, bound, nodes_per_face_axis);
            let face = format!("x{} = {bound} ({side})", axis + 1);
            for i in 0..d {
                let mut m: f64 = 0.0;
                for x in &pts {
                    m = m.max((model.drift()[i].eval(x) * density.density(x)).abs());
                }
                rows.push(BoundaryRow { face: face.clone(), condition: format!("a_{} f", i + 1), max_abs: m });
            }
            for i in 0..d {
                for j in i..d {
                    let bb = model.gwn_covariance(i, j);
                    if bb.is_zero() {
                        continue;
                    }
                    let dbb = bb.partial(i);
                    let mut m0: f64 = 0.0;
                    let mut m1: f64 = 0.0;
                    for x in &pts {
                        let f = density.density(x);
                        let g = density.density_grad(x);
                        m0 = m0.max((bb.eval(x) * f).abs());
                        m1 = m1.max((dbb.eval(x) * f + bb.eval(x) * g[i]).abs());
                    }
                    rows.push(BoundaryRow {
                        face: face.clone(),
                        condition: format!("(bb')_{}{} f", i + 1, j + 1),
                        max_abs: m0,
                    });
                    rows.push(BoundaryRow {
                        face: face.clone(),
                        condition: format!("d/dx_{}[(bb')_{}{} f]", i + 1, i + 1, j + 1),
                        max_abs: m1,
                    });
                }
            }
        }
    }
    rows
}

fn face_grid(lo: &[f64], hi: &[f64], fixed_axis: usize, bound: f64, n: usize) -> Vec<Vec<f64>> {
    let d = lo.len();
    let free: Vec<usize> = (0..d).filter(|&a| a != fixed_axis).collect();
    if free.is_empty() {
        return vec![vec![bound]];
    }
    let mut pts = Vec::new();
    let total = n.pow(free.len() as u32);
    for flat in 0..total {
        let mut x = vec![0.0; d];
        x[fixed_axis] = bound;
        let mut rem = flat;
        for &a in free.iter().rev() {
            let idx = rem % n;
            rem /= n;
            x[a] = if n == 1 {
                0.5 * (lo[a] + hi[a])
            } else {
                lo[a] + idx as f64 * (hi[a] - lo[a]) / (n - 1) as f64
            };
        }
        pts.push(x);
    }
    pts
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_abs: f64,
}

/// Equal-width binned profile of |residual| against the collocation point
/// norm, as used to diagnose where the governing equation is violated.
pub fn residual_scatter(residuals: &[f64], norms: &[f64], n_bins: usize) -> Vec<ScatterBin> {
    assert_eq!(residuals.len(), norms.len());
    assert!(n_bins >= 1);
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n_bins as f64).max(1e-300);
    let mut sums = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&r, &n) in residuals.iter().zip(norms) {
        let mut b = ((n - lo) / width) as usize;
        if b >= n_bins {
            b = n_bins - 1;
        }
        sums[b] += r.abs();
        counts[b] += 1;
    }
    (0..n_bins)
        .map(|b| ScatterBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count: counts[b],
            mean_abs: if counts[b] > 0 { sums[b] / counts[b] as f64 } else { 0.0 },
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChfAuditReport {
    /// max_t |phi(0, t) - 1|
    pub max_origin_error: f64,
    /// max over all grid nodes and times of |phi|
    pub max_modulus: f64,
    /// max |phi| over the outermost grid nodes (decay proxy)
    pub face_modulus: f64,
}

/// Audits the probabilistic constraints a chf field must satisfy.
pub fn chf_constraint_audit(
    fields: &[FieldEstimate],
    origin_values: &[(f64, Complex64)],
) -> ChfAuditReport {
    let mut max_origin: f64 = 0.0;
    for (_, v) in origin_values {
        max_origin = max_origin.max((v - Complex64::new(1.0, 0.0)).norm());
    }
    let mut max_modulus: f64 = 0.0;
    let mut face_modulus: f64 = 0.0;
    for field in fields {
        let dims: Vec<usize> = field.axes.iter().map(|a| a.len()).collect();
        for flat in 0..field.grid_len() {
            let m = field.value(flat).norm();
            max_modulus = max_modulus.max(m);
            let mut rem = flat;
            let mut on_face = false;
            for ax in (0..dims.len()).rev() {
                let idx = rem % dims[ax];
                rem /= dims[ax];
                if idx == 0 || idx + 1 == dims[ax] {
                    on_face = true;
                }
            }
            if on_face {
                face_modulus = face_modulus.max(m);
            }
        }
    }
    ChfAuditReport { max_origin_error: max_origin, max_modulus, face_modulus }
}
