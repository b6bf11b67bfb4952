//! Empirical estimators over a path ensemble: characteristic function,
//! kernel density estimate, and density-normalized histogram.

use num_complex::Complex64;
use rayon::prelude::*;

use super::{PathEnsemble, SdeError};
use crate::post::{FieldEstimate, FieldKind, Provenance};

const CHUNK: usize = 4096;

/// Sample average of `exp(i u'x)` over kept paths, for each `u`.
///
/// The estimator is conjugate-symmetric in `u` and has modulus at most 1 up
/// to rounding, by construction.
pub fn empirical_chf(ens: &PathEnsemble, t: f64, u_points: &[Vec<f64>]) -> Result<Vec<Complex64>, SdeError> {
    let ti = ens.time_index(t)?;
    let states = &ens.states[ti];
    let n = states.nrows();
    let d = states.ncols();
    if n == 0 {
        return Err(SdeError::TooFewSamples { needed: 1, got: 0 });
    }
    let vals: Vec<Complex64> = u_points
        .par_iter()
        .map(|u| {
            assert_eq!(u.len(), d, "u point dimension mismatch");
            // fixed-size chunks summed in order keep the reduction deterministic
            let mut total = Complex64::new(0.0, 0.0);
            let mut row = 0;
            while row < n {
                let hi = (row + CHUNK).min(n);
                let mut acc = Complex64::new(0.0, 0.0);
                for r in row..hi {
                    let mut dot = 0.0;
                    for i in 0..d {
                        dot += u[i] * states[[r, i]];
                    }
                    acc += Complex64::new(dot.cos(), dot.sin());
                }
                total += acc;
                row = hi;
            }
            total / n as f64
        })
        .collect();
    Ok(vals)
}

/// Per-coordinate Silverman rule-of-thumb bandwidth.
pub fn silverman_bandwidth(samples: &[f64], dim: usize) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt().max(1e-12);
    let d = dim as f64;
    sd * (4.0 / ((d + 2.0) * n)).powf(1.0 / (d + 4.0))
}

/// Gaussian product-kernel density estimate of selected state coordinates on
/// a tensor grid. Refuses to run on fewer than 100 samples.
pub fn kde(
    ens: &PathEnsemble,
    t: f64,
    coords: &[usize],
    axes: &[Vec<f64>],
    bandwidth: Option<Vec<f64>>,
) -> Result<FieldEstimate, SdeError> {
    let ti = ens.time_index(t)?;
    let states = &ens.states[ti];
    let n = states.nrows();
    if n < 100 {
        return Err(SdeError::TooFewSamples { needed: 100, got: n });
    }
    assert_eq!(coords.len(), axes.len());
    let k = coords.len();
    assert!(k >= 1 && k <= 2, "kde supports 1 or 2 coordinates");

    let h: Vec<f64> = match bandwidth {
        Some(h) => h,
        None => coords
            .iter()
            .map(|&c| {
                let col: Vec<f64> = states.column(c).to_vec();
                silverman_bandwidth(&col, k)
            })
            .collect(),
    };

    let grid_len: usize = axes.iter().map(|a| a.len()).product();
    let norm = 1.0
        / (n as f64 * h.iter().map(|&hi| hi * (2.0 * std::f64::consts::PI).sqrt()).product::<f64>());

    let values: Vec<f64> = (0..grid_len)
        .into_par_iter()
        .map(|flat| {
            // unflatten row-major over axes
            let mut point = [0.0; 2];
            let mut rem = flat;
            for ax in (0..k).rev() {
                let m = axes[ax].len();
                point[ax] = axes[ax][rem % m];
                rem /= m;
            }
            let mut total = 0.0;
            let mut row = 0;
            while row < n {
                let hi = (row + CHUNK).min(n);
                let mut acc = 0.0;
                for r in row..hi {
                    let mut e = 0.0;
                    for ax in 0..k {
                        let z = (point[ax] - states[[r, coords[ax]]]) / h[ax];
                        e += z * z;
                    }
                    acc += (-0.5 * e).exp();
                }
                total += acc;
                row = hi;
            }
            total * norm
        })
        .collect();

    Ok(FieldEstimate {
        axes: axes.to_vec(),
        re: values,
        im: None,
        time: t,
        provenance: Provenance::MonteCarlo,
        kind: FieldKind::Pdf,
    })
}

/// 1-D KDE of a single state coordinate.
pub fn kde_marginal(
    ens: &PathEnsemble,
    t: f64,
    coord: usize,
    nodes: &[f64],
    bandwidth: Option<f64>,
) -> Result<FieldEstimate, SdeError> {
    kde(ens, t, &[coord], &[nodes.to_vec()], bandwidth.map(|h| vec![h]))
}

/// Density-normalized histogram of one coordinate: returns bin edges and
/// per-bin densities with unit total area.
pub fn histogram(
    ens: &PathEnsemble,
    t: f64,
    coord: usize,
    bins: usize,
    range: Option<(f64, f64)>,
) -> Result<(Vec<f64>, Vec<f64>), SdeError> {
    let ti = ens.time_index(t)?;
    let states = &ens.states[ti];
    let n = states.nrows();
    if n == 0 || bins == 0 {
        return Err(SdeError::TooFewSamples { needed: 1, got: n });
    }
    let (lo, hi) = match range {
        Some(r) => r,
        None => {
            let col = states.column(coord);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        }
    };
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut inside = 0usize;
    for &x in states.column(coord).iter() {
        if x < lo || x > hi {
            continue;
        }
        let mut b = ((x - lo) / width) as usize;
        if b >= bins {
            b = bins - 1;
        }
        counts[b] += 1;
        inside += 1;
    }
    let densities: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / (inside.max(1) as f64 * width))
        .collect();
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    Ok((edges, densities))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{simulate, InitialDist, Polynomial, Scheme, SdeModel, SimOptions};
    use approx::assert_relative_eq;

    fn standard_normal_ensemble(n: usize, seed: u64) -> PathEnsemble {
        let model = SdeModel::new(1, vec![Polynomial::zero(1)], vec![], vec![]).unwrap();
        let init = InitialDist::gaussian(vec![0.0], vec![vec![1.0]]).unwrap();
        simulate(
            &model,
            &init,
            &SimOptions { scheme: Scheme::Euler, dt: 1.0, n_paths: n, seed, store_times: vec![0.0] },
        )
        .unwrap()
    }

    #[test]
    fn chf_at_origin_is_exactly_one() {
        let ens = standard_normal_ensemble(500, 1);
        let v = empirical_chf(&ens, 0.0, &[vec![0.0]]).unwrap()[0];
        assert_eq!(v, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn chf_of_single_path_is_unit_phase() {
        let model = SdeModel::new(1, vec![Polynomial::zero(1)], vec![], vec![]).unwrap();
        let init = InitialDist::uniform(2.0, 2.0 + 1e-15).unwrap();
        let ens = simulate(
            &model,
            &init,
            &SimOptions { scheme: Scheme::Euler, dt: 1.0, n_paths: 1, seed: 7, store_times: vec![0.0] },
        )
        .unwrap();
        let x = ens.states[0][[0, 0]];
        let v = empirical_chf(&ens, 0.0, &[vec![1.3]]).unwrap()[0];
        assert_relative_eq!(v.re, (1.3 * x).cos(), epsilon = 1e-15);
        assert_relative_eq!(v.im, (1.3 * x).sin(), epsilon = 1e-15);
    }

    #[test]
    fn gaussian_chf_within_three_standard_errors() {
        let n = 50_000;
        let ens = standard_normal_ensemble(n, 13);
        let v = empirical_chf(&ens, 0.0, &[vec![1.0]]).unwrap()[0];
        let expect = (-0.5f64).exp();
        // Var(cos(uX)) = (1 + e^{-2u^2})/2 - e^{-u^2} at u=1
        let var = 0.5 * (1.0 + (-2.0f64).exp()) - (-1.0f64).exp();
        let se = (var / n as f64).sqrt();
        assert!((v.re - expect).abs() <= 3.0 * se, "re={}, expect={expect}", v.re);
        assert!(v.im.abs() <= 3.0 * (0.5f64 / n as f64).sqrt());
    }

    #[test]
    fn chf_conjugate_symmetry_and_modulus_bound() {
        let ens = standard_normal_ensemble(2000, 17);
        let us: Vec<Vec<f64>> = (1..=20).map(|k| vec![0.37 * k as f64]).collect();
        let neg: Vec<Vec<f64>> = us.iter().map(|u| vec![-u[0]]).collect();
        let a = empirical_chf(&ens, 0.0, &us).unwrap();
        let b = empirical_chf(&ens, 0.0, &neg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.re, y.re);
            assert_eq!(x.im, -y.im);
            assert!(x.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn kde_recovers_standard_normal() {
        let n = 100_000;
        let ens = standard_normal_ensemble(n, 29);
        let nodes: Vec<f64> = (0..=240).map(|i| -6.0 + i as f64 * 0.05).collect();
        let field = kde(&ens, 0.0, &[0], &[nodes.clone()], None).unwrap();
        // normalization
        let h = 0.05;
        let mut integral = 0.0;
        for i in 0..nodes.len() - 1 {
            integral += 0.5 * h * (field.re[i] + field.re[i + 1]);
        }
        assert!((integral - 1.0).abs() <= 1e-2, "integral={integral}");
        // sup distance to the true pdf
        let sup = nodes
            .iter()
            .zip(&field.re)
            .map(|(x, f)| {
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                (f - pdf).abs()
            })
            .fold(0.0, f64::max);
        assert!(sup <= 0.02, "sup={sup}");
    }

    #[test]
    fn kde_refuses_tiny_ensembles() {
        let ens = standard_normal_ensemble(50, 3);
        let err = kde(&ens, 0.0, &[0], &[vec![0.0, 1.0]], None).unwrap_err();
        assert!(matches!(err, SdeError::TooFewSamples { .. }));
    }

    #[test]
    fn histogram_has_unit_area_and_recovers_uniform() {
        let model = SdeModel::new(1, vec![Polynomial::zero(1)], vec![], vec![]).unwrap();
        let init = InitialDist::uniform(0.0, 1.0).unwrap();
        let n = 100_000;
        let ens = simulate(
            &model,
            &init,
            &SimOptions { scheme: Scheme::Euler, dt: 1.0, n_paths: n, seed: 31, store_times: vec![0.0] },
        )
        .unwrap();
        let (edges, dens) = histogram(&ens, 0.0, 0, 10, Some((0.0, 1.0))).unwrap();
        let width = edges[1] - edges[0];
        let area: f64 = dens.iter().map(|d| d * width).sum();
        assert_relative_eq!(area, 1.0, epsilon = 1e-12);
        for d in &dens {
            assert!((d - 1.0).abs() < 0.05, "bin density {d}");
        }
    }

    #[test]
    fn histogram_matches_gamma_pdf() {
        let model = SdeModel::new(1, vec![Polynomial::zero(1)], vec![], vec![]).unwrap();
        let init = InitialDist::gamma(1.0, 1.5).unwrap();
        let n = 100_000;
        let ens = simulate(
            &model,
            &init,
            &SimOptions { scheme: Scheme::Euler, dt: 1.0, n_paths: n, seed: 37, store_times: vec![0.0] },
        )
        .unwrap();
        let (edges, dens) = histogram(&ens, 0.0, 0, 30, Some((0.0, 12.0))).unwrap();
        // compare each bin density against the bin-averaged analytic pdf
        let theta: f64 = 1.5;
        let mut sup: f64 = 0.0;
        for (i, d) in dens.iter().enumerate() {
            let (a, b) = (edges[i], edges[i + 1]);
            let mass = (-a / theta).exp() - (-b / theta).exp(); // integral of pdf over bin
            // tail mass beyond 12 is excluded by the histogram normalization
            let total = 1.0 - (-12.0f64 / theta).exp();
            let expect = mass / total / (b - a);
            sup = sup.max((d - expect).abs());
        }
        assert!(sup <= 0.05, "sup bin error {sup}");
    }
}
