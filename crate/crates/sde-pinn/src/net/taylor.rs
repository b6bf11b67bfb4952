//! Truncated multivariate Taylor arithmetic over at most two active
//! directions, total degree at most 3.
//!
//! A "block" is the coefficient vector of one scalar quantity: entry `c`
//! holds the Taylor coefficient of the monomial with exponents
//! `layout.exps[c]` in the active directions. Derivatives are Taylor
//! coefficients scaled by the factorial of the multi-index.

/// Coefficient layout for a `(n_dirs, degree)` truncation.
#[derive(Debug)]
pub struct CoeffLayout {
    pub n_dirs: usize,
    pub degree: u8,
    /// Exponents over the active directions, graded-lex ordered; the unused
    /// second slot is 0 when `n_dirs < 2`.
    pub exps: Vec<[u8; 2]>,
    /// Ordered-pair product table: `out[o] += a_block[a] * b_block[b]`.
    mul: Vec<(u16, u16, u16)>,
    /// Factorial of each multi-index (derivative = factorial * coefficient).
    pub fact: Vec<f64>,
}

impl CoeffLayout {
    fn build(n_dirs: usize, degree: u8) -> CoeffLayout {
        assert!(n_dirs <= 2 && degree <= 3);
        assert!(n_dirs > 0 || degree == 0);
        let mut exps: Vec<[u8; 2]> = Vec::new();
        for total in 0..=degree {
            match n_dirs {
                0 => {
                    if total == 0 {
                        exps.push([0, 0]);
                    }
                }
                1 => exps.push([total, 0]),
                _ => {
                    for i in (0..=total).rev() {
                        exps.push([i, total - i]);
                    }
                }
            }
        }
        let n = exps.len();
        let mut mul = Vec::new();
        for o in 0..n {
            for a in 0..n {
                for b in 0..n {
                    if exps[a][0] + exps[b][0] == exps[o][0] && exps[a][1] + exps[b][1] == exps[o][1] {
                        mul.push((o as u16, a as u16, b as u16));
                    }
                }
            }
        }
        let fact = exps
            .iter()
            .map(|e| factorial(e[0]) * factorial(e[1]))
            .collect();
        CoeffLayout { n_dirs, degree, exps, mul, fact }
    }

    pub fn n(&self) -> usize {
        self.exps.len()
    }

    pub fn index_of(&self, exps: [u8; 2]) -> Option<usize> {
        self.exps.iter().position(|e| *e == exps)
    }

    /// Truncated product `out = a * b`.
    pub fn mul_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        out[..self.n()].fill(0.0);
        for &(o, i, j) in &self.mul {
            out[o as usize] += a[i as usize] * b[j as usize];
        }
    }

    /// Adjoint of `mul_into` with respect to both factors.
    fn mul_adjoint(&self, adj_out: &[f64], a: &[f64], b: &[f64], adj_a: &mut [f64], adj_b: &mut [f64]) {
        for &(o, i, j) in &self.mul {
            let g = adj_out[o as usize];
            if g != 0.0 {
                adj_a[i as usize] += g * b[j as usize];
                adj_b[j as usize] += g * a[i as usize];
            }
        }
    }

    /// Composes tanh with the Taylor block `z`, writing into `a`.
    ///
    /// The derivative chain is computed from `t = tanh(z0)` as
    /// `t' = 1 - t^2`, `t'' = -2 t (1 - t^2)`, `t''' = -2 (1 - t^2)(1 - 3 t^2)`.
    pub fn tanh_block(&self, z: &[f64], a: &mut [f64]) {
        let nc = self.n();
        let t0 = z[0].tanh();
        a[0] = t0;
        if nc == 1 {
            return;
        }
        let d1 = 1.0 - t0 * t0;
        let d2 = -2.0 * t0 * d1;
        let d3 = -2.0 * d1 * (1.0 - 3.0 * t0 * t0);

        let mut delta = [0.0f64; 10];
        delta[1..nc].copy_from_slice(&z[1..nc]);
        let mut dd = [0.0f64; 10];
        self.mul_into(&delta[..nc], &delta[..nc], &mut dd[..nc]);
        let mut ddd = [0.0f64; 10];
        self.mul_into(&dd[..nc], &delta[..nc], &mut ddd[..nc]);
        for c in 1..nc {
            a[c] = d1 * delta[c] + 0.5 * d2 * dd[c] + (d3 / 6.0) * ddd[c];
        }
    }

    /// Adjoint of `tanh_block`: maps the adjoint of the activated block back
    /// to the adjoint of the pre-activation block (overwrites `adj_z`).
    pub fn tanh_block_adjoint(&self, z: &[f64], adj_a: &[f64], adj_z: &mut [f64]) {
        let nc = self.n();
        let t0 = z[0].tanh();
        if nc == 1 {
            adj_z[0] = adj_a[0] * (1.0 - t0 * t0);
            return;
        }
        let d1 = 1.0 - t0 * t0;
        let d2 = -2.0 * t0 * d1;
        let d3 = -2.0 * d1 * (1.0 - 3.0 * t0 * t0);

        let mut delta = [0.0f64; 10];
        delta[1..nc].copy_from_slice(&z[1..nc]);
        let mut dd = [0.0f64; 10];
        self.mul_into(&delta[..nc], &delta[..nc], &mut dd[..nc]);
        let mut ddd = [0.0f64; 10];
        self.mul_into(&dd[..nc], &delta[..nc], &mut ddd[..nc]);

        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let mut s3 = 0.0;
        for c in 1..nc {
            s1 += adj_a[c] * delta[c];
            s2 += adj_a[c] * dd[c];
            s3 += adj_a[c] * ddd[c];
        }
        // d/dt0 of (t0, d1, d2, d3)
        let dd1 = -2.0 * t0;
        let dd2 = -2.0 + 6.0 * t0 * t0;
        let dd3 = 16.0 * t0 - 24.0 * t0 * t0 * t0;
        let adj_t0 = adj_a[0] + s1 * dd1 + 0.5 * s2 * dd2 + (s3 / 6.0) * dd3;

        let mut g3 = [0.0f64; 10];
        let mut g2 = [0.0f64; 10];
        let mut g1 = [0.0f64; 10];
        for c in 1..nc {
            g3[c] = adj_a[c] * (d3 / 6.0);
            g2[c] = adj_a[c] * (0.5 * d2);
            g1[c] = adj_a[c] * d1;
        }
        // ddd = dd * delta
        self.mul_adjoint(&g3[..nc], &dd[..nc], &delta[..nc], &mut g2[..nc], &mut g1[..nc]);
        // dd = delta * delta
        let mut g1b = [0.0f64; 10];
        self.mul_adjoint(&g2[..nc], &delta[..nc], &delta[..nc], &mut g1[..nc], &mut g1b[..nc]);
        adj_z[0] = adj_t0 * d1;
        for c in 1..nc {
            adj_z[c] = g1[c] + g1b[c];
        }
    }
}

fn factorial(n: u8) -> f64 {
    (1..=n as u64).map(|k| k as f64).product::<f64>().max(1.0)
}

/// Cached layouts for every supported `(n_dirs, degree)` pair.
pub fn layout(n_dirs: usize, degree: u8) -> &'static CoeffLayout {
    use std::sync::OnceLock;
    static CACHE: OnceLock<Vec<CoeffLayout>> = OnceLock::new();
    let all = CACHE.get_or_init(|| {
        let mut v = Vec::new();
        v.push(CoeffLayout::build(0, 0));
        for deg in 0..=3u8 {
            v.push(CoeffLayout::build(1, deg));
        }
        for deg in 0..=3u8 {
            v.push(CoeffLayout::build(2, deg));
        }
        v
    });
    match n_dirs {
        0 => {
            assert_eq!(degree, 0, "zero-direction jets must have degree 0");
            &all[0]
        }
        1 => &all[1 + degree as usize],
        2 => &all[5 + degree as usize],
        _ => panic!("at most 2 active directions are supported"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn layout_sizes() {
        assert_eq!(layout(0, 0).n(), 1);
        assert_eq!(layout(1, 3).n(), 4);
        assert_eq!(layout(2, 2).n(), 6);
        assert_eq!(layout(2, 3).n(), 10);
    }

    #[test]
    fn product_matches_polynomial_multiplication() {
        // (1 + 2x + y)^2 truncated at degree 3 over (x, y)
        let lay = layout(2, 3);
        let mut a = vec![0.0; lay.n()];
        a[lay.index_of([0, 0]).unwrap()] = 1.0;
        a[lay.index_of([1, 0]).unwrap()] = 2.0;
        a[lay.index_of([0, 1]).unwrap()] = 1.0;
        let mut out = vec![0.0; lay.n()];
        lay.mul_into(&a, &a, &mut out);
        assert_relative_eq!(out[lay.index_of([0, 0]).unwrap()], 1.0);
        assert_relative_eq!(out[lay.index_of([1, 0]).unwrap()], 4.0);
        assert_relative_eq!(out[lay.index_of([0, 1]).unwrap()], 2.0);
        assert_relative_eq!(out[lay.index_of([2, 0]).unwrap()], 4.0);
        assert_relative_eq!(out[lay.index_of([1, 1]).unwrap()], 4.0);
        assert_relative_eq!(out[lay.index_of([0, 2]).unwrap()], 1.0);
    }

    #[test]
    fn tanh_block_matches_series_at_zero() {
        // tanh(x) = x - x^3/3 + ...
        let lay = layout(1, 3);
        let z = [0.0, 1.0, 0.0, 0.0];
        let mut a = [0.0; 4];
        lay.tanh_block(&z, &mut a);
        assert_relative_eq!(a[0], 0.0);
        assert_relative_eq!(a[1], 1.0);
        assert_relative_eq!(a[2], 0.0);
        assert_relative_eq!(a[3], -1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn tanh_block_adjoint_matches_finite_differences() {
        let lay = layout(2, 3);
        let nc = lay.n();
        let z: Vec<f64> = (0..nc).map(|i| 0.3 - 0.11 * i as f64).collect();
        // random-ish cotangent
        let adj_a: Vec<f64> = (0..nc).map(|i| 0.7 + 0.13 * i as f64).collect();
        let mut adj_z = vec![0.0; nc];
        lay.tanh_block_adjoint(&z, &adj_a, &mut adj_z);
        let h = 1e-6;
        for c in 0..nc {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[c] += h;
            zm[c] -= h;
            let mut ap = vec![0.0; nc];
            let mut am = vec![0.0; nc];
            lay.tanh_block(&zp, &mut ap);
            lay.tanh_block(&zm, &mut am);
            let fd: f64 = (0..nc).map(|k| adj_a[k] * (ap[k] - am[k]) / (2.0 * h)).sum();
            assert_relative_eq!(adj_z[c], fd, epsilon = 1e-7, max_relative = 1e-7);
        }
    }
}
