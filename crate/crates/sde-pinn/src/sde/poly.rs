//! Multivariate polynomials with non-negative integer exponents.
//!
//! Used both for the drift/diffusion coefficients of an SDE (polynomials in
//! the state `x`) and for the coefficient polynomials of compiled residual
//! terms (polynomials in the frequency `u` or space `x`).

use serde::{Deserialize, Serialize};

/// A single monomial `coef * prod_i x_i^exps[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyTerm {
    pub coef: f64,
    pub exps: Vec<u8>,
}

/// Sparse multivariate polynomial in canonical form: terms sorted by exponent
/// vector, exponent vectors unique, zero coefficients dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<PolyTerm>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Polynomial::from_terms(dim, vec![(c, vec![0; dim])])
    }

    /// `coef * x_coord^power`.
    pub fn monomial(dim: usize, coord: usize, power: u8, coef: f64) -> Self {
        assert!(coord < dim, "coordinate out of range");
        let mut exps = vec![0u8; dim];
        exps[coord] = power;
        Polynomial::from_terms(dim, vec![(coef, exps)])
    }

    /// Builds a polynomial from `(coef, exponents)` pairs, merging duplicates.
    pub fn from_terms(dim: usize, terms: Vec<(f64, Vec<u8>)>) -> Self {
        let mut list: Vec<PolyTerm> = Vec::new();
        for (coef, exps) in terms {
            assert_eq!(exps.len(), dim, "exponent vector length must equal dim");
            list.push(PolyTerm { coef, exps });
        }
        let mut p = Polynomial { dim, terms: list };
        p.canonicalize();
        p
    }

    fn canonicalize(&mut self) {
        self.terms.sort_by(|a, b| a.exps.cmp(&b.exps));
        let mut merged: Vec<PolyTerm> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.exps == t.exps => last.coef += t.coef,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coef != 0.0);
        self.terms = merged;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[PolyTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; zero polynomial reports 0.
    pub fn degree(&self) -> u8 {
        self.terms
            .iter()
            .map(|t| t.exps.iter().sum::<u8>())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut m = t.coef;
            for (xi, &e) in x.iter().zip(&t.exps) {
                m *= xi.powi(e as i32);
            }
            acc += m;
        }
        acc
    }

    /// Partial derivative with respect to coordinate `coord`.
    pub fn partial(&self, coord: usize) -> Polynomial {
        assert!(coord < self.dim);
        let terms = self
            .terms
            .iter()
            .filter(|t| t.exps[coord] > 0)
            .map(|t| {
                let mut exps = t.exps.clone();
                let e = exps[coord];
                exps[coord] = e - 1;
                (t.coef * e as f64, exps)
            })
            .collect();
        Polynomial::from_terms(self.dim, terms)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim);
        let mut terms: Vec<(f64, Vec<u8>)> = Vec::with_capacity(self.terms.len() + other.terms.len());
        for t in self.terms.iter().chain(&other.terms) {
            terms.push((t.coef, t.exps.clone()));
        }
        Polynomial::from_terms(self.dim, terms)
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let exps: Vec<u8> = a.exps.iter().zip(&b.exps).map(|(x, y)| x + y).collect();
                terms.push((a.coef * b.coef, exps));
            }
        }
        Polynomial::from_terms(self.dim, terms)
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        Polynomial::from_terms(
            self.dim,
            self.terms.iter().map(|t| (t.coef * s, t.exps.clone())).collect(),
        )
    }

    /// True when every monomial has odd total degree, i.e. `p(-x) = -p(x)`.
    pub fn is_odd(&self) -> bool {
        self.terms.iter().all(|t| t.exps.iter().sum::<u8>() % 2 == 1)
    }

    /// True when every monomial has even total degree, i.e. `p(-x) = p(x)`.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| t.exps.iter().sum::<u8>() % 2 == 0)
    }

    /// Renders the polynomial over variables named `var` with 1-based indices,
    /// e.g. `2 x1 - x1^2` for the dim-1 polynomial with terms (2,[1]),(-1,[2]).
    pub fn render(&self, var: &str) -> String {
        if self.terms.is_empty() {
            return "0".to_string();
        }
        let mut out = String::new();
        for (k, t) in self.terms.iter().enumerate() {
            let mag = t.coef.abs();
            if k == 0 {
                if t.coef < 0.0 {
                    out.push_str("-");
                }
            } else if t.coef < 0.0 {
                out.push_str(" - ");
            } else {
                out.push_str(" + ");
            }
            let is_const = t.exps.iter().all(|&e| e == 0);
            if mag != 1.0 || is_const {
                out.push_str(&format!("{mag}"));
                if !is_const {
                    out.push(' ');
                }
            }
            let mut first = true;
            for (i, &e) in t.exps.iter().enumerate() {
                if e == 0 {
                    continue;
                }
                if !first {
                    out.push(' ');
                }
                first = false;
                if self.dim == 1 {
                    out.push_str(var);
                } else {
                    out.push_str(&format!("{var}{}", i + 1));
                }
                if e > 1 {
                    out.push_str(&format!("^{e}"));
                }
            }
        }
        out
    }
}
