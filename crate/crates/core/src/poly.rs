//! Sparse polynomials over the canonical `(t, u, x)` coordinates.

use crate::moments::{monomial, MultiIndex};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<(f64, MultiIndex)>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        Polynomial { dim, terms: Vec::new() }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::zero(dim).with_term(c, MultiIndex::zero(dim))
    }

    /// Adds `coef * z^alpha`, merging with an existing term of the same index.
    pub fn with_term(mut self, coef: f64, alpha: MultiIndex) -> Self {
        self.push(coef, alpha);
        self
    }

    pub fn push(&mut self, coef: f64, alpha: MultiIndex) {
        assert_eq!(alpha.dim(), self.dim, "term dimension");
        if let Some(t) = self.terms.iter_mut().find(|(_, a)| *a == alpha) {
            t.0 += coef;
        } else {
            self.terms.push((coef, alpha));
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[(f64, MultiIndex)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .filter(|(c, _)| *c != 0.0)
            .map(|(_, a)| a.degree())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        self.terms.iter().map(|(c, a)| c * monomial(z, a)).sum()
    }

    /// Partial derivative with respect to coordinate `pos`.
    pub fn derivative(&self, pos: usize) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (c, a) in &self.terms {
            let e = a.entries()[pos];
            if let Some(lower) = a.lowered(pos) {
                out.push(c * e as f64, lower);
            }
        }
        out
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::zero(self.dim);
        for (c1, a1) in &self.terms {
            for (c2, a2) in &other.terms {
                out.push(c1 * c2, a1.add(a2));
            }
        }
        out
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        for (c, a) in &other.terms {
            out.push(*c, a.clone());
        }
        out
    }

    /// True when no term has a nonzero exponent outside `positions`.
    pub fn uses_only(&self, positions: &[usize]) -> bool {
        self.terms.iter().all(|(c, a)| *c == 0.0 || a.supported_on(positions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        // p(t, x) = 3 t^2 x - x + 2
        let p = Polynomial::zero(2)
            .with_term(3.0, MultiIndex::new(vec![2, 1]))
            .with_term(-1.0, MultiIndex::new(vec![0, 1]))
            .with_term(2.0, MultiIndex::new(vec![0, 0]));
        assert_eq!(p.eval(&[2.0, 0.5]), 3.0 * 4.0 * 0.5 - 0.5 + 2.0);
        assert_eq!(p.degree(), 3);
        let dt = p.derivative(0);
        assert_eq!(dt.eval(&[2.0, 0.5]), 6.0 * 2.0 * 0.5);
        let dx = p.derivative(1);
        assert_eq!(dx.eval(&[2.0, 0.5]), 3.0 * 4.0 - 1.0);
        assert!(p.uses_only(&[0, 1]));
        assert!(!p.uses_only(&[0]));
    }

    #[test]
    fn product_and_sum() {
        let x = Polynomial::zero(1).with_term(1.0, MultiIndex::new(vec![1]));
        let one = Polynomial::constant(1, 1.0);
        let p = x.add(&one).mul(&x.add(&one));
        assert_eq!(p.eval(&[3.0]), 16.0);
        assert_eq!(p.terms().len(), 3);
    }
}
