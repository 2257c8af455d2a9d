//! Sparse multivariate polynomials over a commutative ring, ordered by
//! graded lexicographic monomial order.
//!
//! The coefficient type is generic so the same arithmetic runs on f64
//! for solver work and on exact rationals in cross-checking tests. The
//! f64 alias [`Poly64`] is re-exported at the crate root.

use crate::error::Error;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Default cap on the total degree produced by composition.
pub const COMPOSE_DEGREE_CAP: usize = 12;

/// Ring operations needed for polynomial arithmetic.
pub trait Coeff:
    Clone
    + PartialEq
    + Zero
    + One
    + Neg<Output = Self>
    + Sub<Output = Self>
    + Add<Output = Self>
    + Mul<Output = Self>
{
}

impl<T> Coeff for T where
    T: Clone
        + PartialEq
        + Zero
        + One
        + Neg<Output = T>
        + Sub<Output = T>
        + Add<Output = T>
        + Mul<Output = T>
{
}

/// Exponent vector. Ordering is graded lexicographic: lower total degree
/// first; within a degree, the monomial with the larger exponent on the
/// earliest differing variable comes first (x1 before x2).
#[derive(Clone, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct Mono(pub Vec<u32>);

impl Mono {
    pub fn constant(nvars: usize) -> Self {
        Mono(vec![0; nvars])
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Mono(e)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    pub fn mul(&self, other: &Mono) -> Mono {
        Mono(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }
}

impl Ord for Mono {
    fn cmp(&self, other: &Self) -> Ordering {
        debug_assert_eq!(self.0.len(), other.0.len());
        match self.degree().cmp(&other.degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        for (a, b) in self.0.iter().zip(&other.0) {
            match b.cmp(a) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Mono {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials in `nvars` variables of total degree <= max_deg, in
/// graded lexicographic order.
pub fn monomial_basis(nvars: usize, max_deg: usize) -> Vec<Mono> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; nvars];
    for deg in 0..=max_deg {
        fill(&mut out, &mut cur, 0, deg as u32, nvars);
    }
    out.sort();
    return out;

    fn fill(out: &mut Vec<Mono>, cur: &mut Vec<u32>, var: usize, left: u32, nvars: usize) {
        if var + 1 == nvars {
            cur[var] = left;
            out.push(Mono(cur.clone()));
            cur[var] = 0;
            return;
        }
        for e in 0..=left {
            cur[var] = e;
            fill(out, cur, var + 1, left - e, nvars);
        }
        cur[var] = 0;
    }
}

#[derive(Clone, PartialEq, Debug)]
pub struct Poly<T> {
    nvars: usize,
    terms: BTreeMap<Mono, T>,
}

pub type Poly64 = Poly<f64>;

impl<T: Coeff> Poly<T> {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        let mut p = Poly::zero(nvars);
        p.add_term(Mono::constant(nvars), c);
        p
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range");
        let mut p = Poly::zero(nvars);
        p.add_term(Mono::var(nvars, i), T::one());
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Mono, &T)> {
        self.terms.iter()
    }

    pub fn coeff(&self, m: &Mono) -> T {
        self.terms.get(m).cloned().unwrap_or_else(T::zero)
    }

    pub fn add_term(&mut self, m: Mono, c: T) {
        assert_eq!(m.0.len(), self.nvars, "monomial arity mismatch");
        if c.is_zero() {
            return;
        }
        match self.terms.entry(m) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let sum = e.get().clone() + c;
                if sum.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = sum;
                }
            }
        }
    }

    pub fn scale(&self, c: &T) -> Self {
        let mut out = Poly::zero(self.nvars);
        if c.is_zero() {
            return out;
        }
        for (m, a) in &self.terms {
            out.add_term(m.clone(), a.clone() * c.clone());
        }
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars, "polynomial arity mismatch");
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars, "polynomial arity mismatch");
        let mut out = Poly::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }

    pub fn eval(&self, point: &[T]) -> T {
        assert_eq!(point.len(), self.nvars, "evaluation point arity mismatch");
        let mut acc = T::zero();
        for (m, c) in &self.terms {
            let mut term = c.clone();
            for (x, &e) in point.iter().zip(&m.0) {
                for _ in 0..e {
                    term = term * x.clone();
                }
            }
            acc = acc + term;
        }
        acc
    }

    /// Substitutes `subs[i]` for variable i. All substitutes must share
    /// an arity, which becomes the arity of the result. Errors if the
    /// resulting degree would exceed `degree_cap`.
    pub fn compose(&self, subs: &[Poly<T>], degree_cap: usize) -> Result<Poly<T>, Error> {
        assert_eq!(subs.len(), self.nvars, "substitution arity mismatch");
        let out_vars = subs.first().map_or(0, |p| p.nvars);
        assert!(subs.iter().all(|p| p.nvars == out_vars), "mixed substitute arities");
        let bound: usize = self
            .terms
            .keys()
            .map(|m| {
                m.0.iter()
                    .zip(subs)
                    .map(|(&e, p)| e as usize * p.degree())
                    .sum()
            })
            .max()
            .unwrap_or(0);
        if bound > degree_cap {
            return Err(Error::DegreeOverflow { got: bound, cap: degree_cap });
        }
        let mut acc = Poly::zero(out_vars);
        for (m, c) in &self.terms {
            let mut term = Poly::constant(out_vars, c.clone());
            for (i, &e) in m.0.iter().enumerate() {
                for _ in 0..e {
                    term = &term * &subs[i];
                }
            }
            acc = &acc + &term;
        }
        Ok(acc)
    }

    /// Dense coefficients over the graded-lex basis up to `max_deg`.
    pub fn dense_coeffs(&self, max_deg: usize) -> Vec<T> {
        assert!(self.degree() <= max_deg, "degree exceeds requested basis");
        monomial_basis(self.nvars, max_deg)
            .into_iter()
            .map(|m| self.coeff(&m))
            .collect()
    }

    pub fn from_dense(nvars: usize, max_deg: usize, coeffs: &[T]) -> Result<Self, Error> {
        let basis = monomial_basis(nvars, max_deg);
        if basis.len() != coeffs.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} coefficients for degree {} in {} variables, got {}",
                basis.len(),
                max_deg,
                nvars,
                coeffs.len()
            )));
        }
        let mut p = Poly::zero(nvars);
        for (m, c) in basis.into_iter().zip(coeffs) {
            p.add_term(m, c.clone());
        }
        Ok(p)
    }
}

impl<T: Coeff> Add for &Poly<T> {
    type Output = Poly<T>;
    fn add(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<T: Coeff> Sub for &Poly<T> {
    type Output = Poly<T>;
    fn sub(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl<T: Coeff> Neg for &Poly<T> {
    type Output = Poly<T>;
    fn neg(self) -> Poly<T> {
        let mut out = Poly::zero(self.nvars);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl<T: Coeff> Mul for &Poly<T> {
    type Output = Poly<T>;
    fn mul(self, rhs: &Poly<T>) -> Poly<T> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Poly::zero(self.nvars);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &rhs.terms {
                out.add_term(ma.mul(mb), ca.clone() * cb.clone());
            }
        }
        out
    }
}

impl fmt::Display for Poly<f64> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            write!(f, "{c}")?;
            for (i, &e) in m.0.iter().enumerate() {
                if e == 1 {
                    write!(f, "*x{}", i + 1)?;
                } else if e > 1 {
                    write!(f, "*x{}^{e}", i + 1)?;
                }
            }
            first = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;

    fn x(i: usize) -> Poly64 {
        Poly::var(2, i)
    }

    #[test]
    fn basis_order() {
        let basis = monomial_basis(2, 2);
        let expect: Vec<Vec<u32>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(basis.into_iter().map(|m| m.0).collect::<Vec<_>>(), expect);
        assert_eq!(monomial_basis(3, 3).len(), 20);
    }

    #[test]
    fn arithmetic_basics() {
        let p = &(&x(0) * &x(0)) + &x(1); // x1^2 + x2
        assert_eq!(p.degree(), 2);
        assert_eq!(p.eval(&[2.0, 3.0]), 7.0);
        let q = &p - &p;
        assert!(q.is_zero());
    }

    #[test]
    fn compose_square_of_sum() {
        // p = x1^2 under x1 <- x1 + x2.
        let p = &x(0) * &x(0);
        let sum = &x(0) + &x(1);
        let composed = p.compose(&[sum, x(1)], COMPOSE_DEGREE_CAP).unwrap();
        let expect = {
            let mut e = Poly::zero(2);
            e.add_term(Mono(vec![2, 0]), 1.0);
            e.add_term(Mono(vec![1, 1]), 2.0);
            e.add_term(Mono(vec![0, 2]), 1.0);
            e
        };
        assert_eq!(composed, expect);
    }

    #[test]
    fn compose_identity() {
        let p = &(&x(0) * &x(1)) + &Poly::constant(2, 4.5);
        let id = [x(0), x(1)];
        assert_eq!(p.compose(&id, COMPOSE_DEGREE_CAP).unwrap(), p);
    }

    #[test]
    fn compose_degree_guard() {
        let p = &(&x(0) * &x(0)) * &(&x(0) * &x(0)); // x1^4
        let sq = &x(0) * &x(0);
        assert!(matches!(
            p.compose(&[sq, x(1)], 6),
            Err(Error::DegreeOverflow { got: 8, cap: 6 })
        ));
    }

    #[test]
    fn dense_roundtrip() {
        let p = &(&x(0) * &x(1)) - &Poly::constant(2, 2.0);
        let coeffs = p.dense_coeffs(2);
        assert_eq!(coeffs, vec![-2.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let back = Poly::from_dense(2, 2, &coeffs).unwrap();
        assert_eq!(back, p);
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn exact_rational_composition_matches_f64() {
        // q(x) = (3/10) x1^2 - (1/2) x1 x2, substituted into itself on x1.
        let mut q: Poly<BigRational> = Poly::zero(2);
        q.add_term(Mono(vec![2, 0]), rat(3, 10));
        q.add_term(Mono(vec![1, 1]), rat(-1, 2));
        let idy = Poly::var(2, 1);
        let exact = q.compose(&[q.clone(), idy], COMPOSE_DEGREE_CAP).unwrap();

        let mut qf: Poly64 = Poly::zero(2);
        qf.add_term(Mono(vec![2, 0]), 0.3);
        qf.add_term(Mono(vec![1, 1]), -0.5);
        let approx = qf
            .compose(&[qf.clone(), Poly::var(2, 1)], COMPOSE_DEGREE_CAP)
            .unwrap();

        for (m, c) in exact.terms() {
            let cf: f64 = c.numer().to_string().parse::<f64>().unwrap()
                / c.denom().to_string().parse::<f64>().unwrap();
            assert!((approx.coeff(m) - cf).abs() < 1e-12, "coefficient mismatch at {m:?}");
        }
    }
}
