//! Sparse multivariate polynomials with exact (or opt-in `f64`) coefficients.
//!
//! A [`Polynomial`] is always kept in canonical merged form: terms are sorted
//! by their exponent key, no key occurs twice and no stored coefficient is
//! zero. Equality of polynomials is therefore structural equality.

mod liouville;
pub mod systems;

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::scalar::{Coeff, Rational};

pub use liouville::{LiouvilleOperator, DEFAULT_TERM_CAP};

/// Identifier of a phase variable; dense in `0..N` for an `N`-variable system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarIndex(pub u32);

impl VarIndex {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for VarIndex {
    fn from(v: usize) -> Self {
        VarIndex(v as u32)
    }
}

/// Sparse exponent map, sorted by variable, exponents strictly positive.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Exponents(SmallVec<[(VarIndex, u32); 4]>);

impl Exponents {
    pub fn one() -> Self {
        Exponents(SmallVec::new())
    }

    pub fn var(v: VarIndex, e: u32) -> Self {
        let mut out = Exponents::one();
        if e > 0 {
            out.0.push((v, e));
        }
        out
    }

    /// Build from arbitrary `(var, exp)` pairs; repeated variables add up.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (VarIndex, u32)>) -> Self {
        let mut v: SmallVec<[(VarIndex, u32); 4]> = pairs.into_iter().filter(|p| p.1 > 0).collect();
        v.sort_by_key(|p| p.0);
        let mut out: SmallVec<[(VarIndex, u32); 4]> = SmallVec::with_capacity(v.len());
        for (var, e) in v {
            match out.last_mut() {
                Some(last) if last.0 == var => last.1 += e,
                _ => out.push((var, e)),
            }
        }
        Exponents(out)
    }

    pub fn iter(&self) -> impl Iterator<Item = (VarIndex, u32)> + '_ {
        self.0.iter().copied()
    }

    pub fn get(&self, v: VarIndex) -> u32 {
        self.0
            .binary_search_by_key(&v, |p| p.0)
            .map(|i| self.0[i].1)
            .unwrap_or(0)
    }

    pub fn is_one(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|p| p.1).sum()
    }

    pub fn max_var(&self) -> Option<VarIndex> {
        self.0.last().map(|p| p.0)
    }

    /// Exponent-wise sum (monomial product).
    pub fn mul(&self, other: &Exponents) -> Exponents {
        let (a, b) = (&self.0, &other.0);
        let mut out = SmallVec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            match a[i].0.cmp(&b[j].0) {
                Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                Ordering::Equal => {
                    out.push((a[i].0, a[i].1 + b[j].1));
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Exponents(out)
    }

    /// Remove one power of the variable at position `pos`.
    pub(crate) fn decrement_at(&self, pos: usize) -> Exponents {
        let mut out = self.clone();
        if out.0[pos].1 == 1 {
            out.0.remove(pos);
        } else {
            out.0[pos].1 -= 1;
        }
        out
    }

    /// Relabel variables; the map must be injective on this monomial's support.
    pub fn relabel(&self, map: impl Fn(VarIndex) -> VarIndex) -> Exponents {
        Exponents::from_pairs(self.0.iter().map(|&(v, e)| (map(v), e)))
    }

    /// Bit signature of odd exponents, as a sorted variable list.
    pub fn odd_vars(&self) -> SmallVec<[VarIndex; 4]> {
        self.0.iter().filter(|p| p.1 % 2 == 1).map(|p| p.0).collect()
    }
}

/// One coefficient-exponent pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial<C = Rational> {
    pub coeff: C,
    pub exps: Exponents,
}

/// Canonical sparse polynomial.
#[derive(Clone, PartialEq)]
pub struct Polynomial<C = Rational> {
    terms: Vec<Monomial<C>>,
}

impl<C: Coeff> Default for Polynomial<C> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<C: Coeff> Polynomial<C> {
    pub fn zero() -> Self {
        Polynomial { terms: Vec::new() }
    }

    pub fn constant(c: C) -> Self {
        Self::from_terms([(c, Exponents::one())])
    }

    pub fn var(v: VarIndex) -> Self {
        Self::monomial(C::one(), Exponents::var(v, 1))
    }

    pub fn monomial(c: C, exps: Exponents) -> Self {
        Self::from_terms([(c, exps)])
    }

    /// Merge like terms, drop zeros and sort into canonical order.
    pub fn from_terms(terms: impl IntoIterator<Item = (C, Exponents)>) -> Self {
        let mut acc = TermAccumulator::default();
        for (c, e) in terms {
            acc.add(e, &c);
        }
        acc.finish()
    }

    /// Re-canonicalize a list of monomials that may hold duplicates or zeros.
    pub fn from_monomials(terms: impl IntoIterator<Item = Monomial<C>>) -> Self {
        Self::from_terms(terms.into_iter().map(|m| (m.coeff, m.exps)))
    }

    pub fn terms(&self) -> &[Monomial<C>] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Coefficient of the given exponent key (zero if absent).
    pub fn coeff(&self, exps: &Exponents) -> C {
        self.terms
            .binary_search_by(|t| t.exps.cmp(exps))
            .map(|i| self.terms[i].coeff.clone())
            .unwrap_or_else(|_| C::zero())
    }

    /// Variables appearing with positive exponent in some term.
    pub fn support(&self) -> BTreeSet<VarIndex> {
        self.terms
            .iter()
            .flat_map(|t| t.exps.iter().map(|p| p.0))
            .collect()
    }

    pub fn max_var(&self) -> Option<VarIndex> {
        self.terms.iter().filter_map(|t| t.exps.max_var()).max()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.exps.degree()).max().unwrap_or(0)
    }

    pub fn scale(&self, c: &C) -> Self {
        if c.is_zero() {
            return Self::zero();
        }
        Polynomial {
            terms: self
                .terms
                .iter()
                .map(|t| Monomial {
                    coeff: t.coeff.mul_ref(c),
                    exps: t.exps.clone(),
                })
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .chain(&other.terms)
                .map(|t| (t.coeff.clone(), t.exps.clone())),
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| (t.coeff.clone(), t.exps.clone()))
                .chain(other.terms.iter().map(|t| (t.coeff.neg_ref(), t.exps.clone()))),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut acc = TermAccumulator::default();
        for a in &self.terms {
            for b in &other.terms {
                acc.add(a.exps.mul(&b.exps), &a.coeff.mul_ref(&b.coeff));
            }
        }
        acc.finish()
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::constant(C::one());
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// Apply a variable relabelling (e.g. a lattice translation).
    pub fn relabel(&self, map: impl Fn(VarIndex) -> VarIndex) -> Self {
        Self::from_terms(
            self.terms
                .iter()
                .map(|t| (t.coeff.clone(), t.exps.relabel(&map))),
        )
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Polynomial<D> {
        Polynomial::from_terms(self.terms.iter().map(|t| (f(&t.coeff), t.exps.clone())))
    }

    pub fn to_f64(&self) -> Polynomial<f64> {
        self.map_coeffs(|c| c.to_f64())
    }

    /// Evaluate at a point given as a dense slice of variable values.
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                t.exps
                    .iter()
                    .fold(t.coeff.to_f64(), |acc, (v, e)| acc * x[v.index()].powi(e as i32))
            })
            .sum()
    }

    pub(crate) fn from_canonical_unchecked(terms: Vec<Monomial<C>>) -> Self {
        debug_assert!(terms.windows(2).all(|w| w[0].exps < w[1].exps));
        debug_assert!(terms.iter().all(|t| !t.coeff.is_zero()));
        Polynomial { terms }
    }
}

impl<C: Coeff + fmt::Display> fmt::Display for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({})", t.coeff)?;
            for (v, e) in t.exps.iter() {
                if e == 1 {
                    write!(f, "*x{}", v.0)?;
                } else {
                    write!(f, "*x{}^{}", v.0, e)?;
                }
            }
        }
        Ok(())
    }
}

impl<C: Coeff> fmt::Debug for Polynomial<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list()
            .entries(self.terms.iter().map(|t| (&t.coeff, &t.exps.0)))
            .finish()
    }
}

/// Hash-merge of monomials into canonical form.
pub(crate) struct TermAccumulator<C> {
    map: FxHashMap<Exponents, C>,
}

impl<C> Default for TermAccumulator<C> {
    fn default() -> Self {
        TermAccumulator {
            map: FxHashMap::default(),
        }
    }
}

impl<C: Coeff> TermAccumulator<C> {
    pub(crate) fn add(&mut self, exps: Exponents, c: &C) {
        if c.is_zero() {
            return;
        }
        match self.map.get_mut(&exps) {
            Some(slot) => slot.add_assign_ref(c),
            None => {
                self.map.insert(exps, c.clone());
            }
        }
    }

    pub(crate) fn add_owned(&mut self, exps: Exponents, c: C) {
        if c.is_zero() {
            return;
        }
        match self.map.get_mut(&exps) {
            Some(slot) => slot.add_assign_ref(&c),
            None => {
                self.map.insert(exps, c);
            }
        }
    }

    pub(crate) fn merge(&mut self, other: TermAccumulator<C>) {
        for (e, c) in other.map {
            self.add_owned(e, c);
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.map.len()
    }

    pub(crate) fn finish(self) -> Polynomial<C> {
        let mut terms: Vec<Monomial<C>> = self
            .map
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|(exps, coeff)| Monomial { coeff, exps })
            .collect();
        terms.sort_unstable_by(|a, b| a.exps.cmp(&b.exps));
        Polynomial::from_canonical_unchecked(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    fn q(n: i64) -> Rational {
        Rational::from_integer(BigInt::from(n))
    }

    fn x(i: u32) -> Polynomial {
        Polynomial::var(VarIndex(i))
    }

    #[test]
    fn like_terms_merge_and_cancel() {
        let p = x(0).add(&x(1)).sub(&x(0));
        assert_eq!(p, x(1));
        assert!(x(2).sub(&x(2)).is_zero());
        assert_eq!(Polynomial::<Rational>::zero().support().len(), 0);
    }

    #[test]
    fn product_and_support() {
        let p = x(0).add(&x(3)).mul(&x(0));
        assert_eq!(p.len(), 2);
        assert_eq!(
            p.support().into_iter().collect::<Vec<_>>(),
            vec![VarIndex(0), VarIndex(3)]
        );
        assert_eq!(p.coeff(&Exponents::var(VarIndex(0), 2)), q(1));
        assert_eq!(x(1).pow(3).degree(), 3);
    }

    #[test]
    fn from_pairs_accumulates_repeats() {
        let e = Exponents::from_pairs([(VarIndex(2), 1), (VarIndex(0), 2), (VarIndex(2), 3)]);
        assert_eq!(e.get(VarIndex(2)), 4);
        assert_eq!(e.get(VarIndex(0)), 2);
        assert_eq!(e.get(VarIndex(1)), 0);
        assert_eq!(e.degree(), 6);
    }

    #[test]
    fn eval_matches_hand_value() {
        // 3 x0^2 x1 - 2
        let p = Polynomial::from_terms([
            (q(3), Exponents::from_pairs([(VarIndex(0), 2), (VarIndex(1), 1)])),
            (q(-2), Exponents::one()),
        ]);
        assert_eq!(p.eval(&[2.0, 5.0]), 58.0);
    }
}
