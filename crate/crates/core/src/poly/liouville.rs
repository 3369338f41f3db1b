use rayon::prelude::*;

use super::{Exponents, Polynomial, TermAccumulator, VarIndex};
use crate::error::{Error, Result};
use crate::scalar::{Coeff, Rational};

/// Default budget on the number of terms in any operator power.
pub const DEFAULT_TERM_CAP: usize = 2_000_000;

/// Polynomials larger than this are mapped in parallel chunks.
const PAR_CHUNK: usize = 2048;

/// First-order operator `L = Σ_k F_k(x) ∂/∂x_k` with polynomial `F_k`.
#[derive(Clone, Debug)]
pub struct LiouvilleOperator<C: Coeff = Rational> {
    dimension: usize,
    rhs: Vec<Option<Polynomial<C>>>,
}

impl<C: Coeff> LiouvilleOperator<C> {
    /// Each target may appear once; every variable must be below `dimension`.
    pub fn new(
        dimension: usize,
        terms: impl IntoIterator<Item = (VarIndex, Polynomial<C>)>,
    ) -> Result<Self> {
        let mut rhs: Vec<Option<Polynomial<C>>> = vec![None; dimension];
        for (target, f) in terms {
            if target.index() >= dimension {
                return Err(Error::DimensionMismatch {
                    var: target.index(),
                    dimension,
                });
            }
            if let Some(v) = f.max_var() {
                if v.index() >= dimension {
                    return Err(Error::DimensionMismatch {
                        var: v.index(),
                        dimension,
                    });
                }
            }
            if rhs[target.index()].is_some() {
                return Err(Error::InvalidParameter(format!(
                    "target variable {} appears twice in the operator",
                    target.0
                )));
            }
            if !f.is_zero() {
                rhs[target.index()] = Some(f);
            }
        }
        Ok(LiouvilleOperator { dimension, rhs })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rhs(&self, v: VarIndex) -> Option<&Polynomial<C>> {
        self.rhs.get(v.index()).and_then(|f| f.as_ref())
    }

    /// Nonzero `(target, F_target)` pairs in variable order.
    pub fn terms(&self) -> impl Iterator<Item = (VarIndex, &Polynomial<C>)> {
        self.rhs
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.as_ref().map(|f| (VarIndex(i as u32), f)))
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> LiouvilleOperator<D> {
        LiouvilleOperator {
            dimension: self.dimension,
            rhs: self
                .rhs
                .iter()
                .map(|p| p.as_ref().map(|p| p.map_coeffs(&f)))
                .collect(),
        }
    }

    pub fn to_f64(&self) -> LiouvilleOperator<f64> {
        self.map_coeffs(|c| c.to_f64())
    }

    /// Conjugate by a permutation of variable labels.
    pub fn relabel(&self, map: impl Fn(VarIndex) -> VarIndex) -> Result<Self> {
        let terms: Vec<_> = self.terms().map(|(t, f)| (map(t), f.relabel(&map))).collect();
        Self::new(self.dimension, terms)
    }

    fn check_vars(&self, p: &Polynomial<C>) -> Result<()> {
        match p.max_var() {
            Some(v) if v.index() >= self.dimension => Err(Error::DimensionMismatch {
                var: v.index(),
                dimension: self.dimension,
            }),
            _ => Ok(()),
        }
    }

    fn map_terms(&self, terms: &[super::Monomial<C>], acc: &mut TermAccumulator<C>) {
        for t in terms {
            for (pos, (v, e)) in t.exps.iter().enumerate() {
                let Some(f) = self.rhs[v.index()].as_ref() else {
                    continue;
                };
                let base = t.exps.decrement_at(pos);
                let c = t.coeff.scale_int(e);
                for ft in f.terms() {
                    acc.add_owned(base.mul(&ft.exps), c.mul_ref(&ft.coeff));
                }
            }
        }
    }

    fn apply_inner(&self, p: &Polynomial<C>) -> TermAccumulator<C> {
        if p.len() <= PAR_CHUNK {
            let mut acc = TermAccumulator::default();
            self.map_terms(p.terms(), &mut acc);
            return acc;
        }
        // chunk boundaries are fixed, and chunk maps are merged in order, so
        // the result does not depend on the thread count
        let parts: Vec<TermAccumulator<C>> = p
            .terms()
            .par_chunks(PAR_CHUNK)
            .map(|chunk| {
                let mut acc = TermAccumulator::default();
                self.map_terms(chunk, &mut acc);
                acc
            })
            .collect();
        let mut parts = parts.into_iter();
        let mut acc = parts.next().unwrap_or_default();
        for part in parts {
            acc.merge(part);
        }
        acc
    }

    /// Canonical form of `L p`.
    pub fn apply(&self, p: &Polynomial<C>) -> Result<Polynomial<C>> {
        self.check_vars(p)?;
        Ok(self.apply_inner(p).finish())
    }

    /// `[u0, L u0, …, Lⁿ u0]`, failing once a power exceeds `term_cap` terms.
    pub fn powers(
        &self,
        u0: &Polynomial<C>,
        n: usize,
        term_cap: usize,
    ) -> Result<Vec<Polynomial<C>>> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "operator power count must be at least 1".into(),
            ));
        }
        self.check_vars(u0)?;
        let mut out = Vec::with_capacity(n + 1);
        out.push(u0.clone());
        for power in 1..=n {
            let acc = self.apply_inner(&out[power - 1]);
            if acc.len() > term_cap {
                return Err(Error::TermBudget {
                    power,
                    terms: acc.len(),
                    cap: term_cap,
                });
            }
            out.push(acc.finish());
        }
        Ok(out)
    }

    /// Matrix `A` with `L x_i = Σ_k A_ik x_k`, if every right-hand side is
    /// homogeneous linear.
    pub fn linear_matrix(&self) -> Option<Vec<Vec<C>>> {
        let n = self.dimension;
        let mut a = vec![vec![C::zero(); n]; n];
        for (target, f) in self.terms() {
            for t in f.terms() {
                let mut it = t.exps.iter();
                match (it.next(), it.next()) {
                    (Some((v, 1)), None) => a[target.index()][v.index()] = t.coeff.clone(),
                    _ => return None,
                }
            }
        }
        Some(a)
    }
}

impl<C: Coeff> LiouvilleOperator<C> {
    /// Operator of the linear system `ẋ = A x`.
    pub fn from_matrix(a: &[Vec<C>]) -> Result<Self> {
        let n = a.len();
        let mut terms = Vec::with_capacity(n);
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::MatrixShape {
                    rows: n,
                    cols: row.len(),
                    expected: n,
                });
            }
            let f = Polynomial::from_terms(
                row.iter()
                    .enumerate()
                    .map(|(k, c)| (c.clone(), Exponents::var(VarIndex(k as u32), 1))),
            );
            terms.push((VarIndex(i as u32), f));
        }
        Self::new(n, terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::systems;
    use num_bigint::BigInt;

    fn q(n: i64) -> Rational {
        Rational::from_integer(BigInt::from(n))
    }

    fn mono(c: i64, pairs: &[(u32, u32)]) -> (Rational, Exponents) {
        (
            q(c),
            Exponents::from_pairs(pairs.iter().map(|&(v, e)| (VarIndex(v), e))),
        )
    }

    #[test]
    fn kraichnan_orszag_powers_match_hand_expansion() {
        // variables x1, x2, x3 are indices 0, 1, 2
        let ko = systems::kraichnan_orszag();
        let u0 = Polynomial::monomial(q(1), Exponents::var(VarIndex(0), 3));
        let pw = ko.operator.powers(&u0, 3, DEFAULT_TERM_CAP).unwrap();
        assert_eq!(pw[1], Polynomial::from_terms([mono(3, &[(0, 3), (2, 1)])]));
        assert_eq!(
            pw[2],
            Polynomial::from_terms([
                mono(9, &[(0, 3), (2, 2)]),
                mono(3, &[(0, 3), (1, 2)]),
                mono(-3, &[(0, 5)]),
            ])
        );
        assert_eq!(
            pw[3],
            Polynomial::from_terms([
                mono(27, &[(0, 3), (2, 3)]),
                mono(21, &[(0, 3), (1, 2), (2, 1)]),
                mono(-33, &[(0, 5), (2, 1)]),
            ])
        );
    }

    #[test]
    fn constants_are_annihilated() {
        let ko = systems::kraichnan_orszag();
        assert!(ko.operator.apply(&Polynomial::zero()).unwrap().is_zero());
        let pw = ko
            .operator
            .powers(&Polynomial::constant(q(1)), 2, DEFAULT_TERM_CAP)
            .unwrap();
        assert_eq!(pw[0], Polynomial::constant(q(1)));
        assert!(pw[1].is_zero() && pw[2].is_zero());
    }

    #[test]
    fn oscillator_cycles_with_period_four() {
        // q = x0, p = x1, L = p ∂_q - q ∂_p
        let l = LiouvilleOperator::from_matrix(&[vec![q(0), q(1)], vec![q(-1), q(0)]]).unwrap();
        let p = Polynomial::var(VarIndex(1));
        let qv = Polynomial::var(VarIndex(0));
        let pw = l.powers(&p, 4, DEFAULT_TERM_CAP).unwrap();
        let neg = |x: &Polynomial| x.scale(&q(-1));
        assert_eq!(pw, vec![p.clone(), neg(&qv), neg(&p), qv, p]);
    }

    #[test]
    fn out_of_range_variable_is_rejected() {
        let ko = systems::kraichnan_orszag();
        let bad = Polynomial::var(VarIndex(7));
        assert!(matches!(
            ko.operator.apply(&bad),
            Err(Error::DimensionMismatch { var: 7, dimension: 3 })
        ));
        assert!(LiouvilleOperator::new(2, [(VarIndex(0), bad)]).is_err());
    }

    #[test]
    fn term_cap_reports_reached_power() {
        let chain = systems::fpu_chain(8, q(1), q(1), q(1)).unwrap();
        let u0 = chain.var("r0").map(Polynomial::var).unwrap();
        let err = chain.operator.powers(&u0, 6, 20).unwrap_err();
        match err {
            Error::TermBudget { power, cap, .. } => {
                assert_eq!(cap, 20);
                assert!(power >= 2 && power <= 6);
            }
            e => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn linear_matrix_round_trips() {
        let a = vec![vec![q(0), q(2)], vec![q(-3), q(1)]];
        let l = LiouvilleOperator::from_matrix(&a).unwrap();
        assert_eq!(l.linear_matrix().unwrap(), a);
        let ko = systems::kraichnan_orszag();
        assert!(ko.operator.linear_matrix().is_none());
    }

    #[test]
    fn parallel_chunks_agree_with_sequential_map() {
        let chain = systems::fpu_chain(12, q(1), q(1), q(1)).unwrap();
        let u0 = chain.var("r3").map(Polynomial::var).unwrap();
        let pw = chain.operator.powers(&u0, 10, DEFAULT_TERM_CAP).unwrap();
        let k = pw.iter().position(|p| p.len() > PAR_CHUNK).expect("a multi-chunk power");
        let mut acc = TermAccumulator::default();
        chain.operator.map_terms(pw[k].terms(), &mut acc);
        assert_eq!(acc.finish(), pw[k + 1]);
    }
}
