//! Memory-kernel construction from first principles: normalized moments
//! `γ_i = ⟨Lⁱu, u⟩/⟨u, u⟩`, their projected counterparts `μ_i`, and the Dyson
//! and Faber series `K(t) = δ⁻² Σ_q g_q(t/δ) M_q`.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::measure::ProductMeasure;
use crate::poly::{Exponents, LiouvilleOperator, Monomial, Polynomial, VarIndex};
use crate::scalar::{rational_from_f64, rational_to_f64, Coeff, Rational, Scalar};
use crate::special::bessel_j_sequence;
use crate::stats::CompensatedSum;

/// Observable `u(x)` and its Gram value `G = ⟨u, u⟩`.
#[derive(Clone, Debug)]
pub struct ObservableSpec<C: Coeff = Rational> {
    pub u0: Polynomial<C>,
    pub gram: Scalar,
}

impl<C: Coeff> ObservableSpec<C> {
    /// Computes `G = E[u²]` under `measure`.
    pub fn new(u0: Polynomial<C>, measure: &ProductMeasure) -> Result<Self> {
        let gram = measure.expectation(&u0.mul(&u0))?;
        Self::with_gram(u0, gram)
    }

    pub fn with_gram(u0: Polynomial<C>, gram: Scalar) -> Result<Self> {
        if !(gram.to_f64() > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "observable Gram value must be positive, got {gram}"
            )));
        }
        Ok(ObservableSpec { u0, gram })
    }
}

/// `γ_1..γ_n`, stored 0-based (`values[i-1] = γ_i`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaSequence {
    pub values: Vec<Scalar>,
    pub skew_adjoint: bool,
}

impl GammaSequence {
    /// `γ_i` for `i ≥ 1`.
    pub fn get(&self, i: usize) -> &Scalar {
        &self.values[i - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(Scalar::to_f64).collect()
    }

    pub fn truncate(&self, n: usize) -> GammaSequence {
        GammaSequence {
            values: self.values[..n.min(self.values.len())].to_vec(),
            skew_adjoint: self.skew_adjoint,
        }
    }
}

/// `μ_1..μ_n`, stored 0-based like [`GammaSequence`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuSequence {
    pub values: Vec<Scalar>,
}

impl MuSequence {
    pub fn get(&self, i: usize) -> &Scalar {
        &self.values[i - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(Scalar::to_f64).collect()
    }
}

/// Normalized moments of `u` under the flow generated by `l`.
///
/// The general path evaluates `E[Lⁱu · u]/G` for every `i ≤ n`. With `skew`
/// the generator is taken to be skew-adjoint, so `γ_{2m} = (−1)^m E[(L^m u)²]/G`
/// needs only `L^m u` for `m ≤ n/2`, and odd entries are set to zero.
pub fn gamma_sequence<C: Coeff>(
    l: &LiouvilleOperator<C>,
    obs: &ObservableSpec<C>,
    measure: &ProductMeasure,
    n: usize,
    skew: bool,
    term_cap: usize,
) -> Result<GammaSequence> {
    if n == 0 {
        return Err(Error::InvalidParameter("gamma order must be at least 1".into()));
    }
    let g = &obs.gram;
    let mut values = Vec::with_capacity(n);
    if skew {
        let half = n / 2;
        let powers = if half == 0 {
            vec![obs.u0.clone()]
        } else {
            l.powers(&obs.u0, half, term_cap)?
        };
        for i in 1..=n {
            if i % 2 == 1 {
                values.push(Scalar::zero());
                continue;
            }
            let m = i / 2;
            let e = pair_expectation(&powers[m], &powers[m], measure)?;
            let v = &e / g;
            values.push(if m % 2 == 1 { -&v } else { v });
        }
    } else {
        let powers = l.powers(&obs.u0, n, term_cap)?;
        for p in &powers[1..] {
            let e = pair_expectation(p, &obs.u0, measure)?;
            values.push(&e / g);
        }
    }
    Ok(GammaSequence {
        values,
        skew_adjoint: skew,
    })
}

type Parity = SmallVec<[VarIndex; 4]>;

fn group_by_parity<C: Coeff>(p: &Polynomial<C>) -> FxHashMap<Parity, Vec<&Monomial<C>>> {
    let mut groups: FxHashMap<Parity, Vec<&Monomial<C>>> = FxHashMap::default();
    for t in p.terms() {
        groups.entry(t.exps.odd_vars()).or_default().push(t);
    }
    groups
}

fn all_exact(measure: &ProductMeasure, vars: impl IntoIterator<Item = VarIndex>) -> Result<bool> {
    for v in vars {
        if !measure.density(v)?.has_exact_moments() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `E[p·q]` without forming the product polynomial.
///
/// Under an even product measure only pairs of monomials whose odd-exponent
/// variable sets coincide contribute, so terms are bucketed by that set first.
/// Exact whenever the coefficients and the relevant moments are.
pub fn pair_expectation<C: Coeff>(
    p: &Polynomial<C>,
    q: &Polynomial<C>,
    measure: &ProductMeasure,
) -> Result<Scalar> {
    let mut vars: Vec<VarIndex> = p.support().into_iter().collect();
    vars.extend(q.support());
    let even = vars
        .iter()
        .map(|&v| measure.density(v).map(|d| d.is_even()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .all(|e| e);
    if !even || p.len() * q.len() <= 64 {
        return measure.expectation(&p.mul(q));
    }
    let exact_coeffs = p.terms().first().map_or(true, |t| t.coeff.to_scalar().is_exact());
    let gp = group_by_parity(p);
    let gq = group_by_parity(q);
    let mut keys: Vec<&Parity> = gp.keys().filter(|k| gq.contains_key(*k)).collect();
    keys.sort();
    let max_exp = p.terms().iter().chain(q.terms()).flat_map(|t| t.exps.iter().map(|(_, e)| e)).max().unwrap_or(0);
    if exact_coeffs && all_exact(measure, vars.iter().copied())? {
        let table = ExactMoments::new(measure, &vars, 2 * max_exp)?;
        let mut total = Rational::zero();
        for k in keys {
            let (a, b) = (&gp[k], &gq[k]);
            let part: Rational = a
                .par_iter()
                .map(|s| {
                    let cs = s.coeff.to_scalar();
                    let cs = cs.as_exact().expect("exact coefficients");
                    let mut acc = Rational::zero();
                    for t in b.iter() {
                        let m = table.product(&s.exps, &t.exps);
                        if !m.is_zero() {
                            let ct = t.coeff.to_scalar();
                            acc += m * ct.as_exact().expect("exact coefficients");
                        }
                    }
                    acc * cs
                })
                .reduce(Rational::zero, |x, y| x + y);
            total += part;
        }
        return Ok(Scalar::Exact(total));
    }
    if keys.is_empty() {
        // no pair survives the parity filter: the expectation vanishes identically
        return Ok(Scalar::zero());
    }
    let table = measure.moment_table(vars.iter().copied(), 2 * max_exp)?;
    let mut total = CompensatedSum::default();
    for k in keys {
        let (a, b) = (&gp[k], &gq[k]);
        let bf: Vec<(f64, &Exponents)> = b.iter().map(|t| (t.coeff.to_f64(), &t.exps)).collect();
        let rows: Vec<f64> = a
            .par_iter()
            .map(|s| {
                let cs = s.coeff.to_f64();
                let mut acc = CompensatedSum::default();
                for (ct, te) in &bf {
                    acc.add(ct * moment_product(&table, &s.exps, te));
                }
                cs * acc.value()
            })
            .collect();
        for r in rows {
            total.add(r);
        }
    }
    Ok(Scalar::Real(total.value()))
}

/// `Π_v E[x_v^{a_v + b_v}]` by a sorted merge of the two exponent lists.
fn moment_product(table: &crate::measure::MomentTable, a: &Exponents, b: &Exponents) -> f64 {
    let mut out = 1.0;
    let mut ia = a.iter().peekable();
    let mut ib = b.iter().peekable();
    loop {
        let (v, e) = match (ia.peek(), ib.peek()) {
            (None, None) => break,
            (Some(&x), None) => {
                ia.next();
                x
            }
            (None, Some(&y)) => {
                ib.next();
                y
            }
            (Some(&x), Some(&y)) => {
                if x.0 == y.0 {
                    ia.next();
                    ib.next();
                    (x.0, x.1 + y.1)
                } else if x.0 < y.0 {
                    ia.next();
                    x
                } else {
                    ib.next();
                    y
                }
            }
        };
        out *= table.get(v, e);
    }
    out
}

struct ExactMoments {
    rows: FxHashMap<VarIndex, Vec<Rational>>,
}

impl ExactMoments {
    fn new(measure: &ProductMeasure, vars: &[VarIndex], max_exp: u32) -> Result<Self> {
        let mut rows = FxHashMap::default();
        for &v in vars {
            if rows.contains_key(&v) {
                continue;
            }
            let d = measure.density(v)?;
            let row = (0..=max_exp)
                .map(|k| {
                    d.moment_scalar(k)
                        .as_exact()
                        .cloned()
                        .expect("density reported exact moments")
                })
                .collect();
            rows.insert(v, row);
        }
        Ok(ExactMoments { rows })
    }

    fn product(&self, a: &Exponents, b: &Exponents) -> Rational {
        let merged = a.mul(b);
        let mut out = Rational::one();
        for (v, e) in merged.iter() {
            let m = &self.rows[&v][e as usize];
            if m.is_zero() {
                return Rational::zero();
            }
            out *= m;
        }
        out
    }
}

/// `μ_1 = γ_1`, `μ_k = γ_k − Σ_{j=1}^{k−1} μ_{k−j} γ_j`. Zero factors are
/// skipped, which for skew-adjoint sequences drops every odd index.
pub fn mu_sequence(gamma: &GammaSequence) -> MuSequence {
    let g = &gamma.values;
    let mut mu: Vec<Scalar> = Vec::with_capacity(g.len());
    for k in 0..g.len() {
        let mut v = g[k].clone();
        for j in 0..k {
            let (m, gj) = (&mu[k - 1 - j], &g[j]);
            if m.is_zero() || gj.is_zero() {
                continue;
            }
            v = &v - &(m * gj);
        }
        mu.push(v);
    }
    MuSequence { values: mu }
}

/// Recurrence parameters of the Faber basis and the time scaling `δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaberParams {
    pub c0: f64,
    pub c1: f64,
    pub delta: f64,
}

impl FaberParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 < 0.0) || !self.c0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "Faber modes need c1 < 0, got c1 = {}",
                self.c1
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scaling delta must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

fn faber_rows<T: Clone>(
    c0: &T,
    c1: &T,
    n: usize,
    zero: T,
    one: T,
    mul: impl Fn(&T, &T) -> T,
    sub: impl Fn(&T, &T) -> T,
    add: impl Fn(&T, &T) -> T,
) -> Vec<Vec<T>> {
    let mut rows: Vec<Vec<T>> = vec![vec![one.clone()]];
    if n >= 1 {
        rows.push(vec![sub(&zero, c0), one]);
    }
    let two_c1 = add(c1, c1);
    for q in 1..n {
        let mut next = vec![zero.clone(); q + 2];
        for (j, a) in rows[q].iter().enumerate() {
            next[j + 1] = add(&next[j + 1], a);
            next[j] = sub(&next[j], &mul(c0, a));
        }
        let f = if q == 1 { &two_c1 } else { c1 };
        for (j, a) in rows[q - 1].iter().enumerate() {
            next[j] = sub(&next[j], &mul(f, a));
        }
        rows.push(next);
    }
    rows
}

/// Row `q` holds the monomial coefficients of `F_q(z)`: `F_0 = 1`,
/// `F_1 = z − c0`, `F_2 = (z − c0)F_1 − 2c1`, `F_{q+1} = (z − c0)F_q − c1 F_{q−1}`.
pub fn faber_polynomial_coeffs(fp: &FaberParams, n: usize) -> Vec<Vec<f64>> {
    faber_rows(
        &fp.c0,
        &fp.c1,
        n,
        0.0,
        1.0,
        |a, b| a * b,
        |a, b| a - b,
        |a, b| a + b,
    )
}

/// Exact-arithmetic version of [`faber_polynomial_coeffs`].
pub fn faber_polynomial_coeffs_exact(c0: &Rational, c1: &Rational, n: usize) -> Vec<Vec<Rational>> {
    faber_rows(
        c0,
        c1,
        n,
        Rational::zero(),
        Rational::one(),
        |a, b| a * b,
        |a, b| a - b,
        |a, b| a + b,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Basis {
    Dyson,
    Faber { c0: f64, c1: f64 },
}

/// `g_q(t)` for `q = 0..=n`: `t^q/q!` (Dyson) or
/// `e^{t c0} J_q(2t√(−c1)) / √(−c1)^q` (Faber).
pub fn temporal_modes(basis: &Basis, n: usize, t: f64) -> Result<Vec<f64>> {
    match *basis {
        Basis::Dyson => {
            let mut out = Vec::with_capacity(n + 1);
            let mut v = 1.0;
            for q in 0..=n {
                if q > 0 {
                    v *= t / q as f64;
                }
                out.push(v);
            }
            Ok(out)
        }
        Basis::Faber { c0, c1 } => {
            if !(c1 < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "Faber modes need c1 < 0, got {c1}"
                )));
            }
            let a = (-c1).sqrt();
            let j = bessel_j_sequence(n, 2.0 * t * a);
            let e = (t * c0).exp();
            let mut scale = e;
            Ok(j
                .into_iter()
                .map(|v| {
                    let out = v * scale;
                    scale /= a;
                    out
                })
                .collect())
        }
    }
}

pub fn temporal_mode(basis: &Basis, q: usize, t: f64) -> Result<f64> {
    Ok(temporal_modes(basis, q, t)?[q])
}

/// Truncated kernel series evaluable at any `t ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub basis: Basis,
    pub order: usize,
    pub delta: f64,
    /// `M_0..M_n` of the scaled operator.
    pub coeffs: Vec<f64>,
    /// Streaming term `δ μ_1` on the scaled time axis.
    pub omega_scaled: f64,
    pub gram: f64,
}

impl KernelExpansion {
    /// Streaming term `Ω = μ_1` in physical time.
    pub fn omega(&self) -> f64 {
        self.omega_scaled / self.delta
    }

    /// `K(t) = δ⁻² Σ_q g_q(t/δ) M_q`.
    pub fn eval(&self, t: f64) -> f64 {
        let g = temporal_modes(&self.basis, self.order, t / self.delta)
            .expect("basis validated at construction");
        let mut s = CompensatedSum::default();
        for (gq, m) in g.iter().zip(&self.coeffs) {
            s.add(gq * m);
        }
        s.value() / (self.delta * self.delta)
    }

    pub fn tabulate(&self, times: &[f64]) -> Vec<f64> {
        times.par_iter().map(|&t| self.eval(t)).collect()
    }
}

pub fn kernel_eval(k: &KernelExpansion, t: f64) -> f64 {
    k.eval(t)
}

fn exact_of(s: &Scalar) -> Result<Rational> {
    match s {
        Scalar::Exact(r) => Ok(r.clone()),
        Scalar::Real(x) => rational_from_f64(*x),
    }
}

/// `M_q` of order `n`: Dyson `δ^{q+2} μ_{q+2}`, Faber `Σ_j φ_qj δ^{j+2} μ_{j+2}`.
///
/// The sums run in exact arithmetic on the binary values of `δ`, `c0`, `c1`
/// and `μ`, so only the final rounding to `f64` loses precision.
pub fn build_kernel(mu: &MuSequence, basis: Basis, delta: f64, n: usize, gram: f64) -> Result<KernelExpansion> {
    if mu.len() < n + 2 {
        return Err(Error::InsufficientCoefficients {
            needed: n + 2,
            available: mu.len(),
        });
    }
    if let Basis::Faber { c0, c1 } = basis {
        FaberParams { c0, c1, delta }.validate()?;
    } else if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "scaling delta must be positive, got {delta}"
        )));
    }
    let d = rational_from_f64(delta)?;
    let mut scaled = Vec::with_capacity(n + 2);
    let mut dp = Rational::one();
    for i in 1..=n + 2 {
        dp = &dp * &d;
        scaled.push(exact_of(mu.get(i))? * &dp);
    }
    let coeffs: Vec<Rational> = match basis {
        Basis::Dyson => scaled[1..].to_vec(),
        Basis::Faber { c0, c1 } => {
            let phi = faber_polynomial_coeffs_exact(&rational_from_f64(c0)?, &rational_from_f64(c1)?, n);
            phi.iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .fold(Rational::zero(), |acc, (j, c)| acc + c * &scaled[j + 1])
                })
                .collect()
        }
    };
    let coeffs: Vec<f64> = coeffs.iter().map(rational_to_f64).collect();
    if let Some(q) = coeffs.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite {
            what: "kernel coefficient",
            node: q,
        });
    }
    Ok(KernelExpansion {
        basis,
        order: n,
        delta,
        coeffs,
        omega_scaled: rational_to_f64(&scaled[0]),
        gram,
    })
}

/// γ for a linear system `ẋ = A x` and observable `x_obs`:
/// `γ_j = E[(Σ_k (Aʲ)_{obs,k} x_k) x_obs] / E[x_obs²]`.
pub fn linear_gamma<C: Coeff>(
    a: &[Vec<C>],
    obs: VarIndex,
    measure: &ProductMeasure,
    n: usize,
) -> Result<GammaSequence> {
    let dim = a.len();
    if let Some(row) = a.iter().find(|r| r.len() != dim) {
        return Err(Error::MatrixShape {
            rows: dim,
            cols: row.len(),
            expected: dim,
        });
    }
    if obs.index() >= dim {
        return Err(Error::DimensionMismatch {
            var: obs.index(),
            dimension: dim,
        });
    }
    let d_obs = measure.density(obs)?;
    let second = d_obs.moment_scalar(2);
    let mean_obs = d_obs.moment_scalar(1);
    let mut row: Vec<C> = vec![C::zero(); dim];
    row[obs.index()] = C::one();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        // row ← row · A, the coefficients of L^{j} x_obs
        let mut next = vec![C::zero(); dim];
        for (k, rk) in row.iter().enumerate() {
            if rk.is_zero() {
                continue;
            }
            for (i, aki) in a[k].iter().enumerate() {
                if !aki.is_zero() {
                    next[i].add_assign_ref(&rk.mul_ref(aki));
                }
            }
        }
        row = next;
        let mut e = Scalar::zero();
        for (k, rk) in row.iter().enumerate() {
            if rk.is_zero() {
                continue;
            }
            let m = if k == obs.index() {
                second.clone()
            } else {
                let mk = measure.density(VarIndex(k as u32))?.moment_scalar(1);
                &mk * &mean_obs
            };
            e = &e + &(&rk.to_scalar() * &m);
        }
        values.push(&e / &second);
    }
    Ok(GammaSequence {
        values,
        skew_adjoint: false,
    })
}

/// `R̂ = max_j |γ_j|^{1/j}`, `c0 = 0`, `c1 = −1/4`, `δ = min(1, 1/R̂)`.
pub fn estimate_scaling(gamma: &GammaSequence) -> Result<FaberParams> {
    let mut r: f64 = 0.0;
    for (i, g) in gamma.values.iter().enumerate() {
        let v = g.to_f64().abs();
        if v > 0.0 {
            r = r.max(v.powf(1.0 / (i + 1) as f64));
        }
    }
    if r == 0.0 {
        return Err(Error::NoEstimate);
    }
    Ok(FaberParams {
        c0: 0.0,
        c1: -0.25,
        delta: (1.0 / r).min(1.0),
    })
}

/// How [`estimate_scaling_with`] picks the spectral radius `R̂`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingRule {
    /// `R̂ = max_j |γ_j|^{1/j}`.
    #[default]
    MaxRoot,
    /// `R̂ = √(2|γ₂|)`, the half-width of an arcsine spectral law with the
    /// observed second moment. Immune to the factorial growth of high
    /// moments in nonlinear systems.
    SecondMoment,
}

pub fn estimate_scaling_with(gamma: &GammaSequence, rule: ScalingRule) -> Result<FaberParams> {
    match rule {
        ScalingRule::MaxRoot => estimate_scaling(gamma),
        ScalingRule::SecondMoment => {
            let g2 = gamma.values.get(1).map(Scalar::to_f64).unwrap_or(0.0);
            if g2 == 0.0 || !g2.is_finite() {
                return Err(Error::NoEstimate);
            }
            Ok(FaberParams {
                c0: 0.0,
                c1: -0.25,
                delta: (1.0 / (2.0 * g2.abs()).sqrt()).min(1.0),
            })
        }
    }
}

/// Order at which to cut the series: just before its smallest coefficient
/// `|M_q|`, `q ≥ 1`, the usual rule for asymptotic series. Skew-adjoint
/// expansions only look at even `q`, whose odd coefficients vanish.
pub fn optimal_truncation(k: &KernelExpansion, skew_adjoint: bool) -> usize {
    let step = if skew_adjoint { 2 } else { 1 };
    let mut best: Option<(usize, f64)> = None;
    for q in (step..=k.order).step_by(step) {
        let m = k.coeffs[q].abs();
        if best.is_none_or(|(_, b)| m < b) {
            best = Some((q, m));
        }
    }
    match best {
        Some((q, _)) => q - step,
        None => k.order,
    }
}

/// Largest `|γ_i|` among odd `i`; zero for a skew-adjoint pair `(L, ρ)`.
pub fn odd_gamma_residual(gamma: &GammaSequence) -> Scalar {
    gamma
        .values
        .iter()
        .step_by(2)
        .map(Scalar::abs)
        .fold(Scalar::zero(), |a, b| if b.to_f64() > a.to_f64() { b } else { a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Density1D;
    use crate::poly::systems;
    use num_bigint::BigInt;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    fn ex(n: i64) -> Scalar {
        Scalar::Exact(q(n, 1))
    }

    fn gammas(v: &[i64]) -> GammaSequence {
        GammaSequence {
            values: v.iter().map(|&x| ex(x)).collect(),
            skew_adjoint: true,
        }
    }

    fn harmonic(n: usize) -> (systems::System, ProductMeasure) {
        let sys = systems::harmonic_chain(n, q(1, 1), q(1, 1)).unwrap();
        let m = ProductMeasure::gibbs_chain(n, 2.0, 1.0, 0.0, 1.0).unwrap();
        (sys, m)
    }

    #[test]
    fn mu_recursion_examples() {
        let mu = mu_sequence(&gammas(&[0, -2, 0, 6, 0, -20]));
        assert_eq!(mu.values, vec![ex(0), ex(-2), ex(0), ex(2), ex(0), ex(-4)]);
        assert_eq!(mu_sequence(&gammas(&[5])).values, vec![ex(5)]);
        assert!(mu_sequence(&gammas(&[0, 0, 0])).values.iter().all(Scalar::is_zero));
    }

    #[test]
    fn harmonic_chain_gamma_both_paths() {
        let (sys, m) = harmonic(12);
        let u = Polynomial::var(VarIndex(12 + 3));
        let obs = ObservableSpec::new(u, &m).unwrap();
        let want = [0, -2, 0, 6, 0, -20, 0, 70];
        let skew = gamma_sequence(&sys.operator, &obs, &m, 8, true, 1 << 20).unwrap();
        let general = gamma_sequence(&sys.operator, &obs, &m, 8, false, 1 << 20).unwrap();
        assert_eq!(skew.values, want.iter().map(|&x| ex(x)).collect::<Vec<_>>());
        assert_eq!(general.values, skew.values);
    }

    #[test]
    fn oscillator_gamma_and_linear_gamma_agree() {
        let l = LiouvilleOperator::from_matrix(&[vec![q(0, 1), q(1, 1)], vec![q(-1, 1), q(0, 1)]]).unwrap();
        let mut m = ProductMeasure::new(2);
        m.set(VarIndex(0), Density1D::gaussian_exact(q(1, 1)).unwrap());
        m.set(VarIndex(1), Density1D::gaussian_exact(q(1, 1)).unwrap());
        let obs = ObservableSpec::new(Polynomial::var(VarIndex(1)), &m).unwrap();
        let g = gamma_sequence(&l, &obs, &m, 4, false, 1000).unwrap();
        assert_eq!(g.values, vec![ex(0), ex(-1), ex(0), ex(1)]);
        let lin = linear_gamma(&l.linear_matrix().unwrap(), VarIndex(1), &m, 4).unwrap();
        assert_eq!(lin.values, g.values);
        let zero = vec![vec![q(0, 1); 2]; 2];
        assert!(linear_gamma(&zero, VarIndex(0), &m, 3).unwrap().values.iter().all(Scalar::is_zero));
    }

    #[test]
    fn faber_rows_examples() {
        let fp = FaberParams {
            c0: 0.0,
            c1: -0.25,
            delta: 1.0,
        };
        let rows = faber_polynomial_coeffs(&fp, 6);
        assert_eq!(rows[1], vec![0.0, 1.0]);
        assert_eq!(rows[2], vec![0.5, 0.0, 1.0]);
        let other = faber_polynomial_coeffs(
            &FaberParams {
                c0: 0.3,
                c1: -2.0,
                delta: 1.0,
            },
            9,
        );
        assert!(rows.iter().chain(&other).all(|r| *r.last().unwrap() == 1.0));
    }

    /// |e^{tz} − Σ_q g_q(t) F_q(z)| on the Faber segment of (c0, c1).
    fn generating_gap(c0: f64, c1: f64, n: usize, t: f64, y: f64) -> f64 {
        let rows = faber_polynomial_coeffs(&FaberParams { c0, c1, delta: 1.0 }, n);
        let g = temporal_modes(&Basis::Faber { c0, c1 }, n, t).unwrap();
        let (zr, zi) = (c0, y);
        let (mut sr, mut si) = (0.0, 0.0);
        for (row, gq) in rows.iter().zip(&g) {
            // Horner in complex arithmetic
            let (mut fr, mut fi) = (0.0, 0.0);
            for c in row.iter().rev() {
                let (nr, ni) = (fr * zr - fi * zi + c, fr * zi + fi * zr);
                fr = nr;
                fi = ni;
            }
            sr += gq * fr;
            si += gq * fi;
        }
        let (er, ei) = ((t * zr).exp() * (t * zi).cos(), (t * zr).exp() * (t * zi).sin());
        ((er - sr).powi(2) + (ei - si).powi(2)).sqrt()
    }

    #[test]
    fn faber_generating_identity_converges() {
        for &(c0, c1) in &[(0.0, -0.25), (0.0, -1.0), (-0.2, -0.5)] {
            let h = 2.0 * f64::sqrt(-c1);
            for &t in &[0.5, 2.0, 5.0] {
                for k in 0..20 {
                    let y = -h + 2.0 * h * k as f64 / 19.0;
                    let gaps: Vec<f64> = [4, 8, 12, 16, 20, 24, 28]
                        .iter()
                        .map(|&n| generating_gap(c0, c1, n, t, y))
                        .collect();
                    for w in gaps.windows(2) {
                        assert!(w[1] <= w[0] + 1e-12, "c1={c1} t={t} y={y}: {gaps:?}");
                    }
                    assert!(*gaps.last().unwrap() < 1e-6, "c1={c1} t={t} y={y}: {gaps:?}");
                }
            }
        }
    }

    #[test]
    fn temporal_mode_values() {
        assert!((temporal_mode(&Basis::Dyson, 3, 2.0).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        let f = Basis::Faber { c0: 0.0, c1: -1.0 };
        for &t in &[0.0, 0.7, 3.1] {
            assert!((temporal_mode(&f, 0, t).unwrap() - crate::special::bessel_j0(2.0 * t)).abs() < 1e-15);
        }
        assert_eq!(temporal_mode(&f, 0, 0.0).unwrap(), 1.0);
        assert_eq!(temporal_mode(&f, 3, 0.0).unwrap(), 0.0);
        assert!(temporal_mode(&Basis::Faber { c0: 0.0, c1: 0.0 }, 1, 1.0).is_err());
    }

    #[test]
    fn dyson_kernel_taylor_coefficients() {
        let mu = mu_sequence(&gammas(&[0, -2, 0, 6, 0, -20, 0, 70]));
        let k = build_kernel(&mu, Basis::Dyson, 1.0, 4, 1.0).unwrap();
        assert_eq!(k.coeffs[0], -2.0);
        assert_eq!(k.coeffs[2], 2.0);
        assert_eq!(k.coeffs[4], -4.0);
        assert_eq!(k.eval(0.0), -2.0);
        let t: f64 = 0.05;
        assert!((k.eval(t) - (-2.0 + t * t - t.powi(4) / 6.0)).abs() < 1e-12);
        // δ-covariance of the Dyson series
        let k2 = build_kernel(&mu, Basis::Dyson, 0.37, 4, 1.0).unwrap();
        for &t in &[0.0, 0.01, 0.05] {
            assert!((k.eval(t) - k2.eval(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn faber_order_zero_and_dyson_agreement() {
        let mu = mu_sequence(&gammas(&[0, -2, 0, 6, 0, -20, 0, 70, 0, -252, 0, 924]));
        let f = Basis::Faber { c0: 0.0, c1: -0.25 };
        let k0 = build_kernel(&mu, f, 0.5, 0, 1.0).unwrap();
        assert_eq!(k0.coeffs, vec![0.25 * -2.0]);
        let kf = build_kernel(&mu, f, 0.5, 10, 1.0).unwrap();
        let kd = build_kernel(&mu, Basis::Dyson, 0.5, 10, 1.0).unwrap();
        for i in 0..=10 {
            let t = 0.005 * i as f64;
            assert!((kf.eval(t) - kd.eval(t)).abs() < 1e-6);
        }
        assert!(matches!(
            build_kernel(&mu, f, 0.5, 11, 1.0),
            Err(Error::InsufficientCoefficients { needed: 13, available: 12 })
        ));
        let zero = MuSequence { values: vec![Scalar::zero(); 6] };
        assert_eq!(build_kernel(&zero, f, 0.5, 4, 1.0).unwrap().eval(1.3), 0.0);
    }

    #[test]
    fn scaling_estimates() {
        let s = estimate_scaling(&gammas(&[0, -2, 0, 6, 0, -20])).unwrap();
        assert!((s.delta - 20f64.powf(-1.0 / 6.0)).abs() < 1e-14);
        assert_eq!((s.c0, s.c1), (0.0, -0.25));
        assert_eq!(estimate_scaling(&gammas(&[0, -1])).unwrap().delta, 1.0);
        let doubled = estimate_scaling(&gammas(&[0, -8, 0, 96, 0, -1280])).unwrap();
        assert!((doubled.delta - s.delta / 2.0).abs() < 1e-14);
        assert!(matches!(estimate_scaling(&gammas(&[0, 0])), Err(Error::NoEstimate)));
        let harm = estimate_scaling_with(&gammas(&[0, -2, 0, 6]), ScalingRule::SecondMoment).unwrap();
        assert_eq!(harm.delta, 0.5);
        assert!(estimate_scaling_with(&gammas(&[1]), ScalingRule::SecondMoment).is_err());
    }

    #[test]
    fn truncation_stops_before_the_smallest_term() {
        let k = |coeffs: Vec<f64>| KernelExpansion {
            basis: Basis::Dyson,
            order: coeffs.len() - 1,
            delta: 1.0,
            coeffs,
            omega_scaled: 0.0,
            gram: 1.0,
        };
        assert_eq!(optimal_truncation(&k(vec![-1.0, 0.0, 0.5, 0.0, 0.01, 0.0, 0.3]), true), 2);
        assert_eq!(optimal_truncation(&k(vec![-1.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0]), true), 2);
        assert_eq!(optimal_truncation(&k(vec![1.0, 0.5, 0.2, 0.1]), false), 2);
        assert_eq!(optimal_truncation(&k(vec![1.0]), false), 0);
    }
}
