//! One-dimensional equilibrium densities and product measures over phase
//! variables, with memoized moments and quantile functions.

use std::fmt;
use std::sync::{Arc, OnceLock};

use num_traits::Zero;
use parking_lot::RwLock;
use rustc_hash::FxHashMap;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::poly::{Polynomial, VarIndex};
use crate::scalar::{rational_from_decimal, Coeff, Rational, Scalar};
use crate::special::integrate;

/// Log-density callable for [`DensityKind::Custom`].
pub type LogDensity = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum DensityKind {
    /// `∝ exp(−γ x²/2)`; `exact` holds γ as a rational when known exactly.
    Gaussian { gamma: f64, exact: Option<Rational> },
    /// `∝ exp(−γ(α x²/2 + β x⁴/4))`.
    QuarticGibbs { gamma: f64, alpha: f64, beta: f64 },
    /// Unnormalized log-density integrated on `[−half_width, half_width]`
    /// with `panels` Gauss–Kronrod panels.
    Custom {
        log_density: LogDensity,
        half_width: f64,
        panels: usize,
    },
}

impl fmt::Debug for DensityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DensityKind::Gaussian { gamma, .. } => write!(f, "Gaussian {{ gamma: {gamma} }}"),
            DensityKind::QuarticGibbs { gamma, alpha, beta } => write!(
                f,
                "QuarticGibbs {{ gamma: {gamma}, alpha: {alpha}, beta: {beta} }}"
            ),
            DensityKind::Custom {
                half_width, panels, ..
            } => write!(f, "Custom {{ half_width: {half_width}, panels: {panels} }}"),
        }
    }
}

const CDF_PANELS: usize = 2048;

#[derive(Default)]
struct Cache {
    moments: RwLock<FxHashMap<u32, f64>>,
    log_norm: OnceLock<f64>,
    support: OnceLock<f64>,
    cdf: OnceLock<Vec<f64>>,
}

/// A one-dimensional density. Clones share the moment cache.
#[derive(Clone)]
pub struct Density1D {
    kind: DensityKind,
    cache: Arc<Cache>,
}

impl fmt::Debug for Density1D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

impl Density1D {
    fn from_kind(kind: DensityKind) -> Self {
        Density1D {
            kind,
            cache: Arc::new(Cache::default()),
        }
    }

    pub fn gaussian(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidDensity(format!(
                "Gaussian precision must be positive, got {gamma}"
            )));
        }
        Ok(Self::from_kind(DensityKind::Gaussian { gamma, exact: None }))
    }

    /// Gaussian whose moments are returned as exact rationals.
    pub fn gaussian_exact(gamma: Rational) -> Result<Self> {
        if gamma <= <Rational as Zero>::zero() {
            return Err(Error::InvalidDensity(format!(
                "Gaussian precision must be positive, got {gamma}"
            )));
        }
        Ok(Self::from_kind(DensityKind::Gaussian {
            gamma: gamma.to_f64(),
            exact: Some(gamma),
        }))
    }

    pub fn quartic(gamma: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::InvalidDensity(format!(
                "inverse temperature must be positive, got {gamma}"
            )));
        }
        if !alpha.is_finite() || !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::InvalidDensity(format!(
                "need finite alpha and beta >= 0, got alpha={alpha}, beta={beta}"
            )));
        }
        if beta == 0.0 && alpha <= 0.0 {
            return Err(Error::InvalidDensity(
                "beta = 0 with alpha <= 0 is not integrable".into(),
            ));
        }
        Ok(Self::from_kind(DensityKind::QuarticGibbs { gamma, alpha, beta }))
    }

    pub fn custom(log_density: LogDensity, half_width: f64, panels: usize) -> Result<Self> {
        if !(half_width > 0.0 && half_width.is_finite()) || panels == 0 {
            return Err(Error::InvalidDensity(
                "custom density needs a positive domain and at least one panel".into(),
            ));
        }
        let d = Self::from_kind(DensityKind::Custom {
            log_density,
            half_width,
            panels,
        });
        let z = d.log_norm();
        if !z.is_finite() {
            return Err(Error::InvalidDensity(
                "custom density does not normalize on its domain".into(),
            ));
        }
        Ok(d)
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    /// True when [`Density1D::moment_scalar`] returns exact rationals.
    pub fn has_exact_moments(&self) -> bool {
        matches!(self.kind, DensityKind::Gaussian { exact: Some(_), .. })
    }

    pub fn is_even(&self) -> bool {
        !matches!(self.kind, DensityKind::Custom { .. })
    }

    fn log_unnormalized(&self, x: f64) -> f64 {
        match &self.kind {
            DensityKind::Gaussian { gamma, .. } => -0.5 * gamma * x * x,
            DensityKind::QuarticGibbs { gamma, alpha, beta } => {
                let x2 = x * x;
                -gamma * (0.5 * alpha * x2 + 0.25 * beta * x2 * x2)
            }
            DensityKind::Custom { log_density, .. } => log_density(x),
        }
    }

    /// Half-width beyond which `x^64 ρ(x)` is below 1e-16 of its peak.
    fn support(&self) -> f64 {
        *self.cache.support.get_or_init(|| match &self.kind {
            DensityKind::Custom { half_width, .. } => *half_width,
            _ => {
                let score = |x: f64| 64.0 * x.abs().max(1e-300).ln() + self.log_unnormalized(x);
                let mut peak = f64::NEG_INFINITY;
                let mut a = 1e-3;
                while a < 1e6 {
                    peak = peak.max(score(a));
                    if score(a) < peak - 37.0 && score(a) < self.log_unnormalized(0.0) - 37.0 {
                        break;
                    }
                    a *= 1.25;
                }
                a
            }
        })
    }

    fn raw_integral(&self, f: impl Fn(f64) -> f64) -> f64 {
        let shift = self.log_unnormalized(0.0);
        let g = |x: f64| f(x) * (self.log_unnormalized(x) - shift).exp();
        match &self.kind {
            DensityKind::Custom {
                half_width, panels, ..
            } => integrate(&g, -half_width, *half_width, *panels, 1e-13, 0.0),
            _ => {
                let a = self.support();
                2.0 * integrate(&|x| 0.5 * (g(x) + g(-x)), 0.0, a, 16, 1e-13, 0.0)
            }
        }
    }

    fn log_norm(&self) -> f64 {
        *self.cache.log_norm.get_or_init(|| {
            let shift = self.log_unnormalized(0.0);
            self.raw_integral(|_| 1.0).ln() + shift
        })
    }

    /// Normalized density value.
    pub fn pdf(&self, x: f64) -> f64 {
        (self.log_unnormalized(x) - self.log_norm()).exp()
    }

    /// `E[x^m]`; exact zero for odd `m` on even densities.
    pub fn moment(&self, m: u32) -> f64 {
        if m == 0 {
            return 1.0;
        }
        if m % 2 == 1 && self.is_even() {
            return 0.0;
        }
        if let DensityKind::Gaussian { gamma, .. } = &self.kind {
            return double_factorial(m - 1) / gamma.powi((m / 2) as i32);
        }
        if let Some(v) = self.cache.moments.read().get(&m) {
            return *v;
        }
        let z = self.raw_integral(|_| 1.0);
        let v = self.raw_integral(|x| x.powi(m as i32)) / z;
        *self.cache.moments.write().entry(m).or_insert(v)
    }

    /// Moment as an exact rational when the density allows it.
    pub fn moment_scalar(&self, m: u32) -> Scalar {
        if m == 0 {
            return Scalar::Exact(<Rational as Coeff>::one());
        }
        if m % 2 == 1 && self.is_even() {
            return Scalar::zero();
        }
        if let DensityKind::Gaussian {
            exact: Some(g), ..
        } = &self.kind
        {
            let mut num = <Rational as Coeff>::one();
            let mut k = 1i64;
            while k < m as i64 {
                num *= Rational::from_i64(k);
                k += 2;
            }
            return Scalar::Exact(num / num_traits::pow(g.clone(), (m / 2) as usize));
        }
        Scalar::Real(self.moment(m))
    }

    pub fn variance(&self) -> f64 {
        let m1 = self.moment(1);
        self.moment(2) - m1 * m1
    }

    fn cdf_table(&self) -> &Vec<f64> {
        self.cache.cdf.get_or_init(|| {
            let a = self.support();
            let h = 2.0 * a / CDF_PANELS as f64;
            let mut acc = vec![0.0; CDF_PANELS + 1];
            for i in 0..CDF_PANELS {
                let lo = -a + h * i as f64;
                acc[i + 1] = acc[i] + integrate(&|x| self.pdf(x), lo, lo + h, 1, 1e-14, 0.0);
            }
            let total = acc[CDF_PANELS];
            acc.iter_mut().for_each(|v| *v /= total);
            acc
        })
    }

    /// Inverse CDF, `u` in (0, 1).
    pub fn quantile(&self, u: f64) -> f64 {
        if let DensityKind::Gaussian { gamma, .. } = &self.kind {
            let n = Normal::new(0.0, 1.0 / gamma.sqrt()).expect("valid normal");
            return n.inverse_cdf(u);
        }
        let table = self.cdf_table();
        let a = self.support();
        let h = 2.0 * a / CDF_PANELS as f64;
        let i = table.partition_point(|&c| c < u).clamp(1, CDF_PANELS) - 1;
        let lo = -a + h * i as f64;
        // bisection-safeguarded Newton on F(x) − u inside the bracketing panel
        let (mut left, mut right) = (lo, lo + h);
        let mut x = lo + h * ((u - table[i]) / (table[i + 1] - table[i]).max(1e-300)).clamp(0.0, 1.0);
        for _ in 0..60 {
            let f = table[i] + integrate(&|s| self.pdf(s), lo, x, 1, 1e-14, 0.0) - u;
            if f > 0.0 {
                right = x;
            } else {
                left = x;
            }
            let d = self.pdf(x);
            let mut next = x - f / d;
            if !(next > left && next < right) {
                next = 0.5 * (left + right);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }
}

fn double_factorial(k: u32) -> f64 {
    let mut v = 1.0;
    let mut i = k as i64;
    while i > 1 {
        v *= i as f64;
        i -= 2;
    }
    v
}

/// Independent per-variable densities.
#[derive(Clone, Debug)]
pub struct ProductMeasure {
    densities: Vec<Option<Density1D>>,
}

impl ProductMeasure {
    pub fn new(dimension: usize) -> Self {
        ProductMeasure {
            densities: vec![None; dimension],
        }
    }

    pub fn set(&mut self, v: VarIndex, d: Density1D) {
        if v.index() >= self.densities.len() {
            self.densities.resize(v.index() + 1, None);
        }
        self.densities[v.index()] = Some(d);
    }

    pub fn density(&self, v: VarIndex) -> Result<&Density1D> {
        self.densities
            .get(v.index())
            .and_then(|d| d.as_ref())
            .ok_or(Error::MissingDensity(v.index()))
    }

    pub fn dimension(&self) -> usize {
        self.densities.len()
    }

    /// Gibbs measure `exp(−γ H)` of an `n`-site chain in `(r, p)` coordinates:
    /// `r ~ QuarticGibbs(γ, α, β)`, `p ~ Gaussian(γ/m)`. Parameters are read
    /// as decimals so Gaussian factors stay exact; with `β = 0` the `r`
    /// factors are exact Gaussians too.
    pub fn gibbs_chain(n: usize, gamma: f64, alpha: f64, beta: f64, mass: f64) -> Result<Self> {
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter("mass must be positive".into()));
        }
        let g = rational_from_decimal(gamma)?;
        let p = Density1D::gaussian_exact(&g / rational_from_decimal(mass)?)?;
        let r = if beta == 0.0 {
            if !(alpha > 0.0) {
                return Err(Error::InvalidDensity(
                    "beta = 0 with alpha <= 0 is not integrable".into(),
                ));
            }
            Density1D::gaussian_exact(&g * rational_from_decimal(alpha)?)?
        } else {
            Density1D::quartic(gamma, alpha, beta)?
        };
        let mut m = ProductMeasure::new(2 * n);
        for j in 0..n {
            m.set(VarIndex(j as u32), r.clone());
            m.set(VarIndex((n + j) as u32), p.clone());
        }
        Ok(m)
    }

    /// Per-variable moment table `E[x_v^k]`, `k ≤ max_exp`.
    pub fn moment_table(&self, vars: impl IntoIterator<Item = VarIndex>, max_exp: u32) -> Result<MomentTable> {
        let mut rows: FxHashMap<VarIndex, Vec<f64>> = FxHashMap::default();
        for v in vars {
            if rows.contains_key(&v) {
                continue;
            }
            let d = self.density(v)?;
            rows.insert(v, (0..=max_exp).map(|k| d.moment(k)).collect());
        }
        Ok(MomentTable { rows })
    }

    /// `E[p]` by independence. Exact when every coefficient and moment is.
    pub fn expectation<C: Coeff>(&self, p: &Polynomial<C>) -> Result<Scalar> {
        let mut total = Scalar::zero();
        for t in p.terms() {
            let mut term = t.coeff.to_scalar();
            for (v, e) in t.exps.iter() {
                let m = self.density(v)?.moment_scalar(e);
                if m.is_zero() {
                    term = Scalar::zero();
                    break;
                }
                term = &term * &m;
            }
            if !term.is_zero() {
                total = &total + &term;
            }
        }
        Ok(total)
    }
}

/// Dense moment lookup for hot `f64` loops.
#[derive(Clone, Debug)]
pub struct MomentTable {
    rows: FxHashMap<VarIndex, Vec<f64>>,
}

impl MomentTable {
    pub fn get(&self, v: VarIndex, k: u32) -> f64 {
        let row = &self.rows[&v];
        row.get(k as usize).copied().unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Exponents;
    use num_bigint::BigInt;

    fn q(n: i64, d: i64) -> Rational {
        Rational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn gaussian_moments() {
        let d = Density1D::gaussian(2.0).unwrap();
        assert_eq!(d.moment(2), 0.5);
        assert_eq!(d.moment(4), 0.75);
        assert_eq!(d.moment(3), 0.0);
        let e = Density1D::gaussian_exact(q(2, 1)).unwrap();
        assert_eq!(e.moment_scalar(4), Scalar::Exact(q(3, 4)));
        assert_eq!(e.moment_scalar(6), Scalar::Exact(q(15, 8)));
    }

    #[test]
    fn quartic_normalization_and_parity() {
        for d in [
            Density1D::quartic(40.0, 1.0, 1.0).unwrap(),
            Density1D::quartic(1.0, 1.0, 0.01).unwrap(),
            Density1D::quartic(1.0, -1.0, 1.0).unwrap(),
        ] {
            let a = d.support();
            let mass = integrate(&|x| d.pdf(x), -a, a, 16, 1e-13, 0.0);
            assert!((mass - 1.0).abs() < 1e-10);
            assert_eq!(d.moment(3), 0.0);
            assert_eq!(d.moment_scalar(5), Scalar::zero());
        }
    }

    #[test]
    fn quartic_matches_high_precision_reference() {
        // 30-digit quadrature of exp(−40(r²/2 + r⁴/4)), computed offline
        let want = [
            0.023_416_264_175_104_009,
            0.001_583_735_824_895_991,
            0.000_172_483_988_236_809_63,
            2.548_298_987_518_925_2e-5,
        ];
        let d = Density1D::quartic(40.0, 1.0, 1.0).unwrap();
        for (k, w) in want.iter().enumerate() {
            let got = d.moment(2 * (k as u32 + 1));
            assert!(((got - w) / w).abs() < 1e-11, "m={} got {got} want {w}", k + 1);
        }
    }

    #[test]
    fn quartic_with_zero_beta_is_gaussian() {
        let d = Density1D::quartic(3.0, 2.0, 0.0).unwrap();
        let g = Density1D::gaussian(6.0).unwrap();
        for m in (0..=24).step_by(2) {
            let (a, b) = (d.moment(m), g.moment(m));
            assert!(((a - b) / b).abs() < 1e-8, "m={m}: {a} vs {b}");
        }
    }

    #[test]
    fn invalid_configurations() {
        assert!(matches!(
            Density1D::quartic(1.0, 0.0, 0.0),
            Err(Error::InvalidDensity(_))
        ));
        assert!(Density1D::quartic(-1.0, 1.0, 1.0).is_err());
        assert!(Density1D::gaussian(0.0).is_err());
    }

    #[test]
    fn custom_density_moments() {
        // unit-variance Gaussian shifted by 1
        let d = Density1D::custom(Arc::new(|x: f64| -0.5 * (x - 1.0).powi(2)), 15.0, 8).unwrap();
        assert!((d.moment(0) - 1.0).abs() < 1e-12);
        assert!((d.moment(1) - 1.0).abs() < 1e-10);
        assert!((d.moment(2) - 2.0).abs() < 1e-10);
        assert!((d.moment(3) - 4.0).abs() < 1e-10);
    }

    #[test]
    fn quantiles_invert_the_cdf() {
        let d = Density1D::quartic(40.0, 1.0, 1.0).unwrap();
        for &u in &[1e-4, 0.1, 0.37, 0.5, 0.9, 0.9999] {
            let x = d.quantile(u);
            let cdf = integrate(&|s| d.pdf(s), -d.support(), x, 8, 1e-13, 0.0);
            assert!((cdf - u).abs() < 1e-9, "u={u}, F(x)={cdf}");
        }
        assert!(d.quantile(0.5).abs() < 1e-12);
        let g = Density1D::gaussian(4.0).unwrap();
        assert!((g.quantile(0.975) - 1.959_963_984_540_054 / 2.0).abs() < 1e-9);
    }

    #[test]
    fn expectation_factorizes() {
        let mut m = ProductMeasure::new(3);
        m.set(VarIndex(0), Density1D::gaussian_exact(q(2, 1)).unwrap());
        m.set(VarIndex(1), Density1D::gaussian_exact(q(2, 1)).unwrap());
        let p = Polynomial::from_terms([(
            q(3, 1),
            Exponents::from_pairs([(VarIndex(0), 2), (VarIndex(1), 2)]),
        )]);
        assert_eq!(m.expectation(&p).unwrap(), Scalar::Exact(q(3, 4)));
        let missing = Polynomial::<Rational>::var(VarIndex(2));
        assert!(matches!(m.expectation(&missing), Err(Error::MissingDensity(2))));
    }
}
