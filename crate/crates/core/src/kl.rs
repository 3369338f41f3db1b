//! Karhunen-Loève models of stationary scalar processes: Nyström
//! decomposition, marginal-consistent sampling of the KL amplitudes,
//! fluctuation-term construction and higher-order correlation estimates.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::Density1D;
use crate::stats::{BlockSums, EstimatedSeries};
use crate::volterra::{derivative, solve_forced, Series, TimeGrid};

/// Default relative energy floor `λ_k/λ_1` below which modes are dropped.
pub const DEFAULT_ENERGY_FLOOR: f64 = 1e-8;

/// Negative eigenvalues down to `−CLIP_TOLERANCE·λ_1` are treated as zero.
pub const CLIP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KLBasis {
    pub grid: TimeGrid,
    pub eigenvalues: Vec<f64>,
    pub modes: Vec<Series>,
    pub mean: f64,
    /// `C(0)` of the decomposed covariance.
    pub variance: f64,
}

impl KLBasis {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Keep the leading `k` modes.
    pub fn truncated(&self, k: usize) -> KLBasis {
        let k = k.min(self.rank());
        KLBasis {
            grid: self.grid,
            eigenvalues: self.eigenvalues[..k].to_vec(),
            modes: self.modes[..k].to_vec(),
            mean: self.mean,
            variance: self.variance,
        }
    }

    /// `Σ_k λ_k e_k(t) e_k(s)` at grid nodes `i`, `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.eigenvalues
            .iter()
            .zip(&self.modes)
            .map(|(l, e)| l * e.values[i] * e.values[j])
            .sum()
    }

    /// Path `ū + Σ_{k<rank} √λ_k ξ_k e_k` for one amplitude vector.
    pub fn path(&self, xi: &[f64], rank: usize) -> Vec<f64> {
        let mut u = vec![self.mean; self.grid.len()];
        for k in 0..rank.min(xi.len()).min(self.rank()) {
            let a = self.eigenvalues[k].sqrt() * xi[k];
            for (ui, ei) in u.iter_mut().zip(&self.modes[k].values) {
                *ui += a * ei;
            }
        }
        u
    }
}

/// Nyström decomposition of the stationary covariance `C(|t − s|)` on the
/// grid of `c`, with trapezoid weights. Modes are normalized in `L²([0, T])`
/// and returned in decreasing eigenvalue order, at most `kmax` of them and
/// none below `floor·λ_1`.
pub fn kl_decompose(c: &Series, kmax: usize, floor: f64) -> Result<KLBasis> {
    let n = c.len();
    if !(c.values[0] > 0.0) {
        return Err(Error::InvalidCovariance(format!(
            "C(0) must be positive, got {}",
            c.values[0]
        )));
    }
    if n < 2 {
        return Err(Error::InvalidCovariance("need at least two grid nodes".into()));
    }
    let w = c.grid.trapezoid_weights();
    let sw: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| sw[i] * c.values[i.abs_diff(j)] * sw[j]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]];
    let lowest = eig.eigenvalues[order[n - 1]];
    if !(top > 0.0) || lowest < -CLIP_TOLERANCE * top {
        return Err(Error::InvalidCovariance(format!(
            "covariance matrix is not positive semidefinite (eigenvalues in [{lowest:e}, {top:e}])"
        )));
    }
    let mut eigenvalues = Vec::new();
    let mut modes = Vec::new();
    for &idx in order.iter().take(kmax) {
        let lam = eig.eigenvalues[idx];
        if lam <= 0.0 || lam < floor * top {
            break;
        }
        let v = eig.eigenvectors.column(idx);
        let mut e: Vec<f64> = (0..n).map(|i| v[i] / sw[i]).collect();
        // sign convention: largest-magnitude entry positive
        let pivot = e.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            e.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvalues.push(lam);
        modes.push(Series::new(c.grid, e)?);
    }
    Ok(KLBasis {
        grid: c.grid,
        eigenvalues,
        modes,
        mean: 0.0,
        variance: c.values[0],
    })
}

/// Relative Frobenius error of `Σ λ_k e_k(t_i) e_k(t_j)` against `C(|t_i − t_j|)`.
pub fn mercer_error(basis: &KLBasis, c: &Series) -> f64 {
    let n = basis.grid.len();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let target = c.values[i.abs_diff(j)];
            num += (basis.covariance(i, j) - target).powi(2);
            den += target * target;
        }
    }
    (num / den).sqrt()
}

/// Target one-time distribution of the sampled process.
#[derive(Clone, Debug)]
pub enum MarginalSpec {
    Gaussian { mean: f64, variance: f64 },
    Density { density: Density1D },
}

impl MarginalSpec {
    pub fn mean(&self) -> f64 {
        match self {
            MarginalSpec::Gaussian { mean, .. } => *mean,
            MarginalSpec::Density { density } => density.moment(1),
        }
    }

    pub fn std_dev(&self) -> f64 {
        match self {
            MarginalSpec::Gaussian { variance, .. } => variance.sqrt(),
            MarginalSpec::Density { density } => density.variance().sqrt(),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            MarginalSpec::Gaussian { mean, variance } => {
                use statrs::distribution::{ContinuousCDF, Normal};
                Normal::new(*mean, variance.sqrt())
                    .expect("validated variance")
                    .inverse_cdf(u)
            }
            MarginalSpec::Density { density } => density.quantile(u),
        }
    }

    fn validate(&self) -> Result<()> {
        if let MarginalSpec::Gaussian { mean, variance } = self {
            if !(*variance > 0.0) || !mean.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "Gaussian marginal needs a positive variance, got {variance}"
                )));
            }
        }
        Ok(())
    }
}

/// Sampling controls. `tol_quantile` and `tol_acf` are the stopping
/// thresholds for the marginal and correlation errors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub samples: usize,
    pub iters: usize,
    pub seed: u64,
    pub tol_quantile: f64,
    pub tol_acf: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            samples: 10_000,
            iters: 10,
            seed: 0,
            tol_quantile: 0.01,
            tol_acf: 0.05,
        }
    }
}

/// KL amplitudes of an ensemble; paths are rebuilt from `ξ` on demand.
#[derive(Clone, Debug)]
pub struct SampleEnsemble {
    pub basis: KLBasis,
    /// Row-major `samples × rank`.
    pub xi: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest `|q̂ − q|/σ` over grid times and levels 0.1..0.9.
    pub quantile_error: f64,
    /// Largest `|Ĉ(t) − C(t)|/C(0)` of the lag-from-origin estimator.
    pub acf_error: f64,
}

impl SampleEnsemble {
    pub fn rank(&self) -> usize {
        self.basis.rank()
    }

    pub fn xi_row(&self, s: usize) -> &[f64] {
        let k = self.rank();
        &self.xi[s * k..(s + 1) * k]
    }

    pub fn path(&self, s: usize) -> Vec<f64> {
        self.basis.path(self.xi_row(s), self.rank())
    }

    /// Sample correlation matrix of the amplitudes.
    pub fn xi_correlation(&self) -> DMatrix<f64> {
        let k = self.rank();
        let x = DMatrix::from_row_slice(self.samples, k, &self.xi);
        let cov = x.transpose() * &x / self.samples as f64;
        DMatrix::from_fn(k, k, |i, j| cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt())
    }
}

fn gaussian_xi(samples: usize, k: usize, seed: u64) -> Vec<f64> {
    let mut xi = vec![0.0; samples * k];
    xi.par_chunks_mut(k.max(1)).enumerate().for_each(|(s, row)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        for x in row.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
    });
    xi
}

/// Center and whiten the columns of `xi` to identity sample covariance.
fn whiten(xi: &mut [f64], samples: usize, k: usize) -> Result<()> {
    if k == 0 {
        return Ok(());
    }
    let mut x = DMatrix::from_row_slice(samples, k, xi);
    for j in 0..k {
        let m = x.column(j).mean();
        x.column_mut(j).add_scalar_mut(-m);
    }
    let cov = x.transpose() * &x / samples as f64;
    let eig = SymmetricEigen::new(cov);
    if eig.eigenvalues.iter().any(|&d| !(d > 1e-14)) {
        return Err(Error::InvalidCovariance(
            "amplitude covariance became singular".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|d| 1.0 / d.sqrt()));
    let w = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    let y = x * w;
    for s in 0..samples {
        for j in 0..k {
            xi[s * k + j] = y[(s, j)];
        }
    }
    Ok(())
}

/// Values of every path at node `i`.
fn column(basis: &KLBasis, xi: &[f64], samples: usize, i: usize) -> Vec<f64> {
    let k = basis.rank();
    let a: Vec<f64> = (0..k)
        .map(|j| basis.eigenvalues[j].sqrt() * basis.modes[j].values[i])
        .collect();
    (0..samples)
        .map(|s| basis.mean + xi[s * k..(s + 1) * k].iter().zip(&a).map(|(x, y)| x * y).sum::<f64>())
        .collect()
}

const QUANTILE_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn ensemble_errors(basis: &KLBasis, xi: &[f64], samples: usize, marginal: &MarginalSpec, target_q: &[f64], acf_target: &[f64]) -> (f64, f64) {
    let n = basis.grid.len();
    let sigma = marginal.std_dev();
    let cols: Vec<Vec<f64>> = (0..n).into_par_iter().map(|i| column(basis, xi, samples, i)).collect();
    // the one-time marginal is stationary, so quantiles are taken over the
    // values pooled across every grid time
    let mut pooled: Vec<f64> = cols.concat();
    pooled.par_sort_unstable_by(f64::total_cmp);
    let total = pooled.len();
    let qerr = QUANTILE_LEVELS
        .iter()
        .zip(target_q)
        .map(|(l, q)| {
            let idx = ((l * total as f64) as usize).min(total - 1);
            (pooled[idx] - q).abs() / sigma
        })
        .fold(0.0, f64::max);
    let m = basis.mean;
    let c0 = acf_target[0];
    let mut aerr: f64 = 0.0;
    for (i, col) in cols.iter().enumerate() {
        let est = col.iter().zip(&cols[0]).map(|(a, b)| (a - m) * (b - m)).sum::<f64>() / samples as f64;
        aerr = aerr.max((est - acf_target[i]).abs() / c0);
    }
    (qerr, aerr)
}

/// Draw KL amplitudes whose paths have the target one-time marginal.
///
/// Starting from i.i.d. Gaussian amplitudes, each round (1) rebuilds the
/// paths, (2) replaces the values at every grid time by the target quantiles
/// of their ranks, (3) projects the remapped paths back onto the modes and
/// (4) whitens the amplitudes to zero mean and identity covariance. The loop
/// stops after `iters` rounds or once both error monitors are within
/// tolerance; non-convergence is reported, not fatal.
pub fn sample_ensemble(basis: &KLBasis, marginal: &MarginalSpec, cfg: &SamplerConfig) -> Result<SampleEnsemble> {
    marginal.validate()?;
    let k = basis.rank();
    let n_s = cfg.samples;
    if k == 0 {
        return Err(Error::InvalidParameter("basis has no modes".into()));
    }
    if n_s < 10 * k {
        return Err(Error::InvalidParameter(format!(
            "need at least {} samples for {k} modes, got {n_s}",
            10 * k
        )));
    }
    let mut basis = basis.clone();
    basis.mean = marginal.mean();
    let n = basis.grid.len();
    let w = basis.grid.trapezoid_weights();
    let target_q: Vec<f64> = QUANTILE_LEVELS.iter().map(|&l| marginal.quantile(l)).collect();
    let acf_target: Vec<f64> = (0..n).map(|i| basis.covariance(i, 0)).collect();
    let rank_quantiles: Vec<f64> = (0..n_s)
        .into_par_iter()
        .map(|r| marginal.quantile((r as f64 + 0.5) / n_s as f64))
        .collect();

    let mut xi = gaussian_xi(n_s, k, cfg.seed);
    whiten(&mut xi, n_s, k)?;
    let (mut qerr, mut aerr) = ensemble_errors(&basis, &xi, n_s, marginal, &target_q, &acf_target);
    let mut iterations = 0;
    while iterations < cfg.iters && !(qerr <= cfg.tol_quantile && aerr <= cfg.tol_acf) {
        iterations += 1;
        let remapped: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let col = column(&basis, &xi, n_s, i);
                let mut idx: Vec<usize> = (0..n_s).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                let mut out = vec![0.0; n_s];
                for (r, &s) in idx.iter().enumerate() {
                    out[s] = rank_quantiles[r] - basis.mean;
                }
                out
            })
            .collect();
        let mut next = vec![0.0; n_s * k];
        next.par_chunks_mut(k).enumerate().for_each(|(s, row)| {
            for (j, x) in row.iter_mut().enumerate() {
                let e = &basis.modes[j].values;
                let proj: f64 = (0..n).map(|i| w[i] * e[i] * remapped[i][s]).sum();
                *x = proj / basis.eigenvalues[j].sqrt();
            }
        });
        whiten(&mut next, n_s, k)?;
        xi = next;
        (qerr, aerr) = ensemble_errors(&basis, &xi, n_s, marginal, &target_q, &acf_target);
    }
    Ok(SampleEnsemble {
        basis,
        xi,
        samples: n_s,
        seed: cfg.seed,
        iterations,
        converged: qerr <= cfg.tol_quantile && aerr <= cfg.tol_acf,
        quantile_error: qerr,
        acf_error: aerr,
    })
}

const ACF_BLOCKS: usize = 32;

/// Stationary estimate of `⟨u^m(0) u^m(t)⟩` from paths truncated to `rank`
/// modes, averaged over samples and every time origin whose lag fits in the
/// grid. Standard errors are delete-one-block jackknife over samples.
pub fn higher_order_acf_rank(ens: &SampleEnsemble, m: u32, rank: usize) -> Result<EstimatedSeries> {
    if m == 0 {
        return Err(Error::InvalidParameter("correlation power must be at least 1".into()));
    }
    let n = ens.basis.grid.len();
    let blocks = ACF_BLOCKS.min(ens.samples).max(1);
    let per = ens.samples.div_ceil(blocks);
    let sums: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![0.0; n];
            for s in b * per..((b + 1) * per).min(ens.samples) {
                let u = ens.basis.path(ens.xi_row(s), rank);
                let a: Vec<f64> = u.iter().map(|x| x.powi(m as i32)).collect();
                for lag in 0..n {
                    let mut t = 0.0;
                    for o in 0..n - lag {
                        t += a[o] * a[o + lag];
                    }
                    acc[lag] += t;
                }
            }
            acc
        })
        .collect();
    let mut bs = BlockSums::new(blocks, n);
    for (b, acc) in sums.iter().enumerate() {
        let count = (((b + 1) * per).min(ens.samples)).saturating_sub(b * per) as f64;
        for lag in 0..n {
            bs.add(b, lag, acc[lag], count * (n - lag) as f64);
        }
    }
    let (mean, se) = bs.jackknife();
    Ok(EstimatedSeries {
        series: Series::new(ens.basis.grid, mean)?,
        std_errors: se,
    })
}

pub fn higher_order_acf(ens: &SampleEnsemble, m: u32) -> Result<EstimatedSeries> {
    higher_order_acf_rank(ens, m, ens.rank())
}

/// `v_ij = (λ_i λ_j)^{−1/2} G⁻¹ ∬ ∂_t C(t − s) e_i(s) e_j(t) ds dt`, the
/// projected generator in the KL amplitudes, from the covariance `c`.
pub fn projected_v_matrix(basis: &KLBasis, c: &Series, gram: f64) -> Result<Vec<Vec<f64>>> {
    if !c.grid.same_as(&basis.grid) {
        return Err(Error::GridMismatch("covariance and basis grids differ".into()));
    }
    let n = c.len();
    let k = basis.rank();
    let dc = derivative(&c.values, c.grid.dt);
    let w = c.grid.trapezoid_weights();
    // a_j(s) = Σ_t w_t C′(t − s) e_j(t), with C′ odd
    let a: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let ej = &basis.modes[j].values;
            (0..n)
                .map(|s| {
                    (0..n)
                        .map(|t| {
                            let d = if t >= s { dc[t - s] } else { -dc[s - t] };
                            w[t] * d * ej[t]
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok((0..k)
        .map(|i| {
            let ei = &basis.modes[i].values;
            (0..k)
                .map(|j| {
                    let v: f64 = (0..n).map(|s| w[s] * ei[s] * a[j][s]).sum();
                    v / ((basis.eigenvalues[i] * basis.eigenvalues[j]).sqrt() * gram)
                })
                .collect()
        })
        .collect())
}

/// Fluctuation paths `f = f̄ + Σ_k √λ_k ξ_k h_k`, one per sample, reusing
/// each sample's amplitudes.
pub fn build_fluctuation_process(ens: &SampleEnsemble, h: &[Series], mean: f64) -> Result<Vec<Vec<f64>>> {
    if h.len() != ens.rank() {
        return Err(Error::ModeMismatch {
            expected: ens.rank(),
            found: h.len(),
        });
    }
    if h.iter().any(|s| !s.grid.same_as(&ens.basis.grid)) {
        return Err(Error::GridMismatch("fluctuation modes and basis grids differ".into()));
    }
    let n = ens.basis.grid.len();
    Ok((0..ens.samples)
        .into_par_iter()
        .map(|s| {
            let xi = ens.xi_row(s);
            let mut f = vec![mean; n];
            for (k, hk) in h.iter().enumerate() {
                let a = ens.basis.eigenvalues[k].sqrt() * xi[k];
                for (fi, hv) in f.iter_mut().zip(&hk.values) {
                    *fi += a * hv;
                }
            }
            f
        })
        .collect())
}

/// Integrate `u′ = Ωu + ∫K u + f` for every forcing path and initial value.
pub fn gle_sample_paths(omega: f64, kernel: &[f64], forcing: &[Vec<f64>], u0: &[f64], grid: &TimeGrid) -> Result<Vec<Series>> {
    if forcing.len() != u0.len() {
        return Err(Error::ModeMismatch {
            expected: forcing.len(),
            found: u0.len(),
        });
    }
    forcing
        .par_iter()
        .zip(u0.par_iter())
        .map(|(f, &x0)| solve_forced(omega, kernel, Some(f), x0, grid))
        .collect()
}

/// Ensemble `⟨u^m(0) u^m(t)⟩` of explicit paths, lag from the origin only.
pub fn ensemble_acf(paths: &[Series], m: u32) -> Result<EstimatedSeries> {
    let Some(first) = paths.first() else {
        return Err(Error::InvalidParameter("no paths".into()));
    };
    let n = first.len();
    let blocks = ACF_BLOCKS.min(paths.len());
    let per = paths.len().div_ceil(blocks);
    let mut bs = BlockSums::new(blocks, n);
    for (s, p) in paths.iter().enumerate() {
        let a0 = p.values[0].powi(m as i32);
        for (i, v) in p.values.iter().enumerate() {
            bs.add(s / per, i, a0 * v.powi(m as i32), 1.0);
        }
    }
    let (mean, se) = bs.jackknife();
    Ok(EstimatedSeries {
        series: Series::new(first.grid, mean)?,
        std_errors: se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_kernel_is_rank_one() {
        let grid = TimeGrid::new(2.0, 0.05).unwrap();
        let c = Series::from_fn(grid, |_| 1.0);
        let b = kl_decompose(&c, 10, 1e-8).unwrap();
        assert_eq!(b.rank(), 1);
        assert!((b.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!(b.modes[0].values.iter().all(|v| (v - 0.5f64.sqrt()).abs() < 1e-12));
    }

    #[test]
    fn modes_are_orthonormal_and_trace_is_preserved() {
        let grid = TimeGrid::new(5.0, 0.05).unwrap();
        let c = Series::from_fn(grid, |t| (-t * t / 2.0).exp() * 0.7);
        let b = kl_decompose(&c, 200, 1e-12).unwrap();
        let w = grid.trapezoid_weights();
        for i in 0..b.rank() {
            for j in 0..b.rank() {
                let ip: f64 = (0..grid.len()).map(|t| w[t] * b.modes[i].values[t] * b.modes[j].values[t]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-8);
            }
        }
        let trace: f64 = b.eigenvalues.iter().sum();
        assert!(((trace - 5.0 * 0.7) / 3.5).abs() < 1e-4);
        assert!(mercer_error(&b, &c) < 1e-3);
    }

    #[test]
    fn indefinite_input_is_rejected() {
        let grid = TimeGrid::new(2.0, 0.1).unwrap();
        let c = Series::from_fn(grid, |t| if t == 0.0 { 1.0 } else { -0.9 });
        assert!(matches!(kl_decompose(&c, 5, 1e-8), Err(Error::InvalidCovariance(_))));
        let zero = Series::from_fn(grid, |_| 0.0);
        assert!(kl_decompose(&zero, 5, 1e-8).is_err());
    }

    fn ou_basis(samples: usize) -> (KLBasis, SamplerConfig) {
        let grid = TimeGrid::new(4.0, 0.05).unwrap();
        let c = Series::from_fn(grid, |t| (-t).exp());
        let b = kl_decompose(&c, 40, 1e-8).unwrap();
        let cfg = SamplerConfig {
            samples,
            iters: 10,
            seed: 7,
            ..SamplerConfig::default()
        };
        (b, cfg)
    }

    #[test]
    fn gaussian_marginal_is_a_fixed_point() {
        let (_, cfg) = ou_basis(20_000);
        // smooth covariance, so the truncated basis keeps the variance flat
        let grid = TimeGrid::new(4.0, 0.05).unwrap();
        let b = kl_decompose(&Series::from_fn(grid, |t| (-t * t / 2.0).exp()), 40, 1e-10).unwrap();
        let var = b.covariance(0, 0);
        let ens = sample_ensemble(&b, &MarginalSpec::Gaussian { mean: 0.0, variance: var }, &cfg).unwrap();
        assert!(ens.iterations <= 1, "took {} iterations ({}, {})", ens.iterations, ens.quantile_error, ens.acf_error);
        assert!(ens.acf_error <= 0.02, "acf error {}", ens.acf_error);
        let corr = ens.xi_correlation();
        let bound = 3.0 / (cfg.samples as f64).sqrt();
        for i in 0..ens.rank() {
            for j in 0..i {
                assert!(corr[(i, j)].abs() <= bound);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let (b, cfg) = ou_basis(2_000);
        let m = MarginalSpec::Density {
            density: Density1D::quartic(1.0, 1.0, 1.0).unwrap(),
        };
        let b = b.truncated(8);
        let a = sample_ensemble(&b, &m, &cfg).unwrap();
        let c = sample_ensemble(&b, &m, &cfg).unwrap();
        assert_eq!(a.xi, c.xi);
    }

    #[test]
    fn single_mode_remap_reproduces_quantiles() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let d = Density1D::quartic(1.0, 1.0, 1.0).unwrap();
        let var = d.variance();
        let b = kl_decompose(&Series::from_fn(grid, |_| var), 1, 1e-8).unwrap();
        let m = MarginalSpec::Density { density: d.clone() };
        let cfg = SamplerConfig {
            samples: 100_000,
            iters: 5,
            seed: 3,
            tol_acf: 1.0,
            ..SamplerConfig::default()
        };
        let ens = sample_ensemble(&b, &m, &cfg).unwrap();
        assert!(ens.quantile_error < 0.01, "{}", ens.quantile_error);
    }

    #[test]
    fn zero_modes_give_constant_fluctuation() {
        let (b, cfg) = ou_basis(1_000);
        let ens = sample_ensemble(&b.truncated(3), &MarginalSpec::Gaussian { mean: 0.0, variance: 1.0 }, &cfg).unwrap();
        let h: Vec<Series> = (0..3).map(|_| Series::from_fn(b.grid, |_| 0.0)).collect();
        let f = build_fluctuation_process(&ens, &h, 0.25).unwrap();
        assert!(f.iter().flatten().all(|&v| v == 0.25));
        assert!(matches!(
            build_fluctuation_process(&ens, &h[..2], 0.0),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn unforced_gle_paths_decay() {
        let grid = TimeGrid::new(2.0, 1e-3).unwrap();
        let zero = vec![0.0; grid.len()];
        let paths = gle_sample_paths(-1.0, &zero, &[zero.clone(), zero.clone()], &[1.0, -0.5], &grid).unwrap();
        assert!(paths[0].sup_distance(|t| (-t).exp()) < 1e-6);
        assert!(paths[1].sup_distance(|t| -0.5 * (-t).exp()) < 1e-6);
    }
}
