//! Uniform-grid solvers for the scalar GLE correlation equation
//! `C′ = ΩC + ∫₀ᵗ K(t−s)C(s)ds`, its inverse (kernel extraction), the forced
//! path equation, and the fluctuation-mode equations.
//!
//! All convolutions use the trapezoid rule. The unknown value at the current
//! node enters linearly through the endpoint weight, so each step of the
//! implicit trapezoid scheme is solved exactly instead of by iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub dt: f64,
    /// Number of steps; the grid has `steps + 1` nodes.
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "grid needs dt > 0 and T >= 0, got dt={dt}, T={horizon}"
            )));
        }
        let steps = (horizon / dt).round();
        if (steps * dt - horizon).abs() > 1e-9 * horizon.max(dt) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} is not a multiple of dt {dt}"
            )));
        }
        Ok(TimeGrid {
            horizon,
            dt,
            steps: steps as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Trapezoid weights for `∫₀ᵀ`.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.len()];
        if self.steps == 0 {
            w[0] = 0.0;
            return w;
        }
        w[0] *= 0.5;
        w[self.steps] *= 0.5;
        w
    }

    /// Same grid, truncated to `horizon`.
    pub fn truncated(&self, horizon: f64) -> Result<TimeGrid> {
        let g = TimeGrid::new(horizon, self.dt)?;
        if g.steps > self.steps {
            return Err(Error::GridMismatch(format!(
                "cannot extend a grid of horizon {} to {horizon}",
                self.horizon
            )));
        }
        Ok(g)
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a {}-node grid",
                values.len(),
                grid.len()
            )));
        }
        Ok(Series { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.times().into_iter().map(f).collect();
        Series { grid, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest `|self − other|` over the nodes of `self`.
    pub fn sup_distance(&self, other: impl Fn(f64) -> f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (v - other(self.grid.time(i))).abs())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation; clamps outside `[0, T]`.
    pub fn interpolate(&self, t: f64) -> f64 {
        let x = (t / self.grid.dt).max(0.0);
        let i = (x.floor() as usize).min(self.grid.steps);
        if i >= self.grid.steps {
            return self.values[self.grid.steps];
        }
        let f = x - i as f64;
        self.values[i] * (1.0 - f) + self.values[i + 1] * f
    }
}

fn check_finite(values: &[f64], what: &'static str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(node) => Err(Error::NonFinite { what, node }),
        None => Ok(()),
    }
}

fn check_len(values: &[f64], grid: &TimeGrid, what: &str) -> Result<()> {
    if values.len() < grid.len() {
        return Err(Error::GridMismatch(format!(
            "{what} has {} nodes, the grid needs {}",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `Σ_{j=1}^{i−1} a_{i−j} b_j`.
#[inline]
fn interior_convolution(a: &[f64], b: &[f64], i: usize) -> f64 {
    let mut s = 0.0;
    for j in 1..i {
        s += a[i - j] * b[j];
    }
    s
}

/// Solve `u′ = Ωu + ∫₀ᵗ K(t−s)u(s)ds + f(t)`, `u(0) = u0`, with `K` and
/// `f` tabulated on `grid`.
pub fn solve_forced(omega: f64, kernel: &[f64], forcing: Option<&[f64]>, u0: f64, grid: &TimeGrid) -> Result<Series> {
    check_len(kernel, grid, "kernel")?;
    check_finite(&kernel[..grid.len()], "kernel value")?;
    if let Some(f) = forcing {
        check_len(f, grid, "forcing")?;
        check_finite(&f[..grid.len()], "forcing value")?;
    }
    let n = grid.len();
    let dt = grid.dt;
    let k0 = kernel[0];
    let denom = 1.0 - 0.5 * dt * omega - 0.25 * dt * dt * k0;
    if denom.abs() < 1e-12 {
        return Err(Error::IllConditioned { node: 1, pivot: denom });
    }
    let f_at = |i: usize| forcing.map_or(0.0, |f| f[i]);
    let mut u = vec![0.0; n];
    u[0] = u0;
    let mut rate_prev = omega * u0 + f_at(0);
    for i in 1..n {
        let known = dt * (0.5 * kernel[i] * u[0] + interior_convolution(kernel, &u, i));
        u[i] = (u[i - 1] + 0.5 * dt * rate_prev + 0.5 * dt * (known + f_at(i))) / denom;
        rate_prev = omega * u[i] + known + 0.5 * dt * k0 * u[i] + f_at(i);
        if !u[i].is_finite() {
            return Err(Error::NonFinite {
                what: "solution",
                node: i,
            });
        }
    }
    Series::new(*grid, u)
}

/// Normalized correlation `C(0) = 1` of `C′ = ΩC + ∫₀ᵗ K(t−s)C(s)ds`.
pub fn solve_correlation(omega: f64, kernel: &[f64], grid: &TimeGrid) -> Result<Series> {
    solve_forced(omega, kernel, None, 1.0, grid)
}

/// Fourth-order finite-difference first derivative on a uniform grid.
pub fn derivative(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let f = values;
    let mut d = vec![0.0; n];
    if n < 5 {
        for i in 0..n {
            let (a, b) = (i.saturating_sub(1), (i + 1).min(n - 1));
            if b > a {
                d[i] = (f[b] - f[a]) / ((b - a) as f64 * dt);
            }
        }
        return d;
    }
    let h12 = 12.0 * dt;
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / h12;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / h12;
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / h12;
    }
    let m = n - 1;
    d[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4]) / h12;
    d[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) / h12;
    d
}

/// Fourth-order finite-difference second derivative on a uniform grid.
pub fn second_derivative(values: &[f64], dt: f64) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 6 {
        return Err(Error::GridMismatch(
            "a second derivative needs at least 6 nodes".into(),
        ));
    }
    let f = values;
    let h = 12.0 * dt * dt;
    let mut d = vec![0.0; n];
    d[0] = (45.0 * f[0] - 154.0 * f[1] + 214.0 * f[2] - 156.0 * f[3] + 61.0 * f[4] - 10.0 * f[5]) / h;
    d[1] = (10.0 * f[0] - 15.0 * f[1] - 4.0 * f[2] + 14.0 * f[3] - 6.0 * f[4] + f[5]) / h;
    for i in 2..n - 2 {
        d[i] = (-f[i - 2] + 16.0 * f[i - 1] - 30.0 * f[i] + 16.0 * f[i + 1] - f[i + 2]) / h;
    }
    let m = n - 1;
    d[m] = (45.0 * f[m] - 154.0 * f[m - 1] + 214.0 * f[m - 2] - 156.0 * f[m - 3] + 61.0 * f[m - 4] - 10.0 * f[m - 5]) / h;
    d[m - 1] = (10.0 * f[m] - 15.0 * f[m - 1] - 4.0 * f[m - 2] + 14.0 * f[m - 3] - 6.0 * f[m - 4] + f[m - 5]) / h;
    Ok(d)
}

/// Recover `K` from a tabulated correlation.
///
/// Differentiating the correlation equation gives the second-kind equation
/// `K(t)C(0) + ∫₀ᵗ K(t−s)C′(s)ds = C″(t) − ΩC′(t)`, which is marched with the
/// trapezoid rule. `C′` and `C″` come from fourth-order differences.
pub fn extract_kernel(c: &Series, omega: f64) -> Result<Series> {
    check_finite(&c.values, "correlation value")?;
    let dt = c.grid.dt;
    let d1 = derivative(&c.values, dt);
    let d2 = second_derivative(&c.values, dt)?;
    let n = c.len();
    let c0 = c.values[0];
    let pivot = c0 + 0.5 * dt * d1[0];
    if pivot.abs() < 1e-12 * dt.max(1e-300) || pivot.abs() < 1e-12 {
        return Err(Error::IllConditioned { node: 1, pivot });
    }
    let mut k = vec![0.0; n];
    k[0] = (d2[0] - omega * d1[0]) / c0;
    for i in 1..n {
        let tail = dt * (interior_convolution(&k, &d1, i) + 0.5 * k[0] * d1[i]);
        k[i] = (d2[i] - omega * d1[i] - tail) / pivot;
    }
    check_finite(&k, "kernel value")?;
    Series::new(c.grid, k)
}

/// How the memory term of the fluctuation-mode equations is formed.
#[derive(Clone, Copy, Debug)]
pub enum FluctuationMode<'a> {
    /// Known kernel tabulated on the grid; every mode is explicit.
    Kernel(&'a [f64]),
    /// `K = Σ_ij √(λ_i λ_j) v_ij e_i(0) h_j`, coupling all modes.
    Projected { v: &'a [Vec<f64>] },
    /// Hamiltonian shortcut: `K = −Σ_j λ_j h_j(0) h_j / G`.
    Hamiltonian { gram: f64 },
}

/// Temporal modes `h_k` of the fluctuation term `f = f̄ + Σ √λ_k ξ_k h_k`,
/// from `h_k = e_k′ − Ω e_k − ∫₀ᵗ K(t−s) e_k(s) ds`.
///
/// In the coupled modes the kernel is itself `Σ_j w_j h_j` for fixed weights
/// `w`, so each node needs the solution of `(I + dt/2 e(0) wᵀ) h = rhs`,
/// whose matrix is the same at every node and is factored once.
pub fn solve_fluctuation_modes(
    e: &[Series],
    lambda: &[f64],
    omega: f64,
    mode: FluctuationMode<'_>,
) -> Result<Vec<Series>> {
    let kmodes = e.len();
    if lambda.len() != kmodes {
        return Err(Error::ModeMismatch {
            expected: kmodes,
            found: lambda.len(),
        });
    }
    if kmodes == 0 {
        return Ok(Vec::new());
    }
    let grid = e[0].grid;
    if e.iter().any(|s| !s.grid.same_as(&grid)) {
        return Err(Error::GridMismatch("modes live on different grids".into()));
    }
    let n = grid.len();
    let dt = grid.dt;
    let de: Vec<Vec<f64>> = e.iter().map(|s| derivative(&s.values, dt)).collect();
    let base: Vec<Vec<f64>> = (0..kmodes)
        .map(|k| (0..n).map(|i| de[k][i] - omega * e[k].values[i]).collect())
        .collect();

    if let FluctuationMode::Kernel(kern) = mode {
        check_len(kern, &grid, "kernel")?;
        check_finite(&kern[..n], "kernel value")?;
        return (0..kmodes)
            .map(|k| {
                let ek = &e[k].values;
                let h: Vec<f64> = (0..n)
                    .map(|i| {
                        if i == 0 {
                            return base[k][0];
                        }
                        let conv = dt * (0.5 * kern[i] * ek[0] + interior_convolution(kern, ek, i) + 0.5 * kern[0] * ek[i]);
                        base[k][i] - conv
                    })
                    .collect();
                Series::new(grid, h)
            })
            .collect();
    }

    let h0: Vec<f64> = (0..kmodes).map(|k| base[k][0]).collect();
    let w: Vec<f64> = match mode {
        FluctuationMode::Projected { v } => {
            if v.len() != kmodes || v.iter().any(|r| r.len() != kmodes) {
                return Err(Error::ModeMismatch {
                    expected: kmodes,
                    found: v.len(),
                });
            }
            (0..kmodes)
                .map(|j| {
                    (0..kmodes)
                        .map(|i| (lambda[i] * lambda[j]).sqrt() * v[i][j] * e[i].values[0])
                        .sum()
                })
                .collect()
        }
        FluctuationMode::Hamiltonian { gram } => {
            if !(gram > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "Gram value must be positive, got {gram}"
                )));
            }
            (0..kmodes).map(|j| -lambda[j] * h0[j] / gram).collect()
        }
        FluctuationMode::Kernel(_) => unreachable!("handled above"),
    };
    check_finite(&w, "mode weight")?;

    let e0 = DVector::from_iterator(kmodes, e.iter().map(|s| s.values[0]));
    let wv = DVector::from_vec(w.clone());
    let a = DMatrix::identity(kmodes, kmodes) + (0.5 * dt) * &e0 * wv.transpose();
    let lu = a.lu();
    let det = lu.determinant();
    if !det.is_finite() || det.abs() < 1e-12 {
        return Err(Error::IllConditioned { node: 1, pivot: det });
    }

    // g(t) = Σ_j w_j h_j(t) is all the convolution needs
    let mut h: Vec<Vec<f64>> = vec![vec![0.0; n]; kmodes];
    let mut g = vec![0.0; n];
    for k in 0..kmodes {
        h[k][0] = h0[k];
    }
    g[0] = w.iter().zip(&h0).map(|(a, b)| a * b).sum();
    for i in 1..n {
        let rhs = DVector::from_iterator(
            kmodes,
            (0..kmodes).map(|k| {
                let ek = &e[k].values;
                let known = dt * (interior_convolution(&g, ek, i) + 0.5 * g[0] * ek[i]);
                base[k][i] - known
            }),
        );
        let sol = lu.solve(&rhs).ok_or(Error::IllConditioned { node: i, pivot: det })?;
        let mut gi = 0.0;
        for k in 0..kmodes {
            h[k][i] = sol[k];
            gi += w[k] * sol[k];
        }
        if !gi.is_finite() {
            return Err(Error::NonFinite {
                what: "fluctuation mode",
                node: i,
            });
        }
        g[i] = gi;
    }
    h.into_iter().map(|v| Series::new(grid, v)).collect()
}

/// `−Σ_j λ_j h_j(0) h_j(t) / G`, the kernel implied by the fluctuation modes
/// through the second fluctuation-dissipation theorem.
pub fn fdt_kernel(h: &[Series], lambda: &[f64], gram: f64) -> Result<Series> {
    let Some(first) = h.first() else {
        return Err(Error::ModeMismatch {
            expected: lambda.len(),
            found: 0,
        });
    };
    if h.len() != lambda.len() {
        return Err(Error::ModeMismatch {
            expected: lambda.len(),
            found: h.len(),
        });
    }
    let mut k = vec![0.0; first.len()];
    for (hj, lj) in h.iter().zip(lambda) {
        let c = -lj * hj.values[0] / gram;
        for (kv, hv) in k.iter_mut().zip(&hj.values) {
            *kv += c * hv;
        }
    }
    Series::new(first.grid, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{bessel_j0, bessel_j1};

    fn bessel_kernel(t: f64) -> f64 {
        if t == 0.0 {
            -2.0
        } else {
            -2.0 * bessel_j1(2.0 * t) / t
        }
    }

    #[test]
    fn grid_validation() {
        assert_eq!(TimeGrid::new(10.0, 1e-3).unwrap().len(), 10_001);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
        let g = TimeGrid::new(1.0, 0.25).unwrap();
        assert_eq!(g.trapezoid_weights(), vec![0.125, 0.25, 0.25, 0.25, 0.125]);
    }

    #[test]
    fn memoryless_cases() {
        let grid = TimeGrid::new(5.0, 1e-3).unwrap();
        let zero = vec![0.0; grid.len()];
        let c = solve_correlation(-1.0, &zero, &grid).unwrap();
        assert_eq!(c.values[0], 1.0);
        assert!(c.sup_distance(|t| (-t).exp()) < 1e-6);
        let flat = solve_correlation(0.0, &zero, &grid).unwrap();
        assert!(flat.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bessel_kernel_gives_bessel_correlation() {
        let mut errs = Vec::new();
        for dt in [2e-3, 1e-3] {
            let grid = TimeGrid::new(10.0, dt).unwrap();
            let k: Vec<f64> = grid.times().iter().map(|&t| bessel_kernel(t)).collect();
            let c = solve_correlation(0.0, &k, &grid).unwrap();
            errs.push(c.sup_distance(|t| bessel_j0(2.0 * t)));
        }
        assert!(errs[1] < 1e-4, "{errs:?}");
        let ratio = errs[0] / errs[1];
        assert!((3.5..4.5).contains(&ratio), "order ratio {ratio}");
    }

    #[test]
    fn non_finite_kernel_is_rejected() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let mut k = vec![0.0; grid.len()];
        k[4] = f64::NAN;
        assert!(matches!(
            solve_correlation(0.0, &k, &grid),
            Err(Error::NonFinite { node: 4, .. })
        ));
    }

    #[test]
    fn extraction_examples() {
        let grid = TimeGrid::new(10.0, 1e-3).unwrap();
        let c = Series::from_fn(grid, |t| (-t).exp());
        let k = extract_kernel(&c, -1.0).unwrap();
        assert!(k.values.iter().all(|v| v.abs() < 1e-6));
        let c = Series::from_fn(grid, |t| bessel_j0(2.0 * t));
        let k = extract_kernel(&c, 0.0).unwrap();
        assert!(k.sup_distance(bessel_kernel) < 1e-3);
        assert!((k.values[0] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn extraction_inverts_the_solver() {
        let grid = TimeGrid::new(4.0, 1e-3).unwrap();
        for (a, b, w) in [(0.7, -1.3, 2.0), (1.5, 0.4, 0.5), (-0.2, -2.0, 3.1)] {
            let kern = Series::from_fn(grid, |t: f64| -a * a * (-b * b * t * 0.3).exp() * (w * t).cos());
            let c = solve_correlation(-0.1, &kern.values, &grid).unwrap();
            let back = extract_kernel(&c, -0.1).unwrap();
            let err = back
                .values
                .iter()
                .zip(&kern.values)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-4, "round trip error {err}");
        }
    }

    #[test]
    fn derivative_stencils_are_fourth_order() {
        let grid = TimeGrid::new(2.0, 0.01).unwrap();
        let f = Series::from_fn(grid, |t: f64| (1.3 * t).sin());
        let d = derivative(&f.values, grid.dt);
        let d2 = second_derivative(&f.values, grid.dt).unwrap();
        for (i, t) in grid.times().into_iter().enumerate() {
            assert!((d[i] - 1.3 * (1.3 * t).cos()).abs() < 1e-7);
            assert!((d2[i] + 1.69 * (1.3 * t).sin()).abs() < 1e-5);
        }
    }

    #[test]
    fn memoryless_modes_are_derivatives() {
        let grid = TimeGrid::new(3.0, 1e-2).unwrap();
        let e = vec![
            Series::from_fn(grid, |t: f64| t.cos()),
            Series::from_fn(grid, |t: f64| (2.0 * t).sin()),
        ];
        let zero = vec![0.0; grid.len()];
        let h = solve_fluctuation_modes(&e, &[1.0, 0.5], 0.0, FluctuationMode::Kernel(&zero)).unwrap();
        assert!(h[0].sup_distance(|t| -t.sin()) < 1e-6);
        assert!(h[1].sup_distance(|t| 2.0 * (2.0 * t).cos()) < 1e-6);
        let v = vec![vec![0.0; 2]; 2];
        let hp = solve_fluctuation_modes(&e, &[1.0, 0.5], 0.0, FluctuationMode::Projected { v: &v }).unwrap();
        assert_eq!(hp, h);
    }

    /// Dense trapezoid discretization of the single-mode equation
    /// `h(t) = e′(t) − w ∫₀ᵗ h(t−s) e(s) ds`, solved as one linear system.
    fn dense_single_mode(e: &[f64], de: &[f64], w: f64, dt: f64) -> Vec<f64> {
        let n = e.len();
        let mut a = DMatrix::<f64>::identity(n, n);
        for i in 1..n {
            for j in 0..=i {
                // coefficient of h_j in ∫ h(t_i − s) e(s) ds: s = t_{i−j}
                let wgt = if j == 0 || j == i { 0.5 } else { 1.0 };
                a[(i, j)] += w * dt * wgt * e[i - j];
            }
        }
        let b = DVector::from_vec(de.to_vec());
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn single_mode_matches_dense_solve() {
        let grid = TimeGrid::new(4.0, 0.01).unwrap();
        let omega = 1.7;
        let norm = (2.0 / grid.horizon).sqrt();
        let e = vec![Series::from_fn(grid, |t: f64| norm * (omega * t + 0.4).cos())];
        let lambda = [0.8];
        let gram = 0.5;
        let h = solve_fluctuation_modes(&e, &lambda, 0.0, FluctuationMode::Hamiltonian { gram }).unwrap();
        let de = derivative(&e[0].values, grid.dt);
        let w = -lambda[0] * de[0] / gram;
        let dense = dense_single_mode(&e[0].values, &de, w, grid.dt);
        for (a, b) in h[0].values.iter().zip(&dense) {
            assert!((a - b).abs() < 1e-10);
        }
        assert_eq!(h[0].values[0], de[0]);
    }

    #[test]
    fn mode_count_mismatch() {
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let e = vec![Series::from_fn(grid, |t| t)];
        assert!(matches!(
            solve_fluctuation_modes(&e, &[1.0, 2.0], 0.0, FluctuationMode::Hamiltonian { gram: 1.0 }),
            Err(Error::ModeMismatch { .. })
        ));
    }
}
