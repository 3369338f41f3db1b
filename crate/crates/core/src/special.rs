//! Bessel functions of the first kind and adaptive Gauss–Kronrod quadrature.

/// `[J_0(x), …, J_nmax(x)]` by Miller's backward recurrence, normalized with
/// `J_0 + 2 Σ_k J_{2k} = 1`.
pub fn bessel_j_sequence(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = vec![0.0; nmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let ax = x.abs();
    let n0 = (nmax as f64).max(ax);
    let mut start = (n0 + 20.0 + 6.0 * n0.sqrt()).ceil() as usize;
    start += start % 2;
    let mut next = 0.0f64; // J_{k+1}
    let mut cur = 1e-300f64; // J_k
    let mut norm = 0.0f64;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / ax * cur - next; // J_{k-1}
        next = cur;
        cur = prev;
        if cur.abs() > 1e250 {
            cur *= 1e-250;
            next *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
        let idx = k - 1;
        if idx <= nmax {
            out[idx] = cur;
        }
        if idx % 2 == 0 && idx > 0 {
            norm += 2.0 * cur;
        }
    }
    norm += cur;
    for v in out.iter_mut() {
        *v /= norm;
    }
    if x < 0.0 {
        for (n, v) in out.iter_mut().enumerate() {
            if n % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

pub fn bessel_j0(x: f64) -> f64 {
    bessel_j_sequence(0, x)[0]
}

pub fn bessel_j1(x: f64) -> f64 {
    bessel_j_sequence(1, x)[1]
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive G7–K15 quadrature of `f` over `[a, b]`, starting from `panels`
/// equal subintervals and bisecting the worst interval until the summed
/// error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize, rel_tol: f64, abs_tol: f64) -> f64 {
    let panels = panels.max(1);
    let w = (b - a) / panels as f64;
    let mut intervals: Vec<(f64, f64, f64, f64)> = (0..panels)
        .map(|i| {
            let lo = a + w * i as f64;
            let hi = if i + 1 == panels { b } else { lo + w };
            let (v, e) = gk15(f, lo, hi);
            (lo, hi, v, e)
        })
        .collect();
    for _ in 0..2000 {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            break;
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("at least one interval");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
    // sum small contributions first
    let mut vals: Vec<f64> = intervals.iter().map(|iv| iv.2).collect();
    vals.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    vals.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// J_n(x) = (1/π) ∫_0^π cos(nθ − x sin θ) dθ by a fine trapezoid rule,
    /// which is spectrally accurate for this periodic integrand.
    fn bessel_by_integral(n: usize, x: f64) -> f64 {
        let m = 4000;
        let h = PI / m as f64;
        let mut s = 0.5 * ((0.0f64).cos() + (n as f64 * PI - x * PI.sin()).cos());
        for i in 1..m {
            let th = i as f64 * h;
            s += (n as f64 * th - x * th.sin()).cos();
        }
        s * h / PI
    }

    #[test]
    fn bessel_matches_integral_representation() {
        for &x in &[0.3, 1.0, 2.5, 7.0, 15.6, 20.0, 33.0, 60.0] {
            let seq = bessel_j_sequence(60, x);
            for n in (0..=60).step_by(3) {
                let want = bessel_by_integral(n, x);
                assert!(
                    (seq[n] - want).abs() < 1e-13,
                    "J_{n}({x}) = {} vs {want}",
                    seq[n]
                );
            }
        }
    }

    #[test]
    fn bessel_edge_values() {
        assert_eq!(bessel_j_sequence(3, 0.0), vec![1.0, 0.0, 0.0, 0.0]);
        let pos = bessel_j_sequence(5, 2.0);
        let neg = bessel_j_sequence(5, -2.0);
        for n in 0..=5 {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(neg[n], sign * pos[n]);
        }
        // tabulated J0(1), J1(1)
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-15);
    }

    #[test]
    fn quadrature_of_gaussian_and_polynomial() {
        let g = integrate(&|x: f64| (-x * x).exp(), -10.0, 10.0, 4, 1e-14, 0.0);
        assert!((g - PI.sqrt()).abs() < 1e-13);
        let p = integrate(&|x: f64| x.powi(5) - 2.0 * x, 0.0, 2.0, 1, 1e-14, 0.0);
        assert!((p - (64.0 / 6.0 - 4.0)).abs() < 1e-12);
    }
}
