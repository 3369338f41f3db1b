//! Periodic harmonic and FPU β-chains in `(r, p)` coordinates: equilibrium
//! sampling, velocity-Verlet dynamics and Monte-Carlo correlation functions.
//! Also a generic RK4 integrator for polynomial vector fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::LiouvilleOperator;
use crate::special::integrate;
use crate::stats::{BlockSums, EstimatedSeries};
use crate::volterra::{Series, TimeGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    pub sites: usize,
    pub mass: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Inverse temperature.
    pub gamma: f64,
}

impl ChainParams {
    pub fn validate(&self) -> Result<()> {
        if self.sites < 3 {
            return Err(Error::InvalidParameter(format!(
                "a periodic chain needs at least 3 sites, got {}",
                self.sites
            )));
        }
        let ok = self.mass > 0.0 && self.alpha > 0.0 && self.beta >= 0.0 && self.gamma > 0.0;
        if !ok || ![self.mass, self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need m > 0, alpha > 0, beta >= 0, gamma > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    /// `V′(r) = αr + βr³`.
    #[inline]
    pub fn force(&self, r: f64) -> f64 {
        r * (self.alpha + self.beta * r * r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// `r_j = q_{j+1} − q_j`.
    pub r: Vec<f64>,
    pub p: Vec<f64>,
}

impl ChainState {
    pub fn energy(&self, params: &ChainParams) -> f64 {
        let kin: f64 = self.p.iter().map(|p| p * p).sum::<f64>() / (2.0 * params.mass);
        let pot: f64 = self
            .r
            .iter()
            .map(|r| {
                let r2 = r * r;
                0.5 * params.alpha * r2 + 0.25 * params.beta * r2 * r2
            })
            .sum();
        kin + pot
    }
}

/// Rejection sampler for the `r` marginal `∝ exp(−γ(αr²/2 + βr⁴/4))` with a
/// Gaussian envelope of tuned width; `p` is drawn exactly.
#[derive(Clone, Debug)]
pub struct EquilibriumSampler {
    params: ChainParams,
    envelope_sd: f64,
    /// `a` and `b` of the log-ratio `a r² − b r⁴ − log M`.
    a: f64,
    b: f64,
    log_m: f64,
    acceptance: f64,
}

impl EquilibriumSampler {
    pub fn new(params: ChainParams) -> Result<Self> {
        params.validate()?;
        let g = params.gamma;
        if params.beta == 0.0 {
            return Ok(EquilibriumSampler {
                params,
                envelope_sd: 1.0 / (g * params.alpha).sqrt(),
                a: 0.0,
                b: 0.0,
                log_m: 0.0,
                acceptance: 1.0,
            });
        }
        let b = g * params.beta / 4.0;
        let target = |r: f64| (-g * (0.5 * params.alpha * r * r + 0.25 * params.beta * r.powi(4))).exp();
        let reach = (40.0 / (g * params.alpha)).sqrt().min((160.0 / (g * params.beta)).powf(0.25));
        let z = 2.0 * integrate(&target, 0.0, reach, 8, 1e-12, 0.0);
        let rate = |s: f64| {
            let a = 1.0 / (2.0 * s * s) - g * params.alpha / 2.0;
            let log_m = if a > 0.0 { a * a / (4.0 * b) } else { 0.0 };
            (a, log_m, z / ((2.0 * std::f64::consts::PI).sqrt() * s * log_m.exp()))
        };
        let s0 = 1.0 / (g * params.alpha).sqrt();
        let mut best = (s0, rate(s0));
        for i in 1..=200 {
            let s = s0 * (0.2 + 1.8 * i as f64 / 200.0);
            let r = rate(s);
            if r.2 > best.1 .2 {
                best = (s, r);
            }
        }
        let (s, (a, log_m, acceptance)) = best;
        if acceptance < 0.01 {
            return Err(Error::EnvelopeTuning { rate: acceptance });
        }
        Ok(EquilibriumSampler {
            params,
            envelope_sd: s,
            a,
            b,
            log_m,
            acceptance,
        })
    }

    /// Expected acceptance rate of the `r` rejection step.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    pub fn sample_r<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let r = z * self.envelope_sd;
            if self.params.beta == 0.0 {
                return r;
            }
            let r2 = r * r;
            let log_ratio = self.a * r2 - self.b * r2 * r2 - self.log_m;
            let u: f64 = rng.random();
            if u.ln() <= log_ratio {
                return r;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ChainState {
        let n = self.params.sites;
        let pd = Normal::new(0.0, (self.params.mass / self.params.gamma).sqrt()).expect("positive variance");
        let r = (0..n).map(|_| self.sample_r(rng)).collect();
        let p = (0..n).map(|_| pd.sample(rng)).collect();
        ChainState { r, p }
    }
}

pub fn sample_equilibrium<R: Rng + ?Sized>(params: &ChainParams, rng: &mut R) -> Result<ChainState> {
    Ok(EquilibriumSampler::new(*params)?.sample(rng))
}

fn kick(state: &mut ChainState, params: &ChainParams, h: f64) {
    let n = params.sites;
    let f0 = params.force(state.r[0]);
    let mut f_here = f0;
    for j in 0..n {
        let f_next = if j + 1 == n { f0 } else { params.force(state.r[j + 1]) };
        state.p[j] += h * (f_next - f_here);
        f_here = f_next;
    }
}

fn drift(state: &mut ChainState, params: &ChainParams, h: f64) {
    let n = params.sites;
    let c = h / params.mass;
    let p_last = state.p[n - 1];
    for j in (1..n).rev() {
        state.r[j] += c * (state.p[j] - state.p[j - 1]);
    }
    state.r[0] += c * (state.p[0] - p_last);
}

/// One velocity-Verlet step (half kick, drift, half kick). Negative `dt`
/// runs the step backwards.
pub fn step_verlet(state: &mut ChainState, params: &ChainParams, dt: f64) {
    kick(state, params, 0.5 * dt);
    drift(state, params, dt);
    kick(state, params, 0.5 * dt);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    R,
    P,
}

/// `field_site^power`, averaged over all sites when `site` is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainObservable {
    pub field: Field,
    pub power: u32,
    pub site: Option<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct McConfig {
    pub samples: usize,
    /// Integrator step; must divide the output grid step.
    pub dt: f64,
    pub seed: u64,
    pub blocks: usize,
}

/// `⟨u(0) u(t)⟩` along Verlet trajectories from independent equilibrium
/// initial conditions, with `u = field^power`. Each sample uses its own
/// ChaCha stream, and samples are reduced in fixed blocks, so results do not
/// depend on the thread count.
pub fn mc_autocorrelation(params: &ChainParams, obs: ChainObservable, grid: &TimeGrid, cfg: &McConfig) -> Result<EstimatedSeries> {
    Ok(mc_autocorrelations(params, &[obs], grid, cfg)?.remove(0))
}

/// [`mc_autocorrelation`] for several observables along the same trajectories.
pub fn mc_autocorrelations(params: &ChainParams, observables: &[ChainObservable], grid: &TimeGrid, cfg: &McConfig) -> Result<Vec<EstimatedSeries>> {
    params.validate()?;
    if observables.is_empty() {
        return Err(Error::InvalidParameter("no observables requested".into()));
    }
    for obs in observables {
        if obs.power == 0 {
            return Err(Error::InvalidParameter("observable power must be at least 1".into()));
        }
        if let Some(s) = obs.site {
            if s >= params.sites {
                return Err(Error::InvalidParameter(format!("site {s} outside the chain")));
            }
        }
    }
    if cfg.samples == 0 || cfg.blocks == 0 {
        return Err(Error::InvalidParameter("need samples and blocks > 0".into()));
    }
    let stride_f = grid.dt / cfg.dt;
    let stride = stride_f.round() as usize;
    if stride == 0 || (stride_f - stride as f64).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!(
            "integrator step {} must divide the output step {}",
            cfg.dt, grid.dt
        )));
    }
    let sampler = EquilibriumSampler::new(*params)?;
    let n_out = grid.len();
    let n_obs = observables.len();
    let blocks = cfg.blocks.min(cfg.samples);
    let per = cfg.samples.div_ceil(blocks);
    let value = |st: &ChainState, obs: &ChainObservable, j: usize| -> f64 {
        let x = match obs.field {
            Field::R => st.r[j],
            Field::P => st.p[j],
        };
        x.powi(obs.power as i32)
    };
    let sites: Vec<Vec<usize>> = observables
        .iter()
        .map(|o| match o.site {
            Some(s) => vec![s],
            None => (0..params.sites).collect(),
        })
        .collect();
    let results: Vec<Result<(Vec<f64>, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            // acc[o * n_out + i]
            let mut acc = vec![0.0; n_obs * n_out];
            let lo = b * per;
            let hi = ((b + 1) * per).min(cfg.samples);
            for s in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(s as u64);
                let mut st = sampler.sample(&mut rng);
                let u0: Vec<Vec<f64>> = observables
                    .iter()
                    .zip(&sites)
                    .map(|(o, js)| js.iter().map(|&j| value(&st, o, j)).collect())
                    .collect();
                let record = |st: &ChainState, i: usize, acc: &mut [f64]| -> bool {
                    let mut finite = true;
                    for (o, obs) in observables.iter().enumerate() {
                        let js = &sites[o];
                        let c = js.iter().zip(&u0[o]).map(|(&j, a)| a * value(st, obs, j)).sum::<f64>() / js.len() as f64;
                        finite &= c.is_finite();
                        acc[o * n_out + i] += c;
                    }
                    finite
                };
                record(&st, 0, &mut acc);
                for i in 1..n_out {
                    for _ in 0..stride {
                        step_verlet(&mut st, params, cfg.dt);
                    }
                    if !record(&st, i, &mut acc) {
                        return Err(Error::BlowUp {
                            step: i * stride,
                            time: grid.time(i),
                        });
                    }
                }
            }
            Ok((acc, hi.saturating_sub(lo) as f64))
        })
        .collect();
    let mut bs: Vec<BlockSums> = (0..n_obs).map(|_| BlockSums::new(blocks, n_out)).collect();
    for (b, r) in results.into_iter().enumerate() {
        let (acc, count) = r?;
        for (o, sums) in bs.iter_mut().enumerate() {
            for i in 0..n_out {
                sums.add(b, i, acc[o * n_out + i], count);
            }
        }
    }
    bs.into_iter()
        .map(|sums| {
            let (mean, se) = sums.jackknife();
            Ok(EstimatedSeries {
                series: Series::new(*grid, mean)?,
                std_errors: se,
            })
        })
        .collect()
}

/// Classical RK4 for `ẋ = F(x)` with polynomial `F`; fails once `‖x‖ > 1e12`.
pub fn integrate_poly_ode(op: &LiouvilleOperator<f64>, x0: &[f64], grid: &TimeGrid) -> Result<Vec<Vec<f64>>> {
    let d = op.dimension();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            var: x0.len(),
            dimension: d,
        });
    }
    let rhs: Vec<_> = op.terms().map(|(v, f)| (v.index(), f.clone())).collect();
    let field = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (k, f) in &rhs {
            out[*k] = f.eval(x);
        }
        out
    };
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(x, k)| x + a * k).collect() };
    let h = grid.dt;
    let mut traj = Vec::with_capacity(grid.len());
    traj.push(x0.to_vec());
    let mut x = x0.to_vec();
    for step in 1..grid.len() {
        let k1 = field(&x);
        let k2 = field(&axpy(&x, 0.5 * h, &k1));
        let k3 = field(&axpy(&x, 0.5 * h, &k2));
        let k4 = field(&axpy(&x, h, &k3));
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= 1e12) {
            return Err(Error::BlowUp {
                step,
                time: grid.time(step),
            });
        }
        traj.push(x.clone());
    }
    Ok(traj)
}
