//! End-to-end runs shared by the command-line tool and the acceptance suite:
//! configuration, kernel construction, correlation solves, Monte-Carlo
//! baselines and KL stochastic models.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::chain::{mc_autocorrelations, ChainObservable, ChainParams, Field, McConfig};
use crate::error::{Error, Result};
use crate::kernel::{
    build_kernel, estimate_scaling_with, gamma_sequence, mu_sequence, optimal_truncation, Basis, FaberParams, GammaSequence,
    KernelExpansion, MuSequence, ObservableSpec, ScalingRule,
};
use crate::kl::{higher_order_acf, kl_decompose, sample_ensemble, KLBasis, MarginalSpec, SampleEnsemble, SamplerConfig};
use crate::measure::{Density1D, ProductMeasure};
use crate::poly::systems::{self, System};
use crate::poly::{Polynomial, DEFAULT_TERM_CAP};
use crate::scalar::rational_from_decimal;
use crate::stats::EstimatedSeries;
use crate::volterra::{solve_correlation, Series, TimeGrid};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub observable: ObservableConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub kl: KlSettings,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemConfig {
    Harmonic {
        sites: usize,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "one")]
        alpha: f64,
        #[serde(default = "one")]
        gamma: f64,
    },
    Fpu {
        sites: usize,
        #[serde(default = "one")]
        mass: f64,
        #[serde(default = "one")]
        alpha: f64,
        beta: f64,
        #[serde(default = "one")]
        gamma: f64,
    },
    /// Kraichnan-Orszag system under an i.i.d. Gaussian measure.
    KraichnanOrszag {
        #[serde(default = "one")]
        precision: f64,
    },
    /// System-definition file plus one density per variable name.
    File {
        path: PathBuf,
        densities: BTreeMap<String, DensityConfig>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityConfig {
    Gaussian { precision: f64 },
    Quartic { gamma: f64, alpha: f64, beta: f64 },
}

impl DensityConfig {
    fn build(&self) -> Result<Density1D> {
        match *self {
            DensityConfig::Gaussian { precision } => Density1D::gaussian_exact(rational_from_decimal(precision)?),
            DensityConfig::Quartic { gamma, alpha, beta } => Density1D::quartic(gamma, alpha, beta),
        }
    }
}

/// Chain observables are `field_site^power`; other systems name a variable.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservableConfig {
    pub field: Field,
    /// Defaults to the middle of the chain.
    pub site: Option<usize>,
    pub power: u32,
    pub variable: Option<String>,
}

impl Default for ObservableConfig {
    fn default() -> Self {
        ObservableConfig {
            field: Field::P,
            site: None,
            power: 1,
            variable: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Faber,
    Dyson,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub basis: BasisKind,
    /// Fixed expansion order; `None` truncates automatically at the smallest
    /// coefficient up to `max_order`.
    pub order: Option<usize>,
    pub max_order: usize,
    pub scaling: ScalingRule,
    pub delta: Option<f64>,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    /// Rational arithmetic whenever every density has exact moments.
    pub exact: bool,
    /// Skew-adjoint shortcut; defaults to true for chains.
    pub skew: Option<bool>,
    pub term_cap: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            basis: BasisKind::Faber,
            order: None,
            max_order: 16,
            scaling: ScalingRule::SecondMoment,
            delta: None,
            c0: None,
            c1: None,
            exact: true,
            skew: None,
            term_cap: DEFAULT_TERM_CAP,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub dt: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { horizon: 10.0, dt: 1e-3 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub samples: usize,
    pub dt: f64,
    /// Output spacing of the correlation estimate.
    pub output_dt: f64,
    pub seed: u64,
    pub blocks: usize,
    pub powers: Vec<u32>,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            samples: 10_000,
            dt: 1e-3,
            output_dt: 0.05,
            seed: 1,
            blocks: 32,
            powers: vec![1],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KlSettings {
    pub kmax: usize,
    pub iters: usize,
    pub samples: usize,
    pub seed: u64,
    /// Spacing of the KL grid, coarser than the solver grid.
    pub dt: f64,
    pub energy_floor: f64,
    pub powers: Vec<u32>,
    pub tol_quantile: f64,
    pub tol_acf: f64,
}

impl Default for KlSettings {
    fn default() -> Self {
        KlSettings {
            kmax: 64,
            iters: 10,
            samples: 10_000,
            seed: 7,
            dt: 0.05,
            energy_floor: crate::kl::DEFAULT_ENERGY_FLOOR,
            powers: vec![1, 2, 4],
            tol_quantile: SamplerConfig::default().tol_quantile,
            tol_acf: SamplerConfig::default().tol_acf,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Apply `key.path=value` overrides; values parse as JSON and fall back
    /// to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                let obj = slot
                    .as_object_mut()
                    .ok_or_else(|| Error::InvalidParameter(format!("{key}: {part} is not inside an object")))?;
                slot = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
            }
            *slot = value;
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver_grid()?;
        if self.mc.powers.is_empty() || self.kl.powers.is_empty() || self.mc.powers.contains(&0) || self.kl.powers.contains(&0) {
            return Err(Error::InvalidParameter("correlation powers must be nonempty and positive".into()));
        }
        if self.observable.power == 0 {
            return Err(Error::InvalidParameter("observable power must be at least 1".into()));
        }
        Ok(())
    }

    pub fn solver_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.dt)
    }

    pub fn chain_params(&self) -> Option<ChainParams> {
        match self.system {
            SystemConfig::Harmonic { sites, mass, alpha, gamma } => Some(ChainParams {
                sites,
                mass,
                alpha,
                beta: 0.0,
                gamma,
            }),
            SystemConfig::Fpu {
                sites,
                mass,
                alpha,
                beta,
                gamma,
            } => Some(ChainParams {
                sites,
                mass,
                alpha,
                beta,
                gamma,
            }),
            _ => None,
        }
    }
}

/// A resolved system with its equilibrium measure.
pub struct Model {
    pub system: System,
    pub measure: ProductMeasure,
    pub chain: Option<ChainParams>,
}

pub fn build_model(cfg: &SystemConfig) -> Result<Model> {
    match cfg {
        SystemConfig::Harmonic { .. } | SystemConfig::Fpu { .. } => {
            let (sites, mass, alpha, beta, gamma) = match *cfg {
                SystemConfig::Harmonic { sites, mass, alpha, gamma } => (sites, mass, alpha, 0.0, gamma),
                SystemConfig::Fpu {
                    sites,
                    mass,
                    alpha,
                    beta,
                    gamma,
                } => (sites, mass, alpha, beta, gamma),
                _ => unreachable!(),
            };
            let params = ChainParams {
                sites,
                mass,
                alpha,
                beta,
                gamma,
            };
            params.validate()?;
            let system = systems::fpu_chain(
                sites,
                rational_from_decimal(alpha)?,
                rational_from_decimal(beta)?,
                rational_from_decimal(mass)?,
            )?;
            let measure = ProductMeasure::gibbs_chain(sites, gamma, alpha, beta, mass)?;
            Ok(Model {
                system,
                measure,
                chain: Some(params),
            })
        }
        SystemConfig::KraichnanOrszag { precision } => {
            let system = systems::kraichnan_orszag();
            let d = Density1D::gaussian_exact(rational_from_decimal(*precision)?)?;
            let mut measure = ProductMeasure::new(system.dimension());
            for i in 0..system.dimension() {
                measure.set(crate::poly::VarIndex(i as u32), d.clone());
            }
            Ok(Model {
                system,
                measure,
                chain: None,
            })
        }
        SystemConfig::File { path, densities } => {
            let system = System::load(path)?;
            let mut measure = ProductMeasure::new(system.dimension());
            for (name, d) in densities {
                let v = system
                    .var(name)
                    .ok_or_else(|| Error::InvalidParameter(format!("density for unknown variable {name:?}")))?;
                measure.set(v, d.build()?);
            }
            Ok(Model {
                system,
                measure,
                chain: None,
            })
        }
    }
}

impl Model {
    pub fn observable_var(&self, obs: &ObservableConfig) -> Result<crate::poly::VarIndex> {
        let name = match (&obs.variable, self.chain) {
            (Some(v), _) => v.clone(),
            (None, Some(c)) => {
                let site = obs.site.unwrap_or(c.sites / 2);
                if site >= c.sites {
                    return Err(Error::InvalidParameter(format!("site {site} outside the chain")));
                }
                match obs.field {
                    Field::R => format!("r{site}"),
                    Field::P => format!("p{site}"),
                }
            }
            (None, None) => return Err(Error::InvalidParameter("observable.variable is required for this system".into())),
        };
        self.system
            .var(&name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown variable {name:?}")))
    }

    pub fn observable(&self, obs: &ObservableConfig) -> Result<Polynomial> {
        Ok(Polynomial::var(self.observable_var(obs)?).pow(obs.power))
    }

    /// One-time marginal of the observable variable, for KL sampling.
    pub fn marginal(&self, obs: &ObservableConfig) -> Result<MarginalSpec> {
        if obs.power != 1 {
            return Err(Error::InvalidParameter("KL models need a power-1 observable".into()));
        }
        let d = self.measure.density(self.observable_var(obs)?)?;
        Ok(match d.kind() {
            crate::measure::DensityKind::Gaussian { gamma, .. } => MarginalSpec::Gaussian {
                mean: 0.0,
                variance: 1.0 / gamma,
            },
            _ => MarginalSpec::Density { density: d.clone() },
        })
    }
}

#[derive(Clone, Debug)]
pub struct KernelRun {
    pub gamma: GammaSequence,
    pub mu: MuSequence,
    pub params: FaberParams,
    pub expansion: KernelExpansion,
    /// Order the coefficients were computed to.
    pub computed_order: usize,
    pub exact: bool,
}

impl KernelRun {
    pub fn gram(&self) -> f64 {
        self.expansion.gram
    }

    pub fn order(&self) -> usize {
        self.expansion.order
    }

    /// Same coefficients cut at a different order.
    pub fn at_order(&self, n: usize) -> Result<KernelExpansion> {
        build_kernel(&self.mu, self.expansion.basis, self.expansion.delta, n, self.expansion.gram)
    }
}

pub fn run_kernel(cfg: &ExperimentConfig) -> Result<KernelRun> {
    let model = build_model(&cfg.system)?;
    kernel_for(&model, &cfg.observable, &cfg.kernel)
}

pub fn kernel_for(model: &Model, obs: &ObservableConfig, kc: &KernelConfig) -> Result<KernelRun> {
    let u0 = model.observable(obs)?;
    let n_max = kc.order.unwrap_or(kc.max_order);
    let skew = kc.skew.unwrap_or(model.chain.is_some());
    let exact = kc.exact && all_exact(model)?;
    let gamma = if exact {
        let spec = ObservableSpec::new(u0, &model.measure)?;
        gamma_sequence(&model.system.operator, &spec, &model.measure, n_max + 2, skew, kc.term_cap)?
    } else {
        let op = model.system.operator.to_f64();
        let spec = ObservableSpec::new(u0.to_f64(), &model.measure)?;
        gamma_sequence(&op, &spec, &model.measure, n_max + 2, skew, kc.term_cap)?
    };
    let gram = model.measure.expectation(&model.observable(obs)?.pow(2))?.to_f64();
    let mu = mu_sequence(&gamma);
    let mut params = match estimate_scaling_with(&gamma, kc.scaling) {
        Ok(p) => p,
        Err(Error::NoEstimate) if kc.delta.is_some() => FaberParams {
            c0: 0.0,
            c1: -0.25,
            delta: 1.0,
        },
        Err(e) => return Err(e),
    };
    if let Some(d) = kc.delta {
        params.delta = d;
    }
    if let Some(c0) = kc.c0 {
        params.c0 = c0;
    }
    if let Some(c1) = kc.c1 {
        params.c1 = c1;
    }
    let basis = match kc.basis {
        BasisKind::Faber => Basis::Faber {
            c0: params.c0,
            c1: params.c1,
        },
        BasisKind::Dyson => Basis::Dyson,
    };
    let full = build_kernel(&mu, basis, params.delta, n_max, gram)?;
    let expansion = match kc.order {
        Some(_) => full,
        None => build_kernel(&mu, basis, params.delta, optimal_truncation(&full, skew), gram)?,
    };
    Ok(KernelRun {
        gamma,
        mu,
        params,
        expansion,
        computed_order: n_max,
        exact,
    })
}

fn all_exact(model: &Model) -> Result<bool> {
    for i in 0..model.measure.dimension() {
        if !model.measure.density(crate::poly::VarIndex(i as u32))?.has_exact_moments() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Normalized correlation `C(t)/C(0)` from a kernel expansion.
pub fn correlation(k: &KernelExpansion, grid: &TimeGrid) -> Result<Series> {
    let tab = k.tabulate(&grid.times());
    solve_correlation(k.omega(), &tab, grid)
}

/// Resample a series onto a coarser grid that it covers.
pub fn resample(s: &Series, grid: TimeGrid) -> Result<Series> {
    if grid.horizon > s.grid.horizon + 1e-12 {
        return Err(Error::GridMismatch(format!(
            "cannot resample a series on [0, {}] to [0, {}]",
            s.grid.horizon, grid.horizon
        )));
    }
    Ok(Series::from_fn(grid, |t| s.interpolate(t)))
}

pub fn run_mc(cfg: &ExperimentConfig) -> Result<Vec<EstimatedSeries>> {
    let params = cfg
        .chain_params()
        .ok_or_else(|| Error::InvalidParameter("Monte-Carlo baselines need a chain system".into()))?;
    let grid = TimeGrid::new(cfg.grid.horizon, cfg.mc.output_dt)?;
    let obs: Vec<ChainObservable> = cfg
        .mc
        .powers
        .iter()
        .map(|&power| ChainObservable {
            field: cfg.observable.field,
            power,
            site: cfg.observable.site,
        })
        .collect();
    mc_autocorrelations(
        &params,
        &obs,
        &grid,
        &McConfig {
            samples: cfg.mc.samples,
            dt: cfg.mc.dt,
            seed: cfg.mc.seed,
            blocks: cfg.mc.blocks,
        },
    )
}

pub struct KlRun {
    pub covariance: Series,
    pub basis: KLBasis,
    pub ensemble: SampleEnsemble,
    /// `(m, ⟨u^m(0) u^m(t)⟩)` for every requested power.
    pub acfs: Vec<(u32, EstimatedSeries)>,
}

/// KL model of `u` from its covariance `c` (physical units) and one-time
/// marginal, plus the higher-order correlations of the sampled paths.
pub fn kl_model(c: &Series, marginal: &MarginalSpec, ks: &KlSettings) -> Result<KlRun> {
    let grid = TimeGrid::new(c.grid.horizon, ks.dt)?;
    let cov = resample(c, grid)?;
    let basis = kl_decompose(&cov, ks.kmax, ks.energy_floor)?;
    let ensemble = sample_ensemble(
        &basis,
        marginal,
        &SamplerConfig {
            samples: ks.samples,
            iters: ks.iters,
            seed: ks.seed,
            tol_quantile: ks.tol_quantile,
            tol_acf: ks.tol_acf,
        },
    )?;
    let acfs = ks
        .powers
        .iter()
        .map(|&m| Ok((m, higher_order_acf(&ensemble, m)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(KlRun {
        covariance: cov,
        basis,
        ensemble,
        acfs,
    })
}

/// Kernel, correlation and KL model from first principles.
pub fn run_kl(cfg: &ExperimentConfig) -> Result<(KernelRun, Series, KlRun)> {
    let model = build_model(&cfg.system)?;
    let k = kernel_for(&model, &cfg.observable, &cfg.kernel)?;
    let c = correlation(&k.expansion, &cfg.solver_grid()?)?;
    let gram = k.gram();
    let phys = Series::new(c.grid, c.values.iter().map(|v| v * gram).collect())?;
    let kl = kl_model(&phys, &model.marginal(&cfg.observable)?, &cfg.kl)?;
    Ok((k, c, kl))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic() -> ExperimentConfig {
        ExperimentConfig::from_json(r#"{"system": {"type": "harmonic", "sites": 40}}"#).unwrap()
    }

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = harmonic();
        assert_eq!(cfg.kernel.basis, BasisKind::Faber);
        let o = cfg
            .with_overrides(&["kernel.order=6".into(), "grid.horizon=2".into(), "observable.field=r".into()])
            .unwrap();
        assert_eq!(o.kernel.order, Some(6));
        assert_eq!(o.grid.horizon, 2.0);
        assert_eq!(o.observable.field, Field::R);
        assert!(cfg.with_overrides(&["kernel.nope=1".into()]).is_err());
        assert!(cfg.with_overrides(&["kernel.order".into()]).is_err());
        assert!(ExperimentConfig::from_json(r#"{"system": {"type": "harmonic", "sites": 4, "extra": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"system": {"type": "harmonic", "sites": 4}, "bogus": 1}"#).is_err());
    }

    #[test]
    fn harmonic_kernel_starts_at_minus_two() {
        let cfg = harmonic().with_overrides(&["kernel.order=10".into()]).unwrap();
        let k = run_kernel(&cfg).unwrap();
        assert!(k.exact);
        assert_eq!(k.mu.get(2).as_exact().unwrap(), &rational_from_decimal(-2.0).unwrap());
        assert!((k.expansion.eval(0.0) + 2.0).abs() < 1e-12);
        let auto = run_kernel(&harmonic()).unwrap();
        assert_eq!(auto.order(), 2);
        let c = correlation(&auto.expansion, &TimeGrid::new(5.0, 1e-3).unwrap()).unwrap();
        assert!(c.sup_distance(|t| crate::special::bessel_j0(2.0 * t)) < 1e-5);
    }

    #[test]
    fn ko_needs_a_named_variable() {
        let cfg = ExperimentConfig::from_json(r#"{"system": {"type": "kraichnan-orszag"}, "kernel": {"skew": false}}"#).unwrap();
        assert!(run_kernel(&cfg).is_err());
        let cfg = cfg.with_overrides(&["observable.variable=x1".into(), "kernel.order=2".into(), "kernel.delta=0.5".into()]).unwrap();
        let k = run_kernel(&cfg).unwrap();
        assert!(k.exact);
        assert_eq!(k.gamma.len(), 4);
    }

    #[test]
    fn kl_marginals_follow_the_measure() {
        let m = build_model(&SystemConfig::Fpu {
            sites: 8,
            mass: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 40.0,
        })
        .unwrap();
        let obs = ObservableConfig::default();
        assert!(matches!(m.marginal(&obs).unwrap(), MarginalSpec::Gaussian { variance, .. } if (variance - 0.025).abs() < 1e-15));
        let r = ObservableConfig { field: Field::R, ..obs.clone() };
        assert!(matches!(m.marginal(&r).unwrap(), MarginalSpec::Density { .. }));
        assert!(m.marginal(&ObservableConfig { power: 2, ..obs }).is_err());
    }
}
