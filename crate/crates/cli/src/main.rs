//! `mzgle`: config-driven runs of the memory-kernel, Monte-Carlo and KL
//! pipelines. Every run writes CSV tables plus a `manifest.json` into the
//! output directory.
//!
//! Exit codes: 0 success, 1 comparison threshold exceeded, 2 invalid input,
//! 3 numerical failure, 4 resource cap.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use mzgle::io::{Manifest, Table};
use mzgle::pipeline::{self, ExperimentConfig, KernelRun};
use mzgle::volterra::{solve_correlation, Series, TimeGrid};
use mzgle::{Error, ErrorKind, Scalar};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "mzgle", version, about = "Memory kernels and stochastic models for generalized Langevin equations")]
struct Cli {
    /// Worker threads; defaults to every available core.
    #[arg(long, global = true, env = "MZGLE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// γ, μ and M_q tables and the tabulated kernel K(t).
    Kernel(RunArgs),
    /// Normalized correlation C(t) from the kernel pipeline or a kernel file.
    Correlate {
        #[command(flatten)]
        run: RunArgs,
        /// `kernel.csv` from a previous `kernel` run, used instead of
        /// recomputing the kernel.
        #[arg(long)]
        kernel: Option<PathBuf>,
    },
    /// Monte-Carlo autocorrelations of a chain observable.
    Mc(RunArgs),
    /// KL bundle and the correlations of its sampled paths.
    Kl(RunArgs),
    /// Sup-norm, L² and z-score report between two tables.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    config: PathBuf,
    /// Override a config entry, e.g. `--set kernel.order=12`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `output` in the config.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Column of `a`; the first non-time column by default.
    #[arg(long)]
    column_a: Option<String>,
    /// Column of `b`; the first non-time column by default.
    #[arg(long)]
    column_b: Option<String>,
    #[arg(long)]
    max_sup: Option<f64>,
    #[arg(long)]
    max_l2: Option<f64>,
    #[arg(long)]
    max_z: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} worker threads: {e}");
            return ExitCode::from(4);
        }
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Validation => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Resource => 4,
            })
        }
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    match command {
        Command::Kernel(args) => {
            let mut out = Output::open("kernel", &args)?;
            let run = pipeline::run_kernel(&out.cfg)?;
            write_kernel(&mut out, &run)?;
            out.finish(json!({
                "order": run.order(),
                "delta": run.params.delta,
                "omega": run.expansion.omega(),
                "gram": run.gram(),
                "k0": run.expansion.eval(0.0),
                "exact": run.exact,
            }))?;
        }
        Command::Correlate { run: args, kernel } => {
            let mut out = Output::open("correlate", &args)?;
            let (c, omega, gram) = match &kernel {
                Some(path) => correlate_file(path)?,
                None => {
                    let run = pipeline::run_kernel(&out.cfg)?;
                    let c = pipeline::correlation(&run.expansion, &out.cfg.solver_grid()?)?;
                    (c, run.expansion.omega(), run.gram())
                }
            };
            let phys = c.values.iter().map(|v| v * gram).collect();
            let table = Table::new(json!({"omega": omega, "gram": gram, "kernel_file": kernel}))
                .with_column("t", c.grid.times())
                .with_column("c", c.values.clone())
                .with_column("c_phys", phys);
            out.table("correlation.csv", &table)?;
            out.finish(json!({"c_end": c.values.last()}))?;
        }
        Command::Mc(args) => {
            let mut out = Output::open("mc", &args)?;
            let acfs = pipeline::run_mc(&out.cfg)?;
            let mut table = Table::new(json!({"samples": out.cfg.mc.samples, "seed": out.cfg.mc.seed}))
                .with_column("t", acfs[0].grid().times());
            for (m, s) in out.cfg.mc.powers.iter().zip(&acfs) {
                table = table
                    .with_column(&format!("acf{m}"), s.values().to_vec())
                    .with_column(&format!("se_acf{m}"), s.std_errors.clone());
            }
            out.table("mc.csv", &table)?;
            out.finish(json!({"c0": acfs.iter().map(|s| s.values()[0]).collect::<Vec<_>>()}))?;
        }
        Command::Kl(args) => {
            let mut out = Output::open("kl", &args)?;
            let (kernel, c, kl) = pipeline::run_kl(&out.cfg)?;
            write_kernel(&mut out, &kernel)?;
            out.table(
                "correlation.csv",
                &Table::new(json!({"gram": kernel.gram()}))
                    .with_column("t", c.grid.times())
                    .with_column("c", c.values.clone()),
            )?;
            let b = &kl.basis;
            out.table(
                "kl_eigen.csv",
                &Table::new(json!({"variance": b.variance, "mean": b.mean}))
                    .with_column("k", (1..=b.rank()).map(|k| k as f64).collect())
                    .with_column("lambda", b.eigenvalues.clone()),
            )?;
            let mut modes = Table::new(json!({"rank": b.rank()})).with_column("t", b.grid.times());
            for (k, e) in b.modes.iter().enumerate() {
                modes = modes.with_column(&format!("e{}", k + 1), e.values.clone());
            }
            out.table("kl_modes.csv", &modes)?;
            let ens = &kl.ensemble;
            let mut acf = Table::new(json!({"samples": ens.samples, "seed": ens.seed})).with_column("t", b.grid.times());
            for (m, s) in &kl.acfs {
                acf = acf
                    .with_column(&format!("acf{m}"), s.values().to_vec())
                    .with_column(&format!("se_acf{m}"), s.std_errors.clone());
            }
            out.table("kl_acf.csv", &acf)?;
            out.finish(json!({
                "rank": b.rank(),
                "iterations": ens.iterations,
                "converged": ens.converged,
                "quantile_error": ens.quantile_error,
                "acf_error": ens.acf_error,
            }))?;
        }
        Command::Compare(args) => return compare(&args),
    }
    Ok(ExitCode::SUCCESS)
}

/// Resolved config plus the files written so far.
struct Output {
    command: &'static str,
    cfg: ExperimentConfig,
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn open(command: &'static str, args: &RunArgs) -> Result<Self, Error> {
        let text = fs::read_to_string(&args.config)?;
        let mut cfg = ExperimentConfig::from_json(&text)?.with_overrides(&args.overrides)?;
        if let Some(o) = &args.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("mzgle-out"));
        fs::create_dir_all(&dir)?;
        Ok(Output {
            command,
            cfg,
            dir,
            files: Vec::new(),
        })
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<(), Error> {
        t.write(&self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn finish(self, summary: Value) -> Result<(), Error> {
        let manifest = Manifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            created: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config: serde_json::to_value(&self.cfg)?,
            files: self.files,
            summary,
        };
        let path = manifest.write(&self.dir)?;
        println!("{}", path.display());
        Ok(())
    }
}

fn exact_strings(values: &[Scalar]) -> Option<Vec<String>> {
    values.iter().map(|s| s.as_exact().map(|r| r.to_string())).collect()
}

fn write_kernel(out: &mut Output, run: &KernelRun) -> Result<(), Error> {
    let index = |n: usize| (1..=n).map(|j| j as f64).collect::<Vec<_>>();
    let g = &run.gamma.values;
    out.table(
        "gamma.csv",
        &Table::new(json!({"skew_adjoint": run.gamma.skew_adjoint, "exact": exact_strings(g)}))
            .with_column("j", index(g.len()))
            .with_column("gamma", run.gamma.to_f64()),
    )?;
    let mu = &run.mu.values;
    out.table(
        "mu.csv",
        &Table::new(json!({"exact": exact_strings(mu)}))
            .with_column("j", index(mu.len()))
            .with_column("mu", run.mu.to_f64()),
    )?;
    let k = &run.expansion;
    out.table(
        "coeffs.csv",
        &Table::new(json!({"basis": k.basis, "delta": k.delta}))
            .with_column("q", (0..k.coeffs.len()).map(|q| q as f64).collect())
            .with_column("m", k.coeffs.clone()),
    )?;
    let grid = out.cfg.solver_grid()?;
    let times = grid.times();
    out.table(
        "kernel.csv",
        &Table::new(json!({
            "basis": k.basis,
            "order": k.order,
            "delta": k.delta,
            "omega": k.omega(),
            "gram": k.gram,
        }))
        .with_column("t", times.clone())
        .with_column("k", k.tabulate(&times)),
    )
}

/// Correlation from a tabulated kernel written by the `kernel` command.
fn correlate_file(path: &Path) -> Result<(Series, f64, f64), Error> {
    let t = Table::read(path)?;
    let (Some(times), Some(k)) = (t.column("t"), t.column("k")) else {
        return Err(Error::Format(format!("{} needs columns t and k", path.display())));
    };
    if times.len() < 2 {
        return Err(Error::Format("kernel table needs at least two rows".into()));
    }
    let meta = |key: &str| {
        t.metadata
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::Format(format!("kernel metadata lacks {key}")))
    };
    let (omega, gram) = (meta("omega")?, meta("gram")?);
    let grid = TimeGrid::new(*times.last().unwrap(), times[1] - times[0])?;
    if grid.len() != times.len() {
        return Err(Error::GridMismatch("kernel times are not a uniform grid from 0".into()));
    }
    Ok((solve_correlation(omega, k, &grid)?, omega, gram))
}

fn compare(args: &CompareArgs) -> Result<ExitCode, Error> {
    let a = Table::read(&args.a)?;
    let b = Table::read(&args.b)?;
    let pick = |t: &Table, name: &Option<String>, path: &Path| -> Result<String, Error> {
        match name {
            Some(n) if t.column(n).is_some() => Ok(n.clone()),
            Some(n) => Err(Error::Format(format!("{} has no column {n}", path.display()))),
            None => t
                .columns
                .iter()
                .find(|c| c.as_str() != "t")
                .cloned()
                .ok_or_else(|| Error::Format(format!("{} has no data column", path.display()))),
        }
    };
    let (ca, cb) = (pick(&a, &args.column_a, &args.a)?, pick(&b, &args.column_b, &args.b)?);
    let (Some(ta), Some(tb)) = (a.column("t"), b.column("t")) else {
        return Err(Error::Format("both tables need a t column".into()));
    };
    let (va, vb) = (a.column(&ca).unwrap(), b.column(&cb).unwrap());
    let sea = a.column(&format!("se_{ca}"));
    let seb = b.column(&format!("se_{cb}"));
    let t_end = tb.last().copied().unwrap_or(0.0);

    let (mut sup, mut l2, mut max_z, mut points) = (0.0f64, 0.0, 0.0f64, 0usize);
    let mut prev: Option<(f64, f64)> = None;
    for (i, &t) in ta.iter().enumerate() {
        if t > t_end + 1e-12 {
            break;
        }
        let d = va[i] - interpolate(tb, vb, t);
        sup = sup.max(d.abs());
        if let Some((tp, dp)) = prev {
            l2 += 0.5 * (t - tp) * (d * d + dp * dp);
        }
        prev = Some((t, d));
        let var = sea.map_or(0.0, |s| s[i] * s[i]) + seb.map_or(0.0, |s| interpolate(tb, s, t).powi(2));
        if var > 0.0 {
            max_z = max_z.max(d.abs() / var.sqrt());
        }
        points += 1;
    }
    if points == 0 {
        return Err(Error::GridMismatch("the tables share no time points".into()));
    }
    let l2 = l2.sqrt();
    let report = json!({
        "a": args.a, "b": args.b, "column_a": ca, "column_b": cb,
        "points": points, "sup": sup, "l2": l2,
        "max_z": if sea.is_some() || seb.is_some() { Some(max_z) } else { None },
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    let over = args.max_sup.is_some_and(|m| sup > m) || args.max_l2.is_some_and(|m| l2 > m) || args.max_z.is_some_and(|m| max_z > m);
    Ok(if over { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

/// Piecewise-linear interpolation, clamped at the ends.
fn interpolate(t: &[f64], v: &[f64], x: f64) -> f64 {
    let i = t.partition_point(|&s| s <= x);
    if i == 0 {
        return v[0];
    }
    if i >= t.len() {
        return v[t.len() - 1];
    }
    let w = (x - t[i - 1]) / (t[i] - t[i - 1]);
    v[i - 1] + w * (v[i] - v[i - 1])
}
