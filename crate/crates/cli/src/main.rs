use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use online_debias::debias_batch::{build_batch_m, online_debias_batch, BatchDesign};
use online_debias::debias_offline::{build_offline_m, offline_debias, offline_mu, ridge_online_baseline};
use online_debias::debias_ts::{DebiasedEstimate, Method, OnlineTsDebiaser};
use online_debias::decorrelator::{solve_matrix, AdaptiveConfig};
use online_debias::harness::{normality_diagnostics, run_experiment, ExperimentConfig, MetricsRow, Record};
use online_debias::inference::{benjamini_yekutieli, infer};
use online_debias::lasso::{default_lambda, estimate_sigma, fit_lasso, LassoConfig};
use online_debias::linalg::gram_rows;
use online_debias::model::{build_regression_view, default_r0, make_schedule, RegressionProblem};
use online_debias::simgen::{
    build_sigma_zeta, gen_batch_data, gen_stationary_coefficients, gen_var_series, replicate_rng, tridiagonal, CovKind,
    Intermediate, DEFAULT_BURN_IN,
};

#[derive(Parser)]
#[command(name = "online-debias", version, about = "Online debiased LASSO inference for adaptively collected data")]
struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Worker threads; all cores when omitted.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset.
    Simulate {
        #[command(subcommand)]
        kind: SimulateKind,
    },
    /// Debias a LASSO fit for one response coordinate of a time series.
    DebiasTs(DebiasTsArgs),
    /// Debias a LASSO fit on two-batch data.
    DebiasBatch(DebiasBatchArgs),
    /// Confidence intervals, p-values and optional BY selection.
    Infer(InferArgs),
    /// Run a Monte Carlo experiment from a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum SimulateKind {
    /// VAR(d) series; writes series.csv and model.json.
    Ts(SimTsArgs),
    /// Two-batch adaptive design; writes batch.csv and truth.json.
    Batch(SimBatchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Power,
    Equi,
}

impl From<CovArg> for CovKind {
    fn from(c: CovArg) -> Self {
        match c {
            CovArg::Power => CovKind::Power,
            CovArg::Equi => CovKind::Equi,
        }
    }
}

#[derive(Args)]
struct SimTsArgs {
    #[arg(long)]
    p: usize,
    #[arg(long, default_value_t = 1)]
    d: usize,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0.1)]
    q: f64,
    #[arg(long, default_value_t = 0.5)]
    b: f64,
    /// Gaussian jitter on coefficients; 1/p when omitted.
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, value_enum, default_value_t = CovArg::Power)]
    cov: CovArg,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    burn_in: usize,
}

#[derive(Args)]
struct SimBatchArgs {
    #[arg(long, default_value_t = 600)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    s0: usize,
    #[arg(long, default_value_t = 500)]
    n1: usize,
    #[arg(long, default_value_t = 500)]
    n2: usize,
    #[arg(long, default_value_t = 1.0)]
    diag: f64,
    #[arg(long, default_value_t = 0.1)]
    off: f64,
    #[arg(long, default_value_t = 1.0)]
    varsigma_bar: f64,
    /// Ridge penalty for the intermediate estimate; debiased LASSO when omitted.
    #[arg(long)]
    ridge: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    noise_sd: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Online,
    Offline,
    OfflineSparse,
    RidgeOnline,
}

#[derive(Args)]
struct EstimatorArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
    /// Noise level; estimated from LASSO residuals when omitted.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    c_mu: f64,
    /// ℓ1 budget multiplier; `0` removes the budget.
    #[arg(long, default_value_t = 2.0)]
    l0: f64,
}

impl EstimatorArgs {
    fn adaptive(&self) -> AdaptiveConfig {
        AdaptiveConfig { c_mu: self.c_mu, l0: (self.l0 > 0.0).then_some(self.l0), ..AdaptiveConfig::default() }
    }
}

#[derive(Args)]
struct DebiasTsArgs {
    /// Series CSV, one time point per row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    d: usize,
    /// Response coordinate i.
    #[arg(long, default_value_t = 0)]
    target: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Online)]
    method: MethodArg,
    #[command(flatten)]
    est: EstimatorArgs,
    #[arg(long)]
    r0: Option<usize>,
    #[arg(long, default_value_t = 1.3)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 1.0)]
    ridge_lambda: f64,
}

#[derive(Args)]
struct DebiasBatchArgs {
    /// Batch CSV with columns batch, y, x0, x1, ...
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Args)]
struct InferArgs {
    /// estimates.json written by a debias command.
    #[arg(long)]
    estimates: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Comma-separated coordinates; all when omitted.
    #[arg(long, value_delimiter = ',')]
    coords: Option<Vec<usize>>,
    /// Add Benjamini–Yekutieli selection over the listed coordinates.
    #[arg(long)]
    by: bool,
}

#[derive(Serialize, Deserialize)]
struct EstimateFile {
    lasso: DVector<f64>,
    lambda: f64,
    estimate: DebiasedEstimate,
}

#[derive(Serialize)]
struct ModelFile {
    coeffs: Vec<Vec<Vec<f64>>>,
    noise_cov: Vec<Vec<f64>>,
    spikes: Vec<Vec<Vec<bool>>>,
    rejected_draws: usize,
}

#[derive(Serialize)]
struct TruthFile<'a> {
    theta0: &'a [f64],
    theta_int: &'a [f64],
}

/// Row-major nested form, so JSON readers see `m[i][j]`.
fn nested<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_matrix(path: &Path) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut values = Vec::new();
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            bail!("row {} has {} fields, expected {}", line + 1, record.len(), header.len());
        }
        for field in record.iter() {
            values.push(field.trim().parse::<f64>().with_context(|| format!("row {}: bad number {field:?}", line + 1))?);
        }
        rows += 1;
    }
    Ok((header.clone(), DMatrix::from_row_slice(rows, header.len(), &values)))
}

fn write_matrix(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(fmt))?;
    }
    w.flush()?;
    Ok(())
}

fn simulate_ts(args: &SimTsArgs, seed: u64, out: &Path) -> Result<()> {
    let mut rng = replicate_rng(seed, 0);
    let noise_cov = build_sigma_zeta(args.p, args.rho, args.cov.into())?;
    let noise_sd = args.noise_sd.unwrap_or(1.0 / args.p as f64);
    let (model, draw, rejected) = gen_stationary_coefficients(args.p, args.d, args.q, args.b, noise_sd, &noise_cov, 1000, &mut rng)?;
    let series = gen_var_series(&model, args.t, args.burn_in, false, &mut rng)?;
    let header: Vec<String> = (0..args.p).map(|j| format!("z{j}")).collect();
    write_matrix(&out.join("series.csv"), &header, series.iter().map(|z| z.iter().copied().collect()))?;
    write_json(
        &out.join("model.json"),
        &ModelFile {
            coeffs: model.coeffs().iter().map(nested).collect(),
            noise_cov: nested(model.noise_cov()),
            spikes: draw.spikes.iter().map(nested).collect(),
            rejected_draws: rejected,
        },
    )
}

fn simulate_batch(args: &SimBatchArgs, seed: u64, out: &Path) -> Result<()> {
    if args.s0 > args.p {
        bail!("s0 = {} exceeds p = {}", args.s0, args.p);
    }
    let mut rng = replicate_rng(seed, 0);
    let sigma_x = tridiagonal(args.p, args.diag, args.off);
    let theta0 = DVector::from_fn(args.p, |a, _| if a < args.s0 { 1.0 } else { 0.0 });
    let intermediate = match args.ridge {
        Some(lambda) => Intermediate::Ridge { lambda },
        None => Intermediate::default(),
    };
    let (design, _) = gen_batch_data(&theta0, &sigma_x, args.n1, args.n2, args.varsigma_bar, intermediate, args.noise_sd, &mut rng)?;
    let mut header = vec!["batch".to_owned(), "y".to_owned()];
    header.extend((0..args.p).map(|j| format!("x{j}")));
    fn rows(batch: f64, x: &DMatrix<f64>, y: &DVector<f64>) -> Vec<Vec<f64>> {
        (0..x.nrows())
            .map(|t| [batch, y[t]].into_iter().chain(x.row(t).iter().copied()).collect())
            .collect()
    }
    let mut all = rows(1.0, &design.x1, &design.y1);
    all.extend(rows(2.0, &design.x2, &design.y2));
    write_matrix(&out.join("batch.csv"), &header, all.into_iter())?;
    write_json(&out.join("truth.json"), &TruthFile { theta0: theta0.as_slice(), theta_int: design.theta_int.as_slice() })
}

fn lasso_and_sigma(problem: &RegressionProblem, est: &EstimatorArgs, lambda: f64) -> Result<(DVector<f64>, f64)> {
    let fit = fit_lasso(problem, &LassoConfig { lambda, lambda0: est.lambda0, ..LassoConfig::default() })?;
    let sigma = match est.sigma {
        Some(s) => s,
        None => estimate_sigma(problem, &fit.theta)?,
    };
    Ok((fit.theta, sigma))
}

/// Noise level used to set λ before σ is known: the supplied σ or the sample
/// standard deviation of the response.
fn pilot_sigma(problem: &RegressionProblem, sigma: Option<f64>) -> f64 {
    sigma.unwrap_or_else(|| {
        let y = &problem.y;
        let mean = y.mean();
        (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len().max(2).saturating_sub(1) as f64).sqrt().max(1e-12)
    })
}

fn debias_ts(args: &DebiasTsArgs, out: &Path) -> Result<()> {
    let (_, data) = read_matrix(&args.data)?;
    let series: Vec<DVector<f64>> = data.row_iter().map(|r| r.transpose()).collect();
    let problem = build_regression_view(&series, args.d, args.target)?;
    let (n, p0) = (problem.n(), problem.p0());
    let lambda = default_lambda(n, p0, pilot_sigma(&problem, args.est.sigma), args.est.lambda0);
    let (theta_l, sigma) = lasso_and_sigma(&problem, &args.est, lambda)?;
    let rows: Vec<usize> = (0..p0).collect();
    let estimate = match args.method {
        MethodArg::Online => {
            let schedule = make_schedule(n, args.r0.unwrap_or_else(|| default_r0(n)), args.beta)?;
            OnlineTsDebiaser::fit(&problem.x, schedule, &args.est.adaptive(), &rows)?.estimate(&theta_l, &problem, sigma)?
        }
        MethodArg::Offline => {
            let sigma_hat = gram_rows(&problem.x, 0..n);
            let m = solve_matrix(&sigma_hat, &rows, &args.est.adaptive().resolve(&sigma_hat, n)?, None)?;
            offline_debias(&theta_l, &problem, &m.m, sigma)?
        }
        MethodArg::OfflineSparse => {
            let sigma_hat = gram_rows(&problem.x, 0..n);
            let m = build_offline_m(&sigma_hat, offline_mu(p0, n, args.tau), &rows)?;
            let mut e = offline_debias(&theta_l, &problem, &m.m, sigma)?;
            e.method = Method::OfflineSparse;
            e
        }
        MethodArg::RidgeOnline => ridge_online_baseline(&theta_l, &problem, args.ridge_lambda, &rows, sigma)?,
    };
    write_json(&out.join("estimates.json"), &EstimateFile { lasso: theta_l, lambda, estimate })
}

fn debias_batch(args: &DebiasBatchArgs, out: &Path) -> Result<()> {
    let (header, data) = read_matrix(&args.data)?;
    if header.len() < 3 || header[0] != "batch" || header[1] != "y" {
        bail!("batch CSV needs columns batch, y, x0, ...");
    }
    let p = header.len() - 2;
    let pick = |b: f64| -> (DMatrix<f64>, DVector<f64>) {
        let idx: Vec<usize> = (0..data.nrows()).filter(|&t| data[(t, 0)] == b).collect();
        let x = DMatrix::from_fn(idx.len(), p, |r, c| data[(idx[r], c + 2)]);
        let y = DVector::from_fn(idx.len(), |r, _| data[(idx[r], 1)]);
        (x, y)
    };
    let (x1, y1) = pick(1.0);
    let (x2, y2) = pick(2.0);
    if x1.nrows() + x2.nrows() != data.nrows() {
        bail!("batch column must be 1 or 2");
    }
    let design = BatchDesign::new(x1, y1, x2, y2, DVector::zeros(p), f64::NEG_INFINITY)?;
    let problem = design.stacked()?;
    let lambda = default_lambda(problem.n(), p, pilot_sigma(&problem, args.est.sigma), args.est.lambda0);
    let (theta_l, sigma) = lasso_and_sigma(&problem, &args.est, lambda)?;
    let rows: Vec<usize> = (0..p).collect();
    let (m1, m2) = build_batch_m(&design, &args.est.adaptive(), &rows)?;
    let estimate = online_debias_batch(&theta_l, &design, &m1, &m2, sigma, None)?;
    write_json(&out.join("estimates.json"), &EstimateFile { lasso: theta_l, lambda, estimate })
}

fn run_infer(args: &InferArgs, out: &Path) -> Result<()> {
    let file: EstimateFile = read_json(&args.estimates)?;
    let coords = args.coords.clone().unwrap_or_else(|| (0..file.estimate.p0()).collect());
    let mut report = infer(&file.estimate, &coords, args.alpha)?;
    if args.by {
        let p: Vec<f64> = report.coordinates.iter().map(|c| c.p_value).collect();
        report.by_selected = Some(benjamini_yekutieli(&p, args.alpha).into_iter().map(|k| coords[k]).collect());
    }
    write_json(&out.join("report.json"), &report)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn write_metrics(path: &Path, metrics: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "records",
        "fpr",
        "tpr",
        "coverage",
        "avg_ci_length_scaled",
        "avg_ci_length_raw",
        "mean_estimate_nonnull",
        "residual_ks",
        "residual_mean",
        "residual_sd",
        "noise_ks",
        "noise_mean",
        "noise_sd",
    ])?;
    for m in metrics {
        w.write_record([
            m.method.as_str().to_owned(),
            m.records.to_string(),
            opt(m.fpr),
            opt(m.tpr),
            fmt(m.coverage),
            fmt(m.avg_ci_length_scaled),
            fmt(m.avg_ci_length_raw),
            opt(m.mean_estimate_nonnull),
            opt(m.residual.as_ref().map(|s| s.ks)),
            opt(m.residual.as_ref().map(|s| s.mean)),
            opt(m.residual.as_ref().map(|s| s.sd)),
            opt(m.noise.as_ref().map(|s| s.ks)),
            opt(m.noise.as_ref().map(|s| s.mean)),
            opt(m.noise.as_ref().map(|s| s.sd)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// QQ and PP pairs of rescaled residuals and noise terms, per method.
fn write_diagnostics(path: &Path, config: &ExperimentConfig, records: &[Record]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "series", "plot", "x", "y"])?;
    for &method in &config.methods {
        let mine: Vec<&Record> = records.iter().filter(|r| r.method == method).collect();
        let residual: Vec<f64> = mine.iter().filter_map(|r| r.rescaled_residual()).collect();
        let noise: Vec<f64> = mine.iter().filter_map(|r| r.noise_std).collect();
        for (series, samples) in [("residual", residual), ("noise", noise)] {
            let Ok(d) = normality_diagnostics(&samples) else { continue };
            for (plot, pairs) in [("qq", &d.qq_pairs), ("pp", &d.pp_pairs)] {
                for (x, y) in pairs {
                    w.write_record([method.as_str(), series, plot, &fmt(*x), &fmt(*y)])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn experiment(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut config: ExperimentConfig = read_json(config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let output = run_experiment(&config)?;
    for f in &output.failures {
        eprintln!("replicate {} excluded: {}", f.replicate, f.error);
    }
    write_metrics(&out.join("metrics.csv"), &output.metrics)?;
    write_json(&out.join("records.json"), &output)?;
    write_diagnostics(&out.join("diagnostics.csv"), &config, &output.records)?;
    for m in &output.metrics {
        println!(
            "{}: coverage {:.4} fpr {} tpr {} ci {:.4}",
            m.method.as_str(),
            m.coverage,
            m.fpr.map_or("-".into(), |v| format!("{v:.4}")),
            m.tpr.map_or("-".into(), |v| format!("{v:.4}")),
            m.avg_ci_length_scaled
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let out = cli.out_dir.as_path();
    let seed_given = std::env::args().any(|a| a == "--seed" || a.starts_with("--seed="));
    match &cli.command {
        Command::Simulate { kind: SimulateKind::Ts(a) } => simulate_ts(a, cli.seed, out),
        Command::Simulate { kind: SimulateKind::Batch(a) } => simulate_batch(a, cli.seed, out),
        Command::DebiasTs(a) => debias_ts(a, out),
        Command::DebiasBatch(a) => debias_batch(a, out),
        Command::Infer(a) => run_infer(a, out),
        Command::Experiment { config } => experiment(config, seed_given.then_some(cli.seed), out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn cli_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
