//! Command-line front end.
//!
//! `brb simulate --config run.toml` writes a result bundle (dataset CSV,
//! histograms, fit report, summary, config echo, manifest, plots) to the
//! output directory. `characterize` fits a dataset CSV, `validate` compares
//! the exact and first-order simulators against the analytical dephasing
//! model and `calibrate-c` estimates the correlation constants.

pub mod config;
pub mod io;
pub mod plot;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{BrbError, Result};
use crate::models::{
    self, AnalyticalModel, C_DC, C_MARKOVIAN, CalibrationOptions, FitReport, SelectOptions,
};
use crate::noise::{Correlation, NoiseKind, NoiseSpec};
use crate::protocol::{DrivePhysics, ExperimentPlan};
use crate::sim::{self, DEFAULT_BUDGET, FidelityDataset, LengthSummary, RunOptions, SimModel};

use config::{AnalysisFile, RunConfig};
use plot::{Plot, Style};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const OUT_DIR_ENV: &str = "BRB_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "brb", version, about = "Bosonic randomized benchmarking toolkit")]
struct Cli {
    /// Run config (simulate) or drive/analysis settings (characterize, calibrate-c).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "brb-out")]
    out: PathBuf,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Max single-step evaluations a command may perform.
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Suppress the summary printed to stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    fn report(&self, summary: &str, what: &str, dir: &Path) {
        if !self.quiet {
            print!("{summary}");
            println!("{what} written to {}", dir.display());
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the config's experiment and write a result bundle.
    Simulate,
    /// Fit decay models to a dataset CSV.
    Characterize {
        dataset: PathBuf,
    },
    /// Compare exact, first-order and analytical dephasing statistics.
    Validate(GridArgs),
    /// Estimate the correlation constants for Markovian and DC dephasing.
    CalibrateC(CalibrateArgs),
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Circuits per length.
    #[arg(long, default_value_t = 100)]
    randomizations: usize,
    /// Noise realizations per circuit.
    #[arg(long, default_value_t = 500)]
    noise_averages: usize,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 100)]
    randomizations: usize,
    #[arg(long, default_value_t = 500)]
    noise_averages: usize,
    /// Decay rate η of the simulated dephasing.
    #[arg(long, default_value_t = 0.1)]
    eta: f64,
    /// Simulator for the calibration runs.
    #[arg(long, value_enum, default_value = "first-order")]
    model: ModelArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    Exact,
    FirstOrder,
}

impl From<ModelArg> for SimModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Exact => SimModel::Exact,
            ModelArg::FirstOrder => SimModel::FirstOrder,
        }
    }
}

/// Process exit status for an error.
pub fn exit_code(e: &BrbError) -> i32 {
    match e {
        BrbError::Config(_) | BrbError::Schema { .. } | BrbError::InvalidArgument(_) => 2,
        BrbError::BudgetExceeded { .. } => 3,
        BrbError::FitFailure(_) => 4,
        BrbError::Io(_) | BrbError::Json(_) => 1,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("brb: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let work = || match &cli.command {
        Command::Simulate => cmd_simulate(cli),
        Command::Characterize { dataset } => cmd_characterize(cli, dataset),
        Command::Validate(g) => cmd_validate(cli, g),
        Command::CalibrateC(c) => cmd_calibrate(cli, c),
    };
    match cli.threads {
        Some(0) => Err(BrbError::invalid("--threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BrbError::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

/// Records which files a command wrote.
struct Bundle {
    dir: PathBuf,
    files: Vec<String>,
    plots: bool,
}

impl Bundle {
    fn create(dir: &Path, plots: bool) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        if plots {
            std::fs::create_dir_all(dir.join("plots"))?;
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), plots })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(p, text)?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.path(name);
        io::write_json(value, &p)
    }

    fn plot(&mut self, name: &str, plot: Plot) -> Result<()> {
        if self.plots {
            self.text(&format!("plots/{name}"), &plot.render())?;
        }
        Ok(())
    }

    fn manifest(mut self, command: &str, seed: Option<u64>) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'a str,
            version: &'a str,
            command: &'a str,
            seed: Option<u64>,
            files: &'a [String],
        }
        self.files.sort();
        let m = Manifest { tool: "brb", version: VERSION, command, seed, files: &self.files };
        io::write_json(&m, &self.dir.join("manifest.json"))?;
        Ok(self.dir)
    }
}

#[derive(Serialize)]
struct Provenance<'a, T: Serialize> {
    tool: &'a str,
    version: &'a str,
    command: &'a str,
    #[serde(flatten)]
    body: T,
}

fn provenance<'a, T: Serialize>(command: &'a str, body: T) -> Provenance<'a, T> {
    Provenance { tool: "brb", version: VERSION, command, body }
}

fn correlation_constant(spec: &NoiseSpec, steps: usize) -> Option<f64> {
    if spec.kind != NoiseKind::Dephasing || !spec.correlation.is_modelled(steps) {
        return None;
    }
    Some(if spec.correlation.block_length(steps) == 1 { C_MARKOVIAN } else { C_DC })
}

/// Analytical model for a run; `None` when the correlation length falls
/// between the modelled limits.
fn analytical_for(spec: &NoiseSpec, plan: &ExperimentPlan) -> Result<Option<AnalyticalModel>> {
    let modelled = plan.lengths.iter().all(|&j| spec.correlation.is_modelled(j));
    if !modelled {
        return Ok(None);
    }
    let eta = models::eta_for(spec, &plan.drive)?;
    let c = plan.lengths.last().and_then(|&j| correlation_constant(spec, j));
    AnalyticalModel::new(spec.kind, eta, c).map(Some)
}

fn fine_grid(max: f64) -> Vec<f64> {
    (0..=200).map(|i| max * i as f64 / 200.0).collect()
}

fn cmd_simulate(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| BrbError::Config("simulate needs --config <file>".into()))?;
    let mut cfg = RunConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(budget) = cli.budget {
        cfg.budget = Some(budget);
    }
    cfg.budget = Some(cfg.budget.unwrap_or(DEFAULT_BUDGET));
    let resolved = cfg.resolve()?;
    let (plan, noise, options) = (&resolved.plan, &resolved.noise, &resolved.options);
    let ds = sim::run_brb(plan, noise, options)?;

    let mut bundle = Bundle::create(&cli.out, cfg.output.plots)?;
    let p = bundle.path("dataset.csv");
    io::write_dataset_file(&ds, &p)?;
    let p = bundle.path("histograms.csv");
    io::write_histograms(&ds, cfg.output.histogram_bins, std::fs::File::create(p)?)?;
    bundle.text("config.toml", &cfg.to_toml()?)?;

    let analytical = analytical_for(noise, plan)?;
    let fit = models::select_model(&ds, &cfg.select_options()?);
    match &fit {
        Ok(report) => bundle.json("fit_report.json", &provenance("simulate", report))?,
        Err(e) => log::warn!("model fit skipped: {e}"),
    }
    let summary = simulate_summary(&cfg, plan, noise, options, &ds, analytical.as_ref(), fit.as_ref().ok());
    bundle.text("summary.txt", &summary)?;

    let summaries = ds.summaries();
    let max_l = summaries.last().map_or(1.0, |s| s.length);
    let mut means = Plot::new("Mean fidelity", "L", "E[F]").series(
        "simulated",
        summaries.iter().map(|s| (s.length, s.mean)).collect(),
        Style::Markers,
    );
    if let Some(m) = &analytical {
        means = means.series("analytical", fine_grid(max_l).into_iter().map(|l| (l, m.mean(l))).collect(), Style::Line);
    }
    bundle.plot("mean.svg", means)?;
    let mut vars = Plot::new("Fidelity variance over circuits", "L", "V[F]").series(
        "simulated",
        summaries.iter().map(|s| (s.length, s.variance)).collect(),
        Style::Markers,
    );
    if let Some(m) = analytical.filter(|m| m.correlation_constant.is_some()) {
        vars = vars.series(
            "analytical",
            fine_grid(max_l).into_iter().filter_map(|l| m.variance(l).map(|v| (l, v))).collect(),
            Style::Line,
        );
    }
    bundle.plot("variance.svg", vars)?;
    let bins = cfg.output.histogram_bins;
    for (l, counts) in io::histograms(&ds, bins) {
        let bars = counts
            .iter()
            .enumerate()
            .map(|(b, &c)| ((b as f64 + 0.5) / bins as f64, c as f64))
            .collect();
        bundle.plot(
            &format!("histogram_L{l}.svg"),
            Plot::new(format!("F distribution at L = {l}"), "F", "circuits").series("counts", bars, Style::Bars),
        )?;
    }

    let dir = bundle.manifest("simulate", Some(cfg.seed))?;
    cli.report(&summary, "bundle", &dir);
    Ok(())
}

fn simulate_summary(
    cfg: &RunConfig,
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    options: &RunOptions,
    ds: &FidelityDataset,
    analytical: Option<&AnalyticalModel>,
    fit: Option<&FitReport>,
) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "brb {VERSION} simulate");
    let _ = writeln!(s, "seed {}", cfg.seed);
    let _ = writeln!(
        s,
        "noise {} sigma {} correlation {}; model {:?}, estimator {:?}, shots {}",
        noise.kind.as_str(),
        noise.sigma,
        noise.correlation,
        options.model,
        options.estimator,
        plan.shots
    );
    let _ = writeln!(
        s,
        "N = {} circuits, M = {} noise averages, {} step evaluations",
        plan.randomizations,
        plan.noise_averages,
        plan.cost()
    );
    match analytical {
        Some(m) => {
            let _ = writeln!(s, "analytical eta = {:.6}", m.eta);
        }
        None => {
            let _ = writeln!(
                s,
                "warning: correlation length {} lies between the Markovian and DC limits; \
                 analytical predictions are extrapolations and are not reported",
                noise.correlation
            );
        }
    }
    s.push('\n');
    let _ = writeln!(
        s,
        "{:>10} {:>6} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "L", "N", "mean", "stderr", "variance", "model_mean", "model_var"
    );
    for LengthSummary { length, circuits, mean, variance, stderr } in ds.summaries() {
        let mm = analytical.map(|m| format!("{:.6}", m.mean(length))).unwrap_or_else(|| "-".into());
        let mv = analytical
            .and_then(|m| m.variance(length))
            .map(|v| format!("{v:.3e}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{length:>10} {circuits:>6} {mean:>12.6} {stderr:>12.3e} {variance:>12.3e} {mm:>12} {mv:>12}"
        );
    }
    if let Some(r) = fit {
        s.push('\n');
        fit_summary(&mut s, r);
    }
    s
}

fn fit_summary(s: &mut String, r: &FitReport) {
    for c in &r.candidates {
        let _ = writeln!(
            s,
            "fit {:<9} eta = {:.6} ± {:.2e}  rss = {:.3e}  aic = {:.3}  points = {}",
            c.family.as_str(),
            c.eta,
            c.eta_stderr,
            c.rss,
            c.aic,
            c.points
        );
    }
    match r.selected {
        Some(f) => {
            let _ = writeln!(s, "selected: {}{}", f.as_str(), if r.ambiguous { " (ambiguous)" } else { "" });
        }
        None => {
            let _ = writeln!(s, "selected: none (no decay)");
        }
    }
    if let Some(k) = r.linear_kind {
        let _ = writeln!(s, "linear decay attributed to: {k:?}");
    }
    for p in &r.physical {
        let _ = writeln!(s, "{} = {:.6e} {}", p.name, p.value, p.unit);
    }
    if let Some(c) = &r.correlation {
        let chat = c.c_hat.map_or("-".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(s, "correlation: {:?} (C = {chat})", c.class);
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
}

fn cmd_characterize(cli: &Cli, dataset: &Path) -> Result<()> {
    let ds = io::read_dataset_file(dataset)?;
    let settings = match &cli.config {
        Some(p) => AnalysisFile::from_path(p)?,
        None => AnalysisFile::default(),
    };
    let options = settings.select_options()?;
    let report = models::select_model(&ds, &options)?;

    #[derive(Serialize)]
    struct Body<'a> {
        dataset: String,
        options: &'a SelectOptions,
        report: &'a FitReport,
    }
    let mut bundle = Bundle::create(&cli.out, true)?;
    bundle.json(
        "fit_report.json",
        &provenance("characterize", Body { dataset: dataset.display().to_string(), options: &options, report: &report }),
    )?;
    let mut summary = format!("brb {VERSION} characterize {}\n", dataset.display());
    fit_summary(&mut summary, &report);
    bundle.text("summary.txt", &summary)?;

    let max_l = report.points.last().map_or(1.0, |p| p.length);
    let mut plot = Plot::new("Normalized mean fidelity", "L", "E[F]").series(
        "data",
        report.points.iter().map(|p| (p.length, p.normalized_mean)).collect(),
        Style::Markers,
    );
    for c in &report.candidates {
        plot = plot.series(
            c.family.as_str(),
            fine_grid(max_l).into_iter().map(|l| (l, c.family.mean(c.eta, l))).collect(),
            Style::Line,
        );
    }
    bundle.plot("fit.svg", plot)?;
    bundle.plot(
        "variance.svg",
        Plot::new("Baseline-offset variance", "L", "V[F]").series(
            "data",
            report.points.iter().map(|p| (p.length, p.offset_variance)).collect(),
            Style::Markers,
        ),
    )?;
    let dir = bundle.manifest("characterize", None)?;
    cli.report(&summary, "report", &dir);
    Ok(())
}

/// One row of the exact/first-order/analytical comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceRow {
    pub length: f64,
    pub exact_mean: f64,
    pub first_order_mean: f64,
    pub analytical_mean: f64,
    pub exact_variance: f64,
    pub first_order_variance: f64,
    pub analytical_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationCase {
    pub sigma_hz: f64,
    pub correlation: Correlation,
    pub eta: f64,
    pub correlation_constant: f64,
    pub rows: Vec<DivergenceRow>,
    /// Max |exact - analytical| mean gap over L ≤ 2.
    pub max_gap_short: f64,
    pub max_gap: f64,
    /// Least-squares slope of |exact - analytical| against L.
    pub gap_slope: f64,
}

pub const VALIDATION_RABI_HZ: f64 = 1650.0;
pub const VALIDATION_STEP: f64 = 0.1;
pub const VALIDATION_SIGMAS_HZ: [f64; 2] = [200.0, 1000.0];

/// Runs the comparison grid: J = 4, 8, …, 64 at |α0| = 0.1.
pub fn validation_grid(
    randomizations: usize,
    noise_averages: usize,
    seed: u64,
    budget: u64,
) -> Result<Vec<ValidationCase>> {
    let drive = DrivePhysics::from_rabi_hz(VALIDATION_RABI_HZ, VALIDATION_STEP)?;
    let steps: Vec<usize> = (1..=16).map(|k| 4 * k).collect();
    let plan = ExperimentPlan::new(drive, steps, randomizations, noise_averages, seed)?;
    let cases: Vec<(f64, Correlation)> = VALIDATION_SIGMAS_HZ
        .iter()
        .flat_map(|&s| [(s, Correlation::Markovian), (s, Correlation::Dc)])
        .collect();
    let total = plan.cost().saturating_mul(2 * cases.len() as u64);
    if total > budget {
        return Err(BrbError::BudgetExceeded { requested: total, budget });
    }
    cases
        .into_iter()
        .map(|(sigma_hz, correlation)| {
            let noise = NoiseSpec::dephasing(std::f64::consts::TAU * sigma_hz, correlation)?;
            let eta = models::eta_for(&noise, &drive)?;
            let c = if correlation == Correlation::Dc { C_DC } else { C_MARKOVIAN };
            let model = AnalyticalModel::new(NoiseKind::Dephasing, eta, Some(c))?;
            let run = |m: SimModel| sim::run_brb(&plan, &noise, &RunOptions::default().with_model(m).with_budget(budget));
            let exact = run(SimModel::Exact)?.summaries();
            let first = run(SimModel::FirstOrder)?.summaries();
            let rows: Vec<DivergenceRow> = exact
                .iter()
                .zip(&first)
                .map(|(e, f)| DivergenceRow {
                    length: e.length,
                    exact_mean: e.mean,
                    first_order_mean: f.mean,
                    analytical_mean: model.mean(e.length),
                    exact_variance: e.variance,
                    first_order_variance: f.variance,
                    analytical_variance: model.variance(e.length).unwrap_or(f64::NAN),
                })
                .collect();
            let gaps: Vec<(f64, f64)> = rows.iter().map(|r| (r.length, (r.exact_mean - r.analytical_mean).abs())).collect();
            let max_gap_short = gaps.iter().filter(|g| g.0 <= 2.0 + 1e-9).map(|g| g.1).fold(0.0, f64::max);
            let max_gap = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
            Ok(ValidationCase {
                sigma_hz,
                correlation,
                eta,
                correlation_constant: c,
                rows,
                max_gap_short,
                max_gap,
                gap_slope: slope(&gaps),
            })
        })
        .collect()
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx > 0.0 { sxy / sxx } else { 0.0 }
}

fn cmd_validate(cli: &Cli, g: &GridArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let budget = cli.budget.unwrap_or(DEFAULT_BUDGET);
    let cases = validation_grid(g.randomizations, g.noise_averages, seed, budget)?;

    let mut bundle = Bundle::create(&cli.out, true)?;
    #[derive(Serialize)]
    struct Body<'a> {
        seed: u64,
        rabi_frequency_hz: f64,
        step_magnitude: f64,
        randomizations: usize,
        noise_averages: usize,
        cases: &'a [ValidationCase],
    }
    bundle.json(
        "validate.json",
        &provenance(
            "validate",
            Body {
                seed,
                rabi_frequency_hz: VALIDATION_RABI_HZ,
                step_magnitude: VALIDATION_STEP,
                randomizations: g.randomizations,
                noise_averages: g.noise_averages,
                cases: &cases,
            },
        ),
    )?;
    let mut s = format!(
        "brb {VERSION} validate (seed {seed}, N = {}, M = {})\n",
        g.randomizations, g.noise_averages
    );
    for c in &cases {
        let _ = writeln!(
            s,
            "\nsigma/2pi = {} Hz, {} correlation, eta = {:.5}, C = {}",
            c.sigma_hz, c.correlation, c.eta, c.correlation_constant
        );
        let _ = writeln!(
            s,
            "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "L", "E_exact", "E_first", "E_model", "|gap|", "V_exact", "V_first", "V_model"
        );
        for r in &c.rows {
            let _ = writeln!(
                s,
                "{:>6.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.3e} {:>10.3e} {:>10.3e}",
                r.length,
                r.exact_mean,
                r.first_order_mean,
                r.analytical_mean,
                (r.exact_mean - r.analytical_mean).abs(),
                r.exact_variance,
                r.first_order_variance,
                r.analytical_variance
            );
        }
        let _ = writeln!(
            s,
            "max |gap| for L <= 2: {:.5}; overall: {:.5}; gap slope: {:.5} per unit L",
            c.max_gap_short, c.max_gap, c.gap_slope
        );
        let tag = format!("{}hz_{}", c.sigma_hz, c.correlation);
        let max_l = c.rows.last().map_or(1.0, |r| r.length);
        let model = AnalyticalModel::new(NoiseKind::Dephasing, c.eta, Some(c.correlation_constant))?;
        let title = format!("σ/2π = {} Hz, {}", c.sigma_hz, c.correlation);
        bundle.plot(
            &format!("mean_{tag}.svg"),
            Plot::new(format!("Mean fidelity, {title}"), "L", "E[F]")
                .series("exact", c.rows.iter().map(|r| (r.length, r.exact_mean)).collect(), Style::Markers)
                .series("first order", c.rows.iter().map(|r| (r.length, r.first_order_mean)).collect(), Style::Markers)
                .series("analytical", fine_grid(max_l).into_iter().map(|l| (l, model.mean(l))).collect(), Style::Line),
        )?;
        bundle.plot(
            &format!("variance_{tag}.svg"),
            Plot::new(format!("Fidelity variance, {title}"), "L", "V[F]")
                .series("exact", c.rows.iter().map(|r| (r.length, r.exact_variance)).collect(), Style::Markers)
                .series(
                    "first order",
                    c.rows.iter().map(|r| (r.length, r.first_order_variance)).collect(),
                    Style::Markers,
                )
                .series(
                    "analytical",
                    fine_grid(max_l).into_iter().filter_map(|l| model.variance(l).map(|v| (l, v))).collect(),
                    Style::Line,
                ),
        )?;
    }
    bundle.text("validate.txt", &s)?;
    let dir = bundle.manifest("validate", Some(seed))?;
    cli.report(&s, "report", &dir);
    Ok(())
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<()> {
    let drive = match &cli.config {
        Some(p) => AnalysisFile::from_path(p)?.select_options()?.drive,
        None => None,
    };
    let drive = match drive {
        Some(d) => d,
        None => config::DriveConfig::default().physics()?,
    };
    let options = CalibrationOptions {
        eta: a.eta,
        randomizations: a.randomizations,
        noise_averages: a.noise_averages,
        model: a.model.into(),
        seed: cli.seed.unwrap_or(0),
        budget: cli.budget.unwrap_or(DEFAULT_BUDGET),
        ..CalibrationOptions::default()
    };
    let results = [Correlation::Markovian, Correlation::Dc]
        .into_iter()
        .map(|c| models::calibrate_c(NoiseKind::Dephasing, c, &drive, &options))
        .collect::<Result<Vec<_>>>()?;

    #[derive(Serialize)]
    struct Body<'a> {
        drive: DrivePhysics,
        options: CalibrationOptions,
        reference: [(&'a str, f64); 2],
        results: &'a [models::Calibration],
    }
    let mut bundle = Bundle::create(&cli.out, true)?;
    bundle.json(
        "calibration.json",
        &provenance(
            "calibrate-c",
            Body { drive, options, reference: [("markovian", C_MARKOVIAN), ("dc", C_DC)], results: &results },
        ),
    )?;
    let mut s = format!("brb {VERSION} calibrate-c (seed {}, eta {})\n", options.seed, options.eta);
    let mut plot = Plot::new("Variance against E(1-E)²/(2-E)", "E(1-E)²/(2-E)", "V[F]");
    for r in &results {
        let _ = writeln!(
            s,
            "{:<10} C = {:.4}  residual = {:.3}{}",
            r.correlation.to_string(),
            r.c_hat,
            r.residual,
            if r.partial { "  (budget-limited grid)" } else { "" }
        );
        let g: Vec<f64> = r.means.iter().map(|&e| e * (1.0 - e).powi(2) / (2.0 - e)).collect();
        plot = plot.series(
            format!("{} data", r.correlation),
            g.iter().copied().zip(r.variances.iter().copied()).collect(),
            Style::Markers,
        );
        let gmax = g.iter().copied().fold(0.0, f64::max);
        plot = plot.series(format!("C = {:.3}", r.c_hat), vec![(0.0, 0.0), (gmax, r.c_hat * gmax)], Style::Line);
    }
    bundle.text("summary.txt", &s)?;
    bundle.plot("calibration.svg", plot)?;
    let dir = bundle.manifest("calibrate-c", Some(options.seed))?;
    cli.report(&s, "calibration", &dir);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&BrbError::Config("x".into())), 2);
        assert_eq!(exit_code(&BrbError::Schema { row: 2, column: "M".into(), message: "x".into() }), 2);
        assert_eq!(exit_code(&BrbError::BudgetExceeded { requested: 2, budget: 1 }), 3);
        assert_eq!(exit_code(&BrbError::FitFailure("x".into())), 4);
    }

    #[test]
    fn slope_of_line() {
        assert!((slope(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn intermediate_correlation_has_no_model() {
        let drive = DrivePhysics::from_rabi_hz(1680.0, 0.1).unwrap();
        let plan = ExperimentPlan::new(drive, vec![4, 8], 2, 2, 0).unwrap();
        let n = NoiseSpec::dephasing(1000.0, Correlation::Steps(2)).unwrap();
        assert!(analytical_for(&n, &plan).unwrap().is_none());
        let n = NoiseSpec::dephasing(1000.0, Correlation::Dc).unwrap();
        assert_eq!(analytical_for(&n, &plan).unwrap().unwrap().correlation_constant, Some(C_DC));
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["brb", "frobnicate"]), 2);
    }
}
