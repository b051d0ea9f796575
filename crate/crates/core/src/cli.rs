//! The `ensemble-pac` command line.
//!
//! Exit codes: 0 on success, 1 on invalid input, 2 when an internal
//! invariant fails. Errors are printed to stderr as a JSON object
//! `{"error": {"kind": ..., "message": ...}}`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::aggregate::{predict_all, Aggregation};
use crate::bounds::DEFAULT_DELTA;
use crate::data::{load_manifest, read_weights, write_manifest, Ensemble, PredictionMode, WeightDistribution};
use crate::optimize::{Objective, OptimizerConfig};
use crate::protocol::{
    accuracies, certify, fit, loss_tables, subsample_protocol, ttcv_run, Accuracies, Fit, SubsampleConfig,
    Weighting,
};
use crate::report::{
    subsample_csv, sweep_csv, BoundSummary, MemberWeight, OptimizationSummary, RunConfig, RunReport,
    FORMAT_VERSION,
};
use crate::sim::{bound_coverage_experiment, cancellation_sweep, generate_ensemble, SyntheticSpec};

#[derive(Debug, Parser)]
#[command(name = "ensemble-pac", version, about = "Tandem-loss PAC-Bayesian ensemble weighting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize the weights and report bounds and accuracies.
    Optimize(OptimizeArgs),
    /// Evaluate the bounds at given (or uniform) weights.
    Bound(BoundArgs),
    /// Write aggregated predictions, one label per example.
    Predict(PredictArgs),
    /// Test-time cross-validation: fit on one half, evaluate on the other.
    Ttcv(TtcvArgs),
    /// Synthetic-ensemble experiments.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    Tandem,
    FirstOrder,
    Uniform,
}

impl ObjectiveArg {
    fn weighting(self) -> Weighting {
        match self {
            ObjectiveArg::Tandem => Weighting::Optimize(Objective::Tandem),
            ObjectiveArg::FirstOrder => Weighting::Optimize(Objective::FirstOrder),
            ObjectiveArg::Uniform => Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mv,
    Avg,
    Both,
}

impl AggregationArg {
    fn list(self) -> Vec<Aggregation> {
        match self {
            AggregationArg::Mv => vec![Aggregation::MajorityVote],
            AggregationArg::Avg => vec![Aggregation::Average],
            AggregationArg::Both => vec![Aggregation::MajorityVote, Aggregation::Average],
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_DELTA)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizerArgs {
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

impl OptimizerArgs {
    fn config(&self, seed: u64) -> OptimizerConfig {
        let mut cfg = OptimizerConfig {
            seed,
            ..OptimizerConfig::default()
        };
        if let Some(m) = self.max_iters {
            cfg.max_outer_iters = m;
        }
        if let Some(t) = self.tol {
            cfg.tolerance = t;
        }
        cfg
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Tandem)]
    pub objective: ObjectiveArg,
    #[arg(long, value_enum, default_value_t = AggregationArg::Both)]
    pub aggregation: AggregationArg,
    /// Also run test-time cross-validation.
    #[arg(long)]
    pub ttcv: bool,
    /// Draw member subsets of this size.
    #[arg(long, requires = "repeats")]
    pub subsample: Option<usize>,
    #[arg(long, requires = "subsample")]
    pub repeats: Option<usize>,
    /// Flat CSV with one row per subsampling repeat.
    #[arg(long, requires = "subsample")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Weights file, one decimal per member; uniform when omitted.
    #[arg(long)]
    pub rho: Option<PathBuf>,
    /// Fixed trade-off in (0, 2); closed-form optimum when omitted.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, conflicts_with = "objective")]
    pub rho: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mv)]
    pub aggregation: AggregationArg,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Clone, Args)]
pub struct TtcvArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Tandem)]
    pub objective: ObjectiveArg,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Majority-vote error versus ensemble size: exact, Hoeffding and Monte Carlo.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Error rate of every member; defaults to the spec's first rate.
        #[arg(long)]
        error_rate: Option<f64>,
        /// Largest ensemble size; odd sizes 1, 3, ... up to it are swept.
        #[arg(long, default_value_t = 101)]
        max_members: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fraction of fresh hold-out draws on which the optimized tandem bound
    /// holds.
    Coverage {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a synthetic ensemble and write it as a manifest directory.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "prob")]
        mode: String,
    },
}

#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Internal(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Input(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report_error("usage", &e.to_string());
            return 1;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Input(e)) => {
            report_error("input", &format!("{e:#}"));
            1
        }
        Err(Failure::Internal(msg)) => {
            report_error("internal", &msg);
            2
        }
    }
}

fn report_error(kind: &str, message: &str) {
    let obj = serde_json::json!({ "error": { "kind": kind, "message": message.trim_end() } });
    eprintln!("{obj}");
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Optimize(a) => cmd_optimize(&a),
        Command::Bound(a) => cmd_bound(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Ttcv(a) => cmd_ttcv(&a),
        Command::Simulate(s) => cmd_simulate(s),
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it into
/// place; prints to stdout without a path.
fn emit(path: Option<&Path>, contents: &str) -> CliResult<()> {
    let Some(path) = path else {
        print!("{contents}");
        return Ok(());
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("cannot write {}", path.display()))?;
    tmp.write_all(contents.as_bytes())
        .with_context(|| format!("cannot write {}", path.display()))?;
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

fn load(path: &Path) -> CliResult<Ensemble> {
    Ok(load_manifest(path)?)
}

fn check_delta(delta: f64) -> CliResult<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(crate::Error::DeltaOutOfRange(delta).into());
    }
    Ok(())
}

fn requested_accuracies(ensemble: &Ensemble, rho: &[f64], aggregation: AggregationArg) -> CliResult<Accuracies> {
    let hard = ensemble.set.mode() == Some(PredictionMode::Hard);
    if hard && aggregation == AggregationArg::Avg {
        return Err(crate::Error::HardModeAverage.into());
    }
    let mut acc = accuracies(ensemble, rho)?;
    if aggregation == AggregationArg::Mv {
        acc.avg = None;
    }
    Ok(acc)
}

fn weighting_name(w: &Weighting) -> String {
    match w {
        Weighting::Uniform => "uniform".into(),
        Weighting::Optimize(Objective::Tandem) => "tandem".into(),
        Weighting::Optimize(Objective::FirstOrder) => "first-order".into(),
        Weighting::Fixed(_) => "fixed".into(),
    }
}

fn member_weights(ensemble: &Ensemble, rho: &[f64]) -> Vec<MemberWeight> {
    ensemble
        .set
        .members()
        .iter()
        .zip(rho)
        .map(|(m, &weight)| MemberWeight {
            id: m.id.clone(),
            run_id: m.run_id.clone(),
            weight,
        })
        .collect()
}

/// Assembles the common part of a report from a fit.
fn base_report(command: &str, config: RunConfig, ensemble: &Ensemble, weighting: &Weighting, fit: &Fit) -> RunReport {
    let chosen = match weighting {
        Weighting::Optimize(Objective::FirstOrder) => &fit.first_order,
        _ => &fit.tandem,
    };
    RunReport {
        format_version: FORMAT_VERSION.into(),
        command: command.into(),
        seed: config.seed,
        config,
        members: member_weights(ensemble, &fit.rho),
        rho: fit.rho.clone(),
        lambda: chosen.lambda,
        kl: chosen.kl,
        bounds: BoundSummary::new(&fit.tandem, &fit.first_order),
        accuracies: None,
        optimization: match weighting {
            Weighting::Optimize(_) => Some(OptimizationSummary {
                iterations: fit.iterations,
                converged: fit.converged,
                trace: fit.trace.clone(),
            }),
            _ => None,
        },
        folds: None,
        subsample: None,
    }
}

/// Optimized weights can never certify worse than uniform weights.
fn check_never_worse(ensemble: &Ensemble, weighting: &Weighting, fit: &Fit, delta: f64) -> CliResult<()> {
    let Weighting::Optimize(objective) = weighting else {
        return Ok(());
    };
    let loss = loss_tables(ensemble)?;
    let p = crate::bounds::BoundParams::for_tables(delta, &loss)?;
    let uniform = crate::data::uniform(ensemble.num_members());
    let (t, f) = certify(&loss, &uniform, &ensemble.prior, p)?;
    let (got, base) = match objective {
        Objective::Tandem => (fit.tandem.raw_value, t.raw_value),
        Objective::FirstOrder => (fit.first_order.raw_value, f.raw_value),
    };
    if got > base {
        return Err(Failure::Internal(format!(
            "optimized bound {got} exceeds the uniform-weight bound {base}"
        )));
    }
    Ok(())
}

fn cmd_optimize_report(a: &OptimizeArgs) -> CliResult<RunReport> {
    check_delta(a.common.delta)?;
    let ensemble = load(&a.common.manifest)?;
    let weighting = a.objective.weighting();
    let cfg = a.optimizer.config(a.common.seed);
    cfg.validate()?;
    let config = RunConfig {
        manifest: a.common.manifest.display().to_string(),
        delta: a.common.delta,
        weighting: weighting_name(&weighting),
        aggregations: a.aggregation.list(),
        seed: a.common.seed,
        optimizer: cfg.clone(),
        ttcv: a.ttcv,
        subsample_members: a.subsample,
        subsample_repeats: a.repeats,
        lambda: None,
    };

    let fit = fit(&ensemble, &weighting, a.common.delta, &cfg)?;
    check_never_worse(&ensemble, &weighting, &fit, a.common.delta)?;
    let mut report = base_report("optimize", config, &ensemble, &weighting, &fit);
    report.accuracies = Some(requested_accuracies(&ensemble, &fit.rho, a.aggregation)?);
    if a.ttcv {
        report.folds = Some(ttcv_run(&ensemble, &weighting, a.common.delta, &cfg, a.common.seed)?);
    }
    if let (Some(members), Some(repeats)) = (a.subsample, a.repeats) {
        let sub = SubsampleConfig {
            members,
            repeats,
            seed: a.common.seed,
            ttcv: a.ttcv,
        };
        report.subsample = Some(subsample_protocol(&ensemble, &sub, &weighting, a.common.delta, &cfg)?);
    }
    Ok(report)
}

fn cmd_optimize(a: &OptimizeArgs) -> CliResult<()> {
    let report = cmd_optimize_report(a)?;
    if let (Some(csv), Some(sub)) = (&a.csv, &report.subsample) {
        emit(Some(csv), &subsample_csv(sub))?;
    }
    emit(a.common.out.as_deref(), &to_json(&report))
}

fn read_rho(path: &Path, m: usize) -> CliResult<Vec<f64>> {
    let rho = read_weights(path)?;
    if rho.len() != m {
        return Err(Failure::Input(anyhow!(
            "{}: weight file has {} entries, the ensemble has {} members",
            path.display(),
            rho.len(),
            m
        )));
    }
    if rho.iter().any(|&r| !(r >= 0.0)) {
        bail_input(format!("{}: weights must be nonnegative", path.display()))?;
    }
    let sum: f64 = rho.iter().sum();
    if !(sum > 0.0) {
        bail_input(format!("{}: weights sum to zero", path.display()))?;
    }
    if (sum - 1.0).abs() > crate::data::SIMPLEX_TOLERANCE {
        return Ok(rho.iter().map(|r| r / sum).collect());
    }
    Ok(rho)
}

fn bail_input(msg: String) -> CliResult<()> {
    Err(Failure::Input(anyhow!(msg)))
}

fn cmd_bound(a: &BoundArgs) -> CliResult<()> {
    check_delta(a.common.delta)?;
    if let Some(l) = a.lambda {
        if !(l > 0.0 && l < 2.0) {
            return Err(crate::Error::LambdaOutOfRange(l).into());
        }
    }
    let ensemble = load(&a.common.manifest)?;
    let m = ensemble.num_members();
    let weighting = match &a.rho {
        Some(path) => Weighting::Fixed(read_rho(path, m)?),
        None => Weighting::Uniform,
    };
    let cfg = OptimizerConfig::default();
    let mut fit = fit(&ensemble, &weighting, a.common.delta, &cfg)?;
    if let Some(lambda) = a.lambda {
        let loss = loss_tables(&ensemble)?;
        let p = crate::bounds::BoundParams::for_tables(a.common.delta, &loss)?;
        let w = WeightDistribution::new(fit.rho.clone(), ensemble.prior.clone(), lambda)?;
        fit.tandem = crate::bounds::tandem_bound(&loss, &w, p)?;
        fit.first_order = crate::bounds::first_order_bound(&loss, &w, p)?;
    }
    let config = RunConfig {
        manifest: a.common.manifest.display().to_string(),
        delta: a.common.delta,
        weighting: weighting_name(&weighting),
        aggregations: vec![Aggregation::MajorityVote],
        seed: a.common.seed,
        optimizer: cfg,
        ttcv: false,
        subsample_members: None,
        subsample_repeats: None,
        lambda: a.lambda,
    };
    let mut report = base_report("bound", config, &ensemble, &weighting, &fit);
    report.accuracies = Some(accuracies(&ensemble, &fit.rho)?);
    emit(a.common.out.as_deref(), &to_json(&report))
}

fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    check_delta(a.common.delta)?;
    let ensemble = load(&a.common.manifest)?;
    let aggregations = a.aggregation.list();
    if ensemble.set.mode() == Some(PredictionMode::Hard) && aggregations.contains(&Aggregation::Average) {
        return Err(crate::Error::HardModeAverage.into());
    }
    let weighting = match (&a.rho, a.objective) {
        (Some(path), _) => Weighting::Fixed(read_rho(path, ensemble.num_members())?),
        (None, Some(obj)) => obj.weighting(),
        (None, None) => Weighting::Uniform,
    };
    let cfg = a.optimizer.config(a.common.seed);
    let rho = match &weighting {
        Weighting::Uniform => crate::data::uniform(ensemble.num_members()),
        Weighting::Fixed(rho) => rho.clone(),
        Weighting::Optimize(_) => fit(&ensemble, &weighting, a.common.delta, &cfg)?.rho,
    };
    let columns: Vec<Vec<usize>> = aggregations
        .iter()
        .map(|&agg| predict_all(&ensemble.set, &rho, agg))
        .collect::<crate::Result<_>>()?;
    let mut out = String::new();
    for t in 0..ensemble.num_examples() {
        let cells: Vec<String> = columns.iter().map(|c| c[t].to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    emit(a.common.out.as_deref(), &out)
}

fn cmd_ttcv(a: &TtcvArgs) -> CliResult<()> {
    check_delta(a.common.delta)?;
    let ensemble = load(&a.common.manifest)?;
    let weighting = a.objective.weighting();
    let cfg = a.optimizer.config(a.common.seed);
    cfg.validate()?;
    let ttcv = ttcv_run(&ensemble, &weighting, a.common.delta, &cfg, a.common.seed)?;
    let fit = fit(&ensemble, &weighting, a.common.delta, &cfg)?;
    let config = RunConfig {
        manifest: a.common.manifest.display().to_string(),
        delta: a.common.delta,
        weighting: weighting_name(&weighting),
        aggregations: vec![Aggregation::MajorityVote, Aggregation::Average],
        seed: a.common.seed,
        optimizer: cfg,
        ttcv: true,
        subsample_members: None,
        subsample_repeats: None,
        lambda: None,
    };
    let mut report = base_report("ttcv", config, &ensemble, &weighting, &fit);
    report.accuracies = Some(ttcv.mean_accuracy.clone());
    report.folds = Some(ttcv);
    emit(a.common.out.as_deref(), &to_json(&report))
}

fn read_spec(path: &Path) -> CliResult<SyntheticSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let spec: SyntheticSpec =
        serde_json::from_str(&text).with_context(|| format!("malformed spec {}", path.display()))?;
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(command: SimulateCommand) -> CliResult<()> {
    match command {
        SimulateCommand::Sweep {
            spec,
            error_rate,
            max_members,
            trials,
            out,
        } => {
            let spec = read_spec(&spec)?;
            let p = error_rate.unwrap_or(spec.error_rates[0]);
            let sizes: Vec<usize> = (1..=max_members).step_by(2).collect();
            let rows = cancellation_sweep(&spec, p, &sizes, trials)?;
            emit(out.as_deref(), &sweep_csv(&rows))
        }
        SimulateCommand::Coverage {
            spec,
            delta,
            repetitions,
            out,
        } => {
            check_delta(delta)?;
            let spec = read_spec(&spec)?;
            let report = bound_coverage_experiment(&spec, delta, repetitions, &OptimizerConfig::default())?;
            let json = serde_json::json!({
                "format_version": FORMAT_VERSION,
                "command": "simulate coverage",
                "spec": spec,
                "coverage": report,
            });
            emit(out.as_deref(), &to_json(&json))
        }
        SimulateCommand::Generate { spec, out, mode } => {
            let spec = read_spec(&spec)?;
            let mode = match mode.as_str() {
                "prob" => PredictionMode::Prob,
                "hard" => PredictionMode::Hard,
                other => return Err(anyhow!("unknown mode {other:?}, expected prob or hard").into()),
            };
            let ensemble = generate_ensemble(&spec, mode)?;
            let path = write_manifest(&out, &ensemble)?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
