//! Command-line front end: data ingestion, experiment orchestration, and
//! result serialization. See the formats chapter of the guide for the file
//! layouts and `RUST_LOG=info` for progress notes.

// negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;

use grim::diagnostics::{separation_check, step_bound_report, DistanceMatrix};
use grim::error::{Error, Result};
use grim::geim::geim_fit;
use grim::grim::{run_grim, GrimConfig, GrimResult, GrimTrace, ProblemInstance};
use grim::kernel::{
    dual_distance_matrix, gram_matrix, kernel_quadrature_grim, median_heuristic, KernelSpec,
};
use grim::problems::{
    build_l2_demo, eval_l2_metrics, load_csv_instance, load_point_cloud, load_vector_csv,
    reduce_cubature, L2DemoSpec, MomentSpec,
};
use grim::report::{
    write_results, BaselineComparison, DiagnosticsBlock, Metrics, RunConfigFile, RunReport,
    ScheduleSpec,
};

const DEFAULT_EPSILON: f64 = 1e-8;
const DEFAULT_DEMO_EPSILON: f64 = 0.01;
const DEFAULT_QUAD_EPSILON: f64 = 1e-12;
const DEFAULT_MAX_SAMPLE: usize = 1000;

#[derive(Parser)]
#[command(
    name = "grim",
    version,
    about = "Sparse approximation by greedy recombination interpolation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate a CSV-loaded instance over its functionals.
    Approx(ApproxArgs),
    /// Convex kernel quadrature over a point cloud.
    Quadrature(QuadratureArgs),
    /// Moment-preserving reduction of an empirical measure.
    Cubature(CubatureArgs),
    /// Self-generating L2 benchmark instance.
    L2Demo(L2DemoArgs),
    /// L2 benchmark with the greedy interpolation baseline side by side.
    GeimCompare(GeimCompareArgs),
    /// Execute a mode described by a JSON configuration file.
    Run(RunFileArgs),
}

#[derive(Args, Clone)]
struct GrimFlags {
    /// Target accuracy over the data set.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Acceptable per-functional recombination error (default 1e-10·C).
    #[arg(long)]
    epsilon0: Option<f64>,
    /// Maximum number of greedy steps (default fills the support budget).
    #[arg(long)]
    max_steps: Option<usize>,
    /// Functionals (or groups) added per step.
    #[arg(long, default_value_t = 1)]
    k: usize,
    /// Shuffled recombination trials per step.
    #[arg(long, default_value_t = 1)]
    shuffles: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach separation and step-bound diagnostics when a dual distance
    /// matrix is available.
    #[arg(long)]
    diagnostics: bool,
    /// Per-step schedules; reachable through config files only.
    #[arg(skip)]
    k_list: Option<Vec<usize>>,
    #[arg(skip)]
    s_list: Option<Vec<usize>>,
}

#[derive(Args, Clone)]
struct OutputFlags {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the per-step trace CSV here.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ApproxArgs {
    /// CSV evaluation matrix, one functional per row.
    #[arg(long)]
    evals: PathBuf,
    /// CSV feature weights.
    #[arg(long)]
    weights: PathBuf,
    /// CSV feature norms (default: all ones).
    #[arg(long)]
    norms: Option<PathBuf>,
    /// CSV group id per functional row; enables grouped extension.
    #[arg(long)]
    groups: Option<PathBuf>,
    /// Explicit grouped-extension override; reachable through config files.
    #[arg(skip)]
    grouped_override: Option<bool>,
    #[command(flatten)]
    grim: GrimFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct QuadratureArgs {
    /// CSV point cloud, one point per row.
    #[arg(long)]
    points: PathBuf,
    /// Treat the last CSV column as measure weights.
    #[arg(long)]
    weighted: bool,
    /// Node budget: the quadrature uses at most this many points.
    #[arg(long)]
    budget: usize,
    /// Kernel bandwidth (default: median heuristic).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Subsample cap for the median heuristic.
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLE)]
    max_sample: usize,
    #[command(flatten)]
    grim: GrimFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct CubatureArgs {
    /// CSV point cloud, one point per row.
    #[arg(long)]
    points: PathBuf,
    /// Treat the last CSV column as measure weights.
    #[arg(long)]
    weighted: bool,
    /// Preserve all moments of total degree up to this.
    #[arg(long)]
    degree: usize,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct L2DemoArgs {
    /// Parameter grid resolution; the instance has n² features.
    #[arg(long)]
    n: usize,
    /// Number of window-average functionals.
    #[arg(long, default_value_t = 1000)]
    functionals: usize,
    /// Gaussian window width.
    #[arg(long, default_value_t = 5e-4)]
    width: f64,
    /// Global grid used for L2 norms.
    #[arg(long, default_value_t = 20001)]
    fine_grid: usize,
    #[command(flatten)]
    grim: GrimFlags,
    #[command(flatten)]
    output: OutputFlags,
}

#[derive(Args)]
struct GeimCompareArgs {
    #[command(flatten)]
    demo: L2DemoArgs,
    /// Baseline size (default: the grid resolution n).
    #[arg(long)]
    features: Option<usize>,
}

#[derive(Args)]
struct RunFileArgs {
    /// JSON configuration file; see the formats chapter.
    #[arg(long)]
    config: PathBuf,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    let code = match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    std::process::exit(code);
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Data(_) | Error::Dimension(_) | Error::Io { .. } => 3,
        Error::Numerical(_) => 4,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Approx(args) => run_approx(&args),
        Command::Quadrature(args) => run_quadrature(&args),
        Command::Cubature(args) => run_cubature(&args),
        Command::L2Demo(args) => run_l2_demo(&args, None),
        Command::GeimCompare(args) => {
            let features = args.features;
            run_l2_demo(&args.demo, Some(features))
        }
        Command::Run(args) => run_from_file(&args.config),
    }
}

/// Builds the greedy configuration from flags. Scalar schedules broadcast
/// over the step count; explicit per-step lists fix it. Without either,
/// the step count fills the support cap.
fn build_config(flags: &GrimFlags, default_epsilon: f64, cap: usize) -> Result<GrimConfig> {
    if flags.k == 0 || flags.shuffles == 0 {
        return Err(Error::Config("k and shuffles must be positive".into()));
    }
    let max_steps = flags
        .max_steps
        .or_else(|| flags.k_list.as_ref().map(Vec::len))
        .or_else(|| flags.s_list.as_ref().map(Vec::len))
        .unwrap_or_else(|| (cap / flags.k).max(1));
    let broadcast = |list: &Option<Vec<usize>>, scalar: usize, name: &str| -> Result<Vec<usize>> {
        match list {
            Some(v) => {
                if v.len() != max_steps {
                    return Err(Error::Config(format!(
                        "{name} has {} entries for {max_steps} steps",
                        v.len()
                    )));
                }
                Ok(v.clone())
            }
            None => Ok(vec![scalar; max_steps]),
        }
    };
    Ok(GrimConfig {
        epsilon: flags.epsilon.unwrap_or(default_epsilon),
        epsilon0: flags.epsilon0,
        max_steps,
        k_schedule: broadcast(&flags.k_list, flags.k, "k_schedule")?,
        s_schedule: broadcast(&flags.s_list, flags.shuffles, "s_schedule")?,
        seed: flags.seed,
        grouped: false,
    })
}

fn diagnostics_block(
    instance: &ProblemInstance,
    config: &GrimConfig,
    result: &GrimResult,
    mass: f64,
) -> Option<DiagnosticsBlock> {
    let dist = instance.dual_distance.as_ref()?;
    let dist = DistanceMatrix::new(dist.clone()).ok()?;
    let epsilon0 = config.epsilon0_or_default(mass);
    let separation = separation_check(&result.trace, &dist, config.epsilon, epsilon0, mass);
    let step_bound = step_bound_report(
        &result.trace,
        &dist,
        config.epsilon,
        epsilon0,
        mass,
        instance.n_features(),
        instance.n_functionals(),
    );
    Some(DiagnosticsBlock {
        separation: Some(separation),
        step_bound: Some(step_bound),
    })
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mode: &str,
    config_echo: serde_json::Value,
    result: &GrimResult,
    metrics: Metrics,
    comparison: Option<BaselineComparison>,
    diagnostics: Option<DiagnosticsBlock>,
    output: &OutputFlags,
    wall_time_ms: u64,
) -> Result<()> {
    let report = RunReport {
        mode: mode.into(),
        config: config_echo,
        support: result.support.clone(),
        coefficients: result.coefficients.clone(),
        metrics,
        steps_completed: result.steps_completed,
        terminated_early: result.terminated_early,
        best_step: result.trace.best_step,
        wall_time_ms,
        trace_path: output.trace.as_ref().map(|p| p.display().to_string()),
        comparison,
        diagnostics,
    };
    write_results(
        &report,
        &result.trace,
        output.out.as_deref(),
        output.trace.as_deref(),
    )
}

fn run_approx(args: &ApproxArgs) -> Result<()> {
    let mut instance = load_csv_instance(&args.evals, &args.weights, args.norms.as_deref())?;
    if let Some(groups_path) = &args.groups {
        let raw = load_vector_csv(groups_path)?;
        let ids: Vec<usize> = raw
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Data(format!(
                        "{}: group ids must be non-negative integers, got {v}",
                        groups_path.display()
                    )))
                }
            })
            .collect::<Result<_>>()?;
        instance = instance.with_groups(ids)?;
    }
    let grouped = args.grouped_override.unwrap_or(args.groups.is_some());
    if grouped && instance.group_of.is_none() {
        return Err(Error::Config("grouped extension requires a --groups file".into()));
    }
    let cap = if grouped {
        let groups: HashSet<usize> = instance.group_of.as_ref().unwrap().iter().copied().collect();
        groups.len()
    } else {
        instance
            .n_features()
            .saturating_sub(1)
            .min(instance.n_functionals())
    };
    let mut config = build_config(&args.grim, DEFAULT_EPSILON, cap)?;
    config.grouped = grouped;

    let start = Instant::now();
    let result = run_grim(&instance, &config)?;
    let wall = start.elapsed().as_millis() as u64;

    let mass = result.coefficient_mass(&instance.feature_norms);
    let metrics = Metrics {
        achieved_sup: result.achieved_sup,
        l2_error: None,
        wce_squared: None,
        coefficient_mass: mass,
    };
    let diagnostics = args
        .grim
        .diagnostics
        .then(|| diagnostics_block(&instance, &config, &result, mass))
        .flatten();
    let echo = serde_json::json!({
        "evals": args.evals.display().to_string(),
        "weights": args.weights.display().to_string(),
        "norms": args.norms.as_ref().map(|p| p.display().to_string()),
        "groups": args.groups.as_ref().map(|p| p.display().to_string()),
        "grim": config,
    });
    finish("approx", echo, &result, metrics, None, diagnostics, &args.output, wall)
}

fn run_quadrature(args: &QuadratureArgs) -> Result<()> {
    let (cloud, file_weights) = load_point_cloud(&args.points, args.weighted)?;
    let n = cloud.len();
    if args.budget < 2 || args.budget > n {
        return Err(Error::Config(format!(
            "budget must lie in 2..={n}, got {}",
            args.budget
        )));
    }
    let mu = match file_weights {
        Some(w) => {
            let total: f64 = w.iter().sum();
            if !(total > 0.0) {
                return Err(Error::Data("measure weights must have positive total".into()));
            }
            if (total - 1.0).abs() > 1e-8 {
                log::info!("normalizing measure weights by total {total}");
            }
            w.iter().map(|v| v / total).collect::<Vec<f64>>()
        }
        None => vec![1.0 / n as f64; n],
    };
    let bandwidth = match args.bandwidth {
        Some(b) => b,
        None => {
            let b = median_heuristic(&cloud, args.max_sample, args.grim.seed)?;
            log::info!("median-heuristic bandwidth: {b}");
            b
        }
    };
    let spec = KernelSpec::new(bandwidth)?;
    // a budget of b nodes allows 1 + (b−1) support points
    let config = build_config(&args.grim, DEFAULT_QUAD_EPSILON, args.budget - 1)?;

    let start = Instant::now();
    let (quad, result) = kernel_quadrature_grim(&cloud, &mu, &spec, &config)?;
    let wall = start.elapsed().as_millis() as u64;

    let metrics = Metrics {
        achieved_sup: result.achieved_sup,
        l2_error: None,
        wce_squared: Some(quad.wce_squared),
        coefficient_mass: quad.weights.iter().sum(),
    };
    let diagnostics = if args.grim.diagnostics {
        let gram = gram_matrix(&cloud, &spec)?;
        let instance = ProblemInstance::new(gram.clone(), DVector::from_column_slice(&mu), None)?
            .with_dual_distance(dual_distance_matrix(&gram))?;
        diagnostics_block(&instance, &config, &result, 1.0)
    } else {
        None
    };
    let echo = serde_json::json!({
        "points": args.points.display().to_string(),
        "weighted": args.weighted,
        "budget": args.budget,
        "bandwidth": bandwidth,
        "grim": config,
    });
    finish("quadrature", echo, &result, metrics, None, diagnostics, &args.output, wall)
}

fn run_cubature(args: &CubatureArgs) -> Result<()> {
    let (cloud, file_weights) = load_point_cloud(&args.points, args.weighted)?;
    let weights = file_weights.unwrap_or_else(|| vec![1.0 / cloud.len() as f64; cloud.len()]);
    let spec = MomentSpec {
        max_degree: args.degree,
        dimension: cloud.dim(),
    };

    let start = Instant::now();
    let (instance, thin) = reduce_cubature(&cloud, &weights, &spec)?;
    let wall = start.elapsed().as_millis() as u64;

    // worst moment deviation of the reduced measure
    let mut sup = 0.0_f64;
    for j in 0..instance.n_functionals() {
        let mut v = 0.0;
        for (&i, &c) in thin.indices.iter().zip(&thin.coefficients) {
            v += c * instance.evaluations[(j, i)];
        }
        sup = sup.max((instance.target[j] - v).abs());
    }
    let report = RunReport {
        mode: "cubature".into(),
        config: serde_json::json!({
            "points": args.points.display().to_string(),
            "weighted": args.weighted,
            "degree": args.degree,
            "moments": spec.n_moments(),
        }),
        support: thin.indices.clone(),
        coefficients: thin.coefficients.clone(),
        metrics: Metrics {
            achieved_sup: sup,
            l2_error: None,
            wce_squared: None,
            coefficient_mass: thin.coefficients.iter().sum(),
        },
        steps_completed: 0,
        terminated_early: false,
        best_step: 0,
        wall_time_ms: wall,
        trace_path: args.output.trace.as_ref().map(|p| p.display().to_string()),
        comparison: None,
        diagnostics: None,
    };
    write_results(
        &report,
        &GrimTrace::default(),
        args.output.out.as_deref(),
        args.output.trace.as_deref(),
    )
}

fn run_l2_demo(args: &L2DemoArgs, geim_features: Option<Option<usize>>) -> Result<()> {
    let spec = L2DemoSpec {
        n_grid: args.n,
        n_functionals: args.functionals,
        mollifier_width: args.width,
        fine_grid_points: args.fine_grid,
    };
    log::info!("building the L2 instance: {} features, {} functionals", args.n * args.n, args.functionals);
    let demo = build_l2_demo(&spec)?;
    let cap = args.n.saturating_sub(1).max(1);
    let config = build_config(&args.grim, DEFAULT_DEMO_EPSILON, cap)?;

    let start = Instant::now();
    let result = run_grim(&demo.instance, &config)?;
    let (l2, sup) = eval_l2_metrics(&demo.instance, &demo.norm, &result.support, &result.coefficients)?;
    let comparison = match geim_features {
        None => None,
        Some(feature_override) => {
            let n_max = feature_override.unwrap_or(args.n);
            let fit = geim_fit(&demo.instance, &demo.norm, n_max, 0.0)?;
            let interpolant = fit.interpolants.last().unwrap();
            let (idx, coeffs): (Vec<usize>, Vec<f64>) = interpolant
                .iter()
                .enumerate()
                .filter(|(_, &c)| c != 0.0)
                .map(|(i, &c)| (i, c))
                .unzip();
            let (geim_l2, geim_sup) = eval_l2_metrics(&demo.instance, &demo.norm, &idx, &coeffs)?;
            Some(BaselineComparison {
                geim_selected: fit.state.len(),
                geim_l2_error: geim_l2,
                geim_sup_error: geim_sup,
            })
        }
    };
    let wall = start.elapsed().as_millis() as u64;

    let metrics = Metrics {
        achieved_sup: result.achieved_sup,
        l2_error: Some(l2),
        wce_squared: None,
        coefficient_mass: result.coefficient_mass(&demo.instance.feature_norms),
    };
    debug_assert!((sup - result.achieved_sup).abs() <= 1e-9 * (1.0 + sup));
    let mode = if comparison.is_some() { "geim-compare" } else { "l2-demo" };
    let echo = serde_json::json!({
        "n": args.n,
        "functionals": args.functionals,
        "width": args.width,
        "fine_grid": args.fine_grid,
        "grim": config,
    });
    finish(mode, echo, &result, metrics, comparison, None, &args.output, wall)
}

fn run_from_file(path: &Path) -> Result<()> {
    let file = RunConfigFile::load(path)?;
    let (k, k_list) = split_schedule(&file.k_schedule);
    let (shuffles, s_list) = split_schedule(&file.s_schedule);
    let grim = GrimFlags {
        epsilon: file.epsilon,
        epsilon0: file.epsilon0,
        max_steps: file.max_steps,
        k,
        shuffles,
        seed: file.seed.unwrap_or(0),
        diagnostics: file.diagnostics.unwrap_or(false),
        k_list,
        s_list,
    };
    let output = OutputFlags {
        out: file.out.clone(),
        trace: file.trace.clone(),
    };
    let missing = |key: &str| Error::Config(format!("mode '{}' requires '{key}'", file.mode));
    match file.mode.as_str() {
        "approx" => run_approx(&ApproxArgs {
            evals: file.evals.clone().ok_or_else(|| missing("evals"))?,
            weights: file.weights.clone().ok_or_else(|| missing("weights"))?,
            norms: file.norms.clone(),
            groups: file.groups.clone(),
            grouped_override: file.grouped,
            grim,
            output,
        }),
        "quadrature" => run_quadrature(&QuadratureArgs {
            points: file.points.clone().ok_or_else(|| missing("points"))?,
            weighted: file.weighted_points.unwrap_or(false),
            budget: file.budget.ok_or_else(|| missing("budget"))?,
            bandwidth: file.bandwidth,
            max_sample: file.max_sample.unwrap_or(DEFAULT_MAX_SAMPLE),
            grim,
            output,
        }),
        "cubature" => run_cubature(&CubatureArgs {
            points: file.points.clone().ok_or_else(|| missing("points"))?,
            weighted: file.weighted_points.unwrap_or(false),
            degree: file.degree.ok_or_else(|| missing("degree"))?,
            output,
        }),
        "l2-demo" | "geim-compare" => {
            let demo = L2DemoArgs {
                n: file.n_grid.ok_or_else(|| missing("n_grid"))?,
                functionals: file.functionals.unwrap_or(1000),
                width: file.width.unwrap_or(5e-4),
                fine_grid: 20001,
                grim,
                output,
            };
            if file.mode == "l2-demo" {
                run_l2_demo(&demo, None)
            } else {
                run_l2_demo(&demo, Some(file.geim_features))
            }
        }
        other => Err(Error::Config(format!(
            "unknown mode '{other}'; expected approx, quadrature, cubature, l2-demo or geim-compare"
        ))),
    }
}

/// A scalar schedule becomes the broadcast value; a list passes through and
/// pins the step count.
fn split_schedule(spec: &Option<ScheduleSpec>) -> (usize, Option<Vec<usize>>) {
    match spec {
        None => (1, None),
        Some(ScheduleSpec::Scalar(k)) => (*k, None),
        Some(ScheduleSpec::List(v)) => (1, Some(v.clone())),
    }
}
