//! Command-line driver. Exit codes: 0 success, 2 input error, 3 numerical failure.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::classifier::{baseline_nearest_mean, classify, ClassifyConfig};
use crate::dataio::{generate_synthetic, load_dataset, load_model, save_model, SynthSpec};
use crate::error::{Error, Result};
use crate::gradcheck;
use crate::solver::SolverConfig;
use crate::trainer::{train, Sigma, TrainConfig, DEFAULT_SIGMA_SCALE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "lamais", version, about = "Large-margin image-set representation and classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Learn set representations from a labeled manifest and write a model file.
    Train(TrainArgs),
    /// Classify the sets of a manifest and write a CSV report.
    Classify(ClassifyArgs),
    /// Classify a labeled manifest and report accuracy.
    Eval(ClassifyArgs),
    /// Generate a synthetic dataset (train.json / test.json plus CSV files).
    Synth(SynthArgs),
    /// Compare analytic solver gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time classification and count per-class solves.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaArg {
    Auto,
    Fixed(f64),
}

impl FromStr for SigmaArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(SigmaArg::Auto);
        }
        match s.parse::<f64>() {
            Ok(x) if x.is_finite() && x > 0.0 => Ok(SigmaArg::Fixed(x)),
            _ => Err(format!("expected 'auto' or a positive number, got '{s}'")),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training manifest (JSON).
    #[arg(long)]
    pub data: PathBuf,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the l1 penalty on sample coefficients.
    #[arg(long, default_value_t = SolverConfig::default().lambda)]
    pub lambda: f64,
    /// Weight of the margin term.
    #[arg(long, default_value_t = SolverConfig::default().gamma)]
    pub gamma: f64,
    /// Kernel band-width, or `auto` for the median heuristic.
    #[arg(long, default_value = "auto")]
    pub sigma: SigmaArg,
    /// Factor applied to the automatic band-width.
    #[arg(long, default_value_t = DEFAULT_SIGMA_SCALE)]
    pub sigma_scale: f64,
    /// Fraction of centered energy kept by each affine hull.
    #[arg(long, default_value_t = 0.98)]
    pub energy: f64,
    /// Number of passes over the training sets.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Relative objective change at which passes and inner solves stop.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Backtracking factor.
    #[arg(long, default_value_t = 2.0)]
    pub eta: f64,
    /// Initial step constant.
    #[arg(long, default_value_t = 1.0)]
    pub l0: f64,
    /// Iteration cap of each inner solve.
    #[arg(long, default_value_t = 100)]
    pub inner_iters: usize,
    /// Keep the initial neighbour probabilities fixed.
    #[arg(long, hide = true)]
    pub em_freeze: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest of test sets; labels are optional.
    #[arg(long)]
    pub data: PathBuf,
    /// CSV report path (`id,predicted,energy_0,...`).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Override the number of outer iterations per class.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Override the convergence tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 5)]
    pub sets_per_class: usize,
    #[arg(long, default_value_t = 5)]
    pub test_sets_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub images_min: usize,
    #[arg(long, default_value_t = 12)]
    pub images_max: usize,
    #[arg(long, default_value_t = 30)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb the analytic gradient (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
}

fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Classify(a) => cmd_classify(&a, false),
        Command::Eval(a) => cmd_classify(&a, true),
        Command::Synth(a) => cmd_synth(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::Bench(a) => cmd_bench(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let dataset = load_dataset(&a.data)?;
    let cfg = TrainConfig {
        outer_iters: a.iters,
        solver: SolverConfig {
            lambda: a.lambda,
            gamma: a.gamma,
            eta: a.eta,
            l0: a.l0,
            max_inner_iters: a.inner_iters,
            tol: a.tol,
        },
        sigma: match a.sigma {
            SigmaArg::Auto => Sigma::Auto { scale: a.sigma_scale },
            SigmaArg::Fixed(s) => Sigma::Fixed(s),
        },
        energy: a.energy,
        seed: a.seed,
        freeze_probabilities: a.em_freeze,
    };
    let model = train(&dataset, &cfg)?;
    let mut out = String::from("pass,objective\n");
    for (pass, obj) in model.diagnostics.objective_trace.iter().enumerate() {
        writeln!(out, "{pass},{obj}").unwrap();
    }
    print!("{out}");
    save_model(&model, &a.out)?;
    eprintln!(
        "trained {} sets in {} passes ({} solves), sigma = {}; model written to {}",
        model.records.len(),
        model.diagnostics.passes,
        model.diagnostics.solver_invocations,
        model.sigma,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_classify(a: &ClassifyArgs, require_labels: bool) -> Result<i32> {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    if require_labels && data.sets.iter().any(|s| s.label.is_none()) {
        return Err(Error::Input("eval needs a label for every test set".into()));
    }
    if !require_labels && a.report.is_none() {
        return Err(Error::Input("classify needs --report".into()));
    }
    let mut cfg = ClassifyConfig::from_model(&model);
    if let Some(t) = a.iters {
        cfg.outer_iters = t;
    }
    if let Some(t) = a.tol {
        cfg.solver.tol = t;
    }
    cfg.solver.validate()?;

    let c = model.num_classes();
    let mut report = String::from("id,predicted");
    for k in 0..c {
        write!(report, ",energy_{k}").unwrap();
    }
    report.push('\n');

    let mut labeled = 0usize;
    let mut correct = 0usize;
    let mut baseline_correct = 0usize;
    for set in &data.sets {
        let result = classify(set, &model, &cfg)?;
        let predicted = &model.label_names[result.label];
        write!(report, "{},{}", set.id, predicted).unwrap();
        for s in &result.scores {
            write!(report, ",{}", s.energy).unwrap();
        }
        report.push('\n');
        if let Some(truth) = data.label_name(set) {
            labeled += 1;
            correct += usize::from(truth == predicted);
            let base = &model.label_names[baseline_nearest_mean(set, &model)?];
            baseline_correct += usize::from(truth == base);
        }
    }

    match &a.report {
        Some(path) => std::fs::write(path, &report).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?,
        None => print!("{report}"),
    }
    if labeled > 0 {
        println!("accuracy,{}", correct as f64 / labeled as f64);
        println!("baseline_accuracy,{}", baseline_correct as f64 / labeled as f64);
    }
    Ok(EXIT_OK)
}

fn cmd_synth(a: &SynthArgs) -> Result<i32> {
    let spec = SynthSpec {
        classes: a.classes,
        sets_per_class: a.sets_per_class,
        test_sets_per_class: a.test_sets_per_class,
        images_min: a.images_min,
        images_max: a.images_max,
        dimension: a.dim,
        subspace_rank: a.rank,
        class_separation: a.separation,
        within_noise: a.noise,
        seed: a.seed,
    };
    let (train, test) = generate_synthetic(&spec, &a.out)?;
    println!("train,{}", train.display());
    if let Some(test) = test {
        println!("test,{}", test.display());
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if a.trials == 0 {
        return Err(Error::Input("--trials must be at least 1".into()));
    }
    let corrupt = |inst: &gradcheck::GradInstance| {
        let (ga, gv) = gradcheck::analytic_gradient(inst)?;
        Ok((ga.map(|g| g * 1.01 + 1e-3), gv))
    };
    let err = if a.corrupt {
        gradcheck::run(a.trials, a.seed, &corrupt)?
    } else {
        gradcheck::run(a.trials, a.seed, &gradcheck::analytic_gradient)?
    };
    println!("max_relative_error,{err:e}");
    if err < gradcheck::PASS_THRESHOLD {
        Ok(EXIT_OK)
    } else {
        eprintln!("gradient check failed: {err:e} >= {:e}", gradcheck::PASS_THRESHOLD);
        Ok(EXIT_NUMERICAL)
    }
}

fn cmd_bench(a: &BenchArgs) -> Result<i32> {
    if a.repeat == 0 {
        return Err(Error::Input("--repeat must be at least 1".into()));
    }
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let cfg = ClassifyConfig::from_model(&model);
    let mut solves = Vec::with_capacity(data.sets.len() * a.repeat);
    let start = Instant::now();
    for _ in 0..a.repeat {
        for set in &data.sets {
            solves.push(classify(set, &model, &cfg)?.energy_solves);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let classified = solves.len();
    let min = solves.iter().copied().min().unwrap_or(0);
    let max = solves.iter().copied().max().unwrap_or(0);
    println!("classes,{}", model.num_classes());
    println!("training_sets,{}", model.records.len());
    println!("test_sets,{}", data.sets.len());
    println!("repeat,{}", a.repeat);
    println!("wall_seconds,{elapsed}");
    println!("seconds_per_set,{}", elapsed / classified.max(1) as f64);
    println!("invocations_per_set_min,{min}");
    println!("invocations_per_set_max,{max}");
    if min != model.num_classes() || max != model.num_classes() {
        eprintln!("per-set solve count differs from the number of classes");
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}
