use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use protoshot::config::{resolve, Settings};
use protoshot::format::{save_embedding_set, save_labels};
use protoshot::{emit_report, run_eval, EvalOptions};
use protoshot_core::embedset::SyntheticSpec;
use protoshot_core::prototrain::ProtoStrategy;
use protoshot_core::rng::data_rng;
use protoshot_core::verify::{run_grad_checks, GradCheckConfig};

#[derive(Parser)]
#[command(
    name = "protoshot",
    version,
    about = "Few-shot classification with trainable prototypes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate over sampled episodes and write a report.
    Eval(EvalArgs),
    /// Write a synthetic Gaussian-cluster embedding file.
    Synth(SynthArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Proto {
    Trained,
    Mean,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(clap::Args)]
struct EvalArgs {
    /// EMB1 embedding file.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Synthetic pool `n_classes,per_class,dim,mean_scale,sigma`.
    #[arg(long)]
    synthetic: Option<String>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    /// Queries per class.
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat TOML settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    proto: Option<Proto>,
    #[arg(long, value_enum)]
    mask: Option<OnOff>,
    /// Mask sharpness.
    #[arg(long)]
    mu: Option<f64>,
    /// Mask weight.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    proto_epochs: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also run the other prototype strategy and record the accuracy delta.
    #[arg(long)]
    compare: bool,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
}

impl EvalArgs {
    fn settings(&self) -> Settings {
        Settings {
            data: self.data.clone(),
            synthetic: self.synthetic.clone(),
            ways: self.ways,
            shots: self.shots,
            queries: self.queries,
            tasks: self.tasks,
            seed: self.seed,
            proto_epochs: self.proto_epochs,
            proto_strategy: self.proto.map(|p| match p {
                Proto::Trained => ProtoStrategy::Trained,
                Proto::Mean => ProtoStrategy::Mean,
            }),
            mask: self.mask.map(|m| matches!(m, OnOff::On)),
            mask_mu: self.mu,
            mask_epsilon: self.epsilon,
            threads: self.threads,
            ..Settings::default()
        }
    }
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = SyntheticSpec::STANDARD.n_classes)]
    classes: usize,
    #[arg(long, default_value_t = SyntheticSpec::STANDARD.per_class)]
    per_class: usize,
    #[arg(long, default_value_t = SyntheticSpec::STANDARD.dim)]
    dim: usize,
    #[arg(long, default_value_t = SyntheticSpec::STANDARD.mean_scale)]
    mean_scale: f64,
    #[arg(long, default_value_t = SyntheticSpec::STANDARD.noise_sigma)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn eval(args: &EvalArgs) -> Result<ExitCode> {
    let file = args
        .config
        .as_deref()
        .map(Settings::load)
        .transpose()
        .context("loading config")?;
    let (config, threads) = resolve(file.as_ref(), &args.settings())?;
    let report = run_eval(
        &config,
        &EvalOptions {
            threads,
            compare: args.compare,
        },
    )?;
    let summary = emit_report(&report, &args.out).context("writing report")?;
    println!("{summary}");
    if let Some(d) = &report.strategy_delta {
        println!("trained - mean: {:+.2} pp", d.delta_pp);
    }
    if !report.aborted.is_empty() {
        eprintln!("{} task(s) aborted", report.aborted.len());
    }
    if !report.diagnostics.is_clean() {
        eprintln!("diagnostics: {:?}", report.diagnostics);
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: &SynthArgs) -> Result<ExitCode> {
    let spec = SyntheticSpec {
        n_classes: args.classes,
        per_class: args.per_class,
        dim: args.dim,
        mean_scale: args.mean_scale,
        noise_sigma: args.sigma,
    };
    let set = spec.generate(&mut data_rng(args.seed))?;
    save_embedding_set(&set, &args.out)?;
    let labels: BTreeMap<u32, String> = set.classes().map(|c| (c, format!("class_{c}"))).collect();
    save_labels(&args.out, &labels)?;
    println!(
        "wrote {} records ({} classes, dim {}) to {}",
        set.len(),
        set.n_classes(),
        set.dim(),
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: &GradcheckArgs) -> Result<ExitCode> {
    let report = run_grad_checks(&GradCheckConfig {
        trials: args.trials,
        tolerance: args.tolerance,
        seed: args.seed,
        ..GradCheckConfig::default()
    })?;
    let verdict = |e: f64| if e < report.tolerance { "ok" } else { "FAIL" };
    println!(
        "head cross-entropy: max rel err {:.3e} {}",
        report.head_worst,
        verdict(report.head_worst)
    );
    for w in &report.total {
        println!(
            "total loss (lambda={:.4}, delta={:.4}): max rel err {:.3e} {}",
            w.weights.lambda,
            w.weights.delta,
            w.worst,
            verdict(w.worst)
        );
    }
    println!("{} trials, tolerance {:e}", report.trials, report.tolerance);
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
