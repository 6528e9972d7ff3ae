mod manifest;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use clipxpert::data_io::{generate_synthetic, load_embeddings, load_labels, save_embeddings, save_labels};
use clipxpert::metrics::{evaluate, threshold_sweep};
use clipxpert::pipeline::run_pipeline;
use clipxpert::{
    EmbeddingMatrix, EvalResult, LabelVector, PipelineConfig, PredictionReport, Scorer, SyntheticConfig,
    ThresholdStrategy,
};
use serde::Serialize;

use manifest::{InputFile, OutDir, RunManifest, Timings};

#[derive(Parser)]
#[command(name = "clipxpert", version, about = "Training-free open-set recognition on embedding files")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline and write predictions plus a report.
    Predict(PredictArgs),
    /// Generate a synthetic open-set dataset.
    Synth(SynthArgs),
    /// Tabulate HOS over scorer x strategy x filtering on/off.
    Bench(BenchArgs),
    /// Score a predictions file against labels.
    Eval(EvalArgs),
    /// Write the HOS-vs-threshold curve and a tau sweep.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct Inputs {
    /// Sample embeddings (EMB1, or CSV when the extension is .csv).
    #[arg(long, value_name = "PATH")]
    embeddings: PathBuf,
    /// Class anchor embeddings, one row per known class.
    #[arg(long, value_name = "PATH")]
    anchors: PathBuf,
}

/// Settings shared by every pipeline-running command.
#[derive(Args)]
struct Tuning {
    /// Cumulative energy kept by each subspace.
    #[arg(long, default_value_t = clipxpert::suff::DEFAULT_TAU)]
    tau: f64,
    /// Zero-shot softmax temperature.
    #[arg(long, default_value_t = clipxpert::scoring::DEFAULT_TEMPERATURE)]
    temp_eq1: f64,
    /// Temperature of the known/unknown mixing ratio.
    #[arg(long, default_value_t = clipxpert::suff::DEFAULT_ALPHA_TEMPERATURE)]
    temp_alpha: f64,
    /// Power-transform scores before fitting the mixture.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    boxcox: bool,
    /// Minimum size of each confident set before filtering runs.
    #[arg(long, default_value_t = clipxpert::suff::DEFAULT_MIN_CONFIDENT)]
    min_confident: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Method {
    #[arg(long, default_value = "entropy", value_name = "entropy|mcm|var|energy")]
    scorer: Scorer,
    #[arg(long, default_value = "bgat", value_name = "bgat|mean|fixed_half_max|oracle")]
    strategy: ThresholdStrategy,
    /// Apply subspace feature filtering.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, value_name = "BOOL")]
    suff: bool,
}

impl Tuning {
    fn config(&self, scorer: Scorer, strategy: ThresholdStrategy, use_suff: bool) -> PipelineConfig {
        PipelineConfig {
            scorer,
            temp_eq1: self.temp_eq1,
            temp_alpha: self.temp_alpha,
            tau: self.tau,
            use_boxcox: self.boxcox,
            use_suff,
            strategy,
            min_confident: self.min_confident,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    inputs: Inputs,
    /// Ground-truth labels; enables eval.json and the oracle strategy.
    #[arg(long, value_name = "PATH")]
    labels: Option<PathBuf>,
    #[command(flatten)]
    method: Method,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    c_known: Option<usize>,
    #[arg(long)]
    c_unknown: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Per-coordinate noise standard deviation of known samples.
    #[arg(long)]
    known_noise: Option<f64>,
    /// Per-coordinate noise standard deviation of unknown samples.
    #[arg(long)]
    unknown_noise: Option<f64>,
    #[arg(long)]
    tendency_fraction: Option<f64>,
    #[arg(long)]
    tendency_distance: Option<f64>,
    /// Per-coordinate perturbation applied to anchors.
    #[arg(long)]
    anchor_perturb: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "entropy,mcm,var")]
    scorers: Vec<Scorer>,
    #[arg(long, value_delimiter = ',', default_value = "bgat,mean,fixed_half_max")]
    strategies: Vec<ThresholdStrategy>,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON array of predicted labels.
    #[arg(long, value_name = "PATH")]
    predictions: PathBuf,
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    /// Also write eval.json here.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long, value_name = "PATH")]
    labels: PathBuf,
    #[command(flatten)]
    method: Method,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.7,0.8,0.9,0.95,0.99,1.0")]
    taus: Vec<f64>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// A problem with the caller's inputs rather than with the tool.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_input = err.chain().any(|e| {
        e.is::<InputError>()
            || e.is::<clipxpert::Error>()
            || e.is::<std::io::Error>()
            || e.is::<serde_json::Error>()
    });
    if is_input {
        2
    } else {
        1
    }
}

struct Loaded {
    samples: EmbeddingMatrix,
    anchors: EmbeddingMatrix,
    labels: Option<LabelVector>,
    files: Vec<InputFile>,
}

fn load_inputs(inputs: &Inputs, labels: Option<&Path>) -> Result<Loaded> {
    let samples = load_embeddings(&inputs.embeddings)
        .with_context(|| format!("loading --embeddings {}", inputs.embeddings.display()))?;
    let anchors =
        load_embeddings(&inputs.anchors).with_context(|| format!("loading --anchors {}", inputs.anchors.display()))?;
    let mut files = vec![
        InputFile::hash("embeddings", &inputs.embeddings)?,
        InputFile::hash("anchors", &inputs.anchors)?,
    ];
    let labels = match labels {
        Some(path) => {
            files.push(InputFile::hash("labels", path)?);
            Some(load_labels(path).with_context(|| format!("loading --labels {}", path.display()))?)
        }
        None => None,
    };
    Ok(Loaded {
        samples,
        anchors,
        labels,
        files,
    })
}

#[derive(Serialize)]
struct Report<'a> {
    manifest: RunManifest<&'a PipelineConfig>,
    result: &'a PredictionReport,
    eval: Option<&'a EvalResult>,
}

fn predict(args: PredictArgs) -> Result<()> {
    let mut timings = Timings::new("predict");
    let clock = Instant::now();
    let data = load_inputs(&args.inputs, args.labels.as_deref())?;
    timings.push("load", clock.elapsed());

    let config = args
        .tuning
        .config(args.method.scorer, args.method.strategy, args.method.suff);
    let report = run_pipeline(&data.samples, &data.anchors, &config, data.labels.as_ref())?;
    for (stage, elapsed) in report.timings.as_pairs() {
        timings.push(stage, elapsed);
    }
    let eval = data
        .labels
        .as_ref()
        .map(|truth| evaluate(&report.labels, truth))
        .transpose()?;

    let clock = Instant::now();
    let out = OutDir::create(&args.out)?;
    out.write_json("predictions.json", &report.labels.labels())?;
    if let Some(eval) = &eval {
        out.write_json("eval.json", eval)?;
    }
    out.write_json(
        "report.json",
        &Report {
            manifest: RunManifest::new("predict", &config, data.files),
            result: &report,
            eval: eval.as_ref(),
        },
    )?;
    timings.push("write", clock.elapsed());
    out.write_json("timings.json", &timings)?;

    let unknown = report.labels.labels().iter().filter(|&&l| l == data.anchors.rows()).count();
    print!(
        "{} samples, {} predicted unknown, threshold {:.6} ({:?}), filtering applied: {}",
        report.labels.len(),
        unknown,
        report.threshold_final.t_star,
        report.threshold_final.method,
        report.suff.applied
    );
    match &eval {
        Some(e) => println!(", HOS {:.4}", e.hos),
        None => println!(),
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthSummary<'a> {
    config: &'a SyntheticConfig,
    samples: usize,
    dim: usize,
    /// For each unknown class, the known class it leans toward, if any.
    tendency_targets: &'a [Option<usize>],
}

fn synth(args: SynthArgs) -> Result<()> {
    let d = SyntheticConfig::default();
    let config = SyntheticConfig {
        c_known: args.c_known.unwrap_or(d.c_known),
        c_unknown: args.c_unknown.unwrap_or(d.c_unknown),
        dim: args.dim.unwrap_or(d.dim),
        samples_per_class: args.samples_per_class.unwrap_or(d.samples_per_class),
        known_noise_sigma: args.known_noise.unwrap_or(d.known_noise_sigma),
        unknown_noise_sigma: args.unknown_noise.unwrap_or(d.unknown_noise_sigma),
        tendency_fraction: args.tendency_fraction.unwrap_or(d.tendency_fraction),
        tendency_distance: args.tendency_distance.unwrap_or(d.tendency_distance),
        anchor_perturb_sigma: args.anchor_perturb.unwrap_or(d.anchor_perturb_sigma),
        seed: args.seed,
    };
    let data = generate_synthetic(&config)?;
    let out = OutDir::create(&args.out)?;
    save_embeddings(&data.samples, out.path("embeddings.emb1"))?;
    save_embeddings(&data.anchors, out.path("anchors.emb1"))?;
    save_labels(&data.labels, out.path("labels.json"))?;
    let summary = SynthSummary {
        config: &config,
        samples: data.samples.rows(),
        dim: data.samples.dim(),
        tendency_targets: &data.tendency_targets,
    };
    out.write_json("manifest.json", &RunManifest::new("synth", summary, Vec::new()))?;
    println!(
        "wrote {} samples and {} anchors (dim {}) to {}",
        data.samples.rows(),
        data.anchors.rows(),
        data.samples.dim(),
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    scorer: &'static str,
    strategy: &'static str,
    suff: bool,
    hos: f64,
    acc_known: f64,
    acc_unknown: f64,
}

#[derive(Serialize)]
struct BenchConfig<'a> {
    scorers: Vec<&'static str>,
    strategies: Vec<&'static str>,
    base: &'a PipelineConfig,
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner()?)
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.scorers.is_empty() || args.strategies.is_empty() {
        return Err(input_error("--scorers and --strategies must not be empty"));
    }
    let mut timings = Timings::new("bench");
    let data = load_inputs(&args.inputs, Some(&args.labels))?;
    let truth = data.labels.as_ref().expect("labels were requested");
    let mut rows = Vec::new();
    for &scorer in &args.scorers {
        for &strategy in &args.strategies {
            for suff in [true, false] {
                let clock = Instant::now();
                let config = args.tuning.config(scorer, strategy, suff);
                let report = run_pipeline(&data.samples, &data.anchors, &config, Some(truth))?;
                let eval = evaluate(&report.labels, truth)?;
                timings.push(format!("{}/{}/{}", scorer.as_str(), strategy.as_str(), suff), clock.elapsed());
                rows.push(BenchRow {
                    scorer: scorer.as_str(),
                    strategy: strategy.as_str(),
                    suff,
                    hos: eval.hos,
                    acc_known: eval.acc_known,
                    acc_unknown: eval.acc_unknown,
                });
            }
        }
    }
    let out = OutDir::create(&args.out)?;
    out.write_bytes("bench.csv", &csv_bytes(&rows)?)?;
    let base = args.tuning.config(args.scorers[0], args.strategies[0], true);
    let config = BenchConfig {
        scorers: args.scorers.iter().map(|s| s.as_str()).collect(),
        strategies: args.strategies.iter().map(|s| s.as_str()).collect(),
        base: &base,
    };
    out.write_json("manifest.json", &RunManifest::new("bench", config, data.files))?;
    out.write_json("timings.json", &timings)?;
    println!("wrote {} rows to {}", rows.len(), out.path("bench.csv").display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReport<'a> {
    manifest: RunManifest<()>,
    eval: &'a EvalResult,
}

fn eval(args: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.predictions)
        .with_context(|| format!("reading --predictions {}", args.predictions.display()))?;
    let preds: Vec<usize> = serde_json::from_str(&text)
        .with_context(|| format!("parsing --predictions {}", args.predictions.display()))?;
    let truth = load_labels(&args.labels).with_context(|| format!("loading --labels {}", args.labels.display()))?;
    if preds.is_empty() {
        return Err(input_error("predictions file holds no labels"));
    }
    if preds.len() != truth.len() {
        return Err(input_error(format!(
            "{} predictions but {} labels",
            preds.len(),
            truth.len()
        )));
    }
    let preds = LabelVector::new(preds, truth.num_known())?;
    let result = evaluate(&preds, &truth)?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    if let Some(dir) = &args.out {
        let files = vec![
            InputFile::hash("predictions", &args.predictions)?,
            InputFile::hash("labels", &args.labels)?,
        ];
        OutDir::create(dir)?.write_json(
            "eval.json",
            &EvalReport {
                manifest: RunManifest::new("eval", (), files),
                eval: &result,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TauRow {
    tau: f64,
    applied: bool,
    rank_know: Option<usize>,
    rank_unk: Option<usize>,
    hos: f64,
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config: &'a PipelineConfig,
    taus: &'a [f64],
    best_threshold: f64,
    best_hos: f64,
    pipeline_threshold: f64,
    pipeline_hos: f64,
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.taus.is_empty() {
        return Err(input_error("--taus must not be empty"));
    }
    let mut timings = Timings::new("sweep");
    let data = load_inputs(&args.inputs, Some(&args.labels))?;
    let truth = data.labels.as_ref().expect("labels were requested");
    let config = args
        .tuning
        .config(args.method.scorer, args.method.strategy, args.method.suff);

    let clock = Instant::now();
    let report = run_pipeline(&data.samples, &data.anchors, &config, Some(truth))?;
    let curve = threshold_sweep(&report.scores_final.values, &report.zero_shot, truth)?;
    let pipeline_hos = evaluate(&report.labels, truth)?.hos;
    timings.push("threshold curve", clock.elapsed());

    let mut rows = Vec::with_capacity(args.taus.len());
    for &tau in &args.taus {
        let clock = Instant::now();
        let cfg = PipelineConfig { tau, ..config.clone() };
        let r = run_pipeline(&data.samples, &data.anchors, &cfg, Some(truth))?;
        rows.push(TauRow {
            tau,
            applied: r.suff.applied,
            rank_know: r.suff.rank_know,
            rank_unk: r.suff.rank_unk,
            hos: evaluate(&r.labels, truth)?.hos,
        });
        timings.push(format!("tau {tau}"), clock.elapsed());
    }

    let out = OutDir::create(&args.out)?;
    out.write_bytes("threshold_curve.csv", curve.to_csv().as_bytes())?;
    out.write_bytes("tau_sweep.csv", &csv_bytes(&rows)?)?;
    let summary = SweepSummary {
        config: &config,
        taus: &args.taus,
        best_threshold: curve.best_threshold,
        best_hos: curve.best_hos,
        pipeline_threshold: report.threshold_final.t_star,
        pipeline_hos,
    };
    out.write_json("manifest.json", &RunManifest::new("sweep", summary, data.files))?;
    out.write_json("timings.json", &timings)?;
    println!(
        "best threshold {:.6} (HOS {:.4}); pipeline threshold {:.6} (HOS {:.4})",
        curve.best_threshold, curve.best_hos, report.threshold_final.t_star, pipeline_hos
    );
    Ok(())
}

/// Folds clap's multi-line message into one diagnostic line.
fn one_line(rendered: &str) -> String {
    rendered
        .lines()
        .take_while(|l| !l.starts_with("Usage:"))
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    eprintln!("{}", one_line(&e.render().to_string()));
                    ExitCode::from(2)
                }
            };
        }
    };
    let result = match cli.command {
        Command::Predict(a) => predict(a),
        Command::Synth(a) => synth(a),
        Command::Bench(a) => bench(a),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
