use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use fiqa_opt::datamodel::{
    load_embeddings, load_quality_scores, validate_bundle, write_embeddings_csv, write_embeddings_femb,
    write_quality_csv, write_quality_scores, OptimConfig,
};
use fiqa_opt::distill::{normalize_scores, predict_table, train_regressor, RegressorModel, TrainConfig};
use fiqa_opt::eval::{self, build_verification_pairs, erc_curve, ErcSummary};
use fiqa_opt::rankopt::{optimize_labels, repetition_pairs, OptimizationSummary};
use fiqa_opt::synth::{generate_synthetic, SynthConfig};
use serde_json::json;

use crate::manifest::{sibling, RunManifest};
use crate::Shared;

/// 2 for filesystem failures, 1 for everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause.downcast_ref::<fiqa_opt::Error>().is_some_and(fiqa_opt::Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

fn setup_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn is_stdout(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Run `body` against the primary output, a file or standard output.
fn write_primary(out: &Path, body: impl FnOnce(&mut dyn Write) -> fiqa_opt::Result<()>) -> Result<()> {
    if is_stdout(out) {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        body(&mut lock)?;
        return Ok(());
    }
    let file = File::create(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn log(stage: &str, msg: impl std::fmt::Display) {
    eprintln!("[{stage}] {msg}");
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EmbeddingFormat {
    Femb,
    Csv,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long, default_value_t = 50)]
    identities: usize,
    /// Fixed image count per identity; overrides --images-min/--images-max
    #[arg(long)]
    images_per_identity: Option<usize>,
    #[arg(long, default_value_t = 40)]
    images_min: usize,
    #[arg(long, default_value_t = 40)]
    images_max: usize,
    #[arg(long, default_value_t = 64)]
    dimension: usize,
    #[arg(long, default_value_t = 0.1)]
    noise_floor: f64,
    #[arg(long, default_value_t = 1.5)]
    noise_ceil: f64,
    #[arg(long, default_value_t = 0.3)]
    baseline_corruption: f64,
    #[arg(long, value_enum, default_value = "femb")]
    format: EmbeddingFormat,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let start = Instant::now();
    setup_threads(args.shared.threads)?;
    let (images_min, images_max) = match args.images_per_identity {
        Some(n) => (n, n),
        None => (args.images_min, args.images_max),
    };
    let config = SynthConfig {
        identities: args.identities,
        images_min,
        images_max,
        dimension: args.dimension,
        noise_floor: args.noise_floor,
        noise_ceil: args.noise_ceil,
        baseline_corruption: args.baseline_corruption,
        seed: args.shared.seed,
    };
    let out = &args.shared.out;
    if is_stdout(out) {
        bail!("synth writes several files; --out must be a directory");
    }
    let data = generate_synthetic(&config)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let embeddings = match args.format {
        EmbeddingFormat::Femb => {
            let p = out.join("embeddings.femb");
            write_embeddings_femb(&p, &data.embeddings)?;
            p
        }
        EmbeddingFormat::Csv => {
            let p = out.join("embeddings.csv");
            write_embeddings_csv(&p, &data.embeddings)?;
            p
        }
    };
    let truth = out.join("truth.csv");
    let baseline = out.join("baseline.csv");
    write_quality_scores(&truth, &data.truth)?;
    write_quality_scores(&baseline, &data.baseline)?;
    log("synth", format_args!("{} images of {} identities in {}", data.embeddings.len(), config.identities, out.display()));

    let manifest = RunManifest::new("synth", json!(config), &[], &[embeddings, truth, baseline], start.elapsed())?;
    manifest.write(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    shared: Shared,
    /// FEMB or CSV embeddings
    #[arg(long)]
    embeddings: PathBuf,
    /// Baseline quality CSV (image_id,score)
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = 20)]
    clusters: usize,
    #[arg(long, default_value_t = 0.001)]
    theta: f64,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Also write image_id,baseline_rank,mean_opt_index
    #[arg(long)]
    scatter: Option<PathBuf>,
    /// Also write the first repetition's mated pairs as CSV
    #[arg(long)]
    pairs_dump: Option<PathBuf>,
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    let start = Instant::now();
    setup_threads(args.shared.threads)?;
    let config = OptimConfig {
        clusters: args.clusters,
        theta: args.theta,
        repeats: args.repeats,
        seed: args.shared.seed,
    };
    config.validate()?;
    let bundle = validate_bundle(load_embeddings(&args.embeddings)?, load_quality_scores(&args.scores)?)?;
    log("optimize", format_args!("{} images, {} identities", bundle.len(), bundle.identity_index().len()));

    let result = optimize_labels(&bundle, &config)?;
    log("optimize", format_args!("{} repetitions, {} pairs each", config.repeats, result.pairs_per_repetition[0]));
    let out = &args.shared.out;
    write_primary(out, |w| write_quality_csv(w, &result.entries))?;

    let mut outputs = Vec::new();
    if let Some(path) = &args.scatter {
        write_primary(path, |w| result.write_scatter_csv(w))?;
        outputs.push(path.clone());
    }
    if let Some(path) = &args.pairs_dump {
        let pairs = repetition_pairs(&bundle, &config, 1)?;
        write_primary(path, |w| pairs.write_csv(&bundle, w))?;
        outputs.push(path.clone());
    }
    if is_stdout(out) {
        return Ok(());
    }
    let sidecar = sibling(out, "json");
    write_json(&sidecar, &OptimizationSummary::new(&config, &result))?;
    outputs.splice(0..0, [out.clone(), sidecar]);
    let manifest = RunManifest::new(
        "optimize",
        json!(config),
        &[args.embeddings, args.scores],
        &outputs,
        start.elapsed(),
    )?;
    manifest.write(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    embeddings: PathBuf,
    /// Training labels (image_id,score); rescaled to [0, 1] before training
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    /// 0 trains a linear head
    #[arg(long, default_value_t = TrainConfig::default().hidden_width)]
    hidden_width: usize,
}

pub fn train(args: TrainArgs) -> Result<()> {
    let start = Instant::now();
    setup_threads(args.shared.threads)?;
    let config = TrainConfig {
        learning_rate: args.learning_rate,
        epochs: args.epochs,
        batch_size: args.batch_size,
        hidden_width: args.hidden_width,
        seed: args.shared.seed,
    };
    config.validate()?;
    let bundle = validate_bundle(load_embeddings(&args.embeddings)?, load_quality_scores(&args.scores)?)?;
    let labels = normalize_scores(bundle.qualities())?;
    let trained = train_regressor(&bundle, &labels, &config)?;
    log(
        "train",
        format_args!("{} epochs, final L1 {}", config.epochs, trained.loss_trace.last().copied().unwrap_or(f64::NAN)),
    );

    let out = &args.shared.out;
    let model_json = trained.model.to_json()?;
    write_primary(out, |w| {
        w.write_all(model_json.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| fiqa_opt::Error::Io { path: out.clone(), source: e })
    })?;
    if is_stdout(out) {
        return Ok(());
    }
    let loss_path = sibling(out, "loss.csv");
    write_primary(&loss_path, |w| trained.write_loss_csv(w))?;
    let manifest = RunManifest::new(
        "train",
        json!(config),
        &[args.embeddings, args.scores],
        &[out.clone(), loss_path],
        start.elapsed(),
    )?;
    manifest.write(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    embeddings: PathBuf,
    /// Model JSON written by `train`
    #[arg(long)]
    model: PathBuf,
}

pub fn predict(args: PredictArgs) -> Result<()> {
    let start = Instant::now();
    setup_threads(args.shared.threads)?;
    let text = std::fs::read_to_string(&args.model).with_context(|| format!("reading {}", args.model.display()))?;
    let model = RegressorModel::from_json(&text)?;
    let records = load_embeddings(&args.embeddings)?;
    let table = predict_table(&model, &records)?;
    log("predict", format_args!("{} scores", table.len()));

    let out = &args.shared.out;
    write_primary(out, |w| write_quality_csv(w, &table))?;
    if is_stdout(out) {
        return Ok(());
    }
    let manifest = RunManifest::new(
        "predict",
        json!({ "seed": args.shared.seed }),
        &[args.embeddings, args.model],
        std::slice::from_ref(out),
        start.elapsed(),
    )?;
    manifest.write(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    shared: Shared,
    #[arg(long)]
    embeddings: PathBuf,
    /// Any quality CSV: baseline, optimized or predicted
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, default_value_t = eval::DEFAULT_FMR)]
    fmr_target: f64,
    /// Most genuine pairs sampled per identity
    #[arg(long, default_value_t = eval::DEFAULT_GENUINE_CAP)]
    genuine_cap: usize,
    /// Impostor pairs; defaults to 10 x image count
    #[arg(long)]
    impostor_count: Option<usize>,
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    setup_threads(args.shared.threads)?;
    let bundle = validate_bundle(load_embeddings(&args.embeddings)?, load_quality_scores(&args.scores)?)?;
    let impostors = args
        .impostor_count
        .unwrap_or(eval::DEFAULT_IMPOSTOR_FACTOR * bundle.len());
    let pairs = build_verification_pairs(&bundle, args.shared.seed, args.genuine_cap, impostors)?;
    let curve = erc_curve(&bundle, &pairs, bundle.qualities(), args.fmr_target, &eval::default_drop_grid())?;
    let summary = ErcSummary::from(&curve);
    log(
        "evaluate",
        format_args!("threshold {} FNMR@0 {} AUC {}", curve.threshold, curve.fnmr_values[0], curve.auc),
    );

    let out = &args.shared.out;
    write_primary(out, |w| curve.write_csv(w))?;
    if is_stdout(out) {
        eprintln!("{}", serde_json::to_string(&summary)?);
        return Ok(());
    }
    let summary_path = sibling(out, "summary.json");
    write_json(&summary_path, &summary)?;
    let config = json!({
        "seed": args.shared.seed,
        "fmr_target": args.fmr_target,
        "genuine_cap": args.genuine_cap,
        "impostor_count": impostors,
    });
    let manifest = RunManifest::new(
        "evaluate",
        config,
        &[args.embeddings, args.scores],
        &[out.clone(), summary_path],
        start.elapsed(),
    )?;
    manifest.write(out)?;
    Ok(())
}
