//! `cbir` subcommands.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cbir_core::descriptor::{builtin_encoder_id, describe, DescribeInput, DescriptorConfig, Encoder};
use cbir_core::formats::{load_feature_map, load_index, save_head, DescriptorTable};
use cbir_core::imagecore::{load_manifest, load_raster, prepare_roi, Manifest};
use cbir_core::metric::{train_head, TrainConfig};
use cbir_core::retrieval::{evaluate_index, knn_report, ClassificationReport, EvalReport, EvalSetting};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::ServiceConfig;
use crate::engine::{DirSource, Engine, IngestSummary};
use crate::preview::{render, PreviewOptions};

#[derive(Debug, Parser)]
#[command(name = "cbir", version, about = "Lesion ROI retrieval engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Describe the manifest's ROIs and add them to a data directory's index
    Ingest(IngestArgs),
    /// Write a descriptor table for every manifest record
    Describe(DescribeArgs),
    /// Train an embedding head on a descriptor table with triplet loss
    Train(TrainArgs),
    /// Retrieval metrics and k-NN classification over a stored index
    Evaluate(EvaluateArgs),
    /// Render the multiscale structure response of one raster
    FilterPreview(FilterPreviewArgs),
    /// Run the HTTP service
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the config's data directory
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding head applied before indexing
    #[arg(long)]
    pub head: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderKind {
    Builtin,
    Precomputed,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_enum, default_value = "builtin")]
    pub encoder: EncoderKind,
    #[arg(long, default_value_t = 3.0)]
    pub gem_p: f64,
    /// Scale bands of the builtin encoder
    #[arg(long, default_value_t = 4)]
    pub bands: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub descriptors: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub margin: f64,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 50)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub triplets_per_anchor: usize,
    /// Output dimension (defaults to the descriptor dimension)
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub index: PathBuf,
    /// all, same or cross
    #[arg(long, default_value = "all")]
    pub setting: EvalSetting,
    /// Neighbours for the k-NN classification
    #[arg(long, default_value_t = 9)]
    pub k: usize,
    /// Where to write the JSON report (stdout when omitted)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterPreviewArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// start:stop:step
    #[arg(long)]
    pub scales: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// 16-bit PNG; the sidecar goes next to it with a .json extension
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
}

/// Contents of `evaluate --report`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    #[serde(flatten)]
    pub retrieval: EvalReport,
    pub knn_k: usize,
    pub classification: ClassificationReport,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => print_json(&ingest(&a)?),
        Command::Describe(a) => {
            let table = describe_manifest(&a)?;
            eprintln!("wrote {} descriptors of dim {} to {}", table.rows.len(), table.dim(), a.out.display());
            Ok(())
        }
        Command::Train(a) => train(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::FilterPreview(a) => filter_preview(&a),
        Command::Serve(a) => {
            let cfg = ServiceConfig::load(&a.config)?;
            tokio::runtime::Runtime::new()?.block_on(crate::http::serve(cfg))
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn ingest(a: &IngestArgs) -> anyhow::Result<IngestSummary> {
    let mut cfg = match &a.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(d) = &a.data_dir {
        cfg.data_dir = d.clone();
    }
    if let Some(h) = &a.head {
        cfg.head_path = Some(h.clone());
    }
    let engine = Engine::open(cfg)?;
    let manifest = load_manifest(&a.manifest)?;
    Ok(engine.ingest(&manifest, &DirSource::new(manifest_dir(&a.manifest)))?)
}

/// Descriptor table in manifest order. Builtin rasters are cropped to their
/// bbox and resized to the ROI size; precomputed feature maps are used as is.
pub fn describe_records(manifest: &Manifest, base: &Path, cfg: &DescriptorConfig) -> anyhow::Result<DescriptorTable> {
    let mut rows = Vec::with_capacity(manifest.len());
    let mut encoder_id = match cfg.encoder {
        Encoder::BuiltinFrangiStack { band_count } => builtin_encoder_id(band_count),
        Encoder::Precomputed => "precomputed".to_string(),
    };
    for (i, r) in manifest.records().iter().enumerate() {
        let path = base.join(&r.image_path);
        let context = || format!("record {} ({})", i + 2, path.display());
        let d = match cfg.encoder {
            Encoder::BuiltinFrangiStack { .. } => {
                let img = load_raster(&path).with_context(context)?;
                let roi = prepare_roi(&img, Some(&r.bbox)).with_context(context)?;
                describe(DescribeInput::Image(&roi), cfg).with_context(context)?
            }
            Encoder::Precomputed => {
                let fm = load_feature_map(&path).with_context(context)?;
                describe(DescribeInput::Features(&fm), cfg).with_context(context)?
            }
        };
        if i == 0 {
            encoder_id = d.encoder_id.clone();
        } else if d.encoder_id != encoder_id {
            bail!("{}: encoder `{}` differs from `{encoder_id}`", context(), d.encoder_id);
        }
        rows.push(d.vector);
    }
    Ok(DescriptorTable {
        gem_p: cfg.gem_p,
        encoder_id,
        rows,
    })
}

pub fn describe_manifest(a: &DescribeArgs) -> anyhow::Result<DescriptorTable> {
    let manifest = load_manifest(&a.manifest)?;
    let cfg = DescriptorConfig {
        encoder: match a.encoder {
            EncoderKind::Builtin => Encoder::BuiltinFrangiStack { band_count: a.bands },
            EncoderKind::Precomputed => Encoder::Precomputed,
        },
        gem_p: a.gem_p,
        ..DescriptorConfig::default()
    };
    let table = describe_records(&manifest, &manifest_dir(&a.manifest), &cfg)?;
    table.save(&a.out)?;
    Ok(table)
}

fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let table = DescriptorTable::load(&a.descriptors)?;
    let manifest = load_manifest(&a.manifest)?;
    if table.rows.len() != manifest.len() {
        bail!(
            "{} holds {} descriptors but {} lists {} records",
            a.descriptors.display(),
            table.rows.len(),
            a.manifest.display(),
            manifest.len()
        );
    }
    let cfg = TrainConfig {
        margin: a.margin,
        learning_rate: a.lr,
        momentum: a.momentum,
        iterations: a.iters,
        seed: a.seed,
        triplets_per_anchor: a.triplets_per_anchor,
        head_dims: a.out_dim.map(|o| [table.dim(), o]),
    };
    let report = train_head(&table.rows, &manifest.labels(), &cfg)?;
    save_head(&report.head, &a.out)?;
    print_json(&serde_json::json!({
        "triplets": report.triplet_count,
        "updates": report.updates,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "out": a.out,
    }))
}

pub fn evaluation(index_path: &Path, setting: EvalSetting, k: usize) -> anyhow::Result<EvaluationFile> {
    let index = load_index(index_path)?;
    Ok(EvaluationFile {
        retrieval: evaluate_index(&index, setting)?,
        knn_k: k,
        classification: knn_report(&index, k)?,
    })
}

fn evaluate(a: &EvaluateArgs) -> anyhow::Result<()> {
    let file = evaluation(&a.index, a.setting, a.k)?;
    match &a.report {
        Some(p) => {
            std::fs::write(p, serde_json::to_string_pretty(&file)?).with_context(|| format!("writing {}", p.display()))?;
            let r = &file.retrieval;
            eprintln!(
                "{}: mAP@10 {:.4}  P@1 {:.4}  P@10 {:.4}  ({} queries)  k-NN acc {:.4}  macro-F1 {:.4}",
                r.setting,
                r.map_at_10,
                r.precision_at_1,
                r.precision_at_10,
                r.query_count,
                file.classification.accuracy,
                file.classification.macro_f1
            );
            Ok(())
        }
        None => print_json(&file),
    }
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

fn filter_preview(a: &FilterPreviewArgs) -> anyhow::Result<()> {
    let image = load_raster(&a.input)?;
    let params = PreviewOptions {
        scales: a.scales.clone(),
        alpha: a.alpha,
        beta: a.beta,
        gamma: a.gamma,
        band: None,
    }
    .params()?;
    let (png, side) = render(&image, &params)?;
    std::fs::write(&a.out, png).with_context(|| format!("writing {}", a.out.display()))?;
    let side_path = sidecar_path(&a.out);
    std::fs::write(&side_path, serde_json::to_string(&side)?)
        .with_context(|| format!("writing {}", side_path.display()))?;
    eprintln!("max response {:.4} over {} scales", side.max_response, side.scales.len());
    Ok(())
}
