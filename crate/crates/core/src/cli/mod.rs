//! The `asc` command line: staged pipeline commands over a run directory.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{assemble, Distortion, EmbeddingCache, EnsembleConfig};
use crate::dataset::synthetic::{generate_synthetic, SyntheticDataset};
use crate::dataset::{ClipSpec, FaceTrack};
use crate::encoder::{EncoderConfig, ShortTermEncoder};
use crate::error::{Error, Result};
use crate::eval::{
    breakdown, export_attention, mean_ap, pooled_ap, run_ablation, score_asc, smooth_scores, write_ablation_csv,
    write_scored_csv, AblationData, AblationSuite, ApMode,
};
use crate::refine::{AscConfig, AscModel};
use crate::tensor::ParamStore;
use crate::train::{append_metrics, embed_tracks, split_cache, train_asc, train_ste};

pub use config::{keys_help, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "asc", version, about = "Active speaker detection with context ensembles", after_long_help = keys_help())]
pub struct Cli {
    /// TOML file with configuration keys (see the list below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set ste_train.epochs=5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Master seed (the `seed` key).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Single ordered pipeline. Execution is always sequential, so this
    /// only records the request in the manifest.
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic conversation dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the short-term encoder on a dataset.
    TrainSte {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Embed every detection of a dataset with a trained encoder.
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the context model on an embedding cache.
    TrainAsc {
        #[arg(long)]
        cache: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Score a cache with a trained context model.
    Eval(EvalArgs),
    /// Train and score the ablation arms.
    Ablate(AblateArgs),
    /// Write the attention matrix of one ensemble.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset the cache came from, for face widths.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Median-smoothing window in seconds applied to the scores.
    #[arg(long)]
    pub smooth_s: Option<f64>,
    /// none, shuffle_time or out_of_context.
    #[arg(long, default_value = "none")]
    pub distortion: String,
    /// Output directory for scores.csv and metrics.toml.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// table2, distortion, smoothing, context_size, main or all.
    #[arg(long, default_value = "table2")]
    pub suite: String,
    /// Cache the arms are trained on.
    #[arg(long)]
    pub train_cache: PathBuf,
    /// Cache every arm is scored on.
    #[arg(long)]
    pub eval_cache: PathBuf,
    /// Encoder checkpoint, needed by the no_context arm.
    #[arg(long)]
    pub ste_checkpoint: Option<PathBuf>,
    /// Dataset of the evaluation cache, for face widths.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub cache: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub video: String,
    #[arg(long)]
    pub track: String,
    /// Reference time in seconds.
    #[arg(long)]
    pub time: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written next to every run's outputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub deterministic: bool,
    pub config: RunConfig,
}

/// `git describe` of the working directory when available, else the
/// package version.
pub fn version_string() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")))
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, deterministic: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = RunManifest {
        command: command.to_string(),
        version: version_string(),
        seed: cfg.seed,
        deterministic,
        config: cfg.clone(),
    };
    let path = dir.join("run.toml");
    let text = toml::to_string(&m).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Sidecar next to a checkpoint recording the model's shape.
#[derive(Debug, Serialize, Deserialize)]
struct ModelCard {
    encoder: Option<EncoderConfig>,
    asc: Option<AscConfig>,
    ensemble: Option<EnsembleConfig>,
}

fn card_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("toml")
}

fn write_card(ckpt: &Path, card: &ModelCard) -> Result<()> {
    let path = card_path(ckpt);
    let text = toml::to_string(card).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn read_card(ckpt: &Path) -> Result<ModelCard> {
    let path = card_path(ckpt);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_encoder(ckpt: &Path) -> Result<ShortTermEncoder> {
    let cfg = read_card(ckpt)?
        .encoder
        .ok_or_else(|| Error::Config(format!("{} is not an encoder checkpoint", ckpt.display())))?;
    Ok(ShortTermEncoder {
        cfg,
        params: ParamStore::load(ckpt)?,
    })
}

pub fn load_asc(ckpt: &Path) -> Result<(AscModel, EnsembleConfig)> {
    let card = read_card(ckpt)?;
    match (card.asc, card.ensemble) {
        (Some(cfg), Some(ens)) => Ok((
            AscModel {
                cfg,
                params: ParamStore::load(ckpt)?,
            },
            ens,
        )),
        _ => Err(Error::Config(format!("{} is not a context-model checkpoint", ckpt.display()))),
    }
}

fn parse_distortion(s: &str) -> Result<Distortion> {
    match s {
        "none" => Ok(Distortion::None),
        "shuffle_time" => Ok(Distortion::ShuffleTime),
        "out_of_context" => Ok(Distortion::OutOfContext),
        _ => Err(Error::Config(format!("unknown distortion `{s}`"))),
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        cfg.set(o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn all_indices(cache: &EmbeddingCache) -> Vec<usize> {
    (0..cache.tracks().len()).collect()
}

fn tracks_of(data: Option<&Path>) -> Result<Vec<FaceTrack>> {
    match data {
        Some(d) => Ok(SyntheticDataset::load(d)?.tracks),
        None => Ok(Vec::new()),
    }
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let det = cli.deterministic;
    match &cli.command {
        Command::GenData { out } => {
            let ds = generate_synthetic(&cfg.synthetic, cfg.seed)?;
            ds.save(out)?;
            write_manifest(out, "gen-data", &cfg, det)?;
            eprintln!("wrote {} videos, {} tracks to {}", ds.videos.len(), ds.tracks.len(), out.display());
        }
        Command::TrainSte { data, run_dir } => {
            let ds = SyntheticDataset::load(data)?;
            let spec = ClipSpec::new(&cfg.encoder, cfg.clip_s, cfg.mel.clone())?;
            let mut train_cfg = cfg.ste_train.clone();
            train_cfg.seed = train_cfg.seed.wrapping_add(cfg.seed);
            let out = train_ste(&ds, &ds.tracks, &spec, cfg.encoder.clone(), &train_cfg)?;
            write_manifest(run_dir, "train-ste", &cfg, det)?;
            let ckpt = run_dir.join("ste.ckpt");
            out.encoder.params.save(&ckpt)?;
            write_card(
                &ckpt,
                &ModelCard {
                    encoder: Some(cfg.encoder.clone()),
                    asc: None,
                    ensemble: None,
                },
            )?;
            append_metrics(&run_dir.join("ste_metrics.csv"), &out.log)?;
            eprintln!("best epoch {}; checkpoint {}", out.best_epoch, ckpt.display());
        }
        Command::Embed { data, checkpoint, out } => {
            let ds = SyntheticDataset::load(data)?;
            let encoder = load_encoder(checkpoint)?;
            let spec = ClipSpec::new(&encoder.cfg, cfg.clip_s, cfg.mel.clone())?;
            let cache = embed_tracks(&encoder, &ds, &ds.tracks, &spec, 32)?;
            cache.save(out)?;
            eprintln!("embedded {} tracks to {}", cache.tracks().len(), out.display());
        }
        Command::TrainAsc { cache, run_dir } => {
            let cache = EmbeddingCache::load(cache)?;
            let asc_cfg = AscConfig {
                clips: cfg.ensemble.clips,
                speakers: cfg.ensemble.speakers,
                embedding_dim: cache.dim(),
                ..cfg.asc.clone()
            };
            let mut train_cfg = cfg.asc_train.clone();
            train_cfg.seed = train_cfg.seed.wrapping_add(cfg.seed);
            let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
            let (tr, va) = split_cache(&cache, train_cfg.val_fraction, &mut rng);
            let out = train_asc(&cache, &tr, &va, asc_cfg.clone(), &cfg.ensemble, &train_cfg)?;
            write_manifest(run_dir, "train-asc", &cfg, det)?;
            let ckpt = run_dir.join("asc.ckpt");
            out.model.params.save(&ckpt)?;
            write_card(
                &ckpt,
                &ModelCard {
                    encoder: None,
                    asc: Some(asc_cfg),
                    ensemble: Some(cfg.ensemble.clone()),
                },
            )?;
            append_metrics(&run_dir.join("asc_metrics.csv"), &out.log)?;
            eprintln!("best epoch {}; checkpoint {}", out.best_epoch, ckpt.display());
        }
        Command::Eval(a) => {
            let cache = EmbeddingCache::load(&a.cache)?;
            let (model, ens) = load_asc(&a.checkpoint)?;
            let tracks = tracks_of(a.data.as_deref())?;
            let eval_idx = all_indices(&cache);
            let data = AblationData {
                cache: &cache,
                tracks: &tracks,
                train: &[],
                eval: &eval_idx,
                encoder: None,
            };
            let mut dets = score_asc(
                &model,
                &data,
                &ens,
                parse_distortion(&a.distortion)?,
                cfg.seed,
                cfg.ablation.frame_width_px,
                cfg.ablation.eval_batch,
            )?;
            if let Some(w) = a.smooth_s {
                dets = smooth_scores(&dets, w)?;
            }
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            write_scored_csv(&dets, &a.out.join("scores.csv"))?;
            let per_video = mean_ap(&dets, ApMode::PerVideo)?;
            let pooled = pooled_ap(&dets)?;
            let report = breakdown(&dets, cfg.ablation.ap_mode)?;
            let mut text = format!("map = {per_video}\npooled_ap = {pooled}\n\n[face_count]\n");
            for (k, v) in &report.by_face_count {
                text.push_str(&format!("\"{}\" = {v}\n", k.name()));
            }
            text.push_str("\n[face_size]\n");
            for (k, v) in &report.by_face_size {
                text.push_str(&format!("{} = {v}\n", k.name()));
            }
            let path = a.out.join("metrics.toml");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            write_manifest(&a.out, "eval", &cfg, det)?;
            eprintln!("mAP {per_video:.4} (pooled {pooled:.4})");
        }
        Command::Ablate(a) => {
            let suite: AblationSuite = a.suite.parse()?;
            let train = EmbeddingCache::load(&a.train_cache)?;
            let eval = EmbeddingCache::load(&a.eval_cache)?;
            let (cache, train_idx, eval_idx) = merge_caches(&train, &eval)?;
            let tracks = tracks_of(a.eval_data.as_deref())?;
            let encoder = a.ste_checkpoint.as_deref().map(load_encoder).transpose()?;
            let data = AblationData {
                cache: &cache,
                tracks: &tracks,
                train: &train_idx,
                eval: &eval_idx,
                encoder: encoder.as_ref(),
            };
            let results = run_ablation(suite, &data, &cfg.ablation)?;
            std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
            write_ablation_csv(&results, &a.out.join("ablation.csv"))?;
            write_manifest(&a.out, "ablate", &cfg, det)?;
            for r in &results {
                eprintln!("{:<15} L={:<2} S={} seed {} mAP {:.4}", r.arm.name(), r.clips, r.speakers, r.seed, r.map);
            }
        }
        Command::ExportAttention(a) => {
            let cache = EmbeddingCache::load(&a.cache)?;
            let (model, ens) = load_asc(&a.checkpoint)?;
            let reference = cache
                .find(&a.video, &a.track)
                .ok_or_else(|| Error::Data(format!("track {}/{} is not in the cache", a.video, a.track)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let ensemble = assemble(&cache, a.time, reference, &ens, &mut rng, Distortion::None)?;
            let (score, state) = model.asc_forward(&ensemble.to_tensor()?)?;
            let state = state.ok_or_else(|| Error::Config("this model variant has no pairwise attention".into()))?;
            let files = export_attention(&ensemble, &state, &a.out, "attention")?;
            write_manifest(&a.out, "export-attention", &cfg, det)?;
            eprintln!("score {score:.4}; wrote {}", files.matrix.display());
        }
    }
    Ok(())
}

/// One cache holding the tracks of both, with the index lists of each.
/// Video ids must not collide.
pub fn merge_caches(train: &EmbeddingCache, eval: &EmbeddingCache) -> Result<(EmbeddingCache, Vec<usize>, Vec<usize>)> {
    if train.dim() != eval.dim() {
        return Err(Error::Data(format!(
            "caches have embedding sizes {} and {}",
            train.dim(),
            eval.dim()
        )));
    }
    let mut tracks = train.tracks().to_vec();
    tracks.extend(eval.tracks().iter().cloned());
    let n = train.tracks().len();
    let total = tracks.len();
    let merged = EmbeddingCache::new(train.dim(), tracks)?;
    Ok((merged, (0..n).collect(), (n..total).collect()))
}

/// Exit code for an error: 1 usage/config, 2 data, 3 numeric failure.
pub fn exit_code(err: &Error) -> u8 {
    if err.is_numeric() {
        3
    } else {
        match err {
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        }
    }
}

/// Parses `args` and runs the command; diagnostics go to standard error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
