use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_ap, pooled_ap, smooth_scores, ApMode, ScoredDetection};
use crate::context::{assemble, Distortion, EmbeddingCache, EnsembleConfig};
use crate::dataset::{FaceTrack, DEFAULT_FRAME_WIDTH_PX};
use crate::encoder::ShortTermEncoder;
use crate::error::{Error, Result};
use crate::refine::{AscConfig, AscModel, AscVariant};
use crate::train::{predict_ensembles, train_asc, AscTrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationArm {
    /// Encoder head on the reference clip alone.
    NoContext,
    ContextLinear,
    PairwiseOnly,
    TemporalOnly,
    Full,
    MlpHead,
    ShuffleTime,
    OutOfContext,
    Smoothing,
}

impl AblationArm {
    pub const ALL: [AblationArm; 9] = [
        AblationArm::NoContext,
        AblationArm::ContextLinear,
        AblationArm::PairwiseOnly,
        AblationArm::TemporalOnly,
        AblationArm::Full,
        AblationArm::MlpHead,
        AblationArm::ShuffleTime,
        AblationArm::OutOfContext,
        AblationArm::Smoothing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::NoContext => "no_context",
            AblationArm::ContextLinear => "context_linear",
            AblationArm::PairwiseOnly => "pairwise_only",
            AblationArm::TemporalOnly => "temporal_only",
            AblationArm::Full => "full",
            AblationArm::MlpHead => "mlp_head",
            AblationArm::ShuffleTime => "shuffle_time",
            AblationArm::OutOfContext => "out_of_context",
            AblationArm::Smoothing => "smoothing",
        }
    }

    /// The trained model this arm is scored with (none for `no_context`).
    fn variant(self) -> Option<AscVariant> {
        match self {
            AblationArm::NoContext => None,
            AblationArm::ContextLinear => Some(AscVariant::ContextLinear),
            AblationArm::PairwiseOnly => Some(AscVariant::PairwiseOnly),
            AblationArm::TemporalOnly => Some(AscVariant::TemporalOnly),
            AblationArm::MlpHead => Some(AscVariant::PairwiseMlp),
            AblationArm::Full | AblationArm::ShuffleTime | AblationArm::OutOfContext | AblationArm::Smoothing => {
                Some(AscVariant::Full)
            }
        }
    }

    fn distortion(self) -> Distortion {
        match self {
            AblationArm::ShuffleTime => Distortion::ShuffleTime,
            AblationArm::OutOfContext => Distortion::OutOfContext,
            _ => Distortion::None,
        }
    }
}

impl FromStr for AblationArm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation arm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationSuite {
    /// Context and refinement variants.
    Table2,
    /// Shuffled time and out-of-context speakers against the ordered model.
    Distortion,
    /// Median smoothing of the full model's scores.
    Smoothing,
    /// The full model over a grid of clip and speaker counts.
    ContextSize,
    /// No context, linear context, pairwise only and full, plus the full
    /// model's distortions and smoothing; three trained models per seed.
    Main,
    /// Every arm at the base context size.
    All,
}

impl AblationSuite {
    pub fn arms(self) -> Vec<AblationArm> {
        use AblationArm::*;
        match self {
            AblationSuite::Table2 => vec![NoContext, ContextLinear, PairwiseOnly, TemporalOnly, Full, MlpHead],
            AblationSuite::Distortion => vec![ContextLinear, Full, ShuffleTime, OutOfContext],
            AblationSuite::Smoothing => vec![Full, Smoothing],
            AblationSuite::ContextSize => vec![Full],
            AblationSuite::Main => vec![NoContext, ContextLinear, PairwiseOnly, Full, ShuffleTime, OutOfContext, Smoothing],
            AblationSuite::All => AblationArm::ALL.to_vec(),
        }
    }
}

impl FromStr for AblationSuite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table2" => Ok(AblationSuite::Table2),
            "distortion" => Ok(AblationSuite::Distortion),
            "smoothing" => Ok(AblationSuite::Smoothing),
            "context_size" => Ok(AblationSuite::ContextSize),
            "main" => Ok(AblationSuite::Main),
            "all" => Ok(AblationSuite::All),
            _ => Err(Error::Config(format!(
                "unknown suite `{s}` (table2, distortion, smoothing, context_size, main, all)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub ensemble: EnsembleConfig,
    /// Template for every trained arm; variant, L and S are overridden.
    pub asc: AscConfig,
    pub train: AscTrainConfig,
    /// One repetition per seed; the seed drives training and evaluation
    /// sampling alike.
    pub seeds: Vec<u64>,
    pub smoothing_windows_s: Vec<f64>,
    pub grid_clips: Vec<usize>,
    pub grid_speakers: Vec<usize>,
    /// Spacing between sampled clips for the context-size grid.
    pub grid_spacing_s: f64,
    pub ap_mode: ApMode,
    pub frame_width_px: f64,
    pub eval_batch: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            ensemble: EnsembleConfig::default(),
            asc: AscConfig::default(),
            train: AscTrainConfig::default(),
            seeds: vec![0, 1, 2],
            smoothing_windows_s: vec![0.5, 2.25],
            grid_clips: vec![1, 3, 5, 7, 9, 11],
            grid_speakers: vec![1, 2, 3],
            grid_spacing_s: 0.225,
            ap_mode: ApMode::PerVideo,
            frame_width_px: DEFAULT_FRAME_WIDTH_PX,
            eval_batch: 64,
        }
    }
}

/// Everything the arms are trained and scored on.
pub struct AblationData<'a> {
    pub cache: &'a EmbeddingCache,
    /// Source tracks, for face widths.
    pub tracks: &'a [FaceTrack],
    /// Cache indices used for training.
    pub train: &'a [usize],
    /// Cache indices scored by every arm.
    pub eval: &'a [usize],
    /// Needed by `no_context`.
    pub encoder: Option<&'a ShortTermEncoder>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub arm: AblationArm,
    pub clips: usize,
    pub speakers: usize,
    /// Smoothing window, for the smoothing arm.
    pub window_s: Option<f64>,
    pub seed: u64,
    pub map: f64,
    pub pooled_ap: f64,
}

pub fn format_ablation_csv(results: &[AblationResult]) -> String {
    let mut s = String::from("arm,clips,speakers,window_s,seed,map,pooled_ap\n");
    for r in results {
        let w = r.window_s.map_or(String::new(), |w| w.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{w},{},{},{}",
            r.arm.name(),
            r.clips,
            r.speakers,
            r.seed,
            r.map,
            r.pooled_ap
        );
    }
    s
}

pub fn write_ablation_csv(results: &[AblationResult], path: &Path) -> Result<()> {
    std::fs::write(path, format_ablation_csv(results)).map_err(|e| Error::io(path, e))
}

/// Mean mAP of one arm over repetitions, optionally for one window.
pub fn mean_map(results: &[AblationResult], arm: AblationArm, window_s: Option<f64>) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter(|r| r.arm == arm && (window_s.is_none() || r.window_s == window_s))
        .map(|r| r.map)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn detection_shells(data: &AblationData<'_>, tolerance: f64, frame_width_px: f64) -> Vec<ScoredDetection> {
    let cache = data.cache;
    let mut out = Vec::new();
    for &i in data.eval {
        let tr = cache.track(i);
        let src = data
            .tracks
            .iter()
            .find(|t| t.video_id == tr.video_id && t.track_id == tr.track_id);
        for j in 0..tr.len() {
            let t = tr.timestamps[j];
            out.push(ScoredDetection {
                video_id: tr.video_id.clone(),
                track_id: tr.track_id.clone(),
                timestamp: t,
                score: 0.0,
                label: tr.labels[j],
                face_width_px: src.map_or(0.0, |s| s.detections[j].width_px(frame_width_px)),
                face_count: cache.present(&tr.video_id, t, tolerance).len().max(1),
            });
        }
    }
    out
}

/// Scores every detection of the `eval` tracks with the context model.
pub fn score_asc(
    model: &AscModel,
    data: &AblationData<'_>,
    ens: &EnsembleConfig,
    distortion: Distortion,
    seed: u64,
    frame_width_px: f64,
    batch: usize,
) -> Result<Vec<ScoredDetection>> {
    let mut dets = detection_shells(data, ens.cooccurrence_tolerance_s, frame_width_px);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<(usize, usize)> = data
        .eval
        .iter()
        .flat_map(|&i| (0..data.cache.track(i).len()).map(move |j| (i, j)))
        .collect();
    let mut k = 0;
    for chunk in positions.chunks(batch.max(1)) {
        let ensembles = chunk
            .iter()
            .map(|&(i, j)| assemble(data.cache, data.cache.track(i).timestamps[j], i, ens, &mut rng, distortion))
            .collect::<Result<Vec<_>>>()?;
        for p in predict_ensembles(model, &ensembles, batch)? {
            dets[k].score = p;
            k += 1;
        }
    }
    Ok(dets)
}

/// Scores every detection of the `eval` tracks with the encoder's fused
/// head on its cached embedding.
pub fn score_ste(
    encoder: &ShortTermEncoder,
    data: &AblationData<'_>,
    tolerance: f64,
    frame_width_px: f64,
) -> Result<Vec<ScoredDetection>> {
    let mut dets = detection_shells(data, tolerance, frame_width_px);
    let d = data.cache.dim();
    let mut k = 0;
    for &i in data.eval {
        let tr = data.cache.track(i);
        for j in 0..tr.len() {
            dets[k].score = encoder.score_embedding(tr.embedding(j, d))?;
            k += 1;
        }
    }
    Ok(dets)
}

fn result(arm: AblationArm, ens: &EnsembleConfig, window_s: Option<f64>, seed: u64, dets: &[ScoredDetection], mode: ApMode) -> Result<AblationResult> {
    Ok(AblationResult {
        arm,
        clips: ens.clips,
        speakers: ens.speakers,
        window_s,
        seed,
        map: mean_ap(dets, mode)?,
        pooled_ap: pooled_ap(dets)?,
    })
}

fn train_variant(
    data: &AblationData<'_>,
    cfg: &AblationConfig,
    ens: &EnsembleConfig,
    variant: AscVariant,
    seed: u64,
) -> Result<AscModel> {
    let asc = AscConfig {
        variant,
        clips: ens.clips,
        speakers: ens.speakers,
        embedding_dim: data.cache.dim(),
        ..cfg.asc.clone()
    };
    let train = AscTrainConfig { seed, ..cfg.train.clone() };
    // Model selection uses the training tracks' own held-out videos; the
    // evaluation tracks stay untouched.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub = EmbeddingCache::new(
        data.cache.dim(),
        data.train.iter().map(|&i| data.cache.track(i).clone()).collect(),
    )?;
    let (tr, va) = crate::train::split_cache(&sub, train.val_fraction, &mut rng);
    Ok(train_asc(&sub, &tr, &va, asc, ens, &train)?.model)
}

/// Trains and scores each arm of `suite` once per seed. Rows come out
/// grouped by seed, then by arm.
pub fn run_ablation(suite: AblationSuite, data: &AblationData<'_>, cfg: &AblationConfig) -> Result<Vec<AblationResult>> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    if data.eval.is_empty() || data.train.is_empty() {
        return Err(Error::Data("ablation needs training and evaluation tracks".into()));
    }
    let mode = cfg.ap_mode;
    let fw = cfg.frame_width_px;
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        if suite == AblationSuite::ContextSize {
            for &s in &cfg.grid_speakers {
                for &l in &cfg.grid_clips {
                    let ens = EnsembleConfig {
                        cooccurrence_tolerance_s: cfg.ensemble.cooccurrence_tolerance_s,
                        clip_s: cfg.ensemble.clip_s,
                        ..EnsembleConfig::with_spacing(l, s, cfg.grid_spacing_s)
                    };
                    let model = train_variant(data, cfg, &ens, AscVariant::Full, seed)?;
                    let dets = score_asc(&model, data, &ens, Distortion::None, seed, fw, cfg.eval_batch)?;
                    out.push(result(AblationArm::Full, &ens, None, seed, &dets, mode)?);
                }
            }
            continue;
        }
        let ens = &cfg.ensemble;
        let arms = suite.arms();
        let mut models: Vec<(AscVariant, AscModel)> = Vec::new();
        for arm in arms {
            let Some(variant) = arm.variant() else {
                let enc = data
                    .encoder
                    .ok_or_else(|| Error::Config("no_context needs the short-term encoder".into()))?;
                let dets = score_ste(enc, data, ens.cooccurrence_tolerance_s, fw)?;
                out.push(result(arm, ens, None, seed, &dets, mode)?);
                continue;
            };
            let model = match models.iter().find(|(v, _)| *v == variant) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = train_variant(data, cfg, ens, variant, seed)?;
                    models.push((variant, m.clone()));
                    m
                }
            };
            let dets = score_asc(&model, data, ens, arm.distortion(), seed, fw, cfg.eval_batch)?;
            if arm == AblationArm::Smoothing {
                for &w in &cfg.smoothing_windows_s {
                    let smoothed = smooth_scores(&dets, w)?;
                    out.push(result(arm, ens, Some(w), seed, &smoothed, mode)?);
                }
            } else {
                out.push(result(arm, ens, None, seed, &dets, mode)?);
            }
        }
    }
    Ok(out)
}
