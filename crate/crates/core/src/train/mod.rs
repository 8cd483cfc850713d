//! Optimization loops: the short-term encoder on clips, the embedding
//! cache, and the context model on cached embeddings.

mod optim;

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{assemble, stack_ensembles, ContextEnsemble, Distortion, EmbeddingCache, EnsembleConfig, TrackEmbeddings};
use crate::dataset::{clip_at, detections_per_clip, split_by_video, ste_epoch_sample, ClipSpec, FaceTrack, MediaSource};
use crate::encoder::{apply_bn_updates, batch_inputs, ste_loss, Clip, EncoderConfig, ShortTermEncoder};
use crate::error::{Error, Result};
use crate::eval::{mean_ap, ApMode, ScoredDetection};
use crate::refine::{speaking_probability, AscConfig, AscModel};
use crate::signal::augment;
use crate::Mode;

pub use optim::{lr_at, Adam, Schedule};

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    /// NaN when the split has no positive.
    pub ap: f64,
}

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!("{},{},{},{}", self.epoch, self.split, self.loss, self.ap)
    }
}

pub fn format_metrics(rows: &[MetricRow]) -> String {
    let mut s = String::from("epoch,split,loss,ap\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv_line());
    }
    s
}

/// Appends rows to a metrics CSV, writing the header if the file is new.
pub fn append_metrics(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut s = if fresh { String::from("epoch,split,loss,ap\n") } else { String::new() };
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv_line());
    }
    f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
}

fn ap_or_nan(scored: &[(f64, u8)]) -> f64 {
    crate::eval::average_precision(scored).unwrap_or(f64::NAN)
}

/// Median gap between consecutive detections over all tracks.
pub fn detection_period(tracks: &[FaceTrack]) -> f64 {
    let mut gaps: Vec<f64> = tracks
        .iter()
        .flat_map(|t| t.detections.windows(2).map(|w| w[1].timestamp - w[0].timestamp))
        .collect();
    if gaps.is_empty() {
        return 0.0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SteTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    /// Fraction of videos held out for model selection.
    pub val_fraction: f64,
    /// Clips drawn from each track per epoch.
    pub clips_per_track: usize,
    /// Random flips and corner crops of the face stack.
    pub augment: bool,
    /// Upper bound on held-out clips scored after each epoch.
    pub max_val_clips: usize,
    pub verbose: bool,
}

impl Default for SteTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            schedule: Schedule::STE,
            seed: 0,
            val_fraction: 0.1,
            clips_per_track: 1,
            augment: true,
            max_val_clips: 256,
            verbose: false,
        }
    }
}

impl SteTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 || self.clips_per_track == 0 {
            return Err(Error::Config("batch size and clips per track must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub struct SteTrainOutcome {
    /// Parameters from the epoch with the best held-out AP (the last epoch
    /// when nothing is held out).
    pub encoder: ShortTermEncoder,
    pub log: Vec<MetricRow>,
    pub best_epoch: usize,
    pub steps: u64,
    pub train_tracks: Vec<usize>,
    pub val_tracks: Vec<usize>,
}

/// Evenly spaced detections from the held-out tracks, at most `max` in all.
fn val_positions(tracks: &[FaceTrack], val: &[usize], max: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = val.iter().flat_map(|&i| (0..tracks[i].len()).map(move |j| (i, j))).collect();
    if all.len() <= max {
        return all;
    }
    (0..max).map(|i| all[i * all.len() / max]).collect()
}

pub fn train_ste(
    media: &dyn MediaSource,
    tracks: &[FaceTrack],
    spec: &ClipSpec,
    encoder_cfg: EncoderConfig,
    cfg: &SteTrainConfig,
) -> Result<SteTrainOutcome> {
    cfg.validate()?;
    if tracks.iter().all(FaceTrack::is_empty) {
        return Err(Error::Data("no face detections to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = split_by_video(tracks, cfg.val_fraction, &mut rng);
    let mut encoder = ShortTermEncoder::new(encoder_cfg, &mut rng)?;
    let mut adam = Adam::default();
    let train_tracks: Vec<FaceTrack> = train_idx.iter().map(|&i| tracks[i].clone()).collect();
    let k = detections_per_clip(detection_period(tracks), spec.clip_s);

    let val_clips: Vec<Clip> = val_positions(tracks, &val_idx, cfg.max_val_clips)
        .into_iter()
        .map(|(i, j)| {
            let d = tracks[i].detections[j];
            clip_at(media, &tracks[i], d.timestamp, spec, d.label)
        })
        .collect::<Result<_>>()?;

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ShortTermEncoder)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.schedule, epoch);
        let mut samples = Vec::new();
        for _ in 0..cfg.clips_per_track {
            samples.extend(ste_epoch_sample(&train_tracks, k, &mut rng));
        }
        samples.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut scored = Vec::with_capacity(samples.len());
        for batch in samples.chunks(cfg.batch_size) {
            let mut clips = Vec::with_capacity(batch.len());
            for c in batch {
                let track = &train_tracks[c.track];
                let det = track.detections[c.center];
                let mut clip = clip_at(media, track, det.timestamp, spec, det.label)?;
                if cfg.augment {
                    clip.stack = augment(&clip.stack, &mut rng)?;
                }
                clips.push(clip);
            }
            let refs: Vec<&Clip> = clips.iter().collect();
            let labels: Vec<usize> = clips.iter().map(|c| c.label).collect();
            let (v, a) = batch_inputs(&refs, &encoder.cfg)?;
            encoder.params.zero_grad();
            let (out, updates) = encoder.forward(&v, &a, Mode::Train)?;
            let loss = ste_loss(&out, &labels)?;
            loss.backward()?;
            adam.step(&mut encoder.params, lr)?;
            apply_bn_updates(&mut encoder.params, &updates, encoder.cfg.bn_momentum)?;
            loss_sum += loss.item() * batch.len() as f64;
            seen += batch.len();
            for (lg, &y) in out.logits_av.data().chunks(2).zip(&labels) {
                scored.push((speaking_probability([lg[0], lg[1]]), y as u8));
            }
        }
        log.push(MetricRow {
            epoch,
            split: "train".into(),
            loss: loss_sum / seen.max(1) as f64,
            ap: ap_or_nan(&scored),
        });
        let val_ap = if val_clips.is_empty() {
            None
        } else {
            let (loss, ap) = evaluate_ste(&encoder, &val_clips, cfg.batch_size)?;
            log.push(MetricRow {
                epoch,
                split: "val".into(),
                loss,
                ap,
            });
            Some(ap)
        };
        if cfg.verbose {
            let t = log.iter().rev().find(|r| r.split == "train").expect("train row");
            eprintln!(
                "ste epoch {epoch}: lr {lr:.2e} train loss {:.4} ap {:.4} val ap {:.4}",
                t.loss,
                t.ap,
                val_ap.unwrap_or(f64::NAN)
            );
        }
        let key = val_ap.filter(|a| a.is_finite()).unwrap_or(f64::NEG_INFINITY);
        if val_ap.is_none() || best.as_ref().is_none_or(|(b, _, _)| key > *b) {
            best = Some((key, epoch, encoder.clone()));
        }
    }
    let (_, best_epoch, encoder) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, encoder),
    };
    Ok(SteTrainOutcome {
        encoder,
        log,
        best_epoch,
        steps: adam.step,
        train_tracks: train_idx,
        val_tracks: val_idx,
    })
}

/// Mean joint loss and fused-head AP over `clips` in evaluation mode.
pub fn evaluate_ste(encoder: &ShortTermEncoder, clips: &[Clip], batch_size: usize) -> Result<(f64, f64)> {
    let (mut loss_sum, mut scored) = (0.0, Vec::with_capacity(clips.len()));
    for batch in clips.chunks(batch_size.max(1)) {
        let refs: Vec<&Clip> = batch.iter().collect();
        let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
        let (v, a) = batch_inputs(&refs, &encoder.cfg)?;
        let (out, _) = encoder.forward(&v, &a, Mode::Eval)?;
        loss_sum += ste_loss(&out, &labels)?.item() * batch.len() as f64;
        for (lg, &y) in out.logits_av.data().chunks(2).zip(&labels) {
            scored.push((speaking_probability([lg[0], lg[1]]), y as u8));
        }
    }
    Ok((loss_sum / clips.len().max(1) as f64, ap_or_nan(&scored)))
}

/// Embeds the clip around every detection of every track with the frozen
/// encoder.
pub fn embed_tracks(
    encoder: &ShortTermEncoder,
    media: &dyn MediaSource,
    tracks: &[FaceTrack],
    spec: &ClipSpec,
    batch_size: usize,
) -> Result<EmbeddingCache> {
    let d = encoder.cfg.embedding_dim();
    let mut out = Vec::with_capacity(tracks.len());
    for track in tracks {
        let mut values = Vec::with_capacity(track.len() * d);
        for chunk in track.detections.chunks(batch_size.max(1)) {
            let clips: Vec<Clip> = chunk
                .iter()
                .map(|det| clip_at(media, track, det.timestamp, spec, det.label))
                .collect::<Result<_>>()?;
            let refs: Vec<&Clip> = clips.iter().collect();
            let (emb, _) = encoder.embed(&refs)?;
            for e in emb {
                values.extend(e);
            }
        }
        out.push(TrackEmbeddings {
            video_id: track.video_id.clone(),
            track_id: track.track_id.clone(),
            timestamps: track.timestamps(),
            labels: track.detections.iter().map(|d| d.label).collect(),
            values,
        });
    }
    EmbeddingCache::new(d, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AscTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub val_fraction: f64,
    /// Cap on training ensembles per epoch, drawn afresh each epoch; 0 uses
    /// every detection.
    pub max_samples_per_epoch: usize,
    /// Cap on held-out ensembles used for model selection.
    pub max_val_samples: usize,
    /// Distortion applied to training ensembles.
    pub distortion: Distortion,
    pub ap_mode: ApMode,
    pub verbose: bool,
}

impl Default for AscTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            schedule: Schedule::ASC,
            seed: 0,
            val_fraction: 0.1,
            max_samples_per_epoch: 0,
            max_val_samples: 2048,
            distortion: Distortion::None,
            ap_mode: ApMode::Pooled,
            verbose: false,
        }
    }
}

impl AscTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

pub struct AscTrainOutcome {
    pub model: AscModel,
    pub log: Vec<MetricRow>,
    pub best_epoch: usize,
    pub steps: u64,
}

/// Every `(cache track, detection)` pair of the given tracks.
pub fn dense_positions(cache: &EmbeddingCache, tracks: &[usize]) -> Vec<(usize, usize)> {
    tracks.iter().flat_map(|&i| (0..cache.track(i).len()).map(move |j| (i, j))).collect()
}

/// Splits cache track indices by whole videos.
pub fn split_cache(cache: &EmbeddingCache, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let shells: Vec<FaceTrack> = cache
        .tracks()
        .iter()
        .map(|t| FaceTrack {
            video_id: t.video_id.clone(),
            track_id: t.track_id.clone(),
            detections: Vec::new(),
        })
        .collect();
    split_by_video(&shells, fraction, rng)
}

fn build_ensembles(
    cache: &EmbeddingCache,
    positions: &[(usize, usize)],
    ens: &EnsembleConfig,
    distortion: Distortion,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ContextEnsemble>> {
    positions
        .iter()
        .map(|&(i, j)| assemble(cache, cache.track(i).timestamps[j], i, ens, rng, distortion))
        .collect()
}

/// Eval-mode speaking probabilities for a list of ensembles.
pub fn predict_ensembles(model: &AscModel, ensembles: &[ContextEnsemble], batch_size: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(ensembles.len());
    for chunk in ensembles.chunks(batch_size.max(1)) {
        let refs: Vec<&ContextEnsemble> = chunk.iter().collect();
        out.extend(model.predict(&stack_ensembles(&refs)?)?);
    }
    Ok(out)
}

fn asc_val_metrics(model: &AscModel, ensembles: &[ContextEnsemble], batch: usize, mode: ApMode) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut dets = Vec::with_capacity(ensembles.len());
    for chunk in ensembles.chunks(batch.max(1)) {
        let refs: Vec<&ContextEnsemble> = chunk.iter().collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label as usize).collect();
        let c = stack_ensembles(&refs)?;
        let (out, _) = model.forward(&c, Mode::Eval)?;
        loss_sum += out.logits.cross_entropy_with_logits(&labels)?.item() * chunk.len() as f64;
        for (lg, e) in out.logits.data().chunks(2).zip(chunk) {
            dets.push(ScoredDetection {
                video_id: e.video_id.clone(),
                track_id: e.reference_track_id.clone(),
                timestamp: e.reference_time,
                score: speaking_probability([lg[0], lg[1]]),
                label: e.label,
                face_width_px: 0.0,
                face_count: 1,
            });
        }
    }
    let ap = mean_ap(&dets, mode).unwrap_or(f64::NAN);
    Ok((loss_sum / ensembles.len().max(1) as f64, ap))
}

/// Trains the context model from scratch on cached embeddings of
/// `train_tracks`, selecting the epoch with the best AP on `val_tracks`.
pub fn train_asc(
    cache: &EmbeddingCache,
    train_tracks: &[usize],
    val_tracks: &[usize],
    asc_cfg: AscConfig,
    ens_cfg: &EnsembleConfig,
    cfg: &AscTrainConfig,
) -> Result<AscTrainOutcome> {
    cfg.validate()?;
    ens_cfg.validate()?;
    if asc_cfg.clips != ens_cfg.clips || asc_cfg.speakers != ens_cfg.speakers || asc_cfg.embedding_dim != cache.dim() {
        return Err(Error::Config(format!(
            "model expects {}x{}x{} ensembles, data gives {}x{}x{}",
            asc_cfg.clips,
            asc_cfg.speakers,
            asc_cfg.embedding_dim,
            ens_cfg.clips,
            ens_cfg.speakers,
            cache.dim()
        )));
    }
    let mut positions = dense_positions(cache, train_tracks);
    if positions.is_empty() {
        return Err(Error::Data("no cached detections to train on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AscModel::new(asc_cfg, &mut rng)?;
    let mut adam = Adam::default();

    let mut val_pos = dense_positions(cache, val_tracks);
    if val_pos.len() > cfg.max_val_samples {
        let n = val_pos.len();
        val_pos = (0..cfg.max_val_samples).map(|i| val_pos[i * n / cfg.max_val_samples]).collect();
    }
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_7a1d);
    let val_ens = build_ensembles(cache, &val_pos, ens_cfg, Distortion::None, &mut val_rng)?;

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, AscModel)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(&cfg.schedule, epoch);
        positions.shuffle(&mut rng);
        let take = if cfg.max_samples_per_epoch == 0 {
            positions.len()
        } else {
            cfg.max_samples_per_epoch.min(positions.len())
        };
        let (mut loss_sum, mut scored) = (0.0, Vec::with_capacity(take));
        for batch in positions[..take].chunks(cfg.batch_size) {
            let ens = build_ensembles(cache, batch, ens_cfg, cfg.distortion, &mut rng)?;
            let refs: Vec<&ContextEnsemble> = ens.iter().collect();
            let labels: Vec<usize> = ens.iter().map(|e| e.label as usize).collect();
            let c = stack_ensembles(&refs)?;
            model.params.zero_grad();
            let (out, updates) = model.forward(&c, Mode::Train)?;
            let loss = out.logits.cross_entropy_with_logits(&labels)?;
            loss.backward()?;
            adam.step(&mut model.params, lr)?;
            model.apply_bn_updates(&updates)?;
            loss_sum += loss.item() * batch.len() as f64;
            for (lg, &y) in out.logits.data().chunks(2).zip(&labels) {
                scored.push((speaking_probability([lg[0], lg[1]]), y as u8));
            }
        }
        log.push(MetricRow {
            epoch,
            split: "train".into(),
            loss: loss_sum / take as f64,
            ap: ap_or_nan(&scored),
        });
        let val_ap = if val_ens.is_empty() {
            None
        } else {
            let (loss, ap) = asc_val_metrics(&model, &val_ens, 64, cfg.ap_mode)?;
            log.push(MetricRow {
                epoch,
                split: "val".into(),
                loss,
                ap,
            });
            Some(ap)
        };
        if cfg.verbose {
            let t = log.iter().rev().find(|r| r.split == "train").expect("train row");
            eprintln!(
                "asc epoch {epoch}: lr {lr:.2e} train loss {:.4} ap {:.4} val ap {:.4}",
                t.loss,
                t.ap,
                val_ap.unwrap_or(f64::NAN)
            );
        }
        let key = val_ap.filter(|a| a.is_finite()).unwrap_or(f64::NEG_INFINITY);
        if val_ap.is_none() || best.as_ref().is_none_or(|(b, _, _)| key > *b) {
            best = Some((key, epoch, model.clone()));
        }
    }
    let (_, best_epoch, model) = match best {
        Some(b) => b,
        None => (f64::NAN, 0, model),
    };
    Ok(AscTrainOutcome {
        model,
        log,
        best_epoch,
        steps: adam.step,
    })
}
