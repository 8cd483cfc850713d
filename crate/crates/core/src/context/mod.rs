//! Assembly of the `[L, S, d]` context ensemble around a reference speaker:
//! `L` clip embeddings per speaker spread over a long window, for the
//! reference plus `S - 1` co-occurring speakers.

mod cache;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use cache::{EmbeddingCache, TrackEmbeddings, CACHE_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Clips per speaker (L).
    pub clips: usize,
    /// Speakers per ensemble (S), reference included.
    pub speakers: usize,
    /// Window length T in seconds.
    pub window_s: f64,
    /// Clip length tau in seconds.
    pub clip_s: f64,
    /// Two tracks co-occur at t if both have a detection this close to t.
    pub cooccurrence_tolerance_s: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            clips: 11,
            speakers: 3,
            window_s: 2.25,
            clip_s: 2.25 / 11.0,
            cooccurrence_tolerance_s: 0.1125,
        }
    }
}

impl EnsembleConfig {
    /// `L` clips at a fixed spacing, so the window grows with `L`.
    pub fn with_spacing(clips: usize, speakers: usize, spacing_s: f64) -> Self {
        Self {
            clips,
            speakers,
            window_s: spacing_s * clips.saturating_sub(1) as f64,
            ..Self::default()
        }
    }

    /// Position of the reference time along L.
    pub fn center_index(&self) -> usize {
        self.clips / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.speakers == 0 {
            return Err(Error::Config("ensemble needs L >= 1 and S >= 1".into()));
        }
        if self.clips > 1 && self.window_s <= self.clip_s {
            return Err(Error::Config(format!(
                "window {} s must exceed the clip length {} s",
                self.window_s, self.clip_s
            )));
        }
        if !(self.cooccurrence_tolerance_s >= 0.0) {
            return Err(Error::Config("co-occurrence tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distortion {
    None,
    /// Permute each speaker's clips along L, keeping the reference-time clip.
    ShuffleTime,
    /// Context speakers taken from a random other time of the video.
    OutOfContext,
}

/// `L` instants uniformly spanning `[t - T/2, t + T/2]`, endpoints included.
pub fn sample_clip_times(t: f64, window_s: f64, clips: usize) -> Vec<f64> {
    if clips <= 1 {
        return vec![t];
    }
    let step = window_s / (clips - 1) as f64;
    let half = (clips - 1) as f64 / 2.0;
    (0..clips).map(|l| t + (l as f64 - half) * step).collect()
}

/// Fills the `S` speaker slots: the reference first, then context speakers
/// drawn from the other present tracks (distinct when there are enough,
/// with replacement otherwise, the reference itself when alone).
pub fn select_speaker_slots<T: Clone + PartialEq>(
    present: &[T],
    reference: &T,
    speakers: usize,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if speakers == 0 {
        return Err(Error::InvalidArgument("S must be at least 1".into()));
    }
    if !present.contains(reference) {
        return Err(Error::InvalidArgument("reference speaker is not among the present tracks".into()));
    }
    let others: Vec<&T> = present.iter().filter(|p| *p != reference).collect();
    let mut slots = Vec::with_capacity(speakers);
    slots.push(reference.clone());
    let need = speakers - 1;
    if others.is_empty() {
        slots.extend(std::iter::repeat_n(reference.clone(), need));
    } else if others.len() >= need {
        slots.extend(index::sample(rng, others.len(), need).into_iter().map(|i| others[i].clone()));
    } else {
        slots.extend((0..need).map(|_| others[rng.random_range(0..others.len())].clone()));
    }
    Ok(slots)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextEnsemble {
    /// `L x S x d`, row-major.
    pub values: Vec<f64>,
    pub clips: usize,
    pub speakers: usize,
    pub dim: usize,
    pub video_id: String,
    pub reference_track_id: String,
    pub reference_time: f64,
    pub slot_track_ids: Vec<String>,
    /// Requested sample time of each `[s][l]` entry.
    pub sample_times: Vec<Vec<f64>>,
    /// Timestamp of the cached clip actually used for each `[s][l]` entry.
    pub source_times: Vec<Vec<f64>>,
    pub label: u8,
}

impl ContextEnsemble {
    pub fn get(&self, l: usize, s: usize) -> &[f64] {
        let off = (l * self.speakers + s) * self.dim;
        &self.values[off..off + self.dim]
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(self.values.clone(), &[self.clips, self.speakers, self.dim])
    }
}

/// Stacks ensembles of equal shape into `[B, L, S, d]`.
pub fn stack_ensembles(ensembles: &[&ContextEnsemble]) -> Result<Tensor> {
    let first = ensembles
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty ensemble batch".into()))?;
    let shape = (first.clips, first.speakers, first.dim);
    let mut data = Vec::with_capacity(ensembles.len() * first.values.len());
    for e in ensembles {
        if (e.clips, e.speakers, e.dim) != shape {
            return Err(Error::shape("stack_ensembles", "ensembles differ in shape"));
        }
        data.extend_from_slice(&e.values);
    }
    Tensor::new(data, &[ensembles.len(), shape.0, shape.1, shape.2])
}

/// Builds the ensemble for `reference` (a track index into `cache`) at `t`.
pub fn assemble(
    cache: &EmbeddingCache,
    t: f64,
    reference: usize,
    cfg: &EnsembleConfig,
    rng: &mut impl Rng,
    distortion: Distortion,
) -> Result<ContextEnsemble> {
    cfg.validate()?;
    let reference_track = cache.track(reference);
    if reference_track.is_empty() {
        return Err(Error::Data(format!("reference track {} is empty", reference_track.track_id)));
    }
    let video = reference_track.video_id.clone();
    let tol = cfg.cooccurrence_tolerance_s;
    let ref_idx = reference_track.nearest(t);
    let label = reference_track.labels[ref_idx];

    let mut present = cache.present(&video, t, tol);
    if !present.contains(&reference) {
        present.push(reference);
    }
    let mut slots = select_speaker_slots(&present, &reference, cfg.speakers, rng)?;
    let times = sample_clip_times(t, cfg.window_s, cfg.clips);
    let mut slot_times = vec![times.clone(); cfg.speakers];

    if distortion == Distortion::OutOfContext && cfg.speakers > 1 {
        let timeline = cache.timeline(&video);
        let candidates: Vec<f64> = timeline.into_iter().filter(|&x| (x - t).abs() > tol).collect();
        if !candidates.is_empty() {
            let t_other = candidates[rng.random_range(0..candidates.len())];
            let elsewhere = cache.present(&video, t_other, tol);
            let need = cfg.speakers - 1;
            let picked: Vec<usize> = if elsewhere.len() >= need {
                index::sample(rng, elsewhere.len(), need).into_iter().map(|i| elsewhere[i]).collect()
            } else {
                (0..need).map(|_| elsewhere[rng.random_range(0..elsewhere.len())]).collect()
            };
            let other_times = sample_clip_times(t_other, cfg.window_s, cfg.clips);
            for (s, track) in picked.into_iter().enumerate() {
                slots[s + 1] = track;
                slot_times[s + 1] = other_times.clone();
            }
        }
    }

    let d = cache.dim();
    let (l_n, s_n) = (cfg.clips, cfg.speakers);
    let mut order: Vec<Vec<usize>> = vec![(0..l_n).collect(); s_n];
    if distortion == Distortion::ShuffleTime {
        let center = cfg.center_index();
        for perm in order.iter_mut() {
            let mut movable: Vec<usize> = (0..l_n).filter(|&l| l != center).collect();
            let positions = movable.clone();
            for i in (1..movable.len()).rev() {
                movable.swap(i, rng.random_range(0..=i));
            }
            for (pos, src) in positions.into_iter().zip(movable) {
                perm[pos] = src;
            }
        }
    }

    let mut values = vec![0.0; l_n * s_n * d];
    let mut sample_times = vec![vec![0.0; l_n]; s_n];
    let mut source_times = vec![vec![0.0; l_n]; s_n];
    for s in 0..s_n {
        let track = cache.track(slots[s]);
        for l in 0..l_n {
            let want = slot_times[s][order[s][l]];
            let i = track.nearest(want);
            let off = (l * s_n + s) * d;
            values[off..off + d].copy_from_slice(track.embedding(i, d));
            sample_times[s][l] = want;
            source_times[s][l] = track.timestamps[i];
        }
    }

    Ok(ContextEnsemble {
        values,
        clips: l_n,
        speakers: s_n,
        dim: d,
        video_id: video,
        reference_track_id: reference_track.track_id.clone(),
        reference_time: t,
        slot_track_ids: slots.iter().map(|&i| cache.track(i).track_id.clone()).collect(),
        sample_times,
        source_times,
        label,
    })
}
