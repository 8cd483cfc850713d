use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::FaceTrack;

/// A run of `len` consecutive detections of one track; the clip is centered
/// on detection `center` and inherits its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipDescriptor {
    pub track: usize,
    pub start: usize,
    pub len: usize,
    pub center: usize,
}

/// One clip per non-empty track, its start uniform over the positions where
/// `k` consecutive detections fit. Tracks shorter than `k` give a single
/// clip centered on the track.
pub fn ste_epoch_sample(tracks: &[FaceTrack], k: usize, rng: &mut impl Rng) -> Vec<ClipDescriptor> {
    let k = k.max(1);
    tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(i, t)| {
            let n = t.len();
            if n >= k {
                let start = rng.random_range(0..=n - k);
                ClipDescriptor {
                    track: i,
                    start,
                    len: k,
                    center: start + k / 2,
                }
            } else {
                ClipDescriptor {
                    track: i,
                    start: 0,
                    len: n,
                    center: n / 2,
                }
            }
        })
        .collect()
}

/// Every `(track, detection)` pair.
pub fn asc_epoch_sample(tracks: &[FaceTrack]) -> Vec<(usize, usize)> {
    tracks
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.len()).map(move |j| (i, j)))
        .collect()
}

/// Detections covered by one clip of length `clip_s` when detections are
/// `period_s` apart.
pub fn detections_per_clip(period_s: f64, clip_s: f64) -> usize {
    if period_s <= 0.0 {
        return 1;
    }
    1 + (clip_s / period_s + 1e-9).floor() as usize
}

/// Splits track indices into (train, held-out) by whole videos, holding out
/// `fraction` of the videos (at least one when there are two or more).
pub fn split_by_video(tracks: &[FaceTrack], fraction: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut videos: Vec<&str> = tracks
        .iter()
        .map(|t| t.video_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    videos.shuffle(rng);
    let mut n_out = (fraction * videos.len() as f64).round() as usize;
    if fraction > 0.0 && videos.len() >= 2 {
        n_out = n_out.clamp(1, videos.len() - 1);
    }
    let held: BTreeSet<&str> = videos.into_iter().take(n_out).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, t) in tracks.iter().enumerate() {
        if held.contains(t.video_id.as_str()) {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    (train, val)
}
