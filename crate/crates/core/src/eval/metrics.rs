use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One scored face detection.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDetection {
    pub video_id: String,
    pub track_id: String,
    pub timestamp: f64,
    pub score: f64,
    pub label: u8,
    pub face_width_px: f64,
    pub face_count: usize,
}

/// Mean over positives of the precision at each positive's rank, ranking
/// by descending score with ties kept in input order.
pub fn average_precision(scored: &[(f64, u8)]) -> Result<f64> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if scored[i].1 == 1 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::InvalidArgument("average precision needs at least one positive".into()));
    }
    Ok(sum / hits as f64)
}

/// AP of all detections ranked together.
pub fn pooled_ap(detections: &[ScoredDetection]) -> Result<f64> {
    let pairs: Vec<(f64, u8)> = detections.iter().map(|d| (d.score, d.label)).collect();
    average_precision(&pairs)
}

/// Unweighted mean of per-video AP. Videos without positives have no AP
/// and are skipped.
pub fn map_over_videos(detections: &[ScoredDetection]) -> Result<f64> {
    let mut by_video: BTreeMap<&str, Vec<(f64, u8)>> = BTreeMap::new();
    for d in detections {
        by_video.entry(&d.video_id).or_default().push((d.score, d.label));
    }
    let aps: Vec<f64> = by_video
        .values()
        .filter(|v| v.iter().any(|p| p.1 == 1))
        .map(|v| average_precision(v))
        .collect::<Result<_>>()?;
    if aps.is_empty() {
        return Err(Error::InvalidArgument("no video has a positive detection".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

/// How detection-level AP is aggregated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    PerVideo,
    Pooled,
}

pub fn mean_ap(detections: &[ScoredDetection], mode: ApMode) -> Result<f64> {
    match mode {
        ApMode::PerVideo => map_over_videos(detections),
        ApMode::Pooled => pooled_ap(detections),
    }
}

/// Sliding median of each track's scores over the detections within
/// `window_s / 2` of each timestamp. Even-sized windows take the mean of
/// the two middle values.
pub fn smooth_scores(detections: &[ScoredDetection], window_s: f64) -> Result<Vec<ScoredDetection>> {
    if !(window_s > 0.0) {
        return Err(Error::InvalidArgument("smoothing window must be positive".into()));
    }
    let half = window_s / 2.0;
    let mut groups: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, d) in detections.iter().enumerate() {
        groups.entry((&d.video_id, &d.track_id)).or_default().push(i);
    }
    let mut out = detections.to_vec();
    let mut buf = Vec::new();
    for mut idx in groups.into_values() {
        idx.sort_by(|&a, &b| detections[a].timestamp.total_cmp(&detections[b].timestamp));
        let (mut lo, mut hi) = (0, 0);
        for &i in &idx {
            let t = detections[i].timestamp;
            while detections[idx[lo]].timestamp < t - half - 1e-9 {
                lo += 1;
            }
            while hi < idx.len() && detections[idx[hi]].timestamp <= t + half + 1e-9 {
                hi += 1;
            }
            buf.clear();
            buf.extend(idx[lo..hi].iter().map(|&j| detections[j].score));
            buf.sort_by(f64::total_cmp);
            let n = buf.len();
            out[i].score = if n % 2 == 1 { buf[n / 2] } else { 0.5 * (buf[n / 2 - 1] + buf[n / 2]) };
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaceCountBucket {
    One,
    Two,
    ThreeOrMore,
}

impl FaceCountBucket {
    pub fn of(count: usize) -> Self {
        match count {
            0 | 1 => FaceCountBucket::One,
            2 => FaceCountBucket::Two,
            _ => FaceCountBucket::ThreeOrMore,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaceCountBucket::One => "1",
            FaceCountBucket::Two => "2",
            FaceCountBucket::ThreeOrMore => "3+",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum FaceSizeBucket {
    Small,
    Medium,
    Large,
}

impl FaceSizeBucket {
    /// Small below 64 px, large above 128 px.
    pub fn of(width_px: f64) -> Self {
        if width_px < 64.0 {
            FaceSizeBucket::Small
        } else if width_px <= 128.0 {
            FaceSizeBucket::Medium
        } else {
            FaceSizeBucket::Large
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FaceSizeBucket::Small => "S",
            FaceSizeBucket::Medium => "M",
            FaceSizeBucket::Large => "L",
        }
    }
}

/// mAP overall and per bucket. Buckets with no positive detection are
/// absent. Bucket values are not expected to average to the overall value,
/// since ranking is done within each bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct BreakdownReport {
    pub overall_map: f64,
    pub by_face_count: BTreeMap<FaceCountBucket, f64>,
    pub by_face_size: BTreeMap<FaceSizeBucket, f64>,
}

pub fn breakdown(detections: &[ScoredDetection], mode: ApMode) -> Result<BreakdownReport> {
    let overall_map = mean_ap(detections, mode)?;
    let mut counts: BTreeMap<FaceCountBucket, Vec<ScoredDetection>> = BTreeMap::new();
    let mut sizes: BTreeMap<FaceSizeBucket, Vec<ScoredDetection>> = BTreeMap::new();
    for d in detections {
        counts.entry(FaceCountBucket::of(d.face_count)).or_default().push(d.clone());
        sizes.entry(FaceSizeBucket::of(d.face_width_px)).or_default().push(d.clone());
    }
    let score = |dets: &[ScoredDetection]| -> Option<f64> {
        dets.iter().any(|d| d.label == 1).then(|| mean_ap(dets, mode).ok()).flatten()
    };
    Ok(BreakdownReport {
        overall_map,
        by_face_count: counts.iter().filter_map(|(k, v)| score(v).map(|s| (*k, s))).collect(),
        by_face_size: sizes.iter().filter_map(|(k, v)| score(v).map(|s| (*k, s))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(video: &str, track: &str, t: f64, score: f64, label: u8) -> ScoredDetection {
        ScoredDetection {
            video_id: video.into(),
            track_id: track.into(),
            timestamp: t,
            score,
            label,
            face_width_px: 100.0,
            face_count: 1,
        }
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[(0.9, 1), (0.1, 0)]).unwrap(), 1.0);
        assert_eq!(average_precision(&[(0.9, 0), (0.1, 1)]).unwrap(), 0.5);
        assert!(average_precision(&[(0.9, 0)]).is_err());
        // tie: input order decides
        assert_eq!(average_precision(&[(0.5, 0), (0.5, 1)]).unwrap(), 0.5);
        assert_eq!(average_precision(&[(0.5, 1), (0.5, 0)]).unwrap(), 1.0);
    }

    #[test]
    fn map_is_mean_of_videos() {
        let d = vec![
            det("a", "x", 0.0, 0.9, 1),
            det("a", "x", 1.0, 0.1, 0),
            det("b", "y", 0.0, 0.9, 0),
            det("b", "y", 1.0, 0.1, 1),
            det("c", "z", 0.0, 0.3, 0),
        ];
        assert!((map_over_videos(&d).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn smoothing_removes_spikes_and_keeps_constants() {
        let mut d: Vec<ScoredDetection> = (0..9).map(|i| det("v", "t", i as f64 * 0.2, 0.3, 0)).collect();
        let same = smooth_scores(&d, 1.0).unwrap();
        assert!(same.iter().all(|x| x.score == 0.3));
        d[4].score = 0.99;
        let s = smooth_scores(&d, 0.5).unwrap();
        assert_eq!(s[4].score, 0.3);
        let narrow = smooth_scores(&d, 0.1).unwrap();
        assert_eq!(narrow, d);
    }

    #[test]
    fn size_buckets() {
        assert_eq!(FaceSizeBucket::of(32.0), FaceSizeBucket::Small);
        assert_eq!(FaceSizeBucket::of(96.0), FaceSizeBucket::Medium);
        assert_eq!(FaceSizeBucket::of(200.0), FaceSizeBucket::Large);
        assert_eq!(FaceCountBucket::of(5), FaceCountBucket::ThreeOrMore);
    }
}
