//! Face tracks, AVA-style CSV ingestion, epoch sampling and the synthetic
//! conversation generator.

mod ava;
mod clips;
mod sampling;
pub mod synthetic;

use crate::error::{Error, Result};

pub use ava::{parse_ava_csv, read_ava_csv, serialize_ava_csv, write_ava_csv, LABEL_NOT_SPEAKING, LABEL_SPEAKING};
pub use clips::{clip_at, ClipSpec, MediaSource};
pub use sampling::{asc_epoch_sample, detections_per_clip, split_by_video, ste_epoch_sample, ClipDescriptor};

/// Frame width used to turn normalized boxes into pixel widths when the
/// source does not say otherwise.
pub const DEFAULT_FRAME_WIDTH_PX: f64 = 640.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub timestamp: f64,
    /// Normalized `x1, y1, x2, y2`.
    pub bbox: [f64; 4],
    /// 1 when audibly speaking.
    pub label: u8,
}

impl Detection {
    pub fn width_px(&self, frame_width_px: f64) -> f64 {
        (self.bbox[2] - self.bbox[0]) * frame_width_px
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceTrack {
    pub video_id: String,
    pub track_id: String,
    pub detections: Vec<Detection>,
}

impl FaceTrack {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.detections.iter().map(|d| d.timestamp).collect()
    }

    pub fn start(&self) -> f64 {
        self.detections.first().map_or(0.0, |d| d.timestamp)
    }

    pub fn end(&self) -> f64 {
        self.detections.last().map_or(0.0, |d| d.timestamp)
    }

    pub fn validate(&self) -> Result<()> {
        for w in self.detections.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(Error::Data(format!(
                    "track {}/{}: timestamps not strictly increasing at {}",
                    self.video_id, self.track_id, w[1].timestamp
                )));
            }
        }
        for d in &self.detections {
            let [x1, y1, x2, y2] = d.bbox;
            if !(0.0 <= x1 && x1 < x2 && x2 <= 1.0 && 0.0 <= y1 && y1 < y2 && y2 <= 1.0) {
                return Err(Error::Data(format!(
                    "track {}/{}: invalid box {:?} at {}",
                    self.video_id, self.track_id, d.bbox, d.timestamp
                )));
            }
            if d.label > 1 {
                return Err(Error::Data(format!("track {}: label {} is not 0/1", self.track_id, d.label)));
            }
        }
        Ok(())
    }

    /// Index of the detection within `tolerance` of `t`.
    pub fn detection_near(&self, t: f64, tolerance: f64) -> Option<usize> {
        let i = self.detections.partition_point(|d| d.timestamp < t);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&j| j < self.len())
            .filter(|&j| (self.detections[j].timestamp - t).abs() <= tolerance)
            .min_by(|&a, &b| {
                let da = (self.detections[a].timestamp - t).abs();
                let db = (self.detections[b].timestamp - t).abs();
                da.total_cmp(&db)
            })
    }
}

/// Number of tracks of `video_id` with a detection within `tolerance` of `t`.
pub fn faces_at(tracks: &[FaceTrack], video_id: &str, t: f64, tolerance: f64) -> usize {
    tracks
        .iter()
        .filter(|tr| tr.video_id == video_id && tr.detection_near(t, tolerance).is_some())
        .count()
}
