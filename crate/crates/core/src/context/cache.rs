//! Frozen clip embeddings per face track, with the lookups ensemble
//! assembly needs: nearest clip in a track and the tracks present at a
//! given instant of a video.
//!
//! File layout (little-endian), sharing the checkpoint header:
//!
//! ```text
//! magic "ASCEMBD\0", version u32, dim u32, track count u32
//! per track: video_id string, track_id string, n u32,
//!            n x { timestamp f64, label u8, d x f64 }
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{read_f64s, read_header, read_string, read_u32, write_f64s, write_header, write_string};

const MAGIC: &[u8; 8] = b"ASCEMBD\0";
pub const CACHE_VERSION: u32 = 1;

/// Embeddings of one face track in temporal order.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackEmbeddings {
    pub video_id: String,
    pub track_id: String,
    pub timestamps: Vec<f64>,
    pub labels: Vec<u8>,
    /// `timestamps.len() x d`, row-major.
    pub values: Vec<f64>,
}

impl TrackEmbeddings {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn embedding(&self, index: usize, dim: usize) -> &[f64] {
        &self.values[index * dim..(index + 1) * dim]
    }

    /// Index of the clip nearest to `t`, clamped to the track's extent;
    /// ties go to the earlier clip.
    pub fn nearest(&self, t: f64) -> usize {
        let i = self.timestamps.partition_point(|&x| x < t);
        if i == 0 {
            0
        } else if i == self.len() {
            self.len() - 1
        } else if t - self.timestamps[i - 1] <= self.timestamps[i] - t {
            i - 1
        } else {
            i
        }
    }

    /// Index of a detection within `tolerance` of `t`, if any.
    pub fn detection_near(&self, t: f64, tolerance: f64) -> Option<usize> {
        if self.is_empty() {
            return None;
        }
        let i = self.nearest(t);
        ((self.timestamps[i] - t).abs() <= tolerance).then_some(i)
    }
}

#[derive(Clone, Debug, Default)]
pub struct EmbeddingCache {
    dim: usize,
    tracks: Vec<TrackEmbeddings>,
    by_key: HashMap<(String, String), usize>,
    by_video: BTreeMap<String, Vec<usize>>,
}

impl EmbeddingCache {
    pub fn new(dim: usize, tracks: Vec<TrackEmbeddings>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut by_key = HashMap::new();
        let mut by_video: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, t) in tracks.iter().enumerate() {
            let key = (t.video_id.clone(), t.track_id.clone());
            if t.labels.len() != t.len() || t.values.len() != t.len() * dim {
                return Err(Error::Data(format!("track {}/{} has inconsistent lengths", key.0, key.1)));
            }
            if t.timestamps.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Data(format!("track {}/{} timestamps not increasing", key.0, key.1)));
            }
            if by_key.insert(key.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate track {}/{}", key.0, key.1)));
            }
            by_video.entry(key.0).or_default().push(i);
        }
        Ok(Self {
            dim,
            tracks,
            by_key,
            by_video,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tracks(&self) -> &[TrackEmbeddings] {
        &self.tracks
    }

    pub fn track(&self, index: usize) -> &TrackEmbeddings {
        &self.tracks[index]
    }

    pub fn find(&self, video_id: &str, track_id: &str) -> Option<usize> {
        self.by_key.get(&(video_id.to_string(), track_id.to_string())).copied()
    }

    pub fn videos(&self) -> impl Iterator<Item = &String> {
        self.by_video.keys()
    }

    pub fn video_tracks(&self, video_id: &str) -> &[usize] {
        self.by_video.get(video_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Tracks of `video_id` with a detection within `tolerance` of `t`.
    pub fn present(&self, video_id: &str, t: f64, tolerance: f64) -> Vec<usize> {
        self.video_tracks(video_id)
            .iter()
            .copied()
            .filter(|&i| self.tracks[i].detection_near(t, tolerance).is_some())
            .collect()
    }

    /// Sorted distinct detection times of a video.
    pub fn timeline(&self, video_id: &str) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .video_tracks(video_id)
            .iter()
            .flat_map(|&i| self.tracks[i].timestamps.iter().copied())
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write_header(w, MAGIC, CACHE_VERSION)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.tracks.len() as u32).to_le_bytes())?;
        for t in &self.tracks {
            write_string(w, &t.video_id)?;
            write_string(w, &t.track_id)?;
            w.write_all(&(t.len() as u32).to_le_bytes())?;
            for i in 0..t.len() {
                write_f64s(w, &[t.timestamps[i]])?;
                w.write_all(&[t.labels[i]])?;
                write_f64s(w, t.embedding(i, self.dim))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        read_header(r, MAGIC, CACHE_VERSION)?;
        let dim = read_u32(r)? as usize;
        let count = read_u32(r)? as usize;
        let mut tracks = Vec::with_capacity(count);
        for _ in 0..count {
            let video_id = read_string(r)?;
            let track_id = read_string(r)?;
            let n = read_u32(r)? as usize;
            let mut t = TrackEmbeddings {
                video_id,
                track_id,
                timestamps: Vec::with_capacity(n),
                labels: Vec::with_capacity(n),
                values: Vec::with_capacity(n * dim),
            };
            for _ in 0..n {
                t.timestamps.push(read_f64s(r, 1)?[0]);
                let mut label = [0u8];
                r.read_exact(&mut label)?;
                t.labels.push(label[0]);
                t.values.extend(read_f64s(r, dim)?);
            }
            tracks.push(t);
        }
        Self::new(dim, tracks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(video: &str, id: &str, times: &[f64], dim: usize) -> TrackEmbeddings {
        TrackEmbeddings {
            video_id: video.into(),
            track_id: id.into(),
            timestamps: times.to_vec(),
            labels: times.iter().map(|&t| (t > 1.0) as u8).collect(),
            values: (0..times.len() * dim).map(|v| v as f64 * 0.5).collect(),
        }
    }

    #[test]
    fn nearest_clamps_and_prefers_earlier() {
        let t = track("v", "a", &[1.0, 2.0, 3.0], 2);
        assert_eq!(t.nearest(-5.0), 0);
        assert_eq!(t.nearest(1.5), 0);
        assert_eq!(t.nearest(1.6), 1);
        assert_eq!(t.nearest(99.0), 2);
        assert_eq!(t.detection_near(2.05, 0.1), Some(1));
        assert_eq!(t.detection_near(2.5, 0.1), None);
    }

    #[test]
    fn presence_is_per_video() {
        let cache = EmbeddingCache::new(
            2,
            vec![
                track("v", "a", &[0.0, 1.0, 2.0], 2),
                track("v", "b", &[1.0, 2.0], 2),
                track("w", "a", &[0.0, 1.0], 2),
            ],
        )
        .unwrap();
        assert_eq!(cache.present("v", 0.0, 0.1), vec![0]);
        assert_eq!(cache.present("v", 1.02, 0.1), vec![0, 1]);
        assert_eq!(cache.timeline("v"), vec![0.0, 1.0, 2.0]);
        assert_eq!(cache.find("w", "a"), Some(2));
    }

    #[test]
    fn file_round_trip() {
        let cache = EmbeddingCache::new(
            3,
            vec![track("v", "a", &[0.0, 0.5], 3), track("v", "b", &[0.25], 3)],
        )
        .unwrap();
        let mut buf = Vec::new();
        cache.write_to(&mut buf).unwrap();
        let back = EmbeddingCache::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.tracks(), cache.tracks());
        assert_eq!(back.dim(), 3);
    }

    #[test]
    fn rejects_duplicate_and_unordered_tracks() {
        assert!(EmbeddingCache::new(1, vec![track("v", "a", &[0.0], 1), track("v", "a", &[1.0], 1)]).is_err());
        assert!(EmbeddingCache::new(1, vec![track("v", "a", &[1.0, 0.0], 1)]).is_err());
    }
}
