use rand::Rng;

use crate::error::{Error, Result};

/// An RGB image stored planar (`[3, H, W]`), values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != 3 * height * width {
            return Err(Error::shape("frame", format!("expected 3x{height}x{width} values, got {}", data.len())));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); 3 * height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Mirror along the vertical axis.
    pub fn flip_horizontal(&self) -> Frame {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Frame { data, ..*self }
    }

    /// Sub-rectangle starting at (top, left).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Frame> {
        if height == 0 || width == 0 || top + height > self.height || left + width > self.width {
            return Err(Error::shape("crop", "crop window outside the frame"));
        }
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in top..top + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + left..row + left + width]);
            }
        }
        Ok(Frame { height, width, data })
    }

    /// Bilinear resize (half-pixel centers). Same-size resizes copy exactly.
    pub fn resize(&self, height: usize, width: usize) -> Frame {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |o: usize, scale: f64, limit: usize| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (limit - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(limit - 1);
            (lo, hi, src - lo as f64)
        };
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in 0..height {
                let (y0, y1, fy) = coord(y, sy, self.height);
                for x in 0..width {
                    let (x0, x1, fx) = coord(x, sx, self.width);
                    let top = self.pixel(c, y0, x0) * (1.0 - fx) + self.pixel(c, y0, x1) * fx;
                    let bot = self.pixel(c, y1, x0) * (1.0 - fx) + self.pixel(c, y1, x1) * fx;
                    data.push(top * (1.0 - fy) + bot * fy);
                }
            }
        }
        Frame { height, width, data }
    }
}

/// Random-access view of one face track's frames, in temporal order.
///
/// Implemented for in-memory `(timestamp, frame)` slices; synthetic media
/// render frames on demand instead of storing them.
pub trait TrackFrames {
    fn frame_count(&self) -> usize;
    fn timestamp(&self, index: usize) -> f64;
    fn frame(&self, index: usize) -> Result<Frame>;
}

impl TrackFrames for [(f64, Frame)] {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn timestamp(&self, index: usize) -> f64 {
        self[index].0
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self[index].1.clone())
    }
}

/// Index of the frame nearest to `t` (earlier frame on ties).
pub fn nearest_frame_index<F: TrackFrames + ?Sized>(track: &F, t: f64) -> Option<usize> {
    let n = track.frame_count();
    if n == 0 {
        return None;
    }
    // first index with timestamp >= t
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if track.timestamp(mid) < t {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    Some(match lo {
        0 => 0,
        i if i == n => n - 1,
        i => {
            if t - track.timestamp(i - 1) <= track.timestamp(i) - t {
                i - 1
            } else {
                i
            }
        }
    })
}

/// `k` instants evenly covering `[t - tau/2, t + tau/2]` (endpoints
/// included); a single instant sits at `t`.
pub fn stack_sample_times(t: f64, k: usize, tau: f64) -> Vec<f64> {
    if k == 1 {
        return vec![t];
    }
    (0..k)
        .map(|i| t - tau / 2.0 + tau * i as f64 / (k - 1) as f64)
        .collect()
}

/// The `k` consecutive face crops of one speaker around a clip center.
#[derive(Clone, Debug, PartialEq)]
pub struct CropStack {
    pub frames: Vec<Frame>,
    pub source_track_id: String,
    pub center_timestamp: f64,
    /// Timestamp of the source frame behind each entry of `frames`.
    pub source_timestamps: Vec<f64>,
}

impl CropStack {
    pub fn k(&self) -> usize {
        self.frames.len()
    }

    pub fn size(&self) -> (usize, usize) {
        (self.frames[0].height(), self.frames[0].width())
    }

    /// Frame-major channel layout `[3k, H, W]`: frame 0 RGB, frame 1 RGB, ...
    pub fn to_input(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.data().iter().copied()).collect()
    }
}

pub fn build_crop_stack<F: TrackFrames + ?Sized>(
    track: &F,
    track_id: &str,
    t: f64,
    k: usize,
    tau: f64,
    size: (usize, usize),
) -> Result<CropStack> {
    if k == 0 {
        return Err(Error::InvalidArgument("crop stack needs k >= 1".into()));
    }
    if size.0 == 0 || size.1 == 0 {
        return Err(Error::InvalidArgument("crop size must be positive".into()));
    }
    let mut frames = Vec::with_capacity(k);
    let mut source_timestamps = Vec::with_capacity(k);
    for s in stack_sample_times(t, k, tau) {
        let idx = nearest_frame_index(track, s)
            .ok_or_else(|| Error::Data(format!("track {track_id} has no frames")))?;
        frames.push(track.frame(idx)?.resize(size.0, size.1));
        source_timestamps.push(track.timestamp(idx));
    }
    Ok(CropStack {
        frames,
        source_track_id: track_id.to_string(),
        center_timestamp: t,
        source_timestamps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CropCorner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropCorner {
    pub const ALL: [CropCorner; 5] = [
        CropCorner::TopLeft,
        CropCorner::TopRight,
        CropCorner::BottomLeft,
        CropCorner::BottomRight,
        CropCorner::Center,
    ];
}

pub const CROP_RATIO: f64 = 0.875;

/// One augmentation decision shared by every frame of a stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub corner: CropCorner,
}

impl AugmentPlan {
    pub fn draw(rng: &mut impl Rng) -> Self {
        let flip = rng.random_bool(0.5);
        let corner = CropCorner::ALL[rng.random_range(0..CropCorner::ALL.len())];
        Self { flip, corner }
    }

    pub fn apply_to_frame(&self, frame: &Frame) -> Result<Frame> {
        let (h, w) = (frame.height(), frame.width());
        let ch = ((h as f64 * CROP_RATIO).round() as usize).max(1);
        let cw = ((w as f64 * CROP_RATIO).round() as usize).max(1);
        let (top, left) = match self.corner {
            CropCorner::TopLeft => (0, 0),
            CropCorner::TopRight => (0, w - cw),
            CropCorner::BottomLeft => (h - ch, 0),
            CropCorner::BottomRight => (h - ch, w - cw),
            CropCorner::Center => ((h - ch) / 2, (w - cw) / 2),
        };
        let out = frame.crop(top, left, ch, cw)?.resize(h, w);
        Ok(if self.flip { out.flip_horizontal() } else { out })
    }

    pub fn apply(&self, stack: &CropStack) -> Result<CropStack> {
        let frames = stack
            .frames
            .iter()
            .map(|f| self.apply_to_frame(f))
            .collect::<Result<_>>()?;
        Ok(CropStack {
            frames,
            ..stack.clone()
        })
    }
}

/// Training-time augmentation: one random flip and one random corner crop
/// applied identically to all frames of the stack.
pub fn augment(stack: &CropStack, rng: &mut impl Rng) -> Result<CropStack> {
    AugmentPlan::draw(rng).apply(stack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_frame(h: usize, w: usize, seed: f64) -> Frame {
        let data = (0..3 * h * w)
            .map(|i| ((i as f64 * 0.137 + seed).sin() * 0.5 + 0.5).clamp(0.0, 1.0))
            .collect();
        Frame::new(h, w, data).unwrap()
    }

    fn track(n: usize, t0: f64, dt: f64) -> Vec<(f64, Frame)> {
        (0..n).map(|i| (t0 + dt * i as f64, gradient_frame(4, 5, i as f64))).collect()
    }

    #[test]
    fn exact_track_is_returned_verbatim() {
        let k = 5;
        let tau = 0.4;
        let frames = track(k, 1.0 - tau / 2.0, tau / (k - 1) as f64);
        let stack = build_crop_stack(frames.as_slice(), "a", 1.0, k, tau, (4, 5)).unwrap();
        for (got, (_, want)) in stack.frames.iter().zip(&frames) {
            assert_eq!(got, want);
        }
    }

    #[test]
    fn single_frame_track_is_replicated() {
        let frames = track(1, 3.0, 0.1);
        let stack = build_crop_stack(frames.as_slice(), "a", 3.2, 5, 0.5, (4, 5)).unwrap();
        assert_eq!(stack.k(), 5);
        assert!(stack.frames.iter().all(|f| f == &frames[0].1));
    }

    #[test]
    fn empty_track_is_an_error() {
        let frames: Vec<(f64, Frame)> = Vec::new();
        assert!(build_crop_stack(frames.as_slice(), "a", 0.0, 3, 0.2, (4, 4)).is_err());
    }

    #[test]
    fn nearest_prefers_earlier_on_ties() {
        let frames = track(3, 0.0, 1.0);
        assert_eq!(nearest_frame_index(frames.as_slice(), 0.5), Some(0));
        assert_eq!(nearest_frame_index(frames.as_slice(), 0.51), Some(1));
        assert_eq!(nearest_frame_index(frames.as_slice(), -4.0), Some(0));
        assert_eq!(nearest_frame_index(frames.as_slice(), 9.0), Some(2));
    }

    #[test]
    fn flip_is_an_involution() {
        let f = gradient_frame(6, 7, 0.3);
        assert_eq!(f.flip_horizontal().flip_horizontal(), f);
        assert_ne!(f.flip_horizontal(), f);
    }

    #[test]
    fn resize_keeps_constant_images_constant() {
        let f = Frame::filled(8, 8, 0.25);
        let r = f.resize(5, 11);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }
}
