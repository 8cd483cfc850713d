use super::FaceTrack;
use crate::encoder::{Clip, EncoderConfig};
use crate::error::{Error, Result};
use crate::signal::{build_crop_stack, AudioSnippet, MelConfig, MelExtractor, TrackFrames};

/// Access to the pixels and sound behind face tracks.
pub trait MediaSource {
    /// The frames of `track`, in temporal order.
    fn frames<'a>(&'a self, track: &'a FaceTrack) -> Result<Box<dyn TrackFrames + 'a>>;

    /// `n` samples of the video's audio starting at `start_s` (silence
    /// outside the recording).
    fn audio(&self, video_id: &str, start_s: f64, n: usize) -> Result<AudioSnippet>;
}

/// How a clip is cut from media: `frames` crops spread over `clip_s`
/// seconds and the audio of the same interval.
#[derive(Clone, Debug)]
pub struct ClipSpec {
    pub frames: usize,
    pub clip_s: f64,
    pub crop: (usize, usize),
    pub mel: MelExtractor,
}

impl ClipSpec {
    pub fn new(encoder: &EncoderConfig, clip_s: f64, mel: MelConfig) -> Result<Self> {
        let spec = Self {
            frames: encoder.frames,
            clip_s,
            crop: (encoder.crop_height, encoder.crop_width),
            mel: MelExtractor::new(mel)?,
        };
        let p = spec.mel.config().frames_for_samples(spec.audio_samples());
        if p != encoder.mel_frames || spec.mel.config().n_mels != encoder.mel_bands {
            return Err(Error::Config(format!(
                "a {clip_s} s clip gives {}x{p} spectrograms but the encoder expects {}x{}",
                spec.mel.config().n_mels,
                encoder.mel_bands,
                encoder.mel_frames
            )));
        }
        Ok(spec)
    }

    pub fn audio_samples(&self) -> usize {
        (self.clip_s * self.mel.config().sample_rate_hz as f64).round() as usize
    }
}

/// The clip of `track` centered at `t`.
pub fn clip_at(media: &dyn MediaSource, track: &FaceTrack, t: f64, spec: &ClipSpec, label: u8) -> Result<Clip> {
    let frames = media.frames(track)?;
    let stack = build_crop_stack(frames.as_ref(), &track.track_id, t, spec.frames, spec.clip_s, spec.crop)?;
    let n = spec.audio_samples();
    let sr = spec.mel.config().sample_rate_hz as f64;
    let audio = media.audio(&track.video_id, t - n as f64 / (2.0 * sr), n)?;
    Ok(Clip {
        stack,
        audio: spec.mel.compute(&audio)?,
        label: label as usize,
    })
}
