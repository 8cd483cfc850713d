//! The short-term encoder: a two-stream residual network that fuses a face
//! crop stack and a log-mel spectrogram into one clip embedding, with an
//! auxiliary classifier on each stream.

mod backbone;
mod stems;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{CropStack, MelSpectrogram};
use crate::tensor::{ParamStore, Tensor};
use crate::Mode;

pub use backbone::{apply_bn_updates, BnUpdate};
pub(crate) use backbone::{batch_norm, init_bn};
pub use stems::{build_audio_stem, build_visual_stem};

pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Face crops per clip (k).
    pub frames: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    /// Mel bands (Q).
    pub mel_bands: usize,
    /// Spectrogram frames per clip (P).
    pub mel_frames: usize,
    /// Channel width of each residual stage; the last one is the per-stream
    /// embedding size.
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub stem_kernel: usize,
    /// Divide the replicated visual stem by k.
    pub stem_rescale: bool,
    pub bn_eps: f64,
    /// Fraction of the running statistics kept at each update.
    pub bn_momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 11,
            crop_height: 32,
            crop_width: 32,
            mel_bands: 40,
            mel_frames: 21,
            stage_widths: vec![8, 16, 32, 64],
            blocks_per_stage: 2,
            stem_kernel: 7,
            stem_rescale: true,
            bn_eps: 1e-5,
            bn_momentum: 0.9,
        }
    }
}

impl EncoderConfig {
    pub fn visual_dim(&self) -> usize {
        *self.stage_widths.last().unwrap_or(&0)
    }

    pub fn audio_dim(&self) -> usize {
        self.visual_dim()
    }

    /// Fused embedding size d = d_v + d_a.
    pub fn embedding_dim(&self) -> usize {
        self.visual_dim() + self.audio_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.frames,
            self.crop_height,
            self.crop_width,
            self.mel_bands,
            self.mel_frames,
            self.blocks_per_stage,
            self.stem_kernel,
        ];
        if positive.contains(&0) || self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("encoder batch-norm settings out of range".into()));
        }
        Ok(())
    }
}

/// One training example for the encoder.
#[derive(Clone, Debug)]
pub struct Clip {
    pub stack: CropStack,
    pub audio: MelSpectrogram,
    pub label: usize,
}

/// Stacks clips into `[N, 3k, H, W]` visual and `[N, 1, Q, P]` audio inputs.
pub fn batch_inputs(clips: &[&Clip], cfg: &EncoderConfig) -> Result<(Tensor, Tensor)> {
    if clips.is_empty() {
        return Err(Error::InvalidArgument("empty clip batch".into()));
    }
    let mut v = Vec::new();
    let mut a = Vec::new();
    for c in clips {
        if c.stack.k() != cfg.frames || c.stack.size() != (cfg.crop_height, cfg.crop_width) {
            return Err(Error::shape(
                "encode",
                format!(
                    "crop stack {}x{:?} does not match encoder {}x{:?}",
                    c.stack.k(),
                    c.stack.size(),
                    cfg.frames,
                    (cfg.crop_height, cfg.crop_width)
                ),
            ));
        }
        if c.audio.n_mels() != cfg.mel_bands || c.audio.n_frames() != cfg.mel_frames {
            return Err(Error::shape(
                "encode",
                format!(
                    "spectrogram {}x{} does not match encoder {}x{}",
                    c.audio.n_mels(),
                    c.audio.n_frames(),
                    cfg.mel_bands,
                    cfg.mel_frames
                ),
            ));
        }
        v.extend(c.stack.to_input());
        a.extend_from_slice(c.audio.values());
    }
    let n = clips.len();
    Ok((
        Tensor::new(v, &[n, 3 * cfg.frames, cfg.crop_height, cfg.crop_width])?,
        Tensor::new(a, &[n, 1, cfg.mel_bands, cfg.mel_frames])?,
    ))
}

/// Batched encoder outputs; every field has leading dimension N.
#[derive(Clone, Debug)]
pub struct SteOutput {
    pub u: Tensor,
    pub u_v: Tensor,
    pub u_a: Tensor,
    pub logits_av: Tensor,
    pub logits_v: Tensor,
    pub logits_a: Tensor,
}

/// Joint loss: fused plus the two auxiliary stream losses.
pub fn ste_loss(out: &SteOutput, labels: &[usize]) -> Result<Tensor> {
    out.logits_av
        .cross_entropy_with_logits(labels)?
        .add(&out.logits_v.cross_entropy_with_logits(labels)?)?
        .add(&out.logits_a.cross_entropy_with_logits(labels)?)
}

#[derive(Clone, Debug)]
pub struct ShortTermEncoder {
    pub cfg: EncoderConfig,
    pub params: ParamStore,
}

impl ShortTermEncoder {
    pub fn new(cfg: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let k = cfg.stem_kernel;
        let stem0 = cfg.stage_widths[0];
        let fan_in = 3 * k * k;
        for (stream, in_channels) in [("visual", 3 * cfg.frames), ("audio", 1)] {
            // Base three-channel stem, re-purposed to the stream's input.
            let mut base = ParamStore::new();
            base.insert_he("base", &[stem0, 3, k, k], fan_in, rng);
            let base = base.get("base")?.detach();
            let stem = if stream == "visual" {
                build_visual_stem(&base, cfg.frames, cfg.stem_rescale)?
            } else {
                build_audio_stem(&base)?
            };
            debug_assert_eq!(stem.shape()[1], in_channels);
            params.insert(format!("ste.{stream}.stem.weight"), stem);
            backbone::init_stream(&mut params, &format!("ste.{stream}"), &cfg, rng);
        }
        let (dv, da, d) = (cfg.visual_dim(), cfg.audio_dim(), cfg.embedding_dim());
        for (name, fan_in) in [("av", d), ("v", dv), ("a", da)] {
            params.insert_normal(
                &format!("ste.heads.{name}.weight"),
                &[fan_in, NUM_CLASSES],
                (1.0 / fan_in as f64).sqrt(),
                rng,
            );
            params.insert_zeros(&format!("ste.heads.{name}.bias"), &[NUM_CLASSES]);
        }
        Ok(Self { cfg, params })
    }

    /// Runs both streams and the three heads. Training mode also returns the
    /// batch-norm statistics to fold into the running estimates.
    pub fn forward(&self, visual: &Tensor, audio: &Tensor, mode: Mode) -> Result<(SteOutput, Vec<BnUpdate>)> {
        let cfg = &self.cfg;
        let n = visual.shape()[0];
        let want_v = [n, 3 * cfg.frames, cfg.crop_height, cfg.crop_width];
        let want_a = [n, 1, cfg.mel_bands, cfg.mel_frames];
        if visual.shape() != want_v || audio.shape() != want_a {
            return Err(Error::shape(
                "encode_clip",
                format!(
                    "inputs {:?}/{:?}, expected {want_v:?}/{want_a:?}",
                    visual.shape(),
                    audio.shape()
                ),
            ));
        }
        let mut updates = Vec::new();
        let u_v = backbone::stream_forward(visual, &self.params, "ste.visual", cfg, mode, &mut updates)?;
        let u_a = backbone::stream_forward(audio, &self.params, "ste.audio", cfg, mode, &mut updates)?;
        let u = Tensor::concat(&[u_v.clone(), u_a.clone()], 1)?;
        let head = |x: &Tensor, name: &str| -> Result<Tensor> {
            x.matmul(self.params.get(&format!("ste.heads.{name}.weight"))?)?
                .add_bias(self.params.get(&format!("ste.heads.{name}.bias"))?)
        };
        let out = SteOutput {
            logits_av: head(&u, "av")?,
            logits_v: head(&u_v, "v")?,
            logits_a: head(&u_a, "a")?,
            u,
            u_v,
            u_a,
        };
        Ok((out, updates))
    }

    /// Single-clip forward on a `[3k, H, W]` stack and its spectrogram.
    pub fn encode_clip(&self, visual: &Tensor, audio: &MelSpectrogram, mode: Mode) -> Result<SteOutput> {
        let cfg = &self.cfg;
        if visual.rank() != 3 {
            return Err(Error::shape("encode_clip", "visual input must be [3k, H, W]"));
        }
        let mut shape = vec![1];
        shape.extend_from_slice(visual.shape());
        let v = visual.reshape(&shape)?;
        let a = Tensor::new(audio.values().to_vec(), &[1, 1, audio.n_mels(), audio.n_frames()])
            .map_err(|_| Error::shape("encode_clip", "bad spectrogram"))?;
        if a.shape()[2] != cfg.mel_bands || a.shape()[3] != cfg.mel_frames {
            return Err(Error::shape("encode_clip", "spectrogram size does not match config"));
        }
        Ok(self.forward(&v, &a, mode)?.0)
    }

    /// Evaluation-mode embeddings and fused speaking probabilities for a
    /// batch of clips.
    pub fn embed(&self, clips: &[&Clip]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let (v, a) = batch_inputs(clips, &self.cfg)?;
        let (out, _) = self.forward(&v, &a, Mode::Eval)?;
        let d = self.cfg.embedding_dim();
        let emb = out.u.data().chunks(d).map(<[f64]>::to_vec).collect();
        let probs = out.logits_av.softmax_rows()?.data().chunks(2).map(|p| p[1]).collect();
        Ok((emb, probs))
    }

    /// Speaking probability from the fused head applied to a cached
    /// embedding.
    pub fn score_embedding(&self, u: &[f64]) -> Result<f64> {
        let w = self.params.get("ste.heads.av.weight")?;
        let b = self.params.get("ste.heads.av.bias")?;
        let d = self.cfg.embedding_dim();
        if u.len() != d {
            return Err(Error::shape("score_embedding", format!("embedding of {} values, expected {d}", u.len())));
        }
        let mut logits = [b.data()[0], b.data()[1]];
        for (i, x) in u.iter().enumerate() {
            logits[0] += x * w.data()[i * 2];
            logits[1] += x * w.data()[i * 2 + 1];
        }
        Ok(crate::refine::speaking_probability(logits))
    }
}
