use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A mono waveform covering one clip interval.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioSnippet {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioSnippet {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("audio snippet has no samples".into()));
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    /// Length in seconds; `len == round(duration * rate)` by construction.
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub n_mels: usize,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub n_fft: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    /// Added before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            n_mels: 40,
            window_ms: 25.0,
            hop_ms: 10.0,
            n_fft: 512,
            f_min_hz: 0.0,
            f_max_hz: 8_000.0,
            log_floor: 1e-6,
        }
    }
}

impl MelConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * 1e-3 * self.sample_rate_hz as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * 1e-3 * self.sample_rate_hz as f64).round() as usize
    }

    /// Frame count for `n` samples with centered framing: `1 + n / hop`.
    pub fn frames_for_samples(&self, n: usize) -> usize {
        1 + n / self.hop_samples()
    }

    /// Frame count for a clip of `duration` seconds.
    pub fn frames_for_duration(&self, duration: f64) -> usize {
        self.frames_for_samples((duration * self.sample_rate_hz as f64).round() as usize)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("mel: {m}")));
        if self.sample_rate_hz as f64 + 1e-9 < 2.0 * self.f_max_hz {
            return bad("sample rate below twice the maximum filterbank frequency");
        }
        if self.n_mels == 0 || self.f_min_hz < 0.0 || self.f_min_hz >= self.f_max_hz {
            return bad("filterbank range is empty");
        }
        let (win, hop) = (self.window_samples(), self.hop_samples());
        if win == 0 || hop == 0 || win > self.n_fft {
            return bad("window must be non-empty and fit in n_fft; hop must be positive");
        }
        if self.log_floor <= 0.0 {
            return bad("log floor must be positive");
        }
        Ok(())
    }
}

/// A Q x P log-mel matrix, band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Vec<f64>,
    n_mels: usize,
    n_frames: usize,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, n_frames: usize) -> Result<Self> {
        if n_mels == 0 || n_frames == 0 || values.len() != n_mels * n_frames {
            return Err(Error::shape("mel_spectrogram", "values must be n_mels x n_frames"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel_spectrogram".into()));
        }
        Ok(Self {
            values,
            n_mels,
            n_frames,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn get(&self, band: usize, frame: usize) -> f64 {
        self.values[band * self.n_frames + frame]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Reusable STFT + triangular mel filterbank.
#[derive(Clone)]
pub struct MelExtractor {
    cfg: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    /// n_mels x (n_fft/2 + 1)
    filters: Vec<f64>,
    centers: Vec<f64>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("cfg", &self.cfg).finish()
    }
}

impl MelExtractor {
    pub fn new(cfg: MelConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.window_samples();
        let window = (0..win)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
            .collect();
        let bins = cfg.n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(cfg.f_min_hz), hz_to_mel(cfg.f_max_hz));
        let points: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let mut filters = vec![0.0; cfg.n_mels * bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            for k in 0..bins {
                let f = k as f64 * cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                filters[m * bins + k] = up.min(down).max(0.0);
            }
        }
        let centers = points[1..=cfg.n_mels].to_vec();
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Ok(Self {
            cfg,
            fft,
            window,
            filters,
            centers,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    /// Center frequency of each triangular band, in Hz.
    pub fn band_centers_hz(&self) -> &[f64] {
        &self.centers
    }

    pub fn compute(&self, audio: &AudioSnippet) -> Result<MelSpectrogram> {
        if audio.samples().is_empty() {
            return Err(Error::InvalidArgument("empty waveform".into()));
        }
        if audio.sample_rate_hz() != self.cfg.sample_rate_hz {
            return Err(Error::InvalidArgument(format!(
                "audio sampled at {} Hz but filterbank built for {} Hz",
                audio.sample_rate_hz(),
                self.cfg.sample_rate_hz
            )));
        }
        let x = audio.samples();
        let (win, hop, n_fft) = (self.cfg.window_samples(), self.cfg.hop_samples(), self.cfg.n_fft);
        let n_frames = self.cfg.frames_for_samples(x.len());
        let bins = n_fft / 2 + 1;
        let half = win / 2;
        let mut values = vec![0.0; self.cfg.n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut power = vec![0.0; bins];
        for j in 0..n_frames {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let start = (j * hop) as isize - half as isize;
            for (i, w) in self.window.iter().enumerate() {
                let s = start + i as isize;
                if s >= 0 && (s as usize) < x.len() {
                    buf[i].re = x[s as usize] * w;
                }
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let energy: f64 = self.filters[m * bins..(m + 1) * bins]
                    .iter()
                    .zip(&power)
                    .map(|(f, p)| f * p)
                    .sum();
                values[m * n_frames + j] = (energy + self.cfg.log_floor).ln();
            }
        }
        MelSpectrogram::new(values, self.cfg.n_mels, n_frames)
    }
}

/// One-shot log-mel spectrogram.
pub fn mel_spectrogram(audio: &AudioSnippet, cfg: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg.clone())?.compute(audio)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_maps_to_log_floor() {
        let cfg = MelConfig::default();
        let a = AudioSnippet::new(vec![0.0; 3200], 16_000).unwrap();
        let m = mel_spectrogram(&a, &cfg).unwrap();
        let floor = cfg.log_floor.ln();
        assert!(m.values().iter().all(|&v| v == floor));
        assert_eq!(m.n_mels(), 40);
        assert_eq!(m.n_frames(), 21);
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let ex = MelExtractor::new(MelConfig::default()).unwrap();
        let centers = ex.band_centers_hz().to_vec();
        // Bands narrower than the Hann main lobe (~4 FFT bins) cannot
        // resolve a single tone, so start where bands are wide enough.
        for (q, &f) in centers.iter().enumerate().skip(8) {
            let samples = (0..4000)
                .map(|i| (2.0 * PI * f * i as f64 / 16_000.0).sin())
                .collect();
            let m = ex.compute(&AudioSnippet::new(samples, 16_000).unwrap()).unwrap();
            for frame in 1..m.n_frames() - 1 {
                let best = (0..m.n_mels())
                    .max_by(|&a, &b| m.get(a, frame).total_cmp(&m.get(b, frame)))
                    .unwrap();
                assert_eq!(best, q, "frame {frame} at {f:.1} Hz");
            }
        }
    }

    #[test]
    fn frame_count_doubles_with_duration() {
        let cfg = MelConfig::default();
        for n in [400usize, 1000, 3273, 16_000] {
            let p1 = cfg.frames_for_samples(n);
            let p2 = cfg.frames_for_samples(2 * n);
            assert!((p2 as i64 - 2 * p1 as i64).abs() <= 1, "{n}: {p1} -> {p2}");
            let a = AudioSnippet::new(vec![0.1; n], 16_000).unwrap();
            assert_eq!(mel_spectrogram(&a, &cfg).unwrap().n_frames(), p1);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(AudioSnippet::new(vec![], 16_000).is_err());
        let cfg = MelConfig {
            sample_rate_hz: 8_000,
            ..MelConfig::default()
        };
        assert!(MelExtractor::new(cfg).is_err());
        let a = AudioSnippet::new(vec![0.0; 800], 8_000).unwrap();
        assert!(mel_spectrogram(&a, &MelConfig::default()).is_err());
    }
}
