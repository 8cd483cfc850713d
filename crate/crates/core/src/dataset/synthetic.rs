//! Procedural multi-speaker conversations.
//!
//! Each video has a few on-screen speakers (and possibly one off-screen
//! voice) taking turns, with short filler utterances from listeners and
//! silent gaps. A speaker's mouth opens and closes with the syllable
//! envelope of their own speech; the single audio track mixes every active
//! voice plus noise, so audio alone cannot tell which face is talking.
//! Listeners sometimes move their mouths without speaking.
//!
//! Frames and audio are rendered on demand from the schedule and a per-video
//! seed, so nothing but the schedule needs to be stored.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Detection, FaceTrack, MediaSource, DEFAULT_FRAME_WIDTH_PX};
use crate::error::{Error, Result};
use crate::signal::{AudioSnippet, Frame, TrackFrames};

const FRAME_HEIGHT_PX: f64 = 360.0;
const HARMONICS: usize = 4;
const NOISE_BLOCK: i64 = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub videos: usize,
    pub duration_s: f64,
    /// Relative frequency of videos with 1, 2, 3, ... visible speakers.
    pub speaker_weights: Vec<f64>,
    pub detection_period_s: f64,
    pub frame_rate: f64,
    pub sample_rate_hz: u32,
    /// Largest native face resolution in pixels; smaller faces are rendered
    /// proportionally coarser.
    pub render_size: usize,
    pub turn_s: [f64; 2],
    pub gap_s: [f64; 2],
    pub filler_s: [f64; 2],
    /// Chance that a turn contains a listener's filler utterance.
    pub filler_rate: f64,
    /// Fraction of turns taken by an off-screen voice.
    pub offscreen_rate: f64,
    /// Non-speech mouth-motion episodes per speaker per minute.
    pub distractors_per_min: f64,
    pub distractor_s: [f64; 2],
    /// Chance that a speaker leaves the screen for a while, splitting
    /// their face track.
    pub exit_rate: f64,
    pub face_width_px: Vec<f64>,
    pub visual_noise: f64,
    pub audio_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            videos: 24,
            duration_s: 40.0,
            speaker_weights: vec![0.15, 0.45, 0.4],
            detection_period_s: 0.225,
            frame_rate: 50.0,
            sample_rate_hz: 16_000,
            render_size: 32,
            turn_s: [0.8, 3.0],
            gap_s: [0.0, 1.0],
            filler_s: [0.45, 0.8],
            filler_rate: 0.35,
            offscreen_rate: 0.1,
            distractors_per_min: 6.0,
            distractor_s: [0.5, 1.5],
            exit_rate: 0.25,
            face_width_px: vec![40.0, 96.0, 180.0],
            visual_noise: 0.08,
            audio_noise: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if self.videos == 0 || self.duration_s <= 1.0 {
            return bad("need at least one video longer than a second");
        }
        if self.speaker_weights.is_empty()
            || self.speaker_weights.iter().any(|w| *w < 0.0)
            || self.speaker_weights.iter().sum::<f64>() <= 0.0
        {
            return bad("speaker weights must be non-negative with a positive sum");
        }
        for (name, [lo, hi]) in [
            ("turn_s", self.turn_s),
            ("gap_s", self.gap_s),
            ("filler_s", self.filler_s),
            ("distractor_s", self.distractor_s),
        ] {
            if !(0.0 <= lo && lo <= hi) {
                return Err(Error::Config(format!("synthetic: {name} range is invalid")));
            }
        }
        if self.turn_s[0] <= 0.0 || self.detection_period_s <= 0.0 || self.frame_rate <= 0.0 {
            return bad("turn length, detection period and frame rate must be positive");
        }
        if self.face_width_px.is_empty() || self.face_width_px.iter().any(|w| *w <= 0.0 || *w * 1.25 > FRAME_HEIGHT_PX) {
            return bad("face widths must be positive and fit in the frame");
        }
        if self.render_size < 4 || self.sample_rate_hz < 8_000 {
            return bad("render size must be at least 4 and sample rate at least 8 kHz");
        }
        for p in [self.filler_rate, self.offscreen_rate, self.exit_rate] {
            if !(0.0..=1.0).contains(&p) {
                return bad("rates must lie in [0, 1]");
            }
        }
        if self.visual_noise < 0.0 || self.audio_noise < 0.0 || self.distractors_per_min < 0.0 {
            return bad("noise levels must be non-negative");
        }
        Ok(())
    }
}

/// One stretch of speech (or of non-speech mouth motion).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub speaker: usize,
    pub start: f64,
    pub end: f64,
    /// Mouth/amplitude modulation rate.
    pub rate_hz: f64,
    pub phase: f64,
    /// Fundamental frequency of the voice (unused for mouth-only motion).
    pub pitch_hz: f64,
}

impl Segment {
    fn covers(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    /// Modulation in `[0, 1]` with 40 ms fades at both ends.
    fn envelope(&self, t: f64) -> f64 {
        if !self.covers(t) {
            return 0.0;
        }
        let fade = ((t - self.start) / 0.04).min((self.end - t) / 0.04).min(1.0);
        fade * (PI * self.rate_hz * (t - self.start) + self.phase).sin().abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    /// False for the off-screen voice.
    pub visible: bool,
    pub pitch_hz: f64,
    pub face_width_px: f64,
    /// Left edge of the face box, normalized.
    pub box_x: f64,
    pub skin: [f64; 3],
    pub background: [f64; 3],
    /// Interval during which the speaker is off screen.
    pub absent: Option<[f64; 2]>,
    pub sway_phase: f64,
}

impl SpeakerSpec {
    fn on_screen(&self, t: f64) -> bool {
        self.visible && self.absent.is_none_or(|[a, b]| t < a || t >= b)
    }

    /// Native rendering resolution of this face.
    pub fn native_size(&self, max: usize) -> usize {
        ((self.face_width_px / 5.6).round() as usize).clamp(6, max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub video_id: String,
    pub duration_s: f64,
    pub seed: u64,
    pub speakers: Vec<SpeakerSpec>,
    pub utterances: Vec<Segment>,
    pub distractors: Vec<Segment>,
    /// Track id to speaker index.
    pub tracks: BTreeMap<String, usize>,
}

impl SyntheticVideo {
    pub fn is_speaking(&self, speaker: usize, t: f64) -> bool {
        self.utterances.iter().any(|u| u.speaker == speaker && u.covers(t))
    }

    /// Mouth opening in `[0, 1]`: the syllable envelope while speaking, a
    /// slower oscillation during distractor episodes.
    pub fn mouth_opening(&self, speaker: usize, t: f64) -> f64 {
        self.utterances
            .iter()
            .chain(&self.distractors)
            .filter(|s| s.speaker == speaker)
            .map(|s| s.envelope(t))
            .fold(0.0, f64::max)
    }

    fn frame_seed(&self, speaker: usize, frame: i64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add((speaker as u64) << 40)
            .wrapping_add(frame as u64)
    }

    /// Face crop of `speaker` at frame index `frame`, at native resolution.
    pub fn render_face(&self, speaker: usize, frame: i64, cfg: &SyntheticConfig) -> Result<Frame> {
        let spec = &self.speakers[speaker];
        let t = frame as f64 / cfg.frame_rate;
        let r = spec.native_size(cfg.render_size);
        let rf = r as f64;
        let mouth = self.mouth_opening(speaker, t);
        let sway = 0.04 * (2.0 * PI * 0.3 * t + spec.sway_phase).sin();
        let (cx, cy) = (0.5 + sway, 0.5 + 0.5 * sway);
        let mut rng = ChaCha8Rng::seed_from_u64(self.frame_seed(speaker, frame));
        // soft-edged ellipse coverage, in pixels
        let cover = |x: f64, y: f64, ex: f64, ey: f64, ax: f64, ay: f64| -> f64 {
            let dx = (x - ex) / ax;
            let dy = (y - ey) / ay;
            let d = (dx * dx + dy * dy).sqrt();
            ((1.0 - d) * ax.min(ay) * rf + 0.5).clamp(0.0, 1.0)
        };
        let mut data = vec![0.0; 3 * r * r];
        for y in 0..r {
            for x in 0..r {
                let (px, py) = ((x as f64 + 0.5) / rf, (y as f64 + 0.5) / rf);
                let face = cover(px, py, cx, cy, 0.38, 0.46);
                let eyes = cover(px, py, cx - 0.15, cy - 0.1, 0.05, 0.05).max(cover(px, py, cx + 0.15, cy - 0.1, 0.05, 0.05));
                let lips = cover(px, py, cx, cy + 0.22, 0.17, 0.025 + 0.11 * mouth);
                for c in 0..3 {
                    let mut v = spec.background[c] * (1.0 - face) + spec.skin[c] * face;
                    v = v * (1.0 - eyes) + 0.1 * eyes;
                    v = v * (1.0 - lips) + [0.35, 0.05, 0.08][c] * lips;
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    data[(c * r + y) * r + x] = (v + cfg.visual_noise * noise).clamp(0.0, 1.0);
                }
            }
        }
        Frame::new(r, r, data)
    }

    /// Mixed audio over sample indices `first..first + n`.
    pub fn render_audio(&self, first: i64, n: usize, cfg: &SyntheticConfig) -> Vec<f64> {
        let sr = cfg.sample_rate_hz as f64;
        let (t0, t1) = (first as f64 / sr, (first + n as i64) as f64 / sr);
        let active: Vec<&Segment> = self.utterances.iter().filter(|u| u.end > t0 && u.start < t1).collect();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let t = (first + i as i64) as f64 / sr;
            for u in &active {
                let env = u.envelope(t);
                if env == 0.0 && !u.covers(t) {
                    continue;
                }
                let amp = 0.25 + 0.75 * env;
                let voice: f64 = (1..=HARMONICS)
                    .map(|h| (2.0 * PI * h as f64 * u.pitch_hz * t).sin() / h as f64)
                    .sum();
                *o += 0.5 * amp * voice;
            }
        }
        if cfg.audio_noise > 0.0 {
            let mut block = i64::MIN;
            let mut noise = Vec::new();
            for (i, o) in out.iter_mut().enumerate() {
                let idx = first + i as i64;
                let b = idx.div_euclid(NOISE_BLOCK);
                if b != block {
                    block = b;
                    let mut rng = ChaCha8Rng::seed_from_u64(self.frame_seed(usize::MAX >> 24, b).rotate_left(17));
                    noise = (0..NOISE_BLOCK).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>();
                }
                *o += cfg.audio_noise * noise[idx.rem_euclid(NOISE_BLOCK) as usize];
            }
        }
        out
    }
}

/// A generated dataset: configuration, per-video schedules and the face
/// tracks with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    pub seed: u64,
    pub videos: Vec<SyntheticVideo>,
    pub tracks: Vec<FaceTrack>,
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn draw_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

fn color(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn generate_video(seed: u64, index: usize, cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> (SyntheticVideo, Vec<FaceTrack>) {
    let video_id = format!("s{seed}v{index:04}");
    let dur = cfg.duration_s;
    let visible = draw_weighted(rng, &cfg.speaker_weights) + 1;
    let mut speakers = Vec::with_capacity(visible + 1);
    for i in 0..=visible {
        let face_width_px = cfg.face_width_px[rng.random_range(0..cfg.face_width_px.len())];
        let absent = (i < visible && rng.random_bool(cfg.exit_rate)).then(|| {
            let a = rng.random_range(0.2 * dur..0.7 * dur);
            [a, (a + rng.random_range(2.0..6.0)).min(dur)]
        });
        let skin_base = rng.random_range(0.45..0.85);
        speakers.push(SpeakerSpec {
            visible: i < visible,
            pitch_hz: rng.random_range(95.0..260.0),
            face_width_px,
            box_x: (i as f64 + 0.5) / (visible as f64 + 1.0) * (1.0 - face_width_px / DEFAULT_FRAME_WIDTH_PX),
            skin: [skin_base, skin_base * 0.8, skin_base * 0.65],
            background: color(rng, 0.05, 0.6),
            absent,
            sway_phase: rng.random_range(0.0..2.0 * PI),
        });
    }
    let offscreen = visible;

    let segment = |rng: &mut ChaCha8Rng, speaker: usize, start: f64, len: f64, pitch: f64| Segment {
        speaker,
        start,
        end: (start + len).min(dur),
        rate_hz: rng.random_range(3.5..6.0),
        phase: rng.random_range(0.0..PI),
        pitch_hz: pitch * rng.random_range(0.95..1.05),
    };

    let mut utterances = Vec::new();
    let mut t = rng.random_range(0.0..1.0);
    let mut prev: Option<usize> = None;
    while t < dur - 0.3 {
        let speaker = if cfg.offscreen_rate > 0.0 && rng.random_bool(cfg.offscreen_rate) {
            offscreen
        } else if visible == 1 {
            0
        } else {
            loop {
                let s = rng.random_range(0..visible);
                if Some(s) != prev {
                    break s;
                }
            }
        };
        let len = uniform(rng, cfg.turn_s);
        let pitch = speakers[speaker].pitch_hz;
        utterances.push(segment(rng, speaker, t, len, pitch));
        if visible > 1 && len > 0.9 && rng.random_bool(cfg.filler_rate) {
            let listener = loop {
                let s = rng.random_range(0..visible);
                if s != speaker {
                    break s;
                }
            };
            let at = t + rng.random_range(0.2..len - 0.5);
            let flen = uniform(rng, cfg.filler_s);
            let pitch = speakers[listener].pitch_hz;
            utterances.push(segment(rng, listener, at, flen, pitch));
        }
        prev = Some(speaker);
        t += len + uniform(rng, cfg.gap_s);
    }
    utterances.sort_by(|a, b| a.start.total_cmp(&b.start));

    let mut distractors = Vec::new();
    for s in 0..visible {
        let count = (cfg.distractors_per_min * dur / 60.0).round() as usize;
        for _ in 0..count {
            let start = rng.random_range(0.0..dur);
            let len = uniform(rng, cfg.distractor_s);
            let mut seg = segment(rng, s, start, len, 0.0);
            seg.rate_hz = rng.random_range(1.0..2.2);
            distractors.push(seg);
        }
    }

    let video = SyntheticVideo {
        video_id: video_id.clone(),
        duration_s: dur,
        seed: u64::from(rng.random::<u32>()),
        speakers,
        utterances,
        distractors,
        tracks: BTreeMap::new(),
    };
    let mut video = video;
    let n_det = (dur / cfg.detection_period_s).floor() as usize;
    let mut tracks = Vec::new();
    for s in 0..visible {
        let spec = &video.speakers[s];
        let w = spec.face_width_px / DEFAULT_FRAME_WIDTH_PX;
        let h = spec.face_width_px * 1.25 / FRAME_HEIGHT_PX;
        let bbox = [spec.box_x, 0.15, spec.box_x + w, 0.15 + h];
        let mut segment_no = 0;
        let mut current: Vec<Detection> = Vec::new();
        let flush = |current: &mut Vec<Detection>, segment_no: &mut usize, tracks: &mut Vec<FaceTrack>| {
            if !current.is_empty() {
                let id = format!("{video_id}:s{s}:{segment_no}");
                tracks.push(FaceTrack {
                    video_id: video_id.clone(),
                    track_id: id,
                    detections: std::mem::take(current),
                });
                *segment_no += 1;
            }
        };
        for k in 0..n_det {
            let t = k as f64 * cfg.detection_period_s;
            if video.speakers[s].on_screen(t) {
                current.push(Detection {
                    timestamp: t,
                    bbox,
                    label: u8::from(video.is_speaking(s, t)),
                });
            } else {
                flush(&mut current, &mut segment_no, &mut tracks);
            }
        }
        flush(&mut current, &mut segment_no, &mut tracks);
    }
    for tr in &tracks {
        let speaker = tr.track_id.rsplit(':').nth(1).and_then(|s| s[1..].parse().ok()).unwrap_or(0);
        video.tracks.insert(tr.track_id.clone(), speaker);
    }
    (video, tracks)
}

/// Generates `cfg.videos` conversations from `seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut videos = Vec::with_capacity(cfg.videos);
    let mut tracks = Vec::new();
    for i in 0..cfg.videos {
        let (v, t) = generate_video(seed, i, cfg, &mut rng);
        videos.push(v);
        tracks.extend(t);
    }
    Ok(SyntheticDataset {
        config: cfg.clone(),
        seed,
        videos,
        tracks,
    })
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    config: SyntheticConfig,
    tracks_csv: String,
    videos: Vec<ManifestVideo>,
}

#[derive(Serialize, Deserialize)]
struct ManifestVideo {
    video_id: String,
    schedule: String,
    tracks: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleFile {
    video: SyntheticVideo,
}

impl SyntheticDataset {
    fn video(&self, video_id: &str) -> Result<&SyntheticVideo> {
        self.videos
            .binary_search_by(|v| v.video_id.as_str().cmp(video_id))
            .map(|i| &self.videos[i])
            .map_err(|_| Error::Data(format!("unknown synthetic video {video_id}")))
    }

    /// Writes `manifest.toml`, `tracks.csv` and one schedule file per video
    /// under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let media = dir.join("media");
        fs::create_dir_all(&media).map_err(|e| Error::io(&media, e))?;
        super::write_ava_csv(&self.tracks, &dir.join("tracks.csv"))?;
        let mut entries = Vec::new();
        for v in &self.videos {
            let rel = format!("media/{}.toml", v.video_id);
            let body = toml::to_string(&ScheduleFile { video: v.clone() }).map_err(|e| Error::Data(e.to_string()))?;
            let path = dir.join(&rel);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestVideo {
                video_id: v.video_id.clone(),
                schedule: rel,
                tracks: v.tracks.keys().cloned().collect(),
            });
        }
        let manifest = Manifest {
            seed: self.seed,
            config: self.config.clone(),
            tracks_csv: "tracks.csv".into(),
            videos: entries,
        };
        let path = dir.join("manifest.toml");
        let body = toml::to_string(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.toml");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let tracks = super::read_ava_csv(&dir.join(&manifest.tracks_csv))?;
        let mut videos = Vec::with_capacity(manifest.videos.len());
        for entry in &manifest.videos {
            let p = dir.join(&entry.schedule);
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let file: ScheduleFile = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            videos.push(file.video);
        }
        videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        Ok(Self {
            config: manifest.config,
            seed: manifest.seed,
            videos,
            tracks,
        })
    }
}

/// Frames of one synthetic track on the video's frame grid.
struct SyntheticFrames<'a> {
    video: &'a SyntheticVideo,
    cfg: &'a SyntheticConfig,
    speaker: usize,
    first: i64,
    count: usize,
}

impl TrackFrames for SyntheticFrames<'_> {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn timestamp(&self, index: usize) -> f64 {
        (self.first + index as i64) as f64 / self.cfg.frame_rate
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        self.video.render_face(self.speaker, self.first + index as i64, self.cfg)
    }
}

impl MediaSource for SyntheticDataset {
    fn frames<'a>(&'a self, track: &'a FaceTrack) -> Result<Box<dyn TrackFrames + 'a>> {
        let video = self.video(&track.video_id)?;
        let speaker = *video
            .tracks
            .get(&track.track_id)
            .ok_or_else(|| Error::Data(format!("unknown synthetic track {}", track.track_id)))?;
        let fps = self.config.frame_rate;
        let first = (track.start() * fps).round() as i64;
        let last = (track.end() * fps).round() as i64;
        Ok(Box::new(SyntheticFrames {
            video,
            cfg: &self.config,
            speaker,
            first,
            count: (last - first + 1).max(1) as usize,
        }))
    }

    fn audio(&self, video_id: &str, start_s: f64, n: usize) -> Result<AudioSnippet> {
        let video = self.video(video_id)?;
        let first = (start_s * self.config.sample_rate_hz as f64).round() as i64;
        AudioSnippet::new(video.render_audio(first, n, &self.config), self.config.sample_rate_hz)
    }
}
