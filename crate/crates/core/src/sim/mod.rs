//! Synthetic meetings with planted utterances, clock offsets, sampling
//! drift, geometric delay and attenuation, and sensor noise.

mod generate;
pub mod surrogate;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{generate_scene, random_text, SceneTemplate};
use surrogate::{band_noise, interleaved_bands, Band};

use crate::asr::{MockManifest, MockParams};
use crate::audio::{read_wav, write_wav, AudioError, Recording};
use crate::pipeline::{DeviceEntry, InputManifest};
use crate::diarize::{speaker_label, ActivityMatrix};
use crate::transcript::{AsrResult, TranscriptSet};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const MAX_DRIFT_PPM: f64 = 500.0;
/// Half-width in samples of the windowed-sinc interpolator.
const SINC_HALF_WIDTH: i64 = 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSpec {
    pub position: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub id: String,
    pub position: [f64; 2],
    /// Device clock reading at scene time zero, in seconds.
    #[serde(default)]
    pub offset_s: f64,
    #[serde(default)]
    pub drift_ppm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtterancePlan {
    pub speaker: usize,
    pub start_s: f64,
    pub duration_s: f64,
    #[serde(default)]
    pub text: Option<String>,
    /// Mono WAV used instead of a generated surrogate.
    #[serde(default)]
    pub source: Option<PathBuf>,
    #[serde(default = "yes")]
    pub allow_overlap: bool,
}

fn yes() -> bool {
    true
}

/// Exponentially decaying noise tail added after the direct path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverbSpec {
    pub t60_s: f64,
    /// Direct-to-reverberant energy ratio.
    pub drr_db: f64,
    #[serde(default = "default_onset")]
    pub onset_s: f64,
}

fn default_onset() -> f64 {
    0.005
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// White sensor noise level in dBFS; `None` renders noiselessly.
    #[serde(default)]
    pub noise_db: Option<f64>,
    #[serde(default)]
    pub anchor: usize,
    pub speakers: Vec<SpeakerSpec>,
    pub devices: Vec<DeviceSpec>,
    pub utterances: Vec<UtterancePlan>,
    #[serde(default)]
    pub reverb: Option<ReverbSpec>,
}

fn default_rate() -> u32 {
    crate::audio::NOMINAL_SAMPLE_RATE
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let spec: Self = toml::from_str(text).map_err(|e| SimError::Invalid(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut spec = Self::from_toml(&text)?;
        // Source paths are relative to the scene file.
        let base = path.parent().unwrap_or(Path::new("."));
        for u in &mut spec.utterances {
            if let Some(src) = &mut u.source {
                if src.is_relative() {
                    *src = base.join(&*src);
                }
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        if self.speakers.is_empty() || self.devices.is_empty() {
            return bad("need at least one speaker and one device".into());
        }
        if self.sample_rate == 0 || !(self.duration_s > 0.0) {
            return bad("sample rate and duration must be positive".into());
        }
        if self.anchor >= self.devices.len() {
            return bad(format!("anchor {} out of range", self.anchor));
        }
        for d in &self.devices {
            if !(d.drift_ppm.abs() <= MAX_DRIFT_PPM) || !d.offset_s.is_finite() {
                return bad(format!("device {}: drift must be within ±{MAX_DRIFT_PPM} ppm", d.id));
            }
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.speaker >= self.speakers.len() {
                return bad(format!("utterance {i}: unknown speaker {}", u.speaker));
            }
            if !(u.start_s >= 0.0) || !(u.duration_s > 0.0) || u.start_s + u.duration_s > self.duration_s + 1e-9 {
                return bad(format!("utterance {i} lies outside the session"));
            }
        }
        for (i, a) in self.utterances.iter().enumerate() {
            for (j, b) in self.utterances.iter().enumerate().skip(i + 1) {
                let overlap = a.start_s.max(b.start_s) < (a.start_s + a.duration_s).min(b.start_s + b.duration_s);
                if overlap && (a.speaker == b.speaker || !a.allow_overlap || !b.allow_overlap) {
                    return bad(format!("utterances {i} and {j} overlap"));
                }
            }
        }
        Ok(())
    }

    /// Band assignment used by the surrogate sources.
    pub fn bands(&self) -> Vec<Vec<Band>> {
        interleaved_bands(self.speakers.len(), self.sample_rate)
    }

    /// Anchor-timeline seconds of scene time `tau`.
    pub fn anchor_time(&self, tau: f64) -> f64 {
        let a = &self.devices[self.anchor];
        (tau + a.offset_s) * (1.0 + a.drift_ppm * 1e-6)
    }

    pub fn text_of(&self, index: usize) -> String {
        self.utterances[index]
            .text
            .clone()
            .unwrap_or_else(|| random_text(self.seed, index, self.utterances[index].duration_s))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthUtterance {
    pub speaker: usize,
    /// Anchor-timeline seconds.
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub session_id: String,
    pub sample_rate: u32,
    pub speakers: usize,
    pub utterances: Vec<TruthUtterance>,
    pub bands: Vec<Vec<Band>>,
}

impl GroundTruth {
    pub fn from_scene(scene: &SceneSpec, session_id: &str) -> Self {
        let utterances = scene
            .utterances
            .iter()
            .enumerate()
            .map(|(i, u)| TruthUtterance {
                speaker: u.speaker,
                start_s: scene.anchor_time(u.start_s),
                end_s: scene.anchor_time(u.start_s + u.duration_s),
                text: scene.text_of(i),
            })
            .collect();
        Self {
            session_id: session_id.to_string(),
            sample_rate: scene.sample_rate,
            speakers: scene.speakers.len(),
            utterances,
            bands: scene.bands(),
        }
    }

    /// Frame activity (speaker rows plus an all-ones noise row); frame `t`
    /// sits at `origin_s + t * frame_shift_s` on the anchor timeline.
    pub fn activity(&self, frames: usize, frame_shift_s: f64, origin_s: f64) -> ActivityMatrix {
        let mut rows = vec![vec![false; frames]; self.speakers + 1];
        rows[self.speakers].fill(true);
        for u in &self.utterances {
            for (t, v) in rows[u.speaker].iter_mut().enumerate() {
                let time = origin_s + t as f64 * frame_shift_s;
                if time >= u.start_s && time < u.end_s {
                    *v = true;
                }
            }
        }
        ActivityMatrix {
            rows,
            slot_duration_s: frame_shift_s,
        }
    }

    pub fn transcript(&self) -> TranscriptSet {
        let results = self
            .utterances
            .iter()
            .map(|u| AsrResult {
                speaker: u.speaker,
                start_s: u.start_s,
                end_s: u.end_s,
                text: u.text.clone(),
                confidence: None,
            })
            .collect();
        TranscriptSet::new(self.session_id.clone(), results, "")
    }

    pub fn rttm(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            writeln!(
                out,
                "SPEAKER {} 1 {:.3} {:.3} <NA> <NA> {} <NA> <NA>",
                self.session_id,
                u.start_s,
                u.end_s - u.start_s,
                speaker_label(u.speaker)
            )
            .expect("string write");
        }
        out
    }

    pub fn overlap_ratio(&self) -> f64 {
        overlap_ratio(&self.utterances.iter().map(|u| (u.start_s, u.end_s)).collect::<Vec<_>>())
    }
}

/// Duration covered by two or more intervals over the duration covered by
/// at least one.
pub fn overlap_ratio(intervals: &[(f64, f64)]) -> f64 {
    let mut events: Vec<(f64, i32)> = Vec::with_capacity(intervals.len() * 2);
    for &(a, b) in intervals {
        if b > a {
            events.push((a, 1));
            events.push((b, -1));
        }
    }
    // Ends sort before starts at the same instant.
    events.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let (mut speech, mut overlap, mut depth, mut last) = (0.0, 0.0, 0, 0.0);
    for (t, d) in events {
        if depth >= 1 {
            speech += t - last;
        }
        if depth >= 2 {
            overlap += t - last;
        }
        depth += d;
        last = t;
    }
    if speech > 0.0 {
        overlap / speech
    } else {
        0.0
    }
}

/// Device recordings plus the noiseless per-speaker images that make them up.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    pub recordings: Vec<Recording>,
    /// `[device][speaker]` image on the device's own clock.
    pub images: Vec<Vec<Vec<f64>>>,
    pub truth: GroundTruth,
}

#[cfg(test)]
fn sinc_window(x: f64) -> f64 {
    if x.abs() >= SINC_HALF_WIDTH as f64 {
        return 0.0;
    }
    let w = 0.5 * (1.0 + (std::f64::consts::PI * x / SINC_HALF_WIDTH as f64).cos());
    let s = if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    };
    s * w
}

/// Windowed-sinc value of `src` at fractional index `p`. Equal to summing
/// `src[i] * sinc_window(p - i)` over the kernel support; the sines follow
/// from `sin(pi (x - 1)) = -sin(pi x)` and the window cosines from a
/// rotation, so each call needs one sine and one sine/cosine pair.
fn interpolate(src: &[f64], p: f64) -> f64 {
    let hw = SINC_HALF_WIDTH as f64;
    let base = p.floor();
    let frac = p - base;
    let base = base as i64;
    let first = base - SINC_HALF_WIDTH + 1;
    let pi = std::f64::consts::PI;
    // x = p - i runs from frac + hw - 1 down to frac - hw.
    let mut sin_px = (pi * frac.min(1.0 - frac)).sin() * if (SINC_HALF_WIDTH - 1) % 2 == 0 { 1.0 } else { -1.0 };
    let (mut ws, mut wc) = (pi * (frac + hw - 1.0) / hw).sin_cos();
    let (ds, dc) = (pi / hw).sin_cos();
    let mut acc = 0.0;
    for j in 0..2 * SINC_HALF_WIDTH {
        let i = first + j;
        let x = frac + hw - 1.0 - j as f64;
        if i >= 0 && (i as usize) < src.len() && x.abs() < hw {
            let sinc = if x.abs() < 1e-12 { 1.0 } else { sin_px / (pi * x) };
            acc += src[i as usize] * sinc * 0.5 * (1.0 + wc);
        }
        sin_px = -sin_px;
        (ws, wc) = (ws * dc - wc * ds, wc * dc + ws * ds);
    }
    acc
}

/// Adds `gain * src(p)` to `out[n]` where `p = (n - n0) * step + p0` is the
/// fractional source index of device sample `n`.
fn mix_resampled(out: &mut [f64], src: &[f64], gain: f64, n0: f64, p0: f64, step: f64) {
    let len = src.len() as f64;
    let hw = SINC_HALF_WIDTH as f64;
    // Device samples whose source position lies within the kernel support.
    let first = ((n0 + (-hw - p0) / step).floor().max(0.0)) as usize;
    let last = (n0 + (len + hw - p0) / step).ceil().min(out.len() as f64 - 1.0);
    if last < first as f64 {
        return;
    }
    let last = last as usize;
    let frac0 = p0 - p0.round();
    let integral = step == 1.0 && frac0.abs() < 1e-9;
    for n in first..=last {
        let p = (n as f64 - n0) * step + p0;
        if integral {
            let i = p.round() as i64;
            if i >= 0 && (i as usize) < src.len() {
                out[n] += gain * src[i as usize];
            }
            continue;
        }
        out[n] += gain * interpolate(src, p);
    }
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = (x.len() + h.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        b.resize(n, Complex64::new(0.0, 0.0));
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|v| v.re / n as f64).collect()
}

fn reverb_tail(spec: &ReverbSpec, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let onset = (spec.onset_s * fs).round() as usize;
    let len = (spec.t60_s * fs).ceil() as usize;
    let mut h = vec![0.0; onset + len];
    for (i, v) in h.iter_mut().enumerate().skip(onset) {
        let t = (i - onset) as f64 / fs;
        *v = rng.sample::<f64, _>(StandardNormal) * (-6.907755 * t / spec.t60_s).exp();
    }
    let energy: f64 = h.iter().map(|v| v * v).sum();
    if energy > 0.0 {
        let scale = (10f64.powf(-spec.drr_db / 10.0) / energy).sqrt();
        for v in &mut h {
            *v *= scale;
        }
    }
    h
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn utterance_sources(scene: &SceneSpec) -> Result<Vec<Vec<f64>>, SimError> {
    let bands = scene.bands();
    let fs = scene.sample_rate;
    scene
        .utterances
        .iter()
        .enumerate()
        .map(|(i, u)| {
            let len = (u.duration_s * fs as f64).round() as usize;
            match &u.source {
                Some(path) => {
                    let rec = read_wav(path)?;
                    if rec.sample_rate != fs {
                        return Err(SimError::Invalid(format!(
                            "{}: sample rate {} differs from the scene's {fs}",
                            path.display(),
                            rec.sample_rate
                        )));
                    }
                    let mut x = rec.samples;
                    x.resize(len, 0.0);
                    Ok(x)
                }
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
                    rng.set_stream(1 + i as u64);
                    Ok(band_noise(&bands[u.speaker], len, fs, &mut rng))
                }
            }
        })
        .collect()
}

/// Renders every device. Device `m` sample `n` observes scene time
/// `n / (fs (1 + drift)) - offset`, and each source arrives after
/// `distance / c` seconds with gain `1 / max(distance, 0.1)`.
pub fn render(scene: &SceneSpec, session_id: &str) -> Result<RenderedScene, SimError> {
    scene.validate()?;
    let fs = scene.sample_rate as f64;
    let k_count = scene.speakers.len();
    let len = (scene.duration_s * fs).round() as usize;
    let sources = utterance_sources(scene)?;
    let mut recordings = Vec::with_capacity(scene.devices.len());
    let mut images = Vec::with_capacity(scene.devices.len());
    for (m, dev) in scene.devices.iter().enumerate() {
        let rate = 1.0 + dev.drift_ppm * 1e-6;
        let mut dev_images = vec![vec![0.0; len]; k_count];
        for (u, src) in scene.utterances.iter().zip(&sources) {
            let d = distance(dev.position, scene.speakers[u.speaker].position);
            let gain = 1.0 / d.max(0.1);
            let arrival = u.start_s + d / SPEED_OF_SOUND;
            // Source index p = (n / (fs rate) - offset - arrival) * fs.
            mix_resampled(
                &mut dev_images[u.speaker],
                src,
                gain,
                0.0,
                -(dev.offset_s + arrival) * fs,
                1.0 / rate,
            );
        }
        if let Some(rv) = &scene.reverb {
            for (k, img) in dev_images.iter_mut().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x5eed_0000);
                rng.set_stream((m * k_count + k) as u64);
                let tail = reverb_tail(rv, scene.sample_rate, &mut rng);
                let wet = convolve_fft(img, &tail);
                for (a, b) in img.iter_mut().zip(wet) {
                    *a += b;
                }
            }
        }
        let mut mix = vec![0.0; len];
        for img in &dev_images {
            for (a, b) in mix.iter_mut().zip(img) {
                *a += b;
            }
        }
        if let Some(db) = scene.noise_db {
            let sigma = 10f64.powf(db / 20.0);
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x0015_e000);
            rng.set_stream(m as u64);
            for v in &mut mix {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
        recordings.push(Recording::new(mix, scene.sample_rate, dev.id.clone())?);
        images.push(dev_images);
    }
    Ok(RenderedScene {
        recordings,
        images,
        truth: GroundTruth::from_scene(scene, session_id),
    })
}

/// Paths written by [`write_session`].
#[derive(Debug, Clone, PartialEq)]
pub struct SessionFiles {
    pub manifest: PathBuf,
    pub reference: PathBuf,
    pub rttm: PathBuf,
    pub mock: PathBuf,
    pub wavs: Vec<PathBuf>,
}

/// Writes one 16-bit WAV per device plus the pipeline input manifest, the
/// reference transcript, the truth RTTM and a mock recognizer manifest.
pub fn write_session(rendered: &RenderedScene, dir: &Path, mock: MockParams) -> Result<SessionFiles, SimError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: std::io::Error| SimError::Io {
            path,
            message: e.to_string(),
        }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut wavs = Vec::with_capacity(rendered.recordings.len());
    let mut devices = Vec::with_capacity(rendered.recordings.len());
    for r in &rendered.recordings {
        let name = format!("{}.wav", r.device_id);
        let path = dir.join(&name);
        write_wav(&path, r)?;
        devices.push(DeviceEntry {
            id: r.device_id.clone(),
            path: name.into(),
        });
        wavs.push(path);
    }
    let truth = &rendered.truth;
    let files = SessionFiles {
        manifest: dir.join("manifest.json"),
        reference: dir.join("reference.json"),
        rttm: dir.join("truth.rttm"),
        mock: dir.join("mock.json"),
        wavs,
    };
    let manifest = InputManifest {
        session_id: truth.session_id.clone(),
        devices,
    };
    std::fs::write(&files.manifest, manifest.to_json()).map_err(io(&files.manifest))?;
    truth.transcript().write(&files.reference).map_err(|e| SimError::Io {
        path: files.reference.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&files.rttm, truth.rttm()).map_err(io(&files.rttm))?;
    std::fs::write(&files.mock, MockManifest::from_truth(truth, mock).to_json()).map_err(io(&files.mock))?;
    Ok(files)
}
