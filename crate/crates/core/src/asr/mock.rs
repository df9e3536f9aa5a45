//! Deterministic stand-in recognizer driven by planted ground truth.
//!
//! An utterance is "heard" when the audio interval covers enough of it and
//! its speaker's frequency bands are not buried under other speakers'
//! bands. Optionally characters are corrupted with a probability that grows
//! as that band signal-to-interference ratio falls, seeded from the audio
//! bytes so identical audio always yields identical text.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AsrError, Recognizer, UtteranceAudio};
use crate::audio::quantize;
use crate::sim::{surrogate::Band, GroundTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUtterance {
    pub speaker: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockParams {
    /// Audio below this RMS yields an empty transcript.
    pub silence_rms: f64,
    /// Fraction of a planted utterance the interval must cover.
    pub min_coverage: f64,
    /// Band SIR below which a planted utterance is inaudible.
    pub min_sir_db: f64,
    /// Substitute characters with probability `1 / (1 + SIR)`.
    pub corrupt: bool,
}

impl Default for MockParams {
    fn default() -> Self {
        Self {
            silence_rms: 1e-3,
            min_coverage: 0.5,
            min_sir_db: -10.0,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockManifest {
    /// Per-speaker frequency bands in Hz.
    pub bands: Vec<Vec<Band>>,
    /// Planted utterances on the session timeline.
    pub utterances: Vec<PlantedUtterance>,
    #[serde(default)]
    pub params: MockParams,
}

impl MockManifest {
    pub fn from_truth(truth: &GroundTruth, params: MockParams) -> Self {
        Self {
            bands: truth.bands.clone(),
            utterances: truth
                .utterances
                .iter()
                .map(|u| PlantedUtterance {
                    speaker: u.speaker,
                    start_s: u.start_s,
                    end_s: u.end_s,
                    text: u.text.clone(),
                })
                .collect(),
            params,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, AsrError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AsrError::Manifest(format!("{}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| AsrError::Manifest(format!("{}: {e}", path.display())))?;
        if m.utterances.iter().any(|u| u.speaker >= m.bands.len()) {
            return Err(AsrError::Manifest("utterance speaker without bands".into()));
        }
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Energy in `target`'s bands over energy in every other speaker's bands.
pub fn band_sir_db(samples: &[f64], sample_rate: u32, bands: &[Vec<Band>], target: usize) -> f64 {
    let n = samples.len();
    if n == 0 {
        return f64::NEG_INFINITY;
    }
    let mut buf: Vec<Complex64> = samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let df = sample_rate as f64 / n as f64;
    let mut own = 0.0;
    let mut other = 0.0;
    for (i, v) in buf.iter().enumerate().take(n / 2 + 1) {
        let f = i as f64 * df;
        for (k, b) in bands.iter().enumerate() {
            if b.iter().any(|&(lo, hi)| f >= lo && f < hi) {
                if k == target {
                    own += v.norm_sqr();
                } else {
                    other += v.norm_sqr();
                }
            }
        }
    }
    10.0 * (own.max(1e-300) / other.max(1e-300)).log10()
}

#[derive(Debug, Clone)]
pub struct MockRecognizer {
    pub manifest: MockManifest,
}

impl MockRecognizer {
    pub fn new(manifest: MockManifest) -> Self {
        Self { manifest }
    }

    fn audio_seed(samples: &[f64]) -> [u8; 32] {
        let mut h = Sha256::new();
        for &v in samples {
            h.update(quantize(v).to_le_bytes());
        }
        h.finalize().into()
    }
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn corrupt(text: &str, p: f64, rng: &mut impl Rng) -> String {
    text.chars()
        .map(|c| {
            if c.is_whitespace() || !rng.gen_bool(p.clamp(0.0, 1.0)) {
                return c;
            }
            loop {
                let r = ALPHABET[rng.gen_range(0..ALPHABET.len())] as char;
                if r != c {
                    return r;
                }
            }
        })
        .collect()
}

impl Recognizer for MockRecognizer {
    fn recognize(&self, audio: &UtteranceAudio) -> Result<String, AsrError> {
        let p = &self.manifest.params;
        if crate::audio::rms(&audio.samples) < p.silence_rms {
            return Ok(String::new());
        }
        let sr = audio.sample_rate as f64;
        let (a, b) = (audio.meta.start_s, audio.meta.end_s);
        let mut heard: Vec<(&PlantedUtterance, f64)> = Vec::new();
        for u in &self.manifest.utterances {
            let covered = (b.min(u.end_s) - a.max(u.start_s)).max(0.0);
            if covered < p.min_coverage * (u.end_s - u.start_s) {
                continue;
            }
            let i0 = (((u.start_s - a) * sr).round().max(0.0) as usize).min(audio.samples.len());
            let i1 = (((u.end_s - a) * sr).round().max(0.0) as usize).min(audio.samples.len());
            let sir = band_sir_db(&audio.samples[i0..i1], audio.sample_rate, &self.manifest.bands, u.speaker);
            if sir >= p.min_sir_db {
                heard.push((u, sir));
            }
        }
        heard.sort_by(|x, y| x.0.start_s.total_cmp(&y.0.start_s));
        let mut rng = ChaCha8Rng::from_seed(Self::audio_seed(&audio.samples));
        let texts: Vec<String> = heard
            .iter()
            .map(|(u, sir)| {
                if p.corrupt {
                    let lin = 10f64.powf(sir / 10.0);
                    corrupt(&u.text, 1.0 / (1.0 + lin), &mut rng)
                } else {
                    u.text.clone()
                }
            })
            .collect();
        Ok(texts.join(" "))
    }

    fn describe(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.manifest.to_json());
        format!("mock:{}", hex::encode(h.finalize()))
    }
}
