//! Utterance-wise dereverberation, guided source separation and beamforming.

mod beamform;
mod cacgmm;
pub mod linalg;
mod wpe;

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{s, Array2, Array3};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

pub use beamform::{ban_gain, estimate_covariances, mvdr, select_reference, Beamformer, CovariancePair};
pub use cacgmm::{
    em_e_step, em_m_step, run_gss, CacgmmState, GssOutput, Guide, Observations, PosteriorTensor, ALPHA_FLOOR,
};
pub use wpe::{apply_filter, wpe_bin, wpe_dereverberate, wpe_values, WpeConfig, WpeFilters};

use crate::audio::{overlap_add, AudioError, SpectrogramTensor, StftConfig};
use crate::diarize::{ActivityMatrix, Utterance};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("{dim}x{dim} matrix is singular beyond the diagonal loading budget")]
    Singular { dim: usize },
    #[error("{frames} frames cannot fit a predictor needing more than {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("target speaker {target} has no posterior mass in the utterance")]
    TargetInactive { target: usize },
    #[error("guide covers {guide} frames but the spectrogram has {frames}")]
    GuideMismatch { guide: usize, frames: usize },
    #[error("reference microphone {reference} out of range for {channels} channels")]
    Reference { reference: usize, channels: usize },
    #[error("utterance frames {start}..{end} outside a {frames}-frame session")]
    Interval { start: usize, end: usize, frames: usize },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnhanceConfig {
    /// `None` skips dereverberation.
    pub wpe: Option<WpeConfig>,
    pub iterations: usize,
    pub context_s: f64,
    /// Fixed reference microphone; chosen per utterance when unset.
    pub reference: Option<usize>,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            wpe: Some(WpeConfig::default()),
            iterations: 10,
            context_s: 15.0,
            reference: None,
        }
    }
}

/// Frames on either side of the utterance kept for synthesis so the
/// overlap-add is complete over the utterance itself.
const SYNTHESIS_MARGIN: usize = 2;

/// Everything needed to reproduce the linear enhancement of one utterance on
/// any signal sharing the session geometry.
#[derive(Debug, Clone)]
pub struct EnhancementPlan {
    pub utterance: Utterance,
    /// Context-extended frame window the filters were estimated on.
    pub window: Range<usize>,
    pub wpe: Option<WpeFilters>,
    pub beamformer: Beamformer,
    pub stft: StftConfig,
}

impl EnhancementPlan {
    fn dereverb(&self, values: &Array3<Complex64>) -> Array3<Complex64> {
        let w = values.slice(s![.., self.window.clone(), ..]).to_owned();
        match &self.wpe {
            Some(filters) => filters.apply(&w),
            None => w,
        }
    }

    /// Beamformer output `(frame, bin)` over `frames` (session indices),
    /// which must lie inside the window.
    fn beamform_frames(&self, windowed: &Array3<Complex64>, frames: Range<usize>) -> Array2<Complex64> {
        let lo = frames.start - self.window.start;
        let hi = frames.end - self.window.start;
        self.beamformer.apply(windowed.slice(s![.., lo..hi, ..]))
    }

    /// Enhanced STFT of a session-geometry signal over the utterance frames.
    pub fn process(&self, values: &Array3<Complex64>) -> Array2<Complex64> {
        let windowed = self.dereverb(values);
        self.beamform_frames(&windowed, self.utterance.start..self.utterance.end)
    }

    fn synthesize(&self, windowed: &Array3<Complex64>) -> Result<Vec<f64>, EnhanceError> {
        let u = self.utterance;
        let a = u.start.saturating_sub(SYNTHESIS_MARGIN).max(self.window.start);
        let b = (u.end + SYNTHESIS_MARGIN).min(self.window.end);
        let z = self.beamform_frames(windowed, a..b);
        let padded = overlap_add(z.view(), self.stft)?;
        let offset = (u.start - a) * self.stft.shift + self.stft.frame_len / 2;
        let len = u.len() * self.stft.shift;
        let mut out = vec![0.0; len];
        let avail = padded.len().saturating_sub(offset).min(len);
        out[..avail].copy_from_slice(&padded[offset..offset + avail]);
        Ok(out)
    }

    /// Time-domain enhancement of a session-geometry signal.
    pub fn render(&self, values: &Array3<Complex64>) -> Result<Vec<f64>, EnhanceError> {
        self.synthesize(&self.dereverb(values))
    }
}

#[derive(Debug, Clone)]
pub struct EnhancedUtterance {
    pub utterance: Utterance,
    /// `utterance.len() * shift` samples starting at `start_sample` of the
    /// aligned timeline.
    pub samples: Vec<f64>,
    pub start_sample: usize,
    pub reference: usize,
    /// Posteriors cropped to the utterance frames.
    pub posteriors: PosteriorTensor,
    pub loglik: Vec<f64>,
    pub plan: EnhancementPlan,
}

/// Context-extended frame window of an utterance, clipped to the session.
pub fn context_window(utt: &Utterance, context_frames: usize, frames: usize) -> Range<usize> {
    utt.start.saturating_sub(context_frames)..(utt.end + context_frames).min(frames)
}

fn context_frames(cfg: &EnhanceConfig, spec: &SpectrogramTensor) -> usize {
    (cfg.context_s / spec.frame_shift_s()).round().max(0.0) as usize
}

fn crop_guide(guide: &ActivityMatrix, window: &Range<usize>) -> ActivityMatrix {
    ActivityMatrix {
        rows: guide.rows.iter().map(|r| r[window.clone()].to_vec()).collect(),
        slot_duration_s: guide.slot_duration_s,
    }
}

fn check(spec: &SpectrogramTensor, guide: &ActivityMatrix, utt: &Utterance) -> Result<(), EnhanceError> {
    if guide.columns() != spec.frames() {
        return Err(EnhanceError::GuideMismatch {
            guide: guide.columns(),
            frames: spec.frames(),
        });
    }
    if utt.is_empty() || utt.end > spec.frames() {
        return Err(EnhanceError::Interval {
            start: utt.start,
            end: utt.end,
            frames: spec.frames(),
        });
    }
    if utt.speaker >= guide.speakers() {
        return Err(EnhanceError::TargetInactive { target: utt.speaker });
    }
    Ok(())
}

type Dereverbed = (Array3<Complex64>, Option<WpeFilters>);

fn dereverb_window(
    spec: &SpectrogramTensor,
    window: &Range<usize>,
    cfg: &EnhanceConfig,
) -> Result<Dereverbed, EnhanceError> {
    let values = spec.values.slice(s![.., window.clone(), ..]).to_owned();
    match &cfg.wpe {
        Some(w) if w.taps > 0 => {
            let (out, filters) = wpe_values(&values, w)?;
            Ok((out, Some(filters)))
        }
        _ => Ok((values, None)),
    }
}

fn enhance_in_window(
    spec: &SpectrogramTensor,
    guide: &ActivityMatrix,
    utt: &Utterance,
    window: Range<usize>,
    dereverbed: &Dereverbed,
    cfg: &EnhanceConfig,
) -> Result<EnhancedUtterance, EnhanceError> {
    let (values, filters) = dereverbed;
    let g = Guide::from_activity(&crop_guide(guide, &window));
    let obs = Observations::from_values(values.view());
    let gss = run_gss(&obs, &g, cfg.iterations)?;
    let lo = utt.start - window.start;
    let hi = utt.end - window.start;
    let posteriors = gss.posteriors.crop(lo, hi);
    let cov = estimate_covariances(values.slice(s![.., lo..hi, ..]), &posteriors, utt.speaker)?;
    let reference = match cfg.reference {
        Some(r) if r >= spec.channels() => {
            return Err(EnhanceError::Reference {
                reference: r,
                channels: spec.channels(),
            })
        }
        Some(r) => r,
        None => select_reference(&cov),
    };
    let plan = EnhancementPlan {
        utterance: *utt,
        window,
        wpe: filters.clone(),
        beamformer: Beamformer::design(&cov, reference)?,
        stft: spec.config,
    };
    let samples = plan.synthesize(values)?;
    Ok(EnhancedUtterance {
        utterance: *utt,
        samples,
        start_sample: utt.start * spec.config.shift,
        reference,
        posteriors,
        loglik: gss.loglik,
        plan,
    })
}

/// Enhances one utterance from the session spectrogram and the frame-rate
/// guide (speaker rows plus an always-on noise row).
pub fn enhance_utterance(
    spec: &SpectrogramTensor,
    guide: &ActivityMatrix,
    utt: &Utterance,
    cfg: &EnhanceConfig,
) -> Result<EnhancedUtterance, EnhanceError> {
    check(spec, guide, utt)?;
    let window = context_window(utt, context_frames(cfg, spec), spec.frames());
    let dereverbed = dereverb_window(spec, &window, cfg)?;
    enhance_in_window(spec, guide, utt, window, &dereverbed, cfg)
}

/// Enhances every utterance; dereverberation is shared between utterances
/// with identical context windows. Failures are reported per utterance.
pub fn enhance_session(
    spec: &SpectrogramTensor,
    guide: &ActivityMatrix,
    utterances: &[Utterance],
    cfg: &EnhanceConfig,
) -> Vec<Result<EnhancedUtterance, EnhanceError>> {
    let ctx = context_frames(cfg, spec);
    let windows: Vec<Range<usize>> = utterances
        .iter()
        .map(|u| context_window(u, ctx, spec.frames()))
        .collect();
    let mut distinct: BTreeMap<(usize, usize), Option<Result<Dereverbed, String>>> = BTreeMap::new();
    for (u, w) in utterances.iter().zip(&windows) {
        if check(spec, guide, u).is_ok() {
            distinct.insert((w.start, w.end), None);
        }
    }
    let keys: Vec<(usize, usize)> = distinct.keys().copied().collect();
    let computed: Vec<Result<Dereverbed, String>> = keys
        .par_iter()
        .map(|&(a, b)| dereverb_window(spec, &(a..b), cfg).map_err(|e| e.to_string()))
        .collect();
    for (k, v) in keys.into_iter().zip(computed) {
        distinct.insert(k, Some(v));
    }
    utterances
        .par_iter()
        .zip(windows.par_iter())
        .map(|(u, w)| {
            check(spec, guide, u)?;
            match &distinct[&(w.start, w.end)] {
                Some(Ok(d)) => enhance_in_window(spec, guide, u, w.clone(), d, cfg),
                // Recompute to surface the typed error for this utterance.
                _ => dereverb_window(spec, w, cfg).and_then(|d| enhance_in_window(spec, guide, u, w.clone(), &d, cfg)),
            }
        })
        .collect()
}

/// Unprocessed audio of one utterance from a single channel: `reference`
/// when given, otherwise the channel with the most energy over the interval.
pub fn passthrough_utterance(
    aligned: &[Vec<f64>],
    utt: &Utterance,
    shift: usize,
    reference: Option<usize>,
) -> (Vec<f64>, usize) {
    let a = utt.start * shift;
    let b = utt.end * shift;
    let energy = |ch: &Vec<f64>| -> f64 {
        ch[a.min(ch.len())..b.min(ch.len())].iter().map(|v| v * v).sum()
    };
    let channel = reference.unwrap_or_else(|| {
        (0..aligned.len())
            .fold((0, f64::NEG_INFINITY), |best, m| {
                let e = energy(&aligned[m]);
                if e > best.1 {
                    (m, e)
                } else {
                    best
                }
            })
            .0
    });
    let ch = &aligned[channel];
    let mut out = vec![0.0; b - a];
    let end = b.min(ch.len());
    if a < end {
        out[..end - a].copy_from_slice(&ch[a..end]);
    }
    (out, channel)
}
