//! Blind correlation-based alignment of recordings to a common interval.
//!
//! Each device is aligned to an anchor by the integer lag that maximizes the
//! linear cross-correlation `sum_n a[n] * x[n + lag]`, with samples outside
//! a recording treated as zero. The correlation is computed in the frequency
//! domain on band-limited (300-3400 Hz by default) signals; restricting the
//! band also removes the mean. Clock drift between devices is not corrected.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::audio::Recording;

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("no recordings to synchronize")]
    Empty,
    #[error("anchor index {anchor} out of range for {devices} devices")]
    BadAnchor { anchor: usize, devices: usize },
    #[error("device {device} has sample rate {found} Hz, anchor has {expected} Hz")]
    RateMismatch {
        device: String,
        found: u32,
        expected: u32,
    },
    #[error("device {0} carries no energy in the correlation band")]
    Silent(String),
    #[error(
        "devices {late} and {early} share no common interval \
         ({late} starts after {early} ends in the anchor timeline)"
    )]
    EmptyOverlap { late: String, early: String },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyncConfig {
    pub anchor: usize,
    /// Search bound in seconds; clamped to what the signal lengths allow.
    pub max_shift_s: f64,
    /// Correlation passband in Hz; `None` correlates the raw signals.
    pub band_hz: Option<(f64, f64)>,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            anchor: 0,
            max_shift_s: 60.0,
            band_hz: Some((300.0, 3400.0)),
        }
    }
}

/// Outcome of one pairwise lag search.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShiftEstimate {
    pub shift: i64,
    pub peak: f64,
    /// Largest correlation more than [`AMBIGUITY_GUARD`] samples from the peak.
    pub runner_up: f64,
    pub ambiguous: bool,
}

/// Lags within this distance of the best one belong to the same peak.
pub const AMBIGUITY_GUARD: i64 = 50;
/// A runner-up above this fraction of the peak marks the estimate ambiguous.
pub const AMBIGUITY_RATIO: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyncResult {
    pub anchor: usize,
    pub shifts: Vec<i64>,
    /// First common sample, 0-based, in the anchor timeline.
    pub n_begin: i64,
    /// Last common sample (inclusive), 0-based, in the anchor timeline.
    pub n_end: i64,
    pub sample_rate: u32,
    pub estimates: Vec<Option<ShiftEstimate>>,
    #[serde(skip)]
    pub aligned: Vec<Vec<f64>>,
}

impl SyncResult {
    pub fn aligned_len(&self) -> usize {
        (self.n_end - self.n_begin + 1) as usize
    }

    /// Anchor-timeline seconds of the first aligned sample.
    pub fn offset_s(&self) -> f64 {
        self.n_begin as f64 / f64::from(self.sample_rate)
    }
}

/// Frequency-domain view of the anchor, reusable across devices.
struct AnchorSpectrum {
    spectrum: Vec<Complex64>,
    len: usize,
    fft_len: usize,
}

fn band_mask(fft_len: usize, sample_rate: u32, band: Option<(f64, f64)>) -> impl Fn(usize) -> bool {
    let nyquist = f64::from(sample_rate) / 2.0;
    let (lo, hi) = band.map_or((0.0, nyquist), |(lo, hi)| (lo, hi.min(nyquist)));
    let raw = band.is_none();
    move |k: usize| {
        let bin = k.min(fft_len - k);
        if raw {
            return true;
        }
        let f = bin as f64 * f64::from(sample_rate) / fft_len as f64;
        bin != 0 && f >= lo && f <= hi
    }
}

fn spectrum(
    x: &[f64],
    fft_len: usize,
    sample_rate: u32,
    band: Option<(f64, f64)>,
    planner: &mut FftPlanner<f64>,
) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(fft_len, Complex64::new(0.0, 0.0));
    planner.plan_fft_forward(fft_len).process(&mut buf);
    let keep = band_mask(fft_len, sample_rate, band);
    for (k, v) in buf.iter_mut().enumerate() {
        if !keep(k) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    buf
}

fn band_energy(s: &[Complex64]) -> f64 {
    s.iter().map(|v| v.norm_sqr()).sum()
}

fn search(
    anchor: &AnchorSpectrum,
    other: &[f64],
    other_id: &str,
    sample_rate: u32,
    max_shift: usize,
    band: Option<(f64, f64)>,
    planner: &mut FftPlanner<f64>,
) -> Result<ShiftEstimate, SyncError> {
    let l = anchor.fft_len;
    let other_spec = spectrum(other, l, sample_rate, band, planner);
    if band_energy(&other_spec) <= 0.0 {
        return Err(SyncError::Silent(other_id.to_string()));
    }
    let mut cross: Vec<Complex64> = anchor
        .spectrum
        .iter()
        .zip(&other_spec)
        .map(|(a, o)| a.conj() * o)
        .collect();
    planner.plan_fft_inverse(l).process(&mut cross);

    // Lags with any overlap span -(len_a - 1) ..= len_o - 1.
    let lo = -(max_shift.min(anchor.len - 1) as i64);
    let hi = max_shift.min(other.len() - 1) as i64;
    let at = |lag: i64| cross[lag.rem_euclid(l as i64) as usize].re / l as f64;

    let mut best = lo;
    let mut peak = at(lo);
    for lag in lo + 1..=hi {
        let c = at(lag);
        if c > peak {
            peak = c;
            best = lag;
        }
    }
    let runner_up = (lo..=hi)
        .filter(|lag| (lag - best).abs() > AMBIGUITY_GUARD)
        .map(at)
        .fold(f64::NEG_INFINITY, f64::max);
    let ambiguous = peak <= 0.0 || runner_up > AMBIGUITY_RATIO * peak;
    Ok(ShiftEstimate {
        shift: best,
        peak,
        runner_up,
        ambiguous,
    })
}

fn anchor_spectrum(
    anchor: &Recording,
    fft_len: usize,
    band: Option<(f64, f64)>,
    planner: &mut FftPlanner<f64>,
) -> Result<AnchorSpectrum, SyncError> {
    let s = spectrum(&anchor.samples, fft_len, anchor.sample_rate, band, planner);
    if band_energy(&s) <= 0.0 {
        return Err(SyncError::Silent(anchor.device_id.clone()));
    }
    Ok(AnchorSpectrum {
        spectrum: s,
        len: anchor.len(),
        fft_len,
    })
}

/// Lag of `other` relative to `anchor`: an event at anchor sample `n` sits at
/// sample `n + shift` of `other`.
pub fn estimate_shift(
    anchor: &Recording,
    other: &Recording,
    max_shift: usize,
    band_hz: Option<(f64, f64)>,
) -> Result<ShiftEstimate, SyncError> {
    if other.sample_rate != anchor.sample_rate {
        return Err(SyncError::RateMismatch {
            device: other.device_id.clone(),
            found: other.sample_rate,
            expected: anchor.sample_rate,
        });
    }
    let fft_len = (anchor.len() + other.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let a = anchor_spectrum(anchor, fft_len, band_hz, &mut planner)?;
    let est = search(
        &a,
        &other.samples,
        &other.device_id,
        anchor.sample_rate,
        max_shift,
        band_hz,
        &mut planner,
    )?;
    if est.ambiguous {
        tracing::warn!(
            device = %other.device_id,
            shift = est.shift,
            ratio = est.runner_up / est.peak,
            "ambiguous correlation peak"
        );
    }
    Ok(est)
}

/// Crops every recording to the interval covered by all devices, given
/// per-device lags against the anchor.
pub fn align_with_shifts(
    recordings: &[Recording],
    anchor: usize,
    shifts: &[i64],
) -> Result<SyncResult, SyncError> {
    if recordings.is_empty() {
        return Err(SyncError::Empty);
    }
    assert_eq!(recordings.len(), shifts.len(), "one shift per recording");
    let (late, n_begin) = shifts
        .iter()
        .enumerate()
        .map(|(m, &d)| (m, -d))
        .max_by_key(|&(m, v)| (v, std::cmp::Reverse(m)))
        .expect("non-empty");
    let (early, n_end) = recordings
        .iter()
        .zip(shifts)
        .enumerate()
        .map(|(m, (r, &d))| (m, r.len() as i64 - 1 - d))
        .min_by_key(|&(m, v)| (v, m))
        .expect("non-empty");
    if n_begin > n_end {
        return Err(SyncError::EmptyOverlap {
            late: recordings[late].device_id.clone(),
            early: recordings[early].device_id.clone(),
        });
    }
    let len = (n_end - n_begin + 1) as usize;
    let aligned = recordings
        .iter()
        .zip(shifts)
        .map(|(r, &d)| {
            let start = (n_begin + d) as usize;
            r.samples[start..start + len].to_vec()
        })
        .collect();
    Ok(SyncResult {
        anchor,
        shifts: shifts.to_vec(),
        n_begin,
        n_end,
        sample_rate: recordings[anchor].sample_rate,
        estimates: vec![None; recordings.len()],
        aligned,
    })
}

/// Estimates every device's lag against the anchor and crops all devices to
/// their common interval.
pub fn synchronize(recordings: &[Recording], config: &SyncConfig) -> Result<SyncResult, SyncError> {
    if recordings.is_empty() {
        return Err(SyncError::Empty);
    }
    let anchor = recordings.get(config.anchor).ok_or(SyncError::BadAnchor {
        anchor: config.anchor,
        devices: recordings.len(),
    })?;
    let sr = anchor.sample_rate;
    if let Some(bad) = recordings.iter().find(|r| r.sample_rate != sr) {
        return Err(SyncError::RateMismatch {
            device: bad.device_id.clone(),
            found: bad.sample_rate,
            expected: sr,
        });
    }
    let max_shift = (config.max_shift_s * f64::from(sr)).max(0.0) as usize;
    let mut estimates = vec![None; recordings.len()];
    if recordings.len() > 1 {
        let longest_other = recordings.iter().map(Recording::len).max().unwrap_or(1);
        let fft_len = (anchor.len() + longest_other - 1).next_power_of_two();
        let a = anchor_spectrum(anchor, fft_len, config.band_hz, &mut FftPlanner::new())?;
        let found: Vec<Result<Option<ShiftEstimate>, SyncError>> = recordings
            .par_iter()
            .enumerate()
            .map(|(m, r)| {
                if m == config.anchor {
                    return Ok(None);
                }
                search(
                    &a,
                    &r.samples,
                    &r.device_id,
                    sr,
                    max_shift,
                    config.band_hz,
                    &mut FftPlanner::new(),
                )
                .map(Some)
            })
            .collect();
        for (m, est) in found.into_iter().enumerate() {
            let est = est?;
            if let Some(e) = &est {
                if e.ambiguous {
                    tracing::warn!(
                        device = %recordings[m].device_id,
                        shift = e.shift,
                        ratio = e.runner_up / e.peak,
                        "ambiguous correlation peak"
                    );
                }
            }
            estimates[m] = est;
        }
    }
    let shifts: Vec<i64> = estimates
        .iter()
        .map(|e| e.map_or(0, |e| e.shift))
        .collect();
    let mut result = align_with_shifts(recordings, config.anchor, &shifts)?;
    result.estimates = estimates;
    Ok(result)
}
