//! Centered STFT with periodic Hann analysis/synthesis windows.
//!
//! Frames are centered: the signal is reflect-padded by `frame_len / 2` on
//! both sides, so frame `t` is centered on sample `t * shift` of the
//! original signal. The inverse divides the overlap-added synthesis by the
//! summed squared window, which reconstructs exactly wherever that sum is
//! non-zero.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, ArrayView2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use super::{AudioError, Recording};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftConfig {
    pub frame_len: usize,
    pub shift: usize,
}

impl StftConfig {
    pub fn new(frame_len: usize, shift: usize) -> Result<Self, AudioError> {
        if frame_len < 2 || shift == 0 || shift > frame_len || frame_len % 2 != 0 {
            return Err(AudioError::Geometry(format!(
                "frame_len={frame_len} shift={shift}: need even frame_len >= shift > 0"
            )));
        }
        Ok(Self { frame_len, shift })
    }

    pub fn from_ms(frame_len_ms: f64, shift_ms: f64, sample_rate: u32) -> Result<Self, AudioError> {
        let to_samples = |ms: f64| (ms * f64::from(sample_rate) / 1000.0).round() as usize;
        Self::new(to_samples(frame_len_ms), to_samples(shift_ms))
    }

    /// 64 ms frames with a 16 ms shift.
    pub fn default_for(sample_rate: u32) -> Self {
        Self::from_ms(64.0, 16.0, sample_rate).expect("valid default geometry")
    }

    pub fn fft_size(&self) -> usize {
        self.frame_len
    }

    pub fn bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Frame count for a signal of `len` samples (centered framing).
    pub fn frame_count(&self, len: usize) -> usize {
        let padded = len + 2 * (self.frame_len / 2);
        (padded - self.frame_len) / self.shift + 1
    }
}

/// Single-channel spectrogram, `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<Complex64>,
    pub config: StftConfig,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }
}

/// Multichannel spectrogram indexed `(channel, frame, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramTensor {
    pub values: Array3<Complex64>,
    pub config: StftConfig,
    pub signal_len: usize,
    pub sample_rate: u32,
}

impl SpectrogramTensor {
    pub fn channels(&self) -> usize {
        self.values.dim().0
    }

    pub fn frames(&self) -> usize {
        self.values.dim().1
    }

    pub fn bins(&self) -> usize {
        self.values.dim().2
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.config.shift as f64 / f64::from(self.sample_rate)
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn reflect_index(pos: isize, len: usize) -> usize {
    let n = len as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut p = pos.rem_euclid(period);
    if p >= n {
        p = period - p;
    }
    p as usize
}

fn stft_samples(
    x: &[f64],
    sample_rate: u32,
    config: StftConfig,
    planner: &mut FftPlanner<f64>,
) -> Result<Spectrogram, AudioError> {
    let n = config.frame_len;
    if x.len() < n {
        return Err(AudioError::TooShort {
            len: x.len(),
            frame_len: n,
        });
    }
    let half = n / 2;
    let frames = config.frame_count(x.len());
    let bins = config.bins();
    let window = hann_periodic(n);
    let fft = planner.plan_fft_forward(n);
    let mut values = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = (t * config.shift) as isize - half as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = x[reflect_index(start + i as isize, x.len())];
            *slot = Complex64::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (f, v) in values.row_mut(t).iter_mut().enumerate() {
            *v = buf[f];
        }
    }
    Ok(Spectrogram {
        values,
        config,
        signal_len: x.len(),
        sample_rate,
    })
}

pub fn stft(x: &Recording, config: StftConfig) -> Result<Spectrogram, AudioError> {
    stft_samples(&x.samples, x.sample_rate, config, &mut FftPlanner::new())
}

/// STFT of equal-length channels into one tensor.
pub fn stft_multichannel(
    channels: &[Vec<f64>],
    sample_rate: u32,
    config: StftConfig,
) -> Result<SpectrogramTensor, AudioError> {
    let first = channels
        .first()
        .ok_or_else(|| AudioError::Invalid("no channels".into()))?;
    if channels.iter().any(|c| c.len() != first.len()) {
        return Err(AudioError::Geometry("channels differ in length".into()));
    }
    let mut planner = FftPlanner::new();
    let frames = config.frame_count(first.len());
    let mut values = Array3::zeros((channels.len(), frames, config.bins()));
    for (m, ch) in channels.iter().enumerate() {
        let spec = stft_samples(ch, sample_rate, config, &mut planner)?;
        values
            .index_axis_mut(ndarray::Axis(0), m)
            .assign(&spec.values);
    }
    Ok(SpectrogramTensor {
        values,
        config,
        signal_len: first.len(),
        sample_rate,
    })
}

/// Windowed overlap-add of `frames x bins` one-sided spectra.
///
/// Returns the normalized buffer on the padded time axis: sample `i` lies at
/// original position `i - frame_len / 2`. Positions where the summed squared
/// window vanishes are zero.
pub fn overlap_add(values: ArrayView2<'_, Complex64>, config: StftConfig) -> Result<Vec<f64>, AudioError> {
    let n = config.frame_len;
    if values.ncols() != config.bins() {
        return Err(AudioError::Geometry(format!(
            "{} bins, expected {} for frame length {n}",
            values.ncols(),
            config.bins()
        )));
    }
    let frames = values.nrows();
    if frames == 0 {
        return Ok(Vec::new());
    }
    let window = hann_periodic(n);
    let total = (frames - 1) * config.shift + n;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let bins = config.bins();
    for t in 0..frames {
        let row = values.row(t);
        for (b, v) in buf.iter_mut().zip(row.iter()) {
            *b = *v;
        }
        for k in 1..n - bins + 1 {
            buf[n - k] = row[k].conj();
        }
        // DC and Nyquist bins of a real signal are real.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        ifft.process(&mut buf);
        let start = t * config.shift;
        for i in 0..n {
            acc[start + i] += buf[i].re / n as f64 * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let floor = 1e-10;
    Ok(acc
        .iter()
        .zip(&norm)
        .map(|(a, w)| if *w > floor { a / w } else { 0.0 })
        .collect())
}

/// Inverse STFT back to the original signal length.
pub fn istft(spec: &Spectrogram) -> Result<Recording, AudioError> {
    let expected = spec.config.frame_count(spec.signal_len);
    if spec.frames() != expected {
        return Err(AudioError::Geometry(format!(
            "{} frames cannot come from a {}-sample signal ({expected} expected)",
            spec.frames(),
            spec.signal_len
        )));
    }
    let padded = overlap_add(spec.values.view(), spec.config)?;
    let half = spec.config.frame_len / 2;
    let samples = padded[half..half + spec.signal_len].to_vec();
    Recording::new(samples, spec.sample_rate, "istft")
}
