//! Band-limited modulated noise standing in for speech.
//!
//! Each speaker owns an interleaved subset of log-spaced bands, so speakers
//! are spectrally disjoint and a spectral-statistics embedding can tell them
//! apart.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{num_complex::Complex64, FftPlanner};

pub const BAND_COUNT: usize = 16;
pub const LOW_HZ: f64 = 200.0;
pub const HIGH_HZ: f64 = 7000.0;
/// RMS of a generated surrogate.
pub const LEVEL: f64 = 0.1;

pub type Band = (f64, f64);

/// `BAND_COUNT` log-spaced bands over `LOW_HZ..HIGH_HZ` (capped below
/// Nyquist); speaker `k` gets bands `j` with `j % speakers == k`.
pub fn interleaved_bands(speakers: usize, sample_rate: u32) -> Vec<Vec<Band>> {
    let speakers = speakers.max(1);
    let high = HIGH_HZ.min(0.45 * sample_rate as f64);
    let ratio = (high / LOW_HZ).powf(1.0 / BAND_COUNT as f64);
    let mut out = vec![Vec::new(); speakers];
    for j in 0..BAND_COUNT {
        let lo = LOW_HZ * ratio.powi(j as i32);
        out[j % speakers].push((lo, lo * ratio));
    }
    out
}

/// Gaussian noise restricted to `bands`, amplitude-modulated at a syllabic
/// rate and scaled to `LEVEL` RMS.
pub fn band_noise(bands: &[Band], len: usize, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    if len == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = (0..len)
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let df = sample_rate as f64 / len as f64;
    for (i, v) in buf.iter_mut().enumerate() {
        let f = i.min(len - i) as f64 * df;
        if !bands.iter().any(|&(lo, hi)| f >= lo && f < hi) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let rate: f64 = rng.gen_range(3.0..5.0);
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut x: Vec<f64> = buf
        .iter()
        .enumerate()
        .map(|(n, v)| {
            let t = n as f64 / sample_rate as f64;
            v.re * (0.6 + 0.4 * (std::f64::consts::TAU * rate * t + phase).sin())
        })
        .collect();
    let rms = crate::audio::rms(&x);
    if rms > 0.0 {
        for v in &mut x {
            *v *= LEVEL / rms;
        }
    }
    x
}
