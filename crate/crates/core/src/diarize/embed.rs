//! Segment embeddings.
//!
//! [`SegmentEmbedder`] is the seam for a trained speaker-embedding extractor.
//! The built-in [`SpectralStatsEmbedder`] is training-free: per-band log-mel
//! means (level-normalized across bands) and standard deviations.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::DiarizeError;

pub trait SegmentEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, segment: &[f64]) -> Result<Vec<f64>, DiarizeError>;
}

#[derive(Debug, Clone)]
pub struct SpectralStatsEmbedder {
    fft_size: usize,
    hop: usize,
    filters: Vec<Vec<(usize, f64)>>,
    window: Vec<f64>,
    /// Band energies below this fraction of the loudest band are clamped to it.
    dynamic_range: f64,
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters as sparse `(bin, weight)` lists.
pub fn mel_filterbank(
    n_mels: usize,
    fft_size: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> Vec<Vec<(usize, f64)>> {
    let bins = fft_size / 2 + 1;
    let bin_hz = f64::from(sample_rate) / fft_size as f64;
    let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|b| {
            let (left, center, right) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut taps: Vec<(usize, f64)> = (0..bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > left && f <= center {
                        (f - left) / (center - left)
                    } else if f > center && f < right {
                        (right - f) / (right - center)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            if taps.is_empty() {
                // Narrower than one bin: take the nearest bin.
                let k = ((center / bin_hz).round() as usize).min(bins - 1);
                taps.push((k, 1.0));
            }
            taps
        })
        .collect()
}

impl SpectralStatsEmbedder {
    pub const DEFAULT_BANDS: usize = 40;

    pub fn new(sample_rate: u32) -> Self {
        Self::with_bands(sample_rate, Self::DEFAULT_BANDS)
    }

    pub fn with_bands(sample_rate: u32, n_mels: usize) -> Self {
        let fft_size = (f64::from(sample_rate) * 0.032).round() as usize;
        let fft_size = fft_size.max(16);
        let window = (0..fft_size)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / fft_size as f64).cos())
            .collect();
        Self {
            fft_size,
            hop: fft_size / 2,
            filters: mel_filterbank(
                n_mels,
                fft_size,
                sample_rate,
                50.0,
                f64::from(sample_rate) / 2.0,
            ),
            window,
            dynamic_range: 1e-3,
        }
    }

    fn band_energies(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.fft_size;
        let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let frames = if x.len() < n { 1 } else { (x.len() - n) / self.hop + 1 };
        (0..frames)
            .map(|t| {
                let start = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    let s = x.get(start + i).copied().unwrap_or(0.0);
                    *b = Complex64::new(s * self.window[i], 0.0);
                }
                fft.process(&mut buf);
                self.filters
                    .iter()
                    .map(|taps| taps.iter().map(|&(k, w)| w * buf[k].norm_sqr()).sum())
                    .collect()
            })
            .collect()
    }
}

impl SegmentEmbedder for SpectralStatsEmbedder {
    fn dim(&self) -> usize {
        2 * self.filters.len()
    }

    fn embed(&self, segment: &[f64]) -> Result<Vec<f64>, DiarizeError> {
        let (lo, hi) = segment
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if segment.is_empty() || hi - lo < 1e-12 {
            return Err(DiarizeError::DegenerateSegment);
        }
        let energies = self.band_energies(segment);
        let bands = self.filters.len();
        let frames = energies.len() as f64;
        let band_means: Vec<f64> = (0..bands)
            .map(|b| energies.iter().map(|e| e[b]).sum::<f64>() / frames)
            .collect();
        let loudest = band_means.iter().cloned().fold(0.0, f64::max);
        if loudest <= 0.0 {
            return Err(DiarizeError::DegenerateSegment);
        }
        let floor = loudest * self.dynamic_range;
        let logs: Vec<Vec<f64>> = energies
            .iter()
            .map(|e| e.iter().map(|v| (v + floor).ln()).collect())
            .collect();
        let mut means: Vec<f64> = (0..bands)
            .map(|b| logs.iter().map(|l| l[b]).sum::<f64>() / frames)
            .collect();
        let stds: Vec<f64> = (0..bands)
            .map(|b| {
                let m = means[b];
                (logs.iter().map(|l| (l[b] - m).powi(2)).sum::<f64>() / frames).sqrt()
            })
            .collect();
        let level = means.iter().sum::<f64>() / bands as f64;
        for m in &mut means {
            *m -= level;
        }
        means.extend(stds);
        Ok(means)
    }
}

/// Externally computed embeddings indexed `[device][slot]`; `None` marks
/// segments without an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedEmbeddings {
    pub dim: usize,
    pub values: Vec<Vec<Option<Vec<f64>>>>,
}

/// Outcome of session-level normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedEmbeddings {
    pub values: Vec<Option<Vec<f64>>>,
    /// Indices that were present but collapsed to zero after centering.
    pub dropped: Vec<usize>,
}

/// Subtracts the mean over all present embeddings and scales each to unit
/// norm; vectors that vanish after centering are dropped.
pub fn normalize_embeddings(embeddings: &[Option<Vec<f64>>]) -> NormalizedEmbeddings {
    let present: Vec<&Vec<f64>> = embeddings.iter().flatten().collect();
    let Some(first) = present.first() else {
        return NormalizedEmbeddings {
            values: vec![None; embeddings.len()],
            dropped: Vec::new(),
        };
    };
    let d = first.len();
    let mut mean = vec![0.0; d];
    for e in &present {
        for (m, v) in mean.iter_mut().zip(e.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= present.len() as f64;
    }
    let scale = present
        .iter()
        .flat_map(|e| e.iter())
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut dropped = Vec::new();
    let values = embeddings
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let e = e.as_ref()?;
            let centered: Vec<f64> = e.iter().zip(&mean).map(|(v, m)| v - m).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-12 * scale {
                dropped.push(i);
                return None;
            }
            Some(centered.into_iter().map(|v| v / norm).collect())
        })
        .collect();
    NormalizedEmbeddings { values, dropped }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::surrogate::{band_noise, interleaved_bands};
    use rand::SeedableRng;

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    #[test]
    fn deterministic_and_shaped() {
        let e = SpectralStatsEmbedder::new(16000);
        assert_eq!(e.dim(), 2 * SpectralStatsEmbedder::DEFAULT_BANDS);
        let x: Vec<f64> = (0..24000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect();
        let a = e.embed(&x).unwrap();
        assert_eq!(a.len(), 2 * SpectralStatsEmbedder::DEFAULT_BANDS);
        assert_eq!(a, e.embed(&x).unwrap());
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn constant_signal_is_degenerate() {
        let e = SpectralStatsEmbedder::new(16000);
        assert!(matches!(e.embed(&[0.3; 24000]), Err(DiarizeError::DegenerateSegment)));
        assert!(matches!(e.embed(&[0.0; 24000]), Err(DiarizeError::DegenerateSegment)));
    }

    #[test]
    fn disjoint_band_speakers_separate() {
        let e = SpectralStatsEmbedder::new(16000);
        let bands = interleaved_bands(2, 16000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut clip = |k: usize, gain: f64| -> Vec<f64> {
            band_noise(&bands[k], 24000, 16000, &mut rng)
                .into_iter()
                .map(|v| v * gain)
                .collect()
        };
        let a1 = e.embed(&clip(0, 1.0)).unwrap();
        let a2 = e.embed(&clip(0, 0.2)).unwrap();
        let b1 = e.embed(&clip(1, 1.0)).unwrap();
        let b2 = e.embed(&clip(1, 0.5)).unwrap();
        let within = cosine(&a1, &a2).min(cosine(&b1, &b2));
        let across = cosine(&a1, &b1)
            .max(cosine(&a1, &b2))
            .max(cosine(&a2, &b1))
            .max(cosine(&a2, &b2));
        assert!(across < within, "across {across} within {within}");
    }

    #[test]
    fn single_embedding_vanishes_after_centering() {
        let out = normalize_embeddings(&[Some(vec![1.0, 2.0, 3.0])]);
        assert_eq!(out.values, vec![None]);
        assert_eq!(out.dropped, vec![0]);
    }

    #[test]
    fn antipodal_pair_normalizes_to_unit_vectors() {
        let u = vec![3.0, -4.0, 0.0];
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let out = normalize_embeddings(&[Some(u.clone()), None, Some(neg)]);
        assert!(out.dropped.is_empty());
        assert_eq!(out.values[1], None);
        let a = out.values[0].as_ref().unwrap();
        let b = out.values[2].as_ref().unwrap();
        for i in 0..3 {
            assert!((a[i] - u[i] / 5.0).abs() < 1e-12);
            assert!((b[i] + u[i] / 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn survivors_have_unit_norm() {
        let input: Vec<Option<Vec<f64>>> = (0..10)
            .map(|i| Some((0..5).map(|j| ((i * 31 + j * 17) % 11) as f64).collect()))
            .collect();
        for v in normalize_embeddings(&input).values.into_iter().flatten() {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
    }
}
