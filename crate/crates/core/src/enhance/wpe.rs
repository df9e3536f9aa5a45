//! Weighted prediction error dereverberation, one multichannel linear
//! predictor per frequency bin.

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;

use super::linalg::{cholesky_loaded, CMatrix};
use super::EnhanceError;
use crate::audio::SpectrogramTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct WpeConfig {
    pub taps: usize,
    pub delay: usize,
    pub iterations: usize,
}

impl Default for WpeConfig {
    fn default() -> Self {
        Self {
            taps: 10,
            delay: 3,
            iterations: 3,
        }
    }
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Stacked delayed observation for frame `t`: `[y[t-d], y[t-d-1], ...]`.
fn stack(y: &[Complex64], m: usize, t: usize, cfg: &WpeConfig, out: &mut [Complex64]) {
    for tap in 0..cfg.taps {
        let dst = &mut out[tap * m..(tap + 1) * m];
        match t.checked_sub(cfg.delay + tap) {
            Some(src) => dst.copy_from_slice(&y[src * m..(src + 1) * m]),
            None => dst.fill(ZERO),
        }
    }
}

/// Subtracts the predicted late reverberation `G^H y~_t` from every frame.
pub fn apply_filter(y: &[Complex64], m: usize, filter: &CMatrix, cfg: &WpeConfig) -> Vec<Complex64> {
    let frames = y.len() / m;
    let n = m * cfg.taps;
    let mut out = y.to_vec();
    let mut stacked = vec![ZERO; n];
    for t in 0..frames {
        stack(y, m, t, cfg, &mut stacked);
        for c in 0..m {
            let mut pred = ZERO;
            for i in 0..n {
                pred += filter[(i, c)].conj() * stacked[i];
            }
            out[t * m + c] -= pred;
        }
    }
    out
}

/// Dereverberates one bin. `y` is frame-major, `m` channels per frame.
/// Returns the output and the final prediction filter (`None` when no
/// filtering took place).
pub fn wpe_bin(
    y: &[Complex64],
    m: usize,
    cfg: &WpeConfig,
) -> Result<(Vec<Complex64>, Option<CMatrix>), EnhanceError> {
    let frames = y.len() / m;
    if cfg.taps == 0 || cfg.iterations == 0 {
        return Ok((y.to_vec(), None));
    }
    if frames <= cfg.taps + cfg.delay {
        return Err(EnhanceError::TooFewFrames {
            frames,
            needed: cfg.taps + cfg.delay + 1,
        });
    }
    let n = m * cfg.taps;
    let mut out = y.to_vec();
    let mut filter = None;
    let mut stacked = vec![ZERO; n];
    for _ in 0..cfg.iterations {
        let mut power: Vec<f64> = (0..frames)
            .map(|t| out[t * m..(t + 1) * m].iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64)
            .collect();
        let mean = power.iter().sum::<f64>() / frames as f64;
        if mean <= 0.0 {
            return Ok((y.to_vec(), None));
        }
        let floor = 1e-10 * mean;
        power.iter_mut().for_each(|p| *p = p.max(floor));

        // Upper triangle accumulated in split real/imaginary form so the
        // inner loop vectorizes.
        let mut corr_re = vec![0.0; n * n];
        let mut corr_im = vec![0.0; n * n];
        let mut cross = vec![ZERO; n * m];
        let mut st_re = vec![0.0; n];
        let mut st_im = vec![0.0; n];
        for t in 0..frames {
            stack(y, m, t, cfg, &mut stacked);
            for (i, v) in stacked.iter().enumerate() {
                st_re[i] = v.re;
                st_im[i] = v.im;
            }
            let w = 1.0 / power[t];
            for i in 0..n {
                let (ar, ai) = (st_re[i] * w, st_im[i] * w);
                if ar == 0.0 && ai == 0.0 {
                    continue;
                }
                let row_re = &mut corr_re[i * n + i..(i + 1) * n];
                let row_im = &mut corr_im[i * n + i..(i + 1) * n];
                let (br, bi) = (&st_re[i..], &st_im[i..]);
                for j in 0..row_re.len() {
                    row_re[j] += ar * br[j] + ai * bi[j];
                    row_im[j] += ai * br[j] - ar * bi[j];
                }
                let si = Complex64::new(ar, ai);
                for c in 0..m {
                    cross[i * m + c] += si * y[t * m + c].conj();
                }
            }
        }
        let mut corr = vec![ZERO; n * n];
        for i in 0..n {
            for j in i..n {
                corr[i * n + j] = Complex64::new(corr_re[i * n + j], corr_im[i * n + j]);
                corr[j * n + i] = corr[i * n + j].conj();
            }
        }
        let corr = CMatrix::from_row_slice(n, n, &corr);
        let cross = CMatrix::from_row_slice(n, m, &cross);
        let chol = cholesky_loaded(&corr, 1e-10, None)?;
        let g = chol.solve(&cross);
        out = apply_filter(y, m, &g, cfg);
        filter = Some(g);
    }
    Ok((out, filter))
}

/// Gathers bin `f` of every frame as a frame-major `frames x channels` slice.
pub fn gather_bin(values: &Array3<Complex64>, f: usize) -> Vec<Complex64> {
    let (m, frames, _) = values.dim();
    let mut out = Vec::with_capacity(m * frames);
    for t in 0..frames {
        for c in 0..m {
            out.push(values[(c, t, f)]);
        }
    }
    out
}

pub fn scatter_bin(values: &mut Array3<Complex64>, f: usize, data: &[Complex64]) {
    let (m, frames, _) = values.dim();
    for t in 0..frames {
        for c in 0..m {
            values[(c, t, f)] = data[t * m + c];
        }
    }
}

/// Per-bin prediction filters of a WPE run, reusable on other signals.
#[derive(Debug, Clone)]
pub struct WpeFilters {
    pub config: WpeConfig,
    pub filters: Vec<Option<CMatrix>>,
}

impl WpeFilters {
    /// Applies the stored filters to a spectrogram of the same geometry.
    pub fn apply(&self, values: &Array3<Complex64>) -> Array3<Complex64> {
        let (m, _, bins) = values.dim();
        let mut out = values.clone();
        for f in 0..bins {
            if let Some(g) = &self.filters[f] {
                let y = gather_bin(values, f);
                scatter_bin(&mut out, f, &apply_filter(&y, m, g, &self.config));
            }
        }
        out
    }
}

/// Dereverberates `(channel, frame, bin)` data, returning output and filters.
pub fn wpe_values(
    values: &Array3<Complex64>,
    cfg: &WpeConfig,
) -> Result<(Array3<Complex64>, WpeFilters), EnhanceError> {
    let (m, _, bins) = values.dim();
    let per_bin: Vec<(Vec<Complex64>, Option<CMatrix>)> = (0..bins)
        .into_par_iter()
        .map(|f| wpe_bin(&gather_bin(values, f), m, cfg))
        .collect::<Result<_, _>>()?;
    let mut out = values.clone();
    let mut filters = Vec::with_capacity(bins);
    for (f, (data, g)) in per_bin.into_iter().enumerate() {
        scatter_bin(&mut out, f, &data);
        filters.push(g);
    }
    Ok((
        out,
        WpeFilters {
            config: *cfg,
            filters,
        },
    ))
}

pub fn wpe_dereverberate(
    spec: &SpectrogramTensor,
    cfg: &WpeConfig,
) -> Result<SpectrogramTensor, EnhanceError> {
    let (values, _) = wpe_values(&spec.values, cfg)?;
    Ok(SpectrogramTensor {
        values,
        ..spec.clone()
    })
}
