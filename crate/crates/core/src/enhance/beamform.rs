//! Mask-based MVDR beamforming with a blind analytic normalization postfilter.

use ndarray::{Array2, ArrayView3};
use num_complex::Complex64;

use super::cacgmm::PosteriorTensor;
use super::linalg::{cholesky_loaded, hermitian_part, trace_re, CMatrix};
use super::EnhanceError;

const LOADING: f64 = 1e-10;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Posterior-weighted spatial covariances of one utterance.
#[derive(Debug, Clone)]
pub struct CovariancePair {
    pub speech: Vec<CMatrix>,
    pub noise: Vec<CMatrix>,
    pub target: usize,
}

impl CovariancePair {
    pub fn channels(&self) -> usize {
        self.speech.first().map_or(0, |r| r.nrows())
    }
}

/// `R_speech = mean_t g X X^H`, `R_noise = mean_t (1 - g) X X^H` with `g`
/// the target posterior. `values` is `(channel, frame, bin)` over the same
/// frames as `gamma`.
pub fn estimate_covariances(
    values: ArrayView3<'_, Complex64>,
    gamma: &PosteriorTensor,
    target: usize,
) -> Result<CovariancePair, EnhanceError> {
    let (m, frames, bins) = values.dim();
    let (gt, gf, classes) = gamma.gamma.dim();
    if gt != frames || gf != bins {
        return Err(EnhanceError::GuideMismatch {
            guide: gt,
            frames,
        });
    }
    if target + 1 >= classes {
        return Err(EnhanceError::TargetInactive { target });
    }
    let mut speech = Vec::with_capacity(bins);
    let mut noise = Vec::with_capacity(bins);
    let mut any_mass = false;
    let mut s = vec![ZERO; m * m];
    let mut n = vec![ZERO; m * m];
    let mut x = vec![ZERO; m];
    for f in 0..bins {
        s.fill(ZERO);
        n.fill(ZERO);
        for t in 0..frames {
            let g = gamma.gamma[(t, f, target)];
            any_mass |= g > 0.0;
            for c in 0..m {
                x[c] = values[(c, t, f)];
            }
            for i in 0..m {
                for j in i..m {
                    let p = x[i] * x[j].conj();
                    s[i * m + j] += p * g;
                    n[i * m + j] += p * (1.0 - g);
                }
            }
        }
        let scale = 1.0 / frames.max(1) as f64;
        speech.push(fill_hermitian(&s, m, scale));
        noise.push(fill_hermitian(&n, m, scale));
    }
    if !any_mass {
        return Err(EnhanceError::TargetInactive { target });
    }
    Ok(CovariancePair {
        speech,
        noise,
        target,
    })
}

fn fill_hermitian(upper: &[Complex64], m: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(m, m, |i, j| {
        if i <= j {
            upper[i * m + j] * scale
        } else {
            upper[j * m + i].conj() * scale
        }
    })
}

/// Channel with the largest summed speech-to-noise power ratio.
pub fn select_reference(cov: &CovariancePair) -> usize {
    let m = cov.channels();
    let mut score = vec![0.0; m];
    for (rs, rn) in cov.speech.iter().zip(&cov.noise) {
        let floor = 1e-12 * trace_re(rn) / m as f64 + f64::MIN_POSITIVE;
        for (c, sc) in score.iter_mut().enumerate() {
            *sc += rs[(c, c)].re / (rn[(c, c)].re + floor);
        }
    }
    score
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
        .0
}

/// `w = R_noise^{-1} R_speech r / tr(R_noise^{-1} R_speech)` per bin. Bins
/// without speech energy get a zero filter. A vanishing noise covariance is
/// loaded relative to the speech trace instead.
pub fn mvdr(cov: &CovariancePair, reference: usize) -> Result<Vec<Vec<Complex64>>, EnhanceError> {
    let m = cov.channels();
    if reference >= m {
        return Err(EnhanceError::Reference { reference, channels: m });
    }
    cov.speech
        .iter()
        .zip(&cov.noise)
        .map(|(rs, rn)| {
            let ts = trace_re(rs);
            if ts <= 0.0 || !ts.is_finite() {
                return Ok(vec![ZERO; m]);
            }
            let tn = trace_re(rn);
            let base = if tn > 1e-12 * ts { None } else { Some(ts) };
            let chol = cholesky_loaded(rn, LOADING, base)?;
            let a = chol.solve(&hermitian_part(rs));
            let tr: Complex64 = (0..m).map(|i| a[(i, i)]).sum();
            if tr.norm() <= f64::MIN_POSITIVE || !tr.is_finite() {
                return Ok(vec![ZERO; m]);
            }
            Ok((0..m).map(|i| a[(i, reference)] / tr).collect())
        })
        .collect()
}

/// `g = sqrt(w^H R R w / M) / (w^H R w)`; falls back to 1 when the
/// denominator vanishes.
pub fn ban_gain(w: &[Complex64], r_noise: &CMatrix) -> f64 {
    let m = w.len();
    let wv = CMatrix::from_column_slice(m, 1, w);
    let rw = r_noise * &wv;
    let den = (wv.adjoint() * &rw)[(0, 0)].re;
    let num = rw.iter().map(|v| v.norm_sqr()).sum::<f64>() / m as f64;
    let g = num.sqrt() / den;
    if den > f64::MIN_POSITIVE && g.is_finite() && g > 0.0 {
        g
    } else {
        tracing::debug!("BAN denominator vanished, using unit gain");
        1.0
    }
}

/// Per-bin filters and postfilter gains for one utterance.
#[derive(Debug, Clone)]
pub struct Beamformer {
    pub weights: Vec<Vec<Complex64>>,
    pub reference: usize,
    pub ban_gain: Vec<f64>,
}

impl Beamformer {
    pub fn design(cov: &CovariancePair, reference: usize) -> Result<Self, EnhanceError> {
        let weights = mvdr(cov, reference)?;
        let ban_gain = weights.iter().zip(&cov.noise).map(|(w, rn)| ban_gain(w, rn)).collect();
        Ok(Self {
            weights,
            reference,
            ban_gain,
        })
    }

    /// `z = g w^H X` for `(channel, frame, bin)` input; output is `(frame, bin)`.
    pub fn apply(&self, values: ArrayView3<'_, Complex64>) -> Array2<Complex64> {
        let (m, frames, bins) = values.dim();
        Array2::from_shape_fn((frames, bins), |(t, f)| {
            let w = &self.weights[f];
            let z: Complex64 = (0..m).map(|c| w[c].conj() * values[(c, t, f)]).sum();
            z * self.ban_gain[f]
        })
    }
}
