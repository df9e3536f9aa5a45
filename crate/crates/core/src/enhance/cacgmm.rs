//! Guided complex angular central Gaussian mixture model.
//!
//! Observations are unit-normalized multichannel STFT vectors. Each class
//! `k` at bin `f` has a weight `alpha` and a Hermitian shape matrix `B`; the
//! guide (diarized activity) zeroes a class's prior wherever that speaker is
//! inactive, so no permutation alignment across bins is needed. Densities
//! are evaluated in the log domain from Cholesky factors because the
//! `[x^H B^{-1} x]^{-M}` term spans a huge dynamic range for larger `M`.

use ndarray::{Array3, ArrayView3};
use num_complex::Complex64;
use rayon::prelude::*;

use super::linalg::{factor, hermitian_part, trace_re, CMatrix, Factor};
use super::EnhanceError;
use crate::diarize::ActivityMatrix;

/// Weight given to a class that received no posterior mass at a bin.
pub const ALPHA_FLOOR: f64 = 1e-10;
const LOADING: f64 = 1e-10;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Unit-normalized observations, stored per bin as `frames x channels`.
#[derive(Debug, Clone)]
pub struct Observations {
    pub channels: usize,
    pub frames: usize,
    bins: Vec<Vec<Complex64>>,
    valid: Vec<Vec<bool>>,
}

impl Observations {
    /// Normalizes `(channel, frame, bin)` data; zero vectors are marked invalid.
    pub fn from_values(values: ArrayView3<'_, Complex64>) -> Self {
        let (m, frames, nbins) = values.dim();
        let mut bins = Vec::with_capacity(nbins);
        let mut valid = Vec::with_capacity(nbins);
        for f in 0..nbins {
            let mut x = Vec::with_capacity(frames * m);
            let mut ok = Vec::with_capacity(frames);
            for t in 0..frames {
                let norm = (0..m).map(|c| values[(c, t, f)].norm_sqr()).sum::<f64>().sqrt();
                let good = norm > 1e-300 && norm.is_finite();
                ok.push(good);
                for c in 0..m {
                    x.push(if good { values[(c, t, f)] / norm } else { ZERO });
                }
            }
            bins.push(x);
            valid.push(ok);
        }
        Self {
            channels: m,
            frames,
            bins,
            valid,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins.len()
    }

    pub fn vector(&self, f: usize, t: usize) -> &[Complex64] {
        &self.bins[f][t * self.channels..(t + 1) * self.channels]
    }
}

/// Per-frame active class sets derived from a guide. A frame without any
/// active class falls back to the last (noise) class.
#[derive(Debug, Clone, PartialEq)]
pub struct Guide {
    pub classes: usize,
    active: Vec<bool>,
}

impl Guide {
    pub fn from_activity(y: &ActivityMatrix) -> Self {
        let classes = y.rows.len();
        let frames = y.columns();
        let mut active = vec![false; frames * classes];
        for t in 0..frames {
            let row = &mut active[t * classes..(t + 1) * classes];
            for (k, v) in row.iter_mut().enumerate() {
                *v = y.rows[k][t];
            }
            if !row.iter().any(|&v| v) {
                row[classes - 1] = true;
            }
        }
        Self { classes, active }
    }

    pub fn frames(&self) -> usize {
        self.active.len() / self.classes.max(1)
    }

    pub fn is_active(&self, t: usize, k: usize) -> bool {
        self.active[t * self.classes + k]
    }

    fn frame(&self, t: usize) -> &[bool] {
        &self.active[t * self.classes..(t + 1) * self.classes]
    }
}

#[derive(Debug, Clone)]
pub struct CacgmmState {
    /// `[bin][class]`
    pub alpha: Vec<Vec<f64>>,
    /// `[bin][class]`, each `channels x channels`.
    pub shape: Vec<Vec<CMatrix>>,
}

impl CacgmmState {
    /// Identity shapes; weights uniform over the classes active anywhere in
    /// the guide.
    pub fn initial(bins: usize, channels: usize, guide: &Guide) -> Self {
        let used: Vec<bool> = (0..guide.classes)
            .map(|k| (0..guide.frames()).any(|t| guide.is_active(t, k)))
            .collect();
        let n_used = used.iter().filter(|&&u| u).count().max(1);
        let alpha: Vec<f64> = used
            .iter()
            .map(|&u| if u { 1.0 / n_used as f64 } else { 0.0 })
            .collect();
        Self {
            alpha: vec![alpha; bins],
            shape: vec![vec![CMatrix::identity(channels, channels); guide.classes]; bins],
        }
    }
}

/// Class posteriors indexed `(frame, bin, class)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTensor {
    pub gamma: Array3<f64>,
}

impl PosteriorTensor {
    pub fn frames(&self) -> usize {
        self.gamma.dim().0
    }

    /// Posteriors restricted to frames `start..end`.
    pub fn crop(&self, start: usize, end: usize) -> Self {
        Self {
            gamma: self.gamma.slice(ndarray::s![start..end, .., ..]).to_owned(),
        }
    }
}

struct BinPosterior {
    gamma: Vec<f64>,
    quad: Vec<f64>,
    loglik: f64,
}

fn factors(shapes: &[CMatrix]) -> Result<Vec<Factor>, EnhanceError> {
    shapes.iter().map(|b| factor(b, LOADING)).collect()
}

fn e_step_bin(
    obs: &Observations,
    f: usize,
    alpha: &[f64],
    factors: &[Factor],
    guide: &Guide,
) -> BinPosterior {
    let m = obs.channels;
    let classes = guide.classes;
    let mut gamma = vec![0.0; obs.frames * classes];
    let mut quad = vec![0.0; obs.frames * classes];
    let mut scratch = vec![ZERO; m];
    let mut logp = vec![f64::NEG_INFINITY; classes];
    let mut loglik = 0.0;
    for t in 0..obs.frames {
        let active = guide.frame(t);
        let g = &mut gamma[t * classes..(t + 1) * classes];
        if !obs.valid[f][t] {
            let n = active.iter().filter(|&&a| a).count() as f64;
            for (v, &a) in g.iter_mut().zip(active) {
                *v = if a { 1.0 / n } else { 0.0 };
            }
            continue;
        }
        let x = obs.vector(f, t);
        let mut best = f64::NEG_INFINITY;
        for k in 0..classes {
            logp[k] = f64::NEG_INFINITY;
            if !active[k] {
                continue;
            }
            let q = factors[k].quad(x, &mut scratch);
            quad[t * classes + k] = q;
            if alpha[k] > 0.0 {
                logp[k] = alpha[k].ln() - factors[k].logdet - m as f64 * q.ln();
                best = best.max(logp[k]);
            }
        }
        if best == f64::NEG_INFINITY {
            let n = active.iter().filter(|&&a| a).count() as f64;
            for (v, &a) in g.iter_mut().zip(active) {
                *v = if a { 1.0 / n } else { 0.0 };
            }
            continue;
        }
        let mut total = 0.0;
        for k in 0..classes {
            g[k] = if logp[k] == f64::NEG_INFINITY {
                0.0
            } else {
                (logp[k] - best).exp()
            };
            total += g[k];
        }
        for v in g.iter_mut() {
            *v /= total;
        }
        loglik += best + total.ln();
    }
    BinPosterior {
        gamma,
        quad,
        loglik,
    }
}

fn m_step_bin(
    obs: &Observations,
    f: usize,
    post: &BinPosterior,
    classes: usize,
    prev_alpha: &[f64],
    prev_shape: &[CMatrix],
) -> (Vec<f64>, Vec<CMatrix>) {
    let m = obs.channels;
    let valid_frames = obs.valid[f].iter().filter(|&&v| v).count();
    if valid_frames == 0 {
        return (prev_alpha.to_vec(), prev_shape.to_vec());
    }
    let mut alpha = vec![0.0; classes];
    let mut shapes = Vec::with_capacity(classes);
    let mut acc = vec![ZERO; m * m];
    for k in 0..classes {
        acc.fill(ZERO);
        let mut mass = 0.0;
        for t in 0..obs.frames {
            if !obs.valid[f][t] {
                continue;
            }
            let g = post.gamma[t * classes + k];
            if g <= 0.0 {
                continue;
            }
            mass += g;
            let w = g / post.quad[t * classes + k];
            let x = obs.vector(f, t);
            for i in 0..m {
                let xi = x[i] * w;
                for j in i..m {
                    acc[i * m + j] += xi * x[j].conj();
                }
            }
        }
        if mass <= 1e-12 {
            alpha[k] = ALPHA_FLOOR;
            shapes.push(prev_shape[k].clone());
            continue;
        }
        alpha[k] = mass / valid_frames as f64;
        for i in 0..m {
            for j in 0..i {
                acc[i * m + j] = acc[j * m + i].conj();
            }
        }
        let b = hermitian_part(&CMatrix::from_row_slice(m, m, &acc).scale(m as f64 / mass));
        let tr = trace_re(&b);
        shapes.push(if tr > 0.0 { b.scale(m as f64 / tr) } else { prev_shape[k].clone() });
    }
    let total: f64 = alpha.iter().sum();
    for a in &mut alpha {
        *a /= total;
    }
    (alpha, shapes)
}

/// Posterior of every class at every time-frequency point, plus the guided
/// log-likelihood of the observations under `state`.
pub fn em_e_step(
    obs: &Observations,
    state: &CacgmmState,
    guide: &Guide,
) -> Result<(PosteriorTensor, f64), EnhanceError> {
    check_guide(obs, guide)?;
    let per_bin: Vec<BinPosterior> = (0..obs.bins())
        .into_par_iter()
        .map(|f| Ok(e_step_bin(obs, f, &state.alpha[f], &factors(&state.shape[f])?, guide)))
        .collect::<Result<_, EnhanceError>>()?;
    let loglik = per_bin.iter().map(|p| p.loglik).sum();
    Ok((assemble(&per_bin, obs.frames, guide.classes), loglik))
}

/// Re-estimates weights and shapes from posteriors; the shape update uses
/// the quadratic forms under the previous shapes.
pub fn em_m_step(
    obs: &Observations,
    gamma: &PosteriorTensor,
    prev: &CacgmmState,
) -> Result<CacgmmState, EnhanceError> {
    let classes = gamma.gamma.dim().2;
    let m = obs.channels;
    let updated: Vec<(Vec<f64>, Vec<CMatrix>)> = (0..obs.bins())
        .into_par_iter()
        .map(|f| {
            let fac = factors(&prev.shape[f])?;
            let mut scratch = vec![ZERO; m];
            let mut quad = vec![0.0; obs.frames * classes];
            let mut g = vec![0.0; obs.frames * classes];
            for t in 0..obs.frames {
                for k in 0..classes {
                    g[t * classes + k] = gamma.gamma[(t, f, k)];
                    if obs.valid[f][t] && g[t * classes + k] > 0.0 {
                        quad[t * classes + k] = fac[k].quad(obs.vector(f, t), &mut scratch);
                    }
                }
            }
            let post = BinPosterior {
                gamma: g,
                quad,
                loglik: 0.0,
            };
            Ok(m_step_bin(obs, f, &post, classes, &prev.alpha[f], &prev.shape[f]))
        })
        .collect::<Result<_, EnhanceError>>()?;
    let (alpha, shape) = updated.into_iter().unzip();
    Ok(CacgmmState { alpha, shape })
}

fn check_guide(obs: &Observations, guide: &Guide) -> Result<(), EnhanceError> {
    if guide.frames() != obs.frames {
        return Err(EnhanceError::GuideMismatch {
            guide: guide.frames(),
            frames: obs.frames,
        });
    }
    Ok(())
}

fn assemble(per_bin: &[BinPosterior], frames: usize, classes: usize) -> PosteriorTensor {
    let mut gamma = Array3::zeros((frames, per_bin.len(), classes));
    for (f, p) in per_bin.iter().enumerate() {
        for t in 0..frames {
            for k in 0..classes {
                gamma[(t, f, k)] = p.gamma[t * classes + k];
            }
        }
    }
    PosteriorTensor { gamma }
}

#[derive(Debug, Clone)]
pub struct GssOutput {
    pub posteriors: PosteriorTensor,
    pub state: CacgmmState,
    /// Guided log-likelihood before each M-step and after the last one.
    pub loglik: Vec<f64>,
}

/// `iterations` rounds of E and M steps from the identity initialization,
/// followed by a final E-step.
pub fn run_gss(obs: &Observations, guide: &Guide, iterations: usize) -> Result<GssOutput, EnhanceError> {
    check_guide(obs, guide)?;
    let init = CacgmmState::initial(obs.bins(), obs.channels, guide);
    let classes = guide.classes;
    let per_bin: Vec<(BinPosterior, Vec<f64>, Vec<CMatrix>, Vec<f64>)> = (0..obs.bins())
        .into_par_iter()
        .map(|f| {
            let mut alpha = init.alpha[f].clone();
            let mut shape = init.shape[f].clone();
            let mut trace = Vec::with_capacity(iterations + 1);
            let mut post = e_step_bin(obs, f, &alpha, &factors(&shape)?, guide);
            trace.push(post.loglik);
            for _ in 0..iterations {
                (alpha, shape) = m_step_bin(obs, f, &post, classes, &alpha, &shape);
                post = e_step_bin(obs, f, &alpha, &factors(&shape)?, guide);
                trace.push(post.loglik);
            }
            Ok((post, alpha, shape, trace))
        })
        .collect::<Result<_, EnhanceError>>()?;
    let mut loglik = vec![0.0; iterations + 1];
    for (_, _, _, trace) in &per_bin {
        for (acc, v) in loglik.iter_mut().zip(trace) {
            *acc += v;
        }
    }
    let posts: Vec<BinPosterior> = Vec::with_capacity(per_bin.len());
    let (posts, state) = per_bin.into_iter().fold(
        (posts, CacgmmState { alpha: Vec::new(), shape: Vec::new() }),
        |(mut posts, mut state), (p, a, s, _)| {
            posts.push(p);
            state.alpha.push(a);
            state.shape.push(s);
            (posts, state)
        },
    );
    Ok(GssOutput {
        posteriors: assemble(&posts, obs.frames, classes),
        state,
        loglik,
    })
}
