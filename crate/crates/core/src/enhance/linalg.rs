//! Small dense Hermitian helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::EnhanceError;

pub type CMatrix = DMatrix<Complex64>;

pub fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

pub fn hermitian_part(a: &CMatrix) -> CMatrix {
    (a + a.adjoint()).scale(0.5)
}

/// Lower Cholesky factor stored row-major, with the log-determinant.
#[derive(Debug, Clone)]
pub struct Factor {
    pub dim: usize,
    pub lower: Vec<Complex64>,
    /// Reciprocals of the (real, positive) diagonal of `lower`.
    pub inv_diag: Vec<f64>,
    pub logdet: f64,
}

impl Factor {
    /// `x^H A^{-1} x` by forward substitution.
    pub fn quad(&self, x: &[Complex64], scratch: &mut [Complex64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            let mut s = x[i];
            for j in 0..i {
                s -= row[j] * scratch[j];
            }
            let v = s * self.inv_diag[i];
            scratch[i] = v;
            acc += v.norm_sqr();
        }
        acc
    }
}

/// Cholesky of `a + load * I` with `load = rel * base / n`, escalating the
/// loading tenfold once on failure. `base` defaults to the trace of `a`.
pub fn cholesky_loaded(
    a: &CMatrix,
    rel: f64,
    base: Option<f64>,
) -> Result<nalgebra::Cholesky<Complex64, nalgebra::Dyn>, EnhanceError> {
    let n = a.nrows();
    let base = base.unwrap_or_else(|| trace_re(a)).max(0.0);
    for attempt in 0..2 {
        let load = rel * base / n as f64 * if attempt == 0 { 1.0 } else { 10.0 };
        let mut loaded = hermitian_part(a);
        for i in 0..n {
            loaded[(i, i)] += Complex64::new(load, 0.0);
        }
        if let Some(c) = loaded.cholesky() {
            if (0..n).all(|i| c.l_dirty()[(i, i)].re > 0.0) {
                return Ok(c);
            }
        }
    }
    Err(EnhanceError::Singular { dim: n })
}

pub fn factor(a: &CMatrix, rel: f64) -> Result<Factor, EnhanceError> {
    let c = cholesky_loaded(a, rel, None)?;
    let l = c.l();
    let n = a.nrows();
    let mut lower = vec![Complex64::new(0.0, 0.0); n * n];
    let mut inv_diag = vec![0.0; n];
    let mut logdet = 0.0;
    for i in 0..n {
        for j in 0..=i {
            lower[i * n + j] = l[(i, j)];
        }
        inv_diag[i] = 1.0 / l[(i, i)].re;
        logdet += 2.0 * l[(i, i)].re.ln();
    }
    Ok(Factor {
        dim: n,
        lower,
        inv_diag,
        logdet,
    })
}
