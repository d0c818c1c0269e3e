//! Radial Gaussian kernels, dense kernel matrices and their Cholesky factors.
//!
//! Every kernel in the library is the normalized 3D Gaussian
//!
//! ```text
//! Γσ(a, b) = (2π)^(-3/2) σ^(-3) exp(-‖a − b‖² / 2σ²)
//! ```
//!
//! used with scale `σ_v` for the velocity fields and with scale `σ_d` for the
//! measure disparity. Grids stay below a few thousand points, so matrices are
//! stored densely and factorized directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Point;

/// Kernel scales shared by every part of a solve.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KernelConfig {
    /// Scale of the velocity kernel `K`.
    pub sigma_v: f64,
    /// Scale of the disparity kernel `Q`.
    pub sigma_d: f64,
    /// Diagonal regularization, relative to the velocity kernel's diagonal value,
    /// added to every matrix before it is factorized.
    pub ridge: f64,
}

impl KernelConfig {
    pub const DEFAULT_RIDGE: f64 = 1e-8;

    pub fn new(sigma_v: f64, sigma_d: f64) -> Result<Self> {
        let cfg = KernelConfig {
            sigma_v,
            sigma_d,
            ridge: Self::DEFAULT_RIDGE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_sigma("sigma_v", self.sigma_v)?;
        check_sigma("sigma_d", self.sigma_d)?;
        if !(self.ridge >= 0.0) || !self.ridge.is_finite() {
            return Err(Error::param("ridge", format!("must be finite and >= 0, got {}", self.ridge)));
        }
        Ok(())
    }

    pub fn velocity(&self) -> Gaussian {
        Gaussian::new_unchecked(self.sigma_v)
    }

    pub fn disparity(&self) -> Gaussian {
        Gaussian::new_unchecked(self.sigma_d)
    }

    /// Absolute ridge added to matrices built from the velocity kernel.
    pub fn absolute_ridge(&self) -> f64 {
        self.ridge * self.velocity().peak()
    }
}

fn check_sigma(name: &'static str, sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("kernel scale must be finite and > 0, got {sigma}")))
    }
}

/// A Gaussian kernel with its normalization constants precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    sigma: f64,
    norm: f64,
    neg_inv_two_var: f64,
}

impl Gaussian {
    pub fn new(sigma: f64) -> Result<Self> {
        check_sigma("sigma", sigma)?;
        Ok(Self::new_unchecked(sigma))
    }

    fn new_unchecked(sigma: f64) -> Self {
        let norm = (2.0 * std::f64::consts::PI).powf(-1.5) / (sigma * sigma * sigma);
        Gaussian {
            sigma,
            norm,
            neg_inv_two_var: -0.5 / (sigma * sigma),
        }
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Value at coincidence, `Γσ(x, x)`.
    #[inline]
    pub fn peak(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn eval(&self, a: &Point, b: &Point) -> f64 {
        self.eval_sq((a - b).norm_squared())
    }

    /// Kernel value from a squared distance.
    #[inline]
    pub fn eval_sq(&self, dist_sq: f64) -> f64 {
        self.norm * (dist_sq * self.neg_inv_two_var).exp()
    }

    /// `1/σ²`, the factor in `∇ₐΓ(a, b) = −Γ(a, b)(a − b)/σ²`.
    #[inline]
    pub fn inv_var(&self) -> f64 {
        -2.0 * self.neg_inv_two_var
    }
}

/// Evaluates `Γσ(a, b)`.
pub fn eval_kernel(a: &Point, b: &Point, sigma: f64) -> Result<f64> {
    Ok(Gaussian::new(sigma)?.eval(a, b))
}

/// Dense symmetric kernel matrix on one point set.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: DMatrix<f64>,
    pub source_scale: f64,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn factorize(&self, ridge: f64) -> Result<CholeskyFactor> {
        factorize_spd(&self.values, ridge)
    }
}

/// Assembles `K[i][j] = Γσ(points[i], points[j])`, filling the upper triangle
/// by mirroring so the result is exactly symmetric.
pub fn kernel_matrix(points: &[Point], sigma: f64) -> Result<KernelMatrix> {
    let g = Gaussian::new(sigma)?;
    if points.is_empty() {
        return Err(Error::input("kernel matrix needs at least one point"));
    }
    Ok(KernelMatrix {
        values: gram(points, &g),
        source_scale: sigma,
    })
}

pub(crate) fn gram(points: &[Point], g: &Gaussian) -> DMatrix<f64> {
    let n = points.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = g.peak();
        for i in (j + 1)..n {
            let v = g.eval(&points[i], &points[j]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Assembles the rectangular matrix `Γσ(rows[i], cols[j])`.
pub fn cross_kernel_matrix(rows: &[Point], cols: &[Point], sigma: f64) -> Result<DMatrix<f64>> {
    let g = Gaussian::new(sigma)?;
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::input("cross kernel matrix needs nonempty point sets"));
    }
    Ok(cross_gram(rows, cols, &g))
}

pub(crate) fn cross_gram(rows: &[Point], cols: &[Point], g: &Gaussian) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| g.eval(&rows[i], &cols[j]))
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = A + ridge·I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
}

/// Factorizes `matrix + ridge·I`. The input must be symmetric; only its lower
/// triangle is read.
pub fn factorize_spd(matrix: &DMatrix<f64>, ridge: f64) -> Result<CholeskyFactor> {
    if !matrix.is_square() {
        return Err(Error::input(format!(
            "cannot factorize a {}x{} matrix",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::param("ridge", format!("must be >= 0, got {ridge}")));
    }
    let n = matrix.nrows();
    let mut a = matrix.clone();
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let s = a.as_mut_slice();
    // Right-looking, column-major: every inner loop walks a contiguous column.
    for k in 0..n {
        let pivot = s[k * n + k];
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::Factorization { pivot: k, value: pivot });
        }
        let d = pivot.sqrt();
        s[k * n + k] = d;
        for i in (k + 1)..n {
            s[k * n + i] /= d;
        }
        for j in (k + 1)..n {
            let ljk = s[k * n + j];
            if ljk == 0.0 {
                continue;
            }
            let (head, tail) = s.split_at_mut(j * n);
            let col_k = &head[k * n + j..k * n + n];
            let col_j = &mut tail[j..n];
            for (dst, &lik) in col_j.iter_mut().zip(col_k) {
                *dst -= lik * ljk;
            }
        }
    }
    for j in 1..n {
        for i in 0..j {
            s[j * n + i] = 0.0;
        }
    }
    Ok(CholeskyFactor { lower: a })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// Solves for every column of `b`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(b.nrows(), self.dim(), "right-hand side has the wrong row count");
        let mut x = b.clone();
        let n = self.dim();
        for col in x.as_mut_slice().chunks_mut(n) {
            self.solve_in_place(col);
        }
        x
    }

    fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        assert_eq!(x.len(), n, "right-hand side has the wrong length");
        let l = self.lower.as_slice();
        for k in 0..n {
            let col = &l[k * n..(k + 1) * n];
            x[k] /= col[k];
            let xk = x[k];
            if xk != 0.0 {
                for i in (k + 1)..n {
                    x[i] -= col[i] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let col = &l[k * n..(k + 1) * n];
            let mut acc = x[k];
            for i in (k + 1)..n {
                acc -= col[i] * x[i];
            }
            x[k] = acc / col[k];
        }
    }
}
