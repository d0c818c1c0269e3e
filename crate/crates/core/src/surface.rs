//! Surface grids, the kernel-measure disparity between them, and the
//! point-set metrics used to monitor a match.
//!
//! A grid `x = [x₁ … x_N]` stands for the empirical measure `(1/N) Σ δ(x_n)`.
//! The disparity between a moving grid `x` and a target grid `y` is the squared
//! kernel norm of the difference of their measures,
//!
//! ```text
//! dsd(x, y) = q(xx) − 2 q(xy) + q(yy)
//! q(xx) = (1/N²) Σₙ Σᵢ Q(xₙ, xᵢ),  q(xy) = (1/NM) Σₙ Σₘ Q(xₙ, yₘ),  q(yy) = (1/M²) Σₘ Σⱼ Q(yₘ, yⱼ)
//! ```
//!
//! with `Q` the Gaussian of scale `σ_d`. Coincident points are allowed and
//! count with multiplicity.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{Error, Result};
use crate::kernel::Gaussian;
use crate::Point;

/// Ordered point set, optionally carrying a triangulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    points: Vec<Point>,
    triangles: Option<Vec<[usize; 3]>>,
}

impl SurfaceGrid {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::input("a surface grid needs at least one point"));
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
        Ok(SurfaceGrid {
            points,
            triangles: None,
        })
    }

    pub fn with_triangles(points: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut grid = SurfaceGrid::new(points)?;
        let n = grid.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(Error::input(format!(
                    "triangle {t} references vertex {bad}, grid has {n} points"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::input(format!("triangle {t} repeats a vertex: {tri:?}")));
            }
        }
        grid.triangles = Some(triangles);
        Ok(grid)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn triangles(&self) -> Option<&[[usize; 3]]> {
        self.triangles.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same triangulation, new vertex positions.
    pub fn with_points(&self, points: Vec<Point>) -> Result<Self> {
        if points.len() != self.len() {
            return Err(Error::input(format!(
                "expected {} points, got {}",
                self.len(),
                points.len()
            )));
        }
        let mut grid = SurfaceGrid::new(points)?;
        grid.triangles = self.triangles.clone();
        Ok(grid)
    }

    /// Applies `f` to every point, keeping the triangulation.
    pub fn map_points(&self, f: impl Fn(&Point) -> Point) -> Result<Self> {
        self.with_points(self.points.iter().map(f).collect())
    }

    /// Copies the points into an `N×3` matrix, one row per point.
    pub fn to_block(&self) -> DMatrix<f64> {
        points_to_block(&self.points)
    }
}

pub(crate) fn points_to_block(points: &[Point]) -> DMatrix<f64> {
    DMatrix::from_fn(points.len(), 3, |i, c| points[i][c])
}

pub(crate) fn block_to_points(block: &DMatrix<f64>) -> Vec<Point> {
    (0..block.nrows())
        .map(|i| Point::new(block[(i, 0)], block[(i, 1)], block[(i, 2)]))
        .collect()
}

/// A fixed target grid with its self term `q(yy)` precomputed.
#[derive(Debug, Clone)]
pub struct DisparityWorkspace {
    target: SurfaceGrid,
    target_self_term: f64,
    kernel: Gaussian,
}

impl DisparityWorkspace {
    pub fn new(target: SurfaceGrid, kernel_scale: f64) -> Result<Self> {
        let kernel = Gaussian::new(kernel_scale)?;
        let target_self_term = self_term(target.points(), &kernel);
        Ok(DisparityWorkspace {
            target,
            target_self_term,
            kernel,
        })
    }

    pub fn target(&self) -> &SurfaceGrid {
        &self.target
    }

    pub fn target_self_term(&self) -> f64 {
        self.target_self_term
    }

    pub fn kernel_scale(&self) -> f64 {
        self.kernel.sigma()
    }

    pub(crate) fn kernel(&self) -> &Gaussian {
        &self.kernel
    }
}

/// `(1/N²) Σ Σ Q(pₙ, pᵢ)`, summed over the lower triangle.
fn self_term(points: &[Point], q: &Gaussian) -> f64 {
    let n = points.len();
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..i {
            off += q.eval(&points[i], &points[j]);
        }
    }
    (n as f64 * q.peak() + 2.0 * off) / (n * n) as f64
}

fn cross_term(a: &[Point], b: &[Point], q: &Gaussian) -> f64 {
    let mut s = 0.0;
    for p in a {
        for r in b {
            s += q.eval(p, r);
        }
    }
    s / (a.len() * b.len()) as f64
}

/// Disparity between a moving grid and the workspace target.
pub fn dsd(moving: &SurfaceGrid, ws: &DisparityWorkspace) -> f64 {
    dsd_points(moving.points(), ws)
}

pub(crate) fn dsd_points(moving: &[Point], ws: &DisparityWorkspace) -> f64 {
    let q = ws.kernel();
    let v = self_term(moving, q) - 2.0 * cross_term(moving, ws.target.points(), q) + ws.target_self_term;
    v.max(0.0)
}

/// Analytic gradient of [`dsd`] with respect to every moving point.
pub fn dsd_gradient(moving: &SurfaceGrid, ws: &DisparityWorkspace) -> Vec<Point> {
    LocalDisparity::new(moving.points(), ws).gradient
}

/// Analytic Hessian of [`dsd`] with respect to the flattened moving grid
/// (`3n + c` ordering).
pub fn dsd_hessian(moving: &SurfaceGrid, ws: &DisparityWorkspace) -> DMatrix<f64> {
    LocalDisparity::new(moving.points(), ws).hessian()
}

/// Curvature block `Φ(d) = Q·(d dᵀ/s⁴ − I/s²)`, the second derivative of
/// `Q(a, b)` in its first argument at `d = a − b`.
#[inline]
fn phi(qv: f64, d: &Point, inv_var: f64) -> Matrix3<f64> {
    let mut m = d * d.transpose() * (inv_var * inv_var);
    for c in 0..3 {
        m[(c, c)] -= inv_var;
    }
    m * qv
}

/// Disparity value, gradient and pairwise kernel cache at one moving grid.
///
/// Built once per Newton iterate so that Hessian-vector products reuse the
/// kernel evaluations instead of recomputing exponentials.
#[derive(Debug, Clone)]
pub struct LocalDisparity<'a> {
    ws: &'a DisparityWorkspace,
    points: Vec<Point>,
    /// `Q(xₙ, xᵢ)`, symmetric.
    qxx: DMatrix<f64>,
    /// `Q(xₙ, yₘ)`.
    qxy: DMatrix<f64>,
    pub value: f64,
    pub gradient: Vec<Point>,
}

impl<'a> LocalDisparity<'a> {
    pub fn new(moving: &[Point], ws: &'a DisparityWorkspace) -> Self {
        let q = ws.kernel();
        let n = moving.len();
        let targets = ws.target.points();
        let m = targets.len();
        let inv_var = q.inv_var();

        let mut qxx = DMatrix::zeros(n, n);
        let mut off = 0.0;
        let mut grad_xx = vec![Point::zeros(); n];
        for i in 0..n {
            qxx[(i, i)] = q.peak();
            for j in 0..i {
                let d = moving[i] - moving[j];
                let v = q.eval_sq(d.norm_squared());
                qxx[(i, j)] = v;
                qxx[(j, i)] = v;
                off += v;
                // ∇ₐQ(a, b) = −Q(a − b)/s²
                let g = d * (v * inv_var);
                grad_xx[i] -= g;
                grad_xx[j] += g;
            }
        }
        let mut qxy = DMatrix::zeros(n, m);
        let mut cross = 0.0;
        let mut grad_xy = vec![Point::zeros(); n];
        for j in 0..m {
            for i in 0..n {
                let d = moving[i] - targets[j];
                let v = q.eval_sq(d.norm_squared());
                qxy[(i, j)] = v;
                cross += v;
                grad_xy[i] -= d * (v * inv_var);
            }
        }
        let nf = n as f64;
        let mf = m as f64;
        let self_xx = (nf * q.peak() + 2.0 * off) / (nf * nf);
        let value = (self_xx - 2.0 * cross / (nf * mf) + ws.target_self_term).max(0.0);
        let cxx = 2.0 / (nf * nf);
        let cxy = 2.0 / (nf * mf);
        let gradient = grad_xx
            .iter()
            .zip(&grad_xy)
            .map(|(a, b)| a * cxx - b * cxy)
            .collect();
        LocalDisparity {
            ws,
            points: moving.to_vec(),
            qxx,
            qxy,
            value,
            gradient,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coefficients(&self) -> (f64, f64) {
        let nf = self.points.len() as f64;
        let mf = self.ws.target.len() as f64;
        (2.0 / (nf * nf), 2.0 / (nf * mf))
    }

    /// Dense Hessian in `3n + c` ordering.
    pub fn hessian(&self) -> DMatrix<f64> {
        let n = self.points.len();
        let inv_var = self.ws.kernel().inv_var();
        let (cxx, cxy) = self.coefficients();
        let targets = self.ws.target.points();
        let mut h = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            let mut diag = Matrix3::zeros();
            for j in 0..i {
                let b = phi(self.qxx[(i, j)], &(self.points[i] - self.points[j]), inv_var) * cxx;
                diag += b;
                h.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&(-b));
                h.fixed_view_mut::<3, 3>(3 * j, 3 * i).copy_from(&(-b));
                let mut dj = h.fixed_view_mut::<3, 3>(3 * j, 3 * j);
                dj += b;
            }
            for (m, y) in targets.iter().enumerate() {
                diag -= phi(self.qxy[(i, m)], &(self.points[i] - y), inv_var) * cxy;
            }
            let mut di = h.fixed_view_mut::<3, 3>(3 * i, 3 * i);
            di += diag;
        }
        h
    }

    /// Hessian-vector product without forming the Hessian.
    pub fn hessian_vec(&self, v: &[Point]) -> Vec<Point> {
        let n = self.points.len();
        assert_eq!(v.len(), n, "direction has the wrong length");
        let inv_var = self.ws.kernel().inv_var();
        let inv_var2 = inv_var * inv_var;
        let (cxx, cxy) = self.coefficients();
        let targets = self.ws.target.points();
        let mut out = vec![Point::zeros(); n];
        for i in 0..n {
            for j in 0..i {
                let d = self.points[i] - self.points[j];
                let dv = v[i] - v[j];
                let qv = self.qxx[(i, j)] * cxx;
                // Φ(d)·(vᵢ − vⱼ)
                let w = (d * (d.dot(&dv) * inv_var2) - dv * inv_var) * qv;
                out[i] += w;
                out[j] -= w;
            }
        }
        for (m, y) in targets.iter().enumerate() {
            for i in 0..n {
                let d = self.points[i] - y;
                let qv = self.qxy[(i, m)] * cxy;
                out[i] -= (d * (d.dot(&v[i]) * inv_var2) - v[i] * inv_var) * qv;
            }
        }
        out
    }
}

fn one_sided(a: &[Point], b: &[Point]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|r| (p - r).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Symmetric Hausdorff distance between two point sets.
pub fn hausdorff(a: &SurfaceGrid, b: &SurfaceGrid) -> f64 {
    let ab = one_sided(a.points(), b.points()).into_iter().fold(0.0, f64::max);
    let ba = one_sided(b.points(), a.points()).into_iter().fold(0.0, f64::max);
    ab.max(ba)
}

/// Nearest-rank quantile: the smallest sample with at least `q·n` samples at
/// or below it. `q = 1` is the maximum.
fn nearest_rank(mut values: Vec<f64>, q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    values[rank.min(n) - 1]
}

/// Hausdorff distance with each one-sided maximum replaced by a quantile of
/// the nearest-point distances.
pub fn robust_hausdorff(a: &SurfaceGrid, b: &SurfaceGrid, quantile: f64) -> Result<f64> {
    if !(quantile > 0.0 && quantile <= 1.0) {
        return Err(Error::param("quantile", format!("must lie in (0, 1], got {quantile}")));
    }
    let ab = nearest_rank(one_sided(a.points(), b.points()), quantile);
    let ba = nearest_rank(one_sided(b.points(), a.points()), quantile);
    Ok(ab.max(ba))
}

/// Median nearest-neighbour distance.
pub fn mesh_size(grid: &SurfaceGrid) -> Result<f64> {
    let pts = grid.points();
    if pts.len() < 2 {
        return Err(Error::input("mesh size needs at least two points"));
    }
    let mut nn: Vec<f64> = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            pts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| (p - r).norm_squared())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    nn.sort_by(f64::total_cmp);
    let n = nn.len();
    Ok(if n % 2 == 1 {
        nn[n / 2]
    } else {
        0.5 * (nn[n / 2 - 1] + nn[n / 2])
    })
}
