//! Independent reference computations shared by the integration tests.
//!
//! Nothing here calls into the solver internals: the oracles rebuild every
//! quantity from scalar formulas or generic dense linear algebra.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snapmatch::osa::SplitPoint;
use snapmatch::Point;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_points(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> Vec<Point> {
    (0..n)
        .map(|_| {
            Point::new(
                rng.random_range(-half_width..half_width),
                rng.random_range(-half_width..half_width),
                rng.random_range(-half_width..half_width),
            )
        })
        .collect()
}

pub fn random_block(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, 3, |_, _| rng.random_range(-half_width..half_width))
}

/// `(2π)^(−3/2) σ^(−3) exp(−r²/2σ²)`, written out independently.
pub fn gauss(a: &Point, b: &Point, sigma: f64) -> f64 {
    let r2 = (a - b).norm_squared();
    (2.0 * std::f64::consts::PI).powf(-1.5) / sigma.powi(3) * (-r2 / (2.0 * sigma * sigma)).exp()
}

/// Disparity from its three double sums.
pub fn scalar_dsd(x: &[Point], y: &[Point], s: f64) -> f64 {
    let mean = |a: &[Point], b: &[Point]| {
        let mut t = 0.0;
        for p in a {
            for q in b {
                t += gauss(p, q, s);
            }
        }
        t / (a.len() * b.len()) as f64
    };
    mean(x, x) - 2.0 * mean(x, y) + mean(y, y)
}

/// Central differences of a scalar function of a flat vector.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        p[i] += h;
        let mut m = x.clone();
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Central differences of a vector function; column `i` is `∂f/∂xᵢ`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let cols: Vec<DVector<f64>> = (0..x.len())
        .map(|i| {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

pub fn flat(points: &[Point]) -> DVector<f64> {
    DVector::from_fn(3 * points.len(), |i, _| points[i / 3][i % 3])
}

pub fn unflat(v: &DVector<f64>) -> Vec<Point> {
    (0..v.len() / 3).map(|i| Point::new(v[3 * i], v[3 * i + 1], v[3 * i + 2])).collect()
}

pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// `½ Σ τₖ αᵏᵀ𝐊αᵏ + ρ Σ ‖xᵏ − wᵏ‖² + ρ Σ ‖αᵏ − aᵏ‖²`.
pub fn kinetic_prox_objective(point: &SplitPoint, anchor: &SplitPoint, gram: &DMatrix<f64>, steps: &[f64], rho: f64) -> f64 {
    let mut v = 0.0;
    for (k, tau) in steps.iter().enumerate() {
        let a = &point.controls[k];
        v += 0.5 * tau * (a.transpose() * gram * a).trace();
        v += rho * (&point.states[k + 1] - &anchor.states[k + 1]).norm_squared();
        v += rho * (a - &anchor.controls[k]).norm_squared();
    }
    v
}

/// Minimizes `½vᵀHv + fᵀv` subject to `Cv = d` by assembling and solving the
/// full KKT matrix with LU.
fn kkt_solve(h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> DVector<f64> {
    let nv = h.nrows();
    let nc = c.nrows();
    let mut kkt = DMatrix::zeros(nv + nc, nv + nc);
    kkt.view_mut((0, 0), (nv, nv)).copy_from(h);
    kkt.view_mut((nv, 0), (nc, nv)).copy_from(c);
    kkt.view_mut((0, nv), (nv, nc)).copy_from(&c.transpose());
    let mut rhs = DVector::zeros(nv + nc);
    rhs.rows_mut(0, nv).copy_from(&(-f));
    rhs.rows_mut(nv, nc).copy_from(d);
    let sol = kkt.lu().solve(&rhs).expect("KKT matrix is nonsingular");
    sol.rows(0, nv).into_owned()
}

/// Dense equality-constrained QP for the kinetic prox. With `kinetic` off
/// the same assembly yields the plain projection.
fn dense_qp(
    anchor: &SplitPoint,
    transports: &[DMatrix<f64>],
    gram: &DMatrix<f64>,
    steps: &[f64],
    rho: f64,
    kinetic: bool,
) -> SplitPoint {
    let l = steps.len();
    let n = gram.nrows();
    // Per coordinate: v = [x¹ … x^L, α⁰ … α^{L−1}], each block of length n.
    let nv = 2 * l * n;
    let xs = |k: usize| (k - 1) * n;
    let al = |k: usize| l * n + k * n;
    let mut states = vec![anchor.states[0].clone(); l + 1];
    let mut controls = vec![DMatrix::zeros(n, 3); l];
    for c in 0..3 {
        let mut h = DMatrix::zeros(nv, nv);
        let mut f = DVector::zeros(nv);
        for k in 0..l {
            let xi = xs(k + 1);
            let ai = al(k);
            for i in 0..n {
                h[(xi + i, xi + i)] += 2.0 * rho;
                f[xi + i] -= 2.0 * rho * anchor.states[k + 1][(i, c)];
                h[(ai + i, ai + i)] += 2.0 * rho;
                f[ai + i] -= 2.0 * rho * anchor.controls[k][(i, c)];
            }
            if kinetic {
                let mut blk = h.view_mut((ai, ai), (n, n));
                blk += gram * steps[k];
            }
        }
        // xᵏ⁺¹ − xᵏ − τₖ Uᵏ αᵏ = 0, with x⁰ moved to the right-hand side.
        let mut cm = DMatrix::zeros(l * n, nv);
        let mut d = DVector::zeros(l * n);
        for k in 0..l {
            let row = k * n;
            for i in 0..n {
                cm[(row + i, xs(k + 1) + i)] = 1.0;
                if k > 0 {
                    cm[(row + i, xs(k) + i)] = -1.0;
                } else {
                    d[row + i] = anchor.states[0][(i, c)];
                }
            }
            let mut blk = cm.view_mut((row, al(k)), (n, n));
            blk -= &transports[k] * steps[k];
        }
        let v = kkt_solve(&h, &f, &cm, &d);
        for k in 0..l {
            for i in 0..n {
                states[k + 1][(i, c)] = v[xs(k + 1) + i];
                controls[k][(i, c)] = v[al(k) + i];
            }
        }
    }
    SplitPoint { states, controls }
}

pub fn kinetic_prox_oracle(anchor: &SplitPoint, transports: &[DMatrix<f64>], gram: &DMatrix<f64>, steps: &[f64], rho: f64) -> SplitPoint {
    dense_qp(anchor, transports, gram, steps, rho, true)
}

/// Euclidean projection of the anchor onto the dynamics constraints.
pub fn projection_oracle(anchor: &SplitPoint, transports: &[DMatrix<f64>], steps: &[f64]) -> SplitPoint {
    let n = anchor.states[0].nrows();
    dense_qp(anchor, transports, &DMatrix::zeros(n, n), steps, 0.5, false)
}

/// Global minimizer of a function of three variables over the cube
/// `centre ± radius`: exhaustive grid, then compass search with halving
/// steps from the best grid node.
pub fn grid_search_3d(f: impl Fn(&Point) -> f64, centre: &Point, radius: f64, nodes: usize) -> Point {
    let h = 2.0 * radius / (nodes - 1) as f64;
    let mut best = *centre;
    let mut best_v = f(centre);
    for i in 0..nodes {
        for j in 0..nodes {
            for k in 0..nodes {
                let p = centre + Point::new(i as f64, j as f64, k as f64) * h - Point::repeat(radius);
                let v = f(&p);
                if v < best_v {
                    best = p;
                    best_v = v;
                }
            }
        }
    }
    let mut step = h;
    while step > 1e-10 {
        let mut moved = false;
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut p = best;
                p[axis] += sign * step;
                let v = f(&p);
                if v < best_v {
                    best = p;
                    best_v = v;
                    moved = true;
                }
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Worst relative errors of `dsd_gradient` (step 1e−5) and `dsd_hessian`
/// (step 1e−4 on the gradient) against central differences on random
/// instances with `N, M ≤ 8`.
pub fn dsd_calculus_errors(seed: u64, instances: usize) -> (f64, f64) {
    use snapmatch::surface::{dsd_gradient, dsd_hessian, DisparityWorkspace, SurfaceGrid};
    let mut r = rng(seed);
    let mut worst_grad: f64 = 0.0;
    let mut worst_hess: f64 = 0.0;
    for _ in 0..instances {
        let n = r.random_range(1..=8);
        let m = r.random_range(1..=8);
        let s = r.random_range(0.5..1.5);
        let x = random_points(&mut r, n, 1.0);
        let y = random_points(&mut r, m, 1.0);
        let ws = DisparityWorkspace::new(SurfaceGrid::new(y.clone()).unwrap(), s).unwrap();
        let x0 = flat(&x);

        let grid = |v: &DVector<f64>| SurfaceGrid::new(unflat(v)).unwrap();
        let analytic = flat(&dsd_gradient(&grid(&x0), &ws));
        let numeric = fd_gradient(|v| scalar_dsd(&unflat(v), &y, s), &x0, 1e-5);
        let g_err = (&analytic - &numeric).norm() / analytic.norm().max(1e-300);
        worst_grad = worst_grad.max(g_err);

        let hess = dsd_hessian(&grid(&x0), &ws);
        let numeric_h = fd_jacobian(|v| flat(&dsd_gradient(&grid(v), &ws)), &x0, 1e-4);
        worst_hess = worst_hess.max(relative_error(&hess, &numeric_h));
    }
    (worst_grad, worst_hess)
}

/// Errors of the kinetic prox on random `N = 3, L = 2` instances against the
/// dense KKT oracle: worst constraint residual, worst KKT residual, worst
/// relative objective gap and worst relative distance to the oracle point.
pub fn kinetic_prox_errors(seed: u64, instances: usize) -> [f64; 4] {
    use snapmatch::dynamics::TimeGrid;
    use snapmatch::kernel::{cross_kernel_matrix, kernel_matrix, KernelConfig};
    use snapmatch::osa::{constraint_residual, kkt_residual, quadratic_prox};
    use snapmatch::surface::SurfaceGrid;
    use snapmatch::SnapshotProblem;
    let mut r = rng(seed);
    let mut worst = [0.0f64; 4];
    for _ in 0..instances {
        let (n, l) = (3, 2);
        let sigma = r.random_range(0.5..1.2);
        let x0 = random_points(&mut r, n, 1.0);
        let times = vec![0.0, r.random_range(0.2..1.0), r.random_range(1.2..2.0)];
        let time = TimeGrid::new(times).unwrap();
        let targets = (0..l).map(|_| SurfaceGrid::new(random_points(&mut r, 4, 1.0)).unwrap()).collect();
        let rho = r.random_range(0.05..5.0);
        let problem = SnapshotProblem::new(
            SurfaceGrid::new(x0.clone()).unwrap(),
            targets,
            time,
            KernelConfig::new(sigma, 0.7).unwrap(),
            1.0,
            rho,
        )
        .unwrap();
        let gram = kernel_matrix(&x0, sigma).unwrap().values;
        let moved = random_points(&mut r, n, 1.0);
        let transports = vec![gram.clone(), cross_kernel_matrix(&moved, &x0, sigma).unwrap()];
        let x0_block = DMatrix::from_fn(n, 3, |i, c| x0[i][c]);
        let mut anchor = SplitPoint {
            states: (0..=l).map(|_| random_block(&mut r, n, 2.0)).collect(),
            controls: (0..l).map(|_| random_block(&mut r, n, 3.0)).collect(),
        };
        anchor.states[0] = x0_block;

        let steps = problem.time.steps();
        let got = quadratic_prox(&anchor, &transports, &problem).unwrap();
        let want = kinetic_prox_oracle(&anchor, &transports, &gram, steps, rho);
        let f_got = kinetic_prox_objective(&got, &anchor, &gram, steps, rho);
        let f_want = kinetic_prox_objective(&want, &anchor, &gram, steps, rho);
        let dist = got.sub(&want).norm() / want.norm();
        let errs = [
            constraint_residual(&got, &transports, steps),
            kkt_residual(&got, &anchor, &transports, &gram, steps, rho),
            (f_got - f_want).abs() / f_want.abs(),
            dist,
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    worst
}

/// Distance between the Newton result of the `N = M = L = 1` disparity prox
/// and a grid-search minimizer of the same three-variable objective, written
/// out from scalar formulas.
pub fn single_point_prox_error(seed: u64) -> f64 {
    use snapmatch::dynamics::TimeGrid;
    use snapmatch::kernel::KernelConfig;
    use snapmatch::osa::{disparity_prox, NewtonOptions};
    use snapmatch::surface::SurfaceGrid;
    use snapmatch::SnapshotProblem;
    let mut r = rng(seed);
    let (sigma_v, sigma_d) = (0.5, 0.6);
    let x0 = Point::new(r.random_range(-0.2..0.2), r.random_range(-0.2..0.2), 0.0);
    let y = x0 + Point::new(0.5, -0.3, 0.2);
    let tau = 0.8;
    let (lambda, rho) = (3.0, 0.4);
    let problem = SnapshotProblem::new(
        SurfaceGrid::new(vec![x0]).unwrap(),
        vec![SurfaceGrid::new(vec![y]).unwrap()],
        TimeGrid::new(vec![0.0, tau]).unwrap(),
        KernelConfig::new(sigma_v, sigma_d).unwrap(),
        lambda,
        rho,
    )
    .unwrap();
    let w = x0 + Point::new(0.2, 0.1, -0.1);
    let a = Point::new(0.3, -0.2, 0.1);
    let block = |p: &Point| DMatrix::from_row_slice(1, 3, p.as_slice());
    let anchor = SplitPoint {
        states: vec![block(&x0), block(&w)],
        controls: vec![block(&a)],
    };
    let u = gauss(&x0, &x0, sigma_v);
    let transports = vec![DMatrix::from_element(1, 1, u)];
    let options = NewtonOptions {
        tol: 1e-12,
        max_iterations: 100,
    };
    let got = disparity_prox(&anchor, &transports, &problem, &options).unwrap();
    let got = Point::new(got.controls[0][(0, 0)], got.controls[0][(0, 1)], got.controls[0][(0, 2)]);

    let h = |alpha: &Point| {
        let x = x0 + alpha * (tau * u);
        lambda * scalar_dsd(&[x], &[y], sigma_d) + rho * (x - w).norm_squared() + rho * (alpha - a).norm_squared()
    };
    let want = grid_search_3d(h, &a, 4.0, 81);
    (got - want).norm()
}
