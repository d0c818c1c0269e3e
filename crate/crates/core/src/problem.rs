//! Problem instances and their data-scale-relative defaults.

use crate::dynamics::{kinetic_blocks, TimeGrid};
use crate::error::{Error, Result};
use crate::kernel::{gram, KernelConfig};
use crate::surface::{dsd, mesh_size, DisparityWorkspace, SurfaceGrid};
use crate::Point;

/// Initial grid, target snapshots, time grid and weights of one matching problem.
#[derive(Debug, Clone)]
pub struct SnapshotProblem {
    /// `x⁰`, `N` points.
    pub initial: SurfaceGrid,
    /// `y¹ … y^L`.
    pub targets: Vec<SurfaceGrid>,
    pub time: TimeGrid,
    pub kernels: KernelConfig,
    /// Disparity weight `λ`.
    pub lambda: f64,
    /// Proximal weight `ρ`.
    pub rho: f64,
    disparities: Vec<DisparityWorkspace>,
}

impl SnapshotProblem {
    pub fn new(
        initial: SurfaceGrid,
        targets: Vec<SurfaceGrid>,
        time: TimeGrid,
        kernels: KernelConfig,
        lambda: f64,
        rho: f64,
    ) -> Result<Self> {
        kernels.validate()?;
        if targets.len() != time.len() {
            return Err(Error::input(format!(
                "{} target snapshots for {} time steps",
                targets.len(),
                time.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("must be finite and > 0, got {lambda}")));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::param("rho", format!("must be finite and > 0, got {rho}")));
        }
        let disparities = targets
            .iter()
            .map(|y| DisparityWorkspace::new(y.clone(), kernels.sigma_d))
            .collect::<Result<Vec<_>>>()?;
        Ok(SnapshotProblem {
            initial,
            targets,
            time,
            kernels,
            lambda,
            rho,
            disparities,
        })
    }

    /// Number of time steps `L`.
    pub fn steps(&self) -> usize {
        self.time.len()
    }

    pub fn n_points(&self) -> usize {
        self.initial.len()
    }

    /// One disparity workspace per target, `disparities()[k-1]` for `yᵏ`.
    pub fn disparities(&self) -> &[DisparityWorkspace] {
        &self.disparities
    }
}

/// Optional overrides resolved against data-derived defaults.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ProblemSettings {
    pub sigma_v: Option<f64>,
    pub sigma_d: Option<f64>,
    pub ridge: Option<f64>,
    pub lambda: Option<f64>,
    pub rho: Option<f64>,
}

impl ProblemSettings {
    /// Builds a problem, filling every unset value with its default:
    ///
    /// * `σ_v = 2 · mesh_size(x⁰)`, `σ_d = mesh_size(y¹)`
    /// * `λ` such that `λ·dsd(x⁰, y^L)` is [`LAMBDA_RATIO`] times the kinetic
    ///   energy of a straight-line reference motion (see
    ///   [`reference_kinetic_energy`])
    /// * `ρ` from [`default_rho`]
    pub fn build(
        &self,
        initial: SurfaceGrid,
        targets: Vec<SurfaceGrid>,
        time: TimeGrid,
    ) -> Result<SnapshotProblem> {
        if targets.is_empty() {
            return Err(Error::input("at least one target snapshot is required"));
        }
        let sigma_v = match self.sigma_v {
            Some(s) => s,
            None => 2.0 * mesh_size(&initial)?,
        };
        let sigma_d = match self.sigma_d {
            Some(s) => s,
            None => mesh_size(&targets[0])?,
        };
        let kernels = KernelConfig {
            sigma_v,
            sigma_d,
            ridge: self.ridge.unwrap_or(KernelConfig::DEFAULT_RIDGE),
        };
        kernels.validate()?;
        let lambda = match self.lambda {
            Some(l) => l,
            None => default_lambda(&initial, &targets, &time, &kernels)?,
        };
        let rho = match self.rho {
            Some(r) => r,
            None => default_rho(lambda, &initial, &targets, &kernels)?,
        };
        SnapshotProblem::new(initial, targets, time, kernels, lambda, rho)
    }
}

/// Kinetic energy of a constant-velocity motion carrying each initial point to
/// its nearest neighbour in the final snapshot.
///
/// The per-point velocities are turned into controls by dividing by the Gram
/// row sums, the exact inverse for velocity fields that are locally constant at
/// the kernel scale. Solving with the Gram matrix itself would amplify the
/// nearest-neighbour jitter through its tiny eigenvalues.
pub fn reference_kinetic_energy(
    initial: &SurfaceGrid,
    final_target: &SurfaceGrid,
    time: &TimeGrid,
    kernels: &KernelConfig,
) -> f64 {
    let g = kernels.velocity();
    let k = gram(initial.points(), &g);
    let t_total = time.times()[time.len()] - time.times()[0];
    let alpha = nalgebra::DMatrix::from_fn(initial.len(), 3, |n, c| {
        let x = initial.points()[n];
        let target = nearest(&x, final_target.points());
        (target[c] - x[c]) / t_total / k.row(n).sum()
    });
    let alphas = vec![alpha; time.len()];
    kinetic_blocks(&alphas, &k, time.steps())
}

fn nearest(x: &Point, candidates: &[Point]) -> Point {
    *candidates
        .iter()
        .min_by(|a, b| (*a - x).norm_squared().total_cmp(&(*b - x).norm_squared()))
        .expect("targets are nonempty")
}

/// Ratio of the weighted initial disparity to the reference kinetic energy.
pub const LAMBDA_RATIO: f64 = 1000.0;

/// `λ = LAMBDA_RATIO · kin_ref / dsd(x⁰, y^L)`; falls back to 1 when either
/// side vanishes.
pub fn default_lambda(
    initial: &SurfaceGrid,
    targets: &[SurfaceGrid],
    time: &TimeGrid,
    kernels: &KernelConfig,
) -> Result<f64> {
    let last = targets.last().ok_or_else(|| Error::input("no target snapshots"))?;
    let ws = DisparityWorkspace::new(last.clone(), kernels.sigma_d)?;
    let d = dsd(initial, &ws);
    let kin = reference_kinetic_energy(initial, last, time, kernels);
    let lambda = LAMBDA_RATIO * kin / d;
    Ok(if lambda.is_finite() && lambda > 0.0 { lambda } else { 1.0 })
}

/// `ρ = λ · dsd(x⁰, y^L) / (N · D²)`, the secant curvature of the weighted
/// disparity over the displacement every point is expected to make. `D²` is
/// the larger of `mesh_size(x⁰)²` and the mean squared distance from `x⁰` to
/// its nearest points on `y^L`. Falls back to `λ / 10` when the initial
/// disparity vanishes.
pub fn default_rho(
    lambda: f64,
    initial: &SurfaceGrid,
    targets: &[SurfaceGrid],
    kernels: &KernelConfig,
) -> Result<f64> {
    let last = targets.last().ok_or_else(|| Error::input("no target snapshots"))?;
    let ws = DisparityWorkspace::new(last.clone(), kernels.sigma_d)?;
    let d = dsd(initial, &ws);
    let h = mesh_size(initial)?;
    let reach: f64 = initial
        .points()
        .iter()
        .map(|x| (nearest(x, last.points()) - x).norm_squared())
        .sum::<f64>()
        / initial.len() as f64;
    let rho = lambda * d / (initial.len() as f64 * reach.max(h * h));
    Ok(if rho.is_finite() && rho > 0.0 { rho } else { lambda / 10.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, dx: f64, shift: f64) -> SurfaceGrid {
        SurfaceGrid::new((0..n).map(|i| Point::new(i as f64 * dx, shift, 0.0)).collect()).unwrap()
    }

    #[test]
    fn validates_shapes_and_weights() {
        let x0 = line(4, 1.0, 0.0);
        let time = TimeGrid::uniform(2, 1.0).unwrap();
        let k = KernelConfig::new(1.0, 1.0).unwrap();
        assert!(SnapshotProblem::new(x0.clone(), vec![x0.clone()], time.clone(), k, 1.0, 1.0).is_err());
        let two = vec![x0.clone(), x0.clone()];
        assert!(SnapshotProblem::new(x0.clone(), two.clone(), time.clone(), k, 0.0, 1.0).is_err());
        assert!(SnapshotProblem::new(x0.clone(), two.clone(), time.clone(), k, 1.0, -1.0).is_err());
        assert!(SnapshotProblem::new(x0, two, time, k, 1.0, 1.0).is_ok());
    }

    #[test]
    fn defaults_follow_mesh_sizes() {
        let x0 = line(6, 0.5, 0.0);
        let y = line(6, 0.25, 0.3);
        let time = TimeGrid::uniform(1, 1.0).unwrap();
        let p = ProblemSettings::default().build(x0, vec![y], time).unwrap();
        assert_eq!(p.kernels.sigma_v, 1.0);
        assert_eq!(p.kernels.sigma_d, 0.25);
        assert!(p.lambda > 0.0);
        // Mean squared nearest distance: (3 * 0.09 + 0.1525 + 0.6525 + 1.6525) / 6.
        let d = dsd(&p.initial, &p.disparities()[0]);
        let expected = p.lambda * d / (6.0 * (2.7275 / 6.0));
        assert!((p.rho - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn rho_reach_is_floored_at_the_mesh_size() {
        let time = TimeGrid::uniform(1, 1.0).unwrap();
        let near = ProblemSettings::default().build(line(6, 0.5, 0.0), vec![line(6, 0.5, 0.3)], time.clone()).unwrap();
        let d = dsd(&near.initial, &near.disparities()[0]);
        let expected = near.lambda * d / (6.0 * 0.25);
        assert!((near.rho - expected).abs() <= 1e-12 * expected);

        let far = ProblemSettings::default().build(line(6, 0.5, 0.0), vec![line(6, 0.5, 0.8)], time).unwrap();
        let d = dsd(&far.initial, &far.disparities()[0]);
        let expected = far.lambda * d / (6.0 * 0.64);
        assert!((far.rho - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn default_lambda_falls_back_when_matched() {
        let x0 = line(5, 0.5, 0.0);
        let time = TimeGrid::uniform(1, 1.0).unwrap();
        let k = KernelConfig::new(1.0, 0.5).unwrap();
        assert_eq!(default_lambda(&x0, &[x0.clone()], &time, &k).unwrap(), 1.0);
        assert_eq!(default_rho(2.0, &x0, &[x0.clone()], &k).unwrap(), 0.2);
    }

    #[test]
    fn overrides_win() {
        let x0 = line(5, 0.5, 0.0);
        let time = TimeGrid::uniform(1, 1.0).unwrap();
        let s = ProblemSettings {
            sigma_v: Some(0.7),
            sigma_d: Some(0.3),
            ridge: Some(0.0),
            lambda: Some(4.0),
            rho: Some(0.125),
        };
        let p = s.build(x0.clone(), vec![x0], time).unwrap();
        assert_eq!((p.kernels.sigma_v, p.kernels.sigma_d, p.kernels.ridge), (0.7, 0.3, 0.0));
        assert_eq!((p.lambda, p.rho), (4.0, 0.125));
    }
}
