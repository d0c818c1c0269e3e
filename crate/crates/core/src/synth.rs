//! Synthetic snapshot problems with known deformations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::problem::{ProblemSettings, SnapshotProblem};
use crate::surface::SurfaceGrid;
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseShape {
    /// Unit sphere.
    Sphere,
    /// Semi-axes 1.3, 1.0, 0.7.
    Ellipsoid,
    /// Triangulated saddle patch over `[−1, 1]²`.
    OpenSheet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeformationKind {
    /// Rigid shift of length `magnitude`.
    Translation,
    /// Scaling about the centroid by the factor `magnitude`.
    UniformScale,
    /// Gaussian-profile outward bump of height `magnitude` around the pole.
    SmoothBump,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Deformation {
    pub kind: DeformationKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub base_shape: BaseShape,
    pub n_points: usize,
    pub m_points: usize,
    pub n_snapshots: usize,
    pub deformation: Deformation,
    /// Standard deviation of the Gaussian noise added to target coordinates.
    pub noise: f64,
    pub seed: u64,
}

/// Width of the smooth bump on the unit-scale shapes.
pub const BUMP_WIDTH: f64 = 0.5;
const TRANSLATION_DIRECTION: [f64; 3] = [2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0];

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 4 || self.m_points < 4 {
            return Err(Error::param("n_points", "point counts must be at least 4"));
        }
        if self.n_snapshots == 0 {
            return Err(Error::param("n_snapshots", "must be at least 1"));
        }
        if !self.deformation.magnitude.is_finite() {
            return Err(Error::param("magnitude", "must be finite"));
        }
        if self.deformation.kind == DeformationKind::UniformScale && !(self.deformation.magnitude > 0.0) {
            return Err(Error::param("magnitude", "scale factor must be > 0"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::param("noise", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// `n` nearly uniform points on the unit sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Point> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Point::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Closed latitude-longitude sphere mesh: two poles and `rings` circles of
/// `segments` vertices.
pub fn sphere_mesh(rings: usize, segments: usize, radius: f64) -> Result<SurfaceGrid> {
    if rings < 1 || segments < 3 {
        return Err(Error::input("sphere mesh needs at least 1 ring and 3 segments"));
    }
    let mut points = vec![Point::new(0.0, 0.0, radius)];
    for r in 0..rings {
        let theta = std::f64::consts::PI * (r + 1) as f64 / (rings + 1) as f64;
        for s in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
            points.push(Point::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * radius);
        }
    }
    let south = points.len();
    points.push(Point::new(0.0, 0.0, -radius));
    let at = |r: usize, s: usize| 1 + r * segments + s % segments;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, at(0, s), at(0, s + 1)]);
        triangles.push([south, at(rings - 1, s + 1), at(rings - 1, s)]);
    }
    for r in 0..rings - 1 {
        for s in 0..segments {
            triangles.push([at(r, s), at(r + 1, s), at(r + 1, s + 1)]);
            triangles.push([at(r, s), at(r + 1, s + 1), at(r, s + 1)]);
        }
    }
    SurfaceGrid::with_triangles(points, triangles)
}

/// `n` points on a gently curved sheet, filled row-major on a near-square
/// grid; the triangulation covers every vertex including a partial last row.
pub fn open_sheet(n: usize) -> Result<SurfaceGrid> {
    let cols = (n as f64).sqrt().ceil().max(2.0) as usize;
    let rows = n.div_ceil(cols);
    if rows < 2 {
        return Err(Error::input("open sheet needs at least two rows of points"));
    }
    let step_x = 2.0 / (cols - 1) as f64;
    let step_y = 2.0 / (rows - 1) as f64;
    let points: Vec<Point> = (0..n)
        .map(|i| {
            let x = -1.0 + (i % cols) as f64 * step_x;
            let y = -1.0 + (i / cols) as f64 * step_y;
            Point::new(x, y, 0.2 * (x * x - y * y))
        })
        .collect();
    let id = |r: usize, c: usize| r * cols + c;
    let mut triangles = Vec::new();
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let (a, b, d, e) = (id(r, c), id(r, c + 1), id(r + 1, c), id(r + 1, c + 1));
            if e < n {
                triangles.push([a, b, e]);
                triangles.push([a, e, d]);
            } else if d < n {
                triangles.push([a, b, d]);
            }
        }
    }
    SurfaceGrid::with_triangles(points, triangles)
}

fn base_samples(shape: BaseShape, n: usize) -> Result<SurfaceGrid> {
    match shape {
        BaseShape::Sphere => SurfaceGrid::new(fibonacci_sphere(n)),
        BaseShape::Ellipsoid => SurfaceGrid::new(
            fibonacci_sphere(n)
                .into_iter()
                .map(|p| Point::new(1.3 * p.x, p.y, 0.7 * p.z))
                .collect(),
        ),
        BaseShape::OpenSheet => open_sheet(n),
    }
}

/// The deformation as a map `(x, t) ↦ x(t)` for `t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct DeformationField {
    kind: DeformationKind,
    magnitude: f64,
    centre: Point,
    pole: Point,
    direction: Point,
}

impl DeformationField {
    /// Anchors the deformation on a sampled reference shape.
    pub fn new(deformation: Deformation, shape: BaseShape, reference: &SurfaceGrid) -> Self {
        let pts = reference.points();
        let centre = pts.iter().sum::<Point>() / pts.len() as f64;
        let (pole_target, direction) = match shape {
            BaseShape::OpenSheet => (Point::zeros(), Point::z()),
            _ => (Point::new(0.0, 0.0, 1.0e3), Point::z()),
        };
        let pole = *pts
            .iter()
            .min_by(|a, b| (*a - pole_target).norm().total_cmp(&(*b - pole_target).norm()))
            .expect("reference grids are nonempty");
        let direction = match shape {
            BaseShape::OpenSheet => direction,
            _ => (pole - centre).try_normalize(1e-12).unwrap_or(direction),
        };
        DeformationField {
            kind: deformation.kind,
            magnitude: deformation.magnitude,
            centre,
            pole,
            direction,
        }
    }

    pub fn apply(&self, x: &Point, t: f64) -> Point {
        match self.kind {
            DeformationKind::Translation => x + Point::from(TRANSLATION_DIRECTION) * (self.magnitude * t),
            DeformationKind::UniformScale => self.centre + (x - self.centre) * (1.0 + t * (self.magnitude - 1.0)),
            DeformationKind::SmoothBump => {
                let d2 = (x - self.pole).norm_squared();
                x + self.direction * (self.magnitude * t * (-d2 / (2.0 * BUMP_WIDTH * BUMP_WIDTH)).exp())
            }
        }
    }
}

/// Problem with data-derived defaults plus the ground-truth trajectory of `x⁰`.
pub fn generate(spec: &SyntheticSpec) -> Result<(SnapshotProblem, Trajectory)> {
    generate_with(spec, &ProblemSettings::default())
}

pub fn generate_with(spec: &SyntheticSpec, settings: &ProblemSettings) -> Result<(SnapshotProblem, Trajectory)> {
    spec.validate()?;
    let initial = base_samples(spec.base_shape, spec.n_points)?;
    let target_base = if spec.m_points == spec.n_points {
        initial.clone()
    } else {
        base_samples(spec.base_shape, spec.m_points)?
    };
    let field = DeformationField::new(spec.deformation, spec.base_shape, &initial);
    let time = TimeGrid::uniform(spec.n_snapshots, 1.0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::param("noise", e.to_string()))?;
    let mut targets = Vec::with_capacity(spec.n_snapshots);
    let mut truth = vec![initial.clone()];
    for &t in &time.times()[1..] {
        truth.push(initial.map_points(|x| field.apply(x, t))?);
        targets.push(target_base.map_points(|y| field.apply(y, t))?);
    }
    if spec.noise > 0.0 {
        for target in &mut targets {
            let noisy = target
                .points()
                .iter()
                .map(|p| p + Point::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            *target = target.with_points(noisy)?;
        }
    }
    let problem = settings.build(initial, targets, time)?;
    Ok((problem, Trajectory { states: truth }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::mesh_size;

    fn spec(kind: DeformationKind, magnitude: f64) -> SyntheticSpec {
        SyntheticSpec {
            base_shape: BaseShape::Sphere,
            n_points: 30,
            m_points: 30,
            n_snapshots: 2,
            deformation: Deformation { kind, magnitude },
            noise: 0.0,
            seed: 7,
        }
    }

    #[test]
    fn fibonacci_points_are_on_the_sphere() {
        for p in fibonacci_sphere(40) {
            assert!((p.norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_translation_keeps_targets() {
        let (problem, truth) = generate(&spec(DeformationKind::Translation, 0.0)).unwrap();
        for y in &problem.targets {
            assert_eq!(y.points(), problem.initial.points());
        }
        assert_eq!(truth.states.len(), 3);
    }

    #[test]
    fn truth_reproduces_noise_free_targets() {
        for kind in [DeformationKind::Translation, DeformationKind::UniformScale, DeformationKind::SmoothBump] {
            let (problem, truth) = generate(&spec(kind, 1.1)).unwrap();
            for (x, y) in truth.states[1..].iter().zip(&problem.targets) {
                assert_eq!(x.points(), y.points());
            }
        }
    }

    #[test]
    fn seeded_noise_is_deterministic() {
        let mut s = spec(DeformationKind::SmoothBump, 0.3);
        s.noise = 0.01;
        let (a, _) = generate(&s).unwrap();
        let (b, _) = generate(&s).unwrap();
        assert_eq!(a.targets, b.targets);
        s.seed = 8;
        let (c, _) = generate(&s).unwrap();
        assert_ne!(a.targets, c.targets);
    }

    #[test]
    fn bump_peaks_at_the_pole() {
        let (problem, truth) = generate(&spec(DeformationKind::SmoothBump, 0.4)).unwrap();
        let disp: Vec<f64> = truth
            .last()
            .points()
            .iter()
            .zip(problem.initial.points())
            .map(|(a, b)| (a - b).norm())
            .collect();
        let max = disp.iter().cloned().fold(0.0, f64::max);
        assert!((max - 0.4).abs() < 1e-12);
    }

    #[test]
    fn meshes_are_valid() {
        let sphere = sphere_mesh(6, 10, 1.0).unwrap();
        assert_eq!(sphere.len(), 62);
        assert_eq!(sphere.triangles().unwrap().len(), 2 * 10 * 6);
        for n in [9, 10, 17, 50] {
            let sheet = open_sheet(n).unwrap();
            assert_eq!(sheet.len(), n);
            let field = crate::strain::strain_intensity(&sheet, &sheet).unwrap();
            assert!(field.undefined().is_empty());
        }
        assert!(mesh_size(&open_sheet(25).unwrap()).unwrap() > 0.4);
    }
}
