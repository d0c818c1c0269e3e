//! Isotropic strain intensity on a triangulated reference grid.

use crate::error::{Error, Result};
use crate::surface::SurfaceGrid;
use crate::Point;

/// Area of the triangle `p1 p2 p3`; zero for degenerate triangles.
pub fn triangle_area(p1: &Point, p2: &Point, p3: &Point) -> f64 {
    0.5 * (p2 - p1).cross(&(p3 - p1)).norm()
}

/// Per-vertex strain intensity `|√(B/A) − 1|`, where `A` and `B` are the
/// areas of the vertex's incident triangles before and after deformation.
#[derive(Debug, Clone, PartialEq)]
pub struct StrainField {
    /// `None` where the reference patch has zero area.
    pub values: Vec<Option<f64>>,
    pub reference: SurfaceGrid,
    pub deformed: SurfaceGrid,
}

impl StrainField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Indices of vertices whose strain is undefined.
    pub fn undefined(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect()
    }

    pub fn defined_values(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }
}

pub fn strain_intensity(reference: &SurfaceGrid, deformed: &SurfaceGrid) -> Result<StrainField> {
    let triangles = reference
        .triangles()
        .ok_or_else(|| Error::input("strain requires a triangulated reference mesh"))?;
    if deformed.len() != reference.len() {
        return Err(Error::input(format!(
            "deformed grid has {} points, reference has {}",
            deformed.len(),
            reference.len()
        )));
    }
    if let Some(t) = deformed.triangles() {
        if t != triangles {
            return Err(Error::input("deformed grid uses a different triangulation"));
        }
    }
    let n = reference.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut incident = vec![false; n];
    let (x, y) = (reference.points(), deformed.points());
    for tri in triangles {
        let [i, j, k] = *tri;
        let ta = triangle_area(&x[i], &x[j], &x[k]);
        let tb = triangle_area(&y[i], &y[j], &y[k]);
        for v in [i, j, k] {
            a[v] += ta;
            b[v] += tb;
            incident[v] = true;
        }
    }
    if let Some(v) = incident.iter().position(|&hit| !hit) {
        return Err(Error::input(format!("vertex {v} belongs to no triangle")));
    }
    let values = a
        .iter()
        .zip(&b)
        .map(|(&a, &b)| (a > 0.0).then(|| ((b / a).sqrt() - 1.0).abs()))
        .collect();
    Ok(StrainField {
        values,
        reference: reference.clone(),
        deformed: deformed.clone(),
    })
}

/// Empirical quantiles of the defined strain values, interpolating linearly
/// between order statistics (position `q·(n − 1)`).
pub fn strain_quantiles(field: &StrainField, quantiles: &[f64]) -> Result<Vec<f64>> {
    let mut v = field.defined_values();
    if v.is_empty() {
        return Err(Error::input("no vertex has a defined strain value"));
    }
    v.sort_by(f64::total_cmp);
    quantiles
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::param("quantile", format!("must lie in [0, 1], got {q}")));
            }
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            Ok(v[lo] + (v[hi] - v[lo]) * frac)
        })
        .collect()
}

/// The quantile grid `0.05, 0.10, …, 0.95`.
pub fn standard_quantiles() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}
