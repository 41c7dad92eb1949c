//! Interaction bisector surface: the set of points equidistant from two
//! objects, extracted as the zero level set of `s(x) = d_A(x) - d_B(x)` on a
//! regular grid, refined by bisection along sign-change edges.
//!
//! The domain is the axis-aligned box of the smallest sphere enclosing both
//! objects' bounding spheres. Points are culled if they leave that sphere or
//! fall inside either object (which happens when the objects interpenetrate).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, Pt3, RayAccelerator, Vec3};
use crate::rng::rng_from_seed;
use rand::Rng;

pub const MIN_GRID_RES: usize = 16;

/// Bisection gives up after this many halvings; at 60 the interval is below
/// f64 resolution for any practical scene size.
const MAX_REFINE_STEPS: usize = 60;

#[derive(Debug, Error)]
pub enum IbsError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("grid resolution {got} is below the minimum {MIN_GRID_RES}")]
    ResolutionTooLow { got: usize },
    #[error("refinement tolerance must be positive and below 1, got {got}")]
    BadTolerance { got: f64 },
    #[error("no bisector found: the distance fields never change sign in the domain")]
    EmptySurface,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IbsConfig {
    /// Grid vertices per axis.
    pub grid_res: usize,
    /// Relative equidistance tolerance: points are refined until
    /// `|d_A - d_B| <= tol * max(d_A, d_B, eps)`.
    pub refine_tol: f64,
}

impl Default for IbsConfig {
    fn default() -> Self {
        Self { grid_res: 64, refine_tol: 0.01 }
    }
}

/// Extracted bisector surface: point cloud with both distances recorded.
#[derive(Clone, Debug)]
pub struct IbsSurface {
    pub points: Vec<Pt3>,
    pub d_a: Vec<f64>,
    pub d_b: Vec<f64>,
    /// Truncation sphere enclosing both objects.
    pub center: Pt3,
    pub radius: f64,
}

/// Weighted subsample of a surface, in ascending original-index order.
#[derive(Clone, Debug)]
pub struct IbsPointSet {
    pub points: Vec<Pt3>,
    pub d_a: Vec<f64>,
    pub weights: Vec<f64>,
}

impl IbsPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

impl IbsSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Scene diameter: the truncation sphere's diameter.
    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    /// Importance weights favoring points close to object A:
    /// `w = 1 / (d_A + delta)^2` with `delta` at 1% of the scene diameter.
    pub fn importance_weights(&self) -> Vec<f64> {
        let delta = 0.01 * self.diameter();
        self.d_a.iter().map(|d| 1.0 / ((d + delta) * (d + delta))).collect()
    }

    /// Weighted sample without replacement (Efraimidis-Spirakis keys):
    /// item i gets key `ln(u_i) / w_i`, the `count` largest keys win.
    pub fn sample(&self, count: usize, seed: u64) -> IbsPointSet {
        let weights = self.importance_weights();
        let idx = weighted_index_sample(&weights, count, seed);
        IbsPointSet {
            points: idx.iter().map(|&i| self.points[i]).collect(),
            d_a: idx.iter().map(|&i| self.d_a[i]).collect(),
            weights: idx.iter().map(|&i| weights[i]).collect(),
        }
    }
}

/// Samples `count` distinct indices without replacement, probability
/// proportional to weight (Efraimidis-Spirakis keys: item i gets key
/// `ln(u_i) / w_i`, the `count` largest keys win). Indices come back in
/// ascending order; if `count` covers every item, all indices are returned.
pub fn weighted_index_sample(weights: &[f64], count: usize, seed: u64) -> Vec<usize> {
    if count >= weights.len() {
        return (0..weights.len()).collect();
    }
    let mut rng = rng_from_seed(seed);
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            (u.ln() / w, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut idx: Vec<usize> = keyed[..count].iter().map(|&(_, i)| i).collect();
    idx.sort_unstable();
    idx
}

/// Smallest sphere enclosing two spheres.
pub fn enclosing_sphere(c1: Pt3, r1: f64, c2: Pt3, r2: f64) -> (Pt3, f64) {
    let d = (c2 - c1).norm();
    if d + r2 <= r1 {
        return (c1, r1);
    }
    if d + r1 <= r2 {
        return (c2, r2);
    }
    let radius = 0.5 * (d + r1 + r2);
    let dir = (c2 - c1) / d;
    (c1 + dir * (radius - r1), radius)
}

struct RefinedPoint {
    point: Pt3,
    d_a: f64,
    d_b: f64,
}

/// Bisects along [p, q] (where s changes sign) until the relative
/// equidistance condition holds. `None` if it cannot be met.
fn refine_edge(
    a: &RayAccelerator,
    b: &RayAccelerator,
    mut p: Pt3,
    mut sp: f64,
    mut q: Pt3,
    tol: f64,
    eps: f64,
) -> Option<RefinedPoint> {
    debug_assert!(sp != 0.0);
    for _ in 0..MAX_REFINE_STEPS {
        let mid = Pt3::from((p.coords + q.coords) * 0.5);
        let da = a.nearest_distance(mid);
        let db = b.nearest_distance(mid);
        let s = da - db;
        if s.abs() <= tol * da.max(db).max(eps) {
            return Some(RefinedPoint { point: mid, d_a: da, d_b: db });
        }
        if s.signum() == sp.signum() {
            p = mid;
            sp = s;
        } else {
            q = mid;
        }
    }
    None
}

/// Extracts the bisector of A and B.
pub fn compute_ibs(
    a: &RayAccelerator,
    b: &RayAccelerator,
    cfg: &IbsConfig,
) -> Result<IbsSurface, IbsError> {
    if cfg.grid_res < MIN_GRID_RES {
        return Err(IbsError::ResolutionTooLow { got: cfg.grid_res });
    }
    if !(cfg.refine_tol > 0.0 && cfg.refine_tol < 1.0) {
        return Err(IbsError::BadTolerance { got: cfg.refine_tol });
    }
    let (ca, ra) = a.bounding_sphere();
    let (cb, rb) = b.bounding_sphere();
    let (center, radius) = enclosing_sphere(ca, ra, cb, rb);
    let eps = 2.0 * radius * 1e-12;

    let res = cfg.grid_res;
    let lo = center - Vec3::repeat(radius);
    let h = 2.0 * radius / (res - 1) as f64;
    let vertex = |i: usize, j: usize, k: usize| {
        Pt3::new(
            lo.x + i as f64 * h,
            lo.y + j as f64 * h,
            lo.z + k as f64 * h,
        )
    };

    // Signed field at every grid vertex, x-fastest layout.
    let values: Vec<f64> = (0..res * res * res)
        .into_par_iter()
        .map(|idx| {
            let i = idx % res;
            let j = (idx / res) % res;
            let k = idx / (res * res);
            let p = vertex(i, j, k);
            a.nearest_distance(p) - b.nearest_distance(p)
        })
        .collect();
    let at = |i: usize, j: usize, k: usize| values[i + res * (j + res * k)];

    // Sign-change edges in the three axis directions, in a fixed traversal
    // order so the output is reproducible.
    let mut edges: Vec<(Pt3, f64, Pt3)> = Vec::new();
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                let s0 = at(i, j, k);
                let p0 = vertex(i, j, k);
                if i + 1 < res && s0 * at(i + 1, j, k) < 0.0 {
                    edges.push((p0, s0, vertex(i + 1, j, k)));
                }
                if j + 1 < res && s0 * at(i, j + 1, k) < 0.0 {
                    edges.push((p0, s0, vertex(i, j + 1, k)));
                }
                if k + 1 < res && s0 * at(i, j, k + 1) < 0.0 {
                    edges.push((p0, s0, vertex(i, j, k + 1)));
                }
            }
        }
    }
    if edges.is_empty() {
        return Err(IbsError::EmptySurface);
    }

    let refined: Vec<Option<RefinedPoint>> = edges
        .par_iter()
        .map(|&(p, sp, q)| {
            let r = refine_edge(a, b, p, sp, q, cfg.refine_tol, eps)?;
            if (r.point - center).norm() > radius {
                return None;
            }
            // Interpenetration region: inside both objects at once. Inside
            // just one is legitimate for containers, whose parity interior
            // covers the cavity as well as the material.
            if a.contains(r.point) && b.contains(r.point) {
                return None;
            }
            Some(r)
        })
        .collect();

    let mut points = Vec::new();
    let mut d_a = Vec::new();
    let mut d_b = Vec::new();
    for r in refined.into_iter().flatten() {
        points.push(r.point);
        d_a.push(r.d_a);
        d_b.push(r.d_b);
    }
    if points.is_empty() {
        return Err(IbsError::EmptySurface);
    }
    Ok(IbsSurface { points, d_a, d_b, center, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::icosphere;
    use crate::geometry::{RigidTransform, Vec3};
    use std::sync::Arc;

    fn sphere_at(x: f64, radius: f64, subdiv: u32) -> RayAccelerator {
        let geom = icosphere(subdiv, radius)
            .transformed(&RigidTransform::from_translation(Vec3::new(x, 0.0, 0.0)));
        RayAccelerator::build(Arc::new(geom)).unwrap()
    }

    #[test]
    fn enclosing_sphere_cases() {
        // Disjoint equal spheres.
        let (c, r) = enclosing_sphere(Pt3::new(-1.5, 0.0, 0.0), 1.0, Pt3::new(1.5, 0.0, 0.0), 1.0);
        assert!((c - Pt3::origin()).norm() < 1e-12);
        assert!((r - 2.5).abs() < 1e-12);
        // One inside the other.
        let (c, r) = enclosing_sphere(Pt3::origin(), 3.0, Pt3::new(0.5, 0.0, 0.0), 1.0);
        assert_eq!(c, Pt3::origin());
        assert_eq!(r, 3.0);
    }

    #[test]
    fn bisector_of_twin_spheres_is_their_midplane() {
        let a = sphere_at(-1.5, 1.0, 4);
        let b = sphere_at(1.5, 1.0, 4);
        let surface = compute_ibs(&a, &b, &IbsConfig::default()).unwrap();
        assert!(surface.len() > 1000, "only {} points", surface.len());
        let worst = surface.points.iter().map(|p| p.x.abs()).fold(0.0, f64::max);
        assert!(worst < 1e-2, "worst |x| = {worst}");
        // Every retained point meets the relative equidistance condition.
        for (da, db) in surface.d_a.iter().zip(&surface.d_b) {
            assert!((da - db).abs() <= 0.01 * da.max(*db).max(1e-9));
        }
    }

    #[test]
    fn bisector_of_concentric_spheres_is_the_middle_sphere() {
        let inner = sphere_at(0.0, 1.0, 4);
        let outer = sphere_at(0.0, 3.0, 4);
        let surface = compute_ibs(&inner, &outer, &IbsConfig::default()).unwrap();
        assert!(surface.len() > 1000);
        let worst = surface
            .points
            .iter()
            .map(|p| ((p - Pt3::origin()).norm() - 2.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 2e-2, "worst radial error = {worst}");
    }

    #[test]
    fn importance_weights_prefer_contact_regions() {
        let a = sphere_at(-1.5, 1.0, 3);
        let b = sphere_at(1.5, 1.0, 3);
        let surface = compute_ibs(&a, &b, &IbsConfig::default()).unwrap();
        let weights = surface.importance_weights();
        // On the midplane d_A grows with distance from the axis, so the
        // nearest point to the axis must carry the largest weight.
        let (mut best_w, mut best_r) = (0.0, f64::INFINITY);
        let mut far_w = 0.0;
        let mut far_r = 0.0;
        for (p, &w) in surface.points.iter().zip(&weights) {
            let r = (p.y * p.y + p.z * p.z).sqrt();
            if r < best_r {
                best_r = r;
                best_w = w;
            }
            if r > far_r {
                far_r = r;
                far_w = w;
            }
        }
        assert!(best_w > 4.0 * far_w, "near {best_w} vs far {far_w}");
        // Exact formula check against one recomputed weight.
        let delta = 0.01 * surface.diameter();
        let w0 = 1.0 / ((surface.d_a[0] + delta) * (surface.d_a[0] + delta));
        assert_eq!(weights[0], w0);
    }

    #[test]
    fn sampling_is_deterministic_and_biased_toward_high_weight() {
        let a = sphere_at(-1.5, 1.0, 3);
        let b = sphere_at(1.5, 1.0, 3);
        let surface = compute_ibs(&a, &b, &IbsConfig::default()).unwrap();
        let s1 = surface.sample(256, 11);
        let s2 = surface.sample(256, 11);
        assert_eq!(s1.points, s2.points);
        assert_eq!(s1.len(), 256);
        let full_mean = surface.d_a.iter().sum::<f64>() / surface.len() as f64;
        let picked_mean = s1.d_a.iter().sum::<f64>() / s1.len() as f64;
        assert!(
            picked_mean < full_mean,
            "sampled mean d_A {picked_mean} not below population mean {full_mean}"
        );
        let s3 = surface.sample(256, 12);
        assert_ne!(s1.points, s3.points, "different seed, same selection");
    }

    // With weights (1, 2) a single draw should pick the second item with
    // probability 2/3; check the frequency over many seeds.
    #[test]
    fn weighted_sampling_matches_inclusion_probability() {
        let surface = IbsSurface {
            points: vec![Pt3::origin(), Pt3::new(1.0, 0.0, 0.0)],
            d_a: vec![0.0, 0.0],
            d_b: vec![0.0, 0.0],
            center: Pt3::origin(),
            radius: 1.0,
        };
        // Craft d_a so importance weights come out 1 and 2: w = 1/(d+delta)^2
        // with delta = 0.02 here, so d = 1 - 0.02 and 1/sqrt(2) - 0.02.
        let surface = IbsSurface {
            d_a: vec![1.0 - 0.02, std::f64::consts::FRAC_1_SQRT_2 - 0.02],
            ..surface
        };
        let w = surface.importance_weights();
        assert!((w[0] - 1.0).abs() < 1e-12 && (w[1] - 2.0).abs() < 1e-12);
        let mut second = 0usize;
        let trials = 10_000;
        for seed in 0..trials {
            let s = surface.sample(1, seed as u64);
            if s.points[0].x == 1.0 {
                second += 1;
            }
        }
        let freq = second as f64 / trials as f64;
        assert!((freq - 2.0 / 3.0).abs() < 0.02, "P(second) = {freq}");
    }

    #[test]
    fn interpenetrating_spheres_lose_the_buried_disk() {
        let a = sphere_at(-0.5, 1.0, 4);
        let b = sphere_at(0.5, 1.0, 4);
        let surface = compute_ibs(&a, &b, &IbsConfig::default()).unwrap();
        assert!(!surface.is_empty());
        let ca = Pt3::new(-0.5, 0.0, 0.0);
        let cb = Pt3::new(0.5, 0.0, 0.0);
        let mut core_candidates = 0usize;
        for p in &surface.points {
            assert!(!(a.contains(*p) && b.contains(*p)));
            // Nothing survives 0.1-deep inside both balls; the midplane disk
            // below radius sqrt(0.9^2 - 0.25) is exactly that region.
            let deep_a = (p - ca).norm() < 0.9;
            let deep_b = (p - cb).norm() < 0.9;
            assert!(!(deep_a && deep_b), "buried point {p}");
            if p.x.abs() < 1e-3 && (p.y * p.y + p.z * p.z) < 0.56 {
                core_candidates += 1;
            }
        }
        assert_eq!(core_candidates, 0, "midplane core should be culled");
    }

    #[test]
    fn config_validation() {
        let a = sphere_at(-1.5, 1.0, 1);
        let b = sphere_at(1.5, 1.0, 1);
        assert!(matches!(
            compute_ibs(&a, &b, &IbsConfig { grid_res: 8, ..Default::default() }),
            Err(IbsError::ResolutionTooLow { got: 8 })
        ));
        assert!(matches!(
            compute_ibs(&a, &b, &IbsConfig { refine_tol: 0.0, ..Default::default() }),
            Err(IbsError::BadTolerance { .. })
        ));
    }
}
