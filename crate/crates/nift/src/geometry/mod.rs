//! Object geometry: triangle meshes and splat clouds, with the exact
//! distance/ray queries the rest of the pipeline is built on.

pub mod bvh;
mod io;
mod sample;
mod transform;
pub(crate) mod tri;

pub use bvh::{Aabb, RayAccelerator, RayHit};
pub use io::{load_geometry, save_obj, save_ply, GeometryFormat, PlyEncoding, PlyPayload};
pub use sample::sample_surface;
pub use transform::{
    haar_random_rotation, orthonormalize, rotation_angle, rotation_from_scaled_axis, Mat3, Pt3,
    RigidTransform, Vec3, ROTATION_TOL,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse failure in {path}: {reason}")]
    Parse { path: std::path::PathBuf, reason: String },
    #[error("unsupported geometry format {0:?}")]
    UnsupportedFormat(String),
    #[error("geometry has no points")]
    Empty,
    #[error("triangle index {index} out of range for {vertex_count} vertices")]
    IndexOutOfRange { index: u32, vertex_count: usize },
    #[error("degenerate geometry: points are coplanar within tolerance")]
    Coplanar,
    #[error("splat radius must be positive, got {0}")]
    BadSplatRadius(f64),
    #[error("splat cloud needs at least 2 points to derive a radius")]
    CloudTooSmall,
    #[error("ray direction must be unit length (|dir| = {0})")]
    UnnormalizedDirection(f64),
    #[error("matrix is not a rotation (orthonormality residual {ortho_err:.3e}, determinant residual {det_err:.3e})")]
    NotARotation { ortho_err: f64, det_err: f64 },
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("sample count must be positive")]
    ZeroSamples,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Mesh,
    SplatCloud,
}

/// A surface: either a triangle mesh or a splat cloud (points fattened to
/// spheres so distances and ray hits are well defined).
#[derive(Clone, Debug)]
pub struct Geometry {
    points: Vec<Pt3>,
    triangles: Vec<[u32; 3]>,
    splat_radius: Option<f64>,
}

impl Geometry {
    /// Mesh constructor. Indices are checked; planarity is not, so synthetic
    /// flat fixtures (a single quad) remain constructible. Loaded files go
    /// through [`load_geometry`], which additionally rejects coplanar input.
    pub fn mesh(points: Vec<Pt3>, triangles: Vec<[u32; 3]>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        for tri in &triangles {
            for &i in tri {
                if i as usize >= points.len() {
                    return Err(GeometryError::IndexOutOfRange { index: i, vertex_count: points.len() });
                }
            }
        }
        Ok(Self { points, triangles, splat_radius: None })
    }

    /// Splat cloud constructor. With `radius = None` the radius defaults to
    /// half the median nearest-neighbor spacing.
    pub fn splat_cloud(points: Vec<Pt3>, radius: Option<f64>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::Empty);
        }
        let radius = match radius {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(GeometryError::BadSplatRadius(r)),
            None => {
                if points.len() < 2 {
                    return Err(GeometryError::CloudTooSmall);
                }
                let spacing = median_nn_spacing(&points);
                if spacing <= 0.0 {
                    return Err(GeometryError::BadSplatRadius(0.0));
                }
                0.5 * spacing
            }
        };
        Ok(Self { points, triangles: Vec::new(), splat_radius: Some(radius) })
    }

    pub fn kind(&self) -> GeometryKind {
        if self.triangles.is_empty() { GeometryKind::SplatCloud } else { GeometryKind::Mesh }
    }

    pub fn is_mesh(&self) -> bool {
        !self.triangles.is_empty()
    }

    pub fn points(&self) -> &[Pt3] {
        &self.points
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn splat_radius(&self) -> Option<f64> {
        self.splat_radius
    }

    pub fn triangle_points(&self, i: usize) -> (Pt3, Pt3, Pt3) {
        let [a, b, c] = self.triangles[i];
        (self.points[a as usize], self.points[b as usize], self.points[c as usize])
    }

    pub fn vertex_centroid(&self) -> Pt3 {
        let mut acc = Vec3::zeros();
        for p in &self.points {
            acc += p.coords;
        }
        Pt3::from(acc / self.points.len() as f64)
    }

    /// Axis-aligned bounds; splat clouds are padded by their radius so the
    /// box covers the actual surface.
    pub fn aabb(&self) -> Aabb {
        let mut b = Aabb::from_points(self.points.iter().copied());
        if let Some(r) = self.splat_radius {
            b = b.padded(r);
        }
        b
    }

    pub fn transformed(&self, t: &RigidTransform) -> Geometry {
        Geometry {
            points: self.points.iter().map(|&p| t.apply(p)).collect(),
            triangles: self.triangles.clone(),
            splat_radius: self.splat_radius,
        }
    }

    /// Uniform scale about the origin. Splat radii scale along.
    pub fn scaled(&self, s: f64) -> Geometry {
        Geometry {
            points: self.points.iter().map(|p| Pt3::from(p.coords * s)).collect(),
            triangles: self.triangles.clone(),
            splat_radius: self.splat_radius.map(|r| r * s),
        }
    }

    /// Unsigned distance to the surface by exhaustive primitive iteration.
    /// The oracle [`RayAccelerator::nearest_distance`] must agree with.
    pub fn nearest_distance_brute(&self, p: Pt3) -> f64 {
        match self.kind() {
            GeometryKind::Mesh => {
                let mut best = f64::INFINITY;
                for i in 0..self.triangles.len() {
                    let (a, b, c) = self.triangle_points(i);
                    best = best.min(tri::point_triangle_distance(p, a, b, c));
                }
                best
            }
            GeometryKind::SplatCloud => {
                let r = self.splat_radius.unwrap_or(0.0);
                let mut best = f64::INFINITY;
                for q in &self.points {
                    best = best.min((p - q).norm());
                }
                (best - r).max(0.0)
            }
        }
    }

    /// First-hit ray cast by exhaustive primitive iteration.
    pub fn cast_ray_brute(&self, origin: Pt3, dir: Vec3) -> Result<Option<f64>, GeometryError> {
        check_unit(dir)?;
        let mut best: Option<f64> = None;
        match self.kind() {
            GeometryKind::Mesh => {
                for i in 0..self.triangles.len() {
                    let (a, b, c) = self.triangle_points(i);
                    if let Some(t) = tri::ray_triangle(origin, dir, a, b, c) {
                        best = Some(best.map_or(t, |b: f64| b.min(t)));
                    }
                }
            }
            GeometryKind::SplatCloud => {
                let r = self.splat_radius.unwrap_or(0.0);
                for &c in &self.points {
                    if let Some(t) = tri::ray_sphere(origin, dir, c, r) {
                        best = Some(best.map_or(t, |b: f64| b.min(t)));
                    }
                }
            }
        }
        Ok(best)
    }

    /// Rejects point sets whose best-fit plane captures all variance, which
    /// would make bounding spheres and distance fields degenerate.
    pub fn check_non_coplanar(&self) -> Result<(), GeometryError> {
        if self.points.len() < 4 {
            return Err(GeometryError::Coplanar);
        }
        let centroid = self.vertex_centroid();
        let mut cov = Mat3::zeros();
        for p in &self.points {
            let d = p - centroid;
            cov += d * d.transpose();
        }
        cov /= self.points.len() as f64;
        let eig = cov.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if max <= 0.0 || min.max(0.0).sqrt() < 1e-9 * max.sqrt() {
            return Err(GeometryError::Coplanar);
        }
        Ok(())
    }
}

pub(crate) fn check_unit(dir: Vec3) -> Result<(), GeometryError> {
    let n = dir.norm();
    if (n - 1.0).abs() > 1e-9 {
        return Err(GeometryError::UnnormalizedDirection(n));
    }
    Ok(())
}

/// Median nearest-neighbor spacing, exact, via a uniform grid so large clouds
/// stay out of quadratic territory.
pub fn median_nn_spacing(points: &[Pt3]) -> f64 {
    assert!(points.len() >= 2, "spacing needs at least two points");
    let bounds = Aabb::from_points(points.iter().copied());
    let diag = bounds.diagonal().norm();
    if diag == 0.0 {
        return 0.0;
    }
    let cell = (diag / (points.len() as f64).cbrt()).max(diag * 1e-9);
    let key = |p: &Pt3| {
        (
            ((p.x - bounds.min.x) / cell) as i64,
            ((p.y - bounds.min.y) / cell) as i64,
            ((p.z - bounds.min.z) / cell) as i64,
        )
    };
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<u32>> = std::collections::HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i as u32);
    }

    let mut spacings: Vec<f64> = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = key(p);
        let mut best = f64::INFINITY;
        let mut ring = 1i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs() != ring && dy.abs() != ring && dz.abs() != ring && ring > 1 {
                            continue; // interior visited at a smaller ring
                        }
                        if let Some(cellpts) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in cellpts {
                                if j as usize != i {
                                    best = best.min((p - points[j as usize]).norm());
                                }
                            }
                        }
                    }
                }
            }
            // Neighbors outside the searched rings are at least (ring-1)*cell away.
            if best <= (ring - 1) as f64 * cell || (ring as f64) * cell > diag + cell {
                break;
            }
            ring += 1;
        }
        spacings.push(best);
    }
    spacings.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = spacings.len();
    if n % 2 == 1 {
        spacings[n / 2]
    } else {
        0.5 * (spacings[n / 2 - 1] + spacings[n / 2])
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Axis-aligned cube mesh centered at the origin with the given edge length.
    pub fn cube_mesh(edge: f64) -> Geometry {
        let h = edge / 2.0;
        let pts = vec![
            Pt3::new(-h, -h, -h),
            Pt3::new(h, -h, -h),
            Pt3::new(h, h, -h),
            Pt3::new(-h, h, -h),
            Pt3::new(-h, -h, h),
            Pt3::new(h, -h, h),
            Pt3::new(h, h, h),
            Pt3::new(-h, h, h),
        ];
        let quads = [
            [0u32, 3, 2, 1], // bottom (z = -h), outward -z
            [4, 5, 6, 7],    // top
            [0, 1, 5, 4],    // front (y = -h)
            [2, 3, 7, 6],    // back
            [1, 2, 6, 5],    // right (x = +h)
            [3, 0, 4, 7],    // left
        ];
        let mut tris = Vec::new();
        for q in quads {
            tris.push([q[0], q[1], q[2]]);
            tris.push([q[0], q[2], q[3]]);
        }
        Geometry::mesh(pts, tris).unwrap()
    }

    /// Icosphere with `2 + 10 * 4^n` vertices; `n = 4` gives 2562.
    pub fn icosphere(subdivisions: u32, radius: f64) -> Geometry {
        let (pts, tris) = super::sample::icosphere_raw(subdivisions, radius);
        Geometry::mesh(pts, tris).unwrap()
    }
}
