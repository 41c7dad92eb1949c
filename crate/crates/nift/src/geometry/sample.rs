//! Surface sampling and tessellated primitives.

use rand::Rng;
use std::collections::HashMap;

use super::transform::{Pt3, Vec3};
use super::{tri, Geometry, GeometryError, GeometryKind};
use crate::rng::rng_from_seed;

/// Draws `count` points on the surface: area-weighted over triangles for
/// meshes, uniform over splat centers for clouds. Deterministic per seed.
pub fn sample_surface(geom: &Geometry, count: usize, seed: u64) -> Result<Vec<Pt3>, GeometryError> {
    if count == 0 {
        return Err(GeometryError::ZeroSamples);
    }
    let mut rng = rng_from_seed(seed);
    match geom.kind() {
        GeometryKind::Mesh => {
            let mut cum = Vec::with_capacity(geom.triangles().len());
            let mut total = 0.0;
            for i in 0..geom.triangles().len() {
                let (a, b, c) = geom.triangle_points(i);
                total += tri::triangle_area(a, b, c);
                cum.push(total);
            }
            if total <= 0.0 {
                return Err(GeometryError::ZeroArea);
            }
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let target = rng.gen::<f64>() * total;
                let ti = cum.partition_point(|&acc| acc < target).min(cum.len() - 1);
                let (a, b, c) = geom.triangle_points(ti);
                // Uniform barycentric draw.
                let su = rng.gen::<f64>().sqrt();
                let v = rng.gen::<f64>();
                let p = a + (b - a) * (su * (1.0 - v)) + (c - a) * (su * v);
                out.push(p);
            }
            Ok(out)
        }
        GeometryKind::SplatCloud => {
            let pts = geom.points();
            Ok((0..count).map(|_| pts[rng.gen_range(0..pts.len())]).collect())
        }
    }
}

/// Icosphere tessellation: `10 * 4^n + 2` vertices on a sphere of the given
/// radius. Watertight, outward-wound.
// Only test fixtures build icospheres today.
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) fn icosphere_raw(subdivisions: u32, radius: f64) -> (Vec<Pt3>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut pts: Vec<Pt3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Pt3::from(Vec3::new(x, y, z).normalize()))
    .collect();

    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(tris.len() * 4);
        let mut mid = |a: u32, b: u32, pts: &mut Vec<Pt3>| -> u32 {
            let key = if a < b { (a, b) } else { (b, a) };
            *midpoint.entry(key).or_insert_with(|| {
                let m = (pts[a as usize].coords + pts[b as usize].coords) * 0.5;
                pts.push(Pt3::from(m.normalize()));
                (pts.len() - 1) as u32
            })
        };
        for &[a, b, c] in &tris {
            let ab = mid(a, b, &mut pts);
            let bc = mid(b, c, &mut pts);
            let ca = mid(c, a, &mut pts);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        tris = next;
    }

    for p in &mut pts {
        *p = Pt3::from(p.coords * radius);
    }
    (pts, tris)
}
