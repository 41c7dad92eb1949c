//! Exact primitive tests for triangles and splat spheres.

use super::transform::{Pt3, Vec3};

/// Ray/triangle intersection (Möller-Trumbore, double sided). Returns the ray
/// parameter of the hit, `t > RAY_EPS`, or `None`.
pub fn ray_triangle(origin: Pt3, dir: Vec3, a: Pt3, b: Pt3, c: Pt3) -> Option<f64> {
    const RAY_EPS: f64 = 1e-12;
    let e1 = b - a;
    let e2 = c - a;
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < RAY_EPS {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - a;
    let u = tvec.dot(&pvec) * inv_det;
    if !(-RAY_EPS..=1.0 + RAY_EPS).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -RAY_EPS || u + v > 1.0 + RAY_EPS {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > RAY_EPS).then_some(t)
}

/// Ray/sphere intersection; smallest positive parameter.
pub fn ray_sphere(origin: Pt3, dir: Vec3, center: Pt3, radius: f64) -> Option<f64> {
    let oc = origin - center;
    let b = oc.dot(&dir);
    let c = oc.norm_squared() - radius * radius;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t0 = -b - sq;
    if t0 > 1e-12 {
        return Some(t0);
    }
    let t1 = -b + sq;
    (t1 > 1e-12).then_some(t1)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision
/// Detection §5.1.5). Exact up to round-off for all Voronoi regions.
pub fn closest_point_on_triangle(p: Pt3, a: Pt3, b: Pt3, c: Pt3) -> Pt3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_triangle_distance(p: Pt3, a: Pt3, b: Pt3, c: Pt3) -> f64 {
    (p - closest_point_on_triangle(p, a, b, c)).norm()
}

pub fn triangle_area(a: Pt3, b: Pt3, c: Pt3) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}
