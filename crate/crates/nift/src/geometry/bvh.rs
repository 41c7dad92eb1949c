//! Bounding-volume hierarchy over mesh triangles or splat spheres.
//!
//! Queries are exact: traversal only prunes subtrees that provably cannot
//! contain a better answer, so results equal brute-force primitive iteration.

use std::sync::Arc;

use super::transform::{Pt3, Vec3};
use super::{check_unit, tri, Geometry, GeometryError, GeometryKind};

#[derive(Clone, Copy, Debug)]
pub struct Aabb {
    pub min: Pt3,
    pub max: Pt3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Pt3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
            max: Pt3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
        }
    }

    pub fn from_points(points: impl IntoIterator<Item = Pt3>) -> Self {
        let mut b = Self::empty();
        for p in points {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: Pt3) {
        self.min = Pt3::new(self.min.x.min(p.x), self.min.y.min(p.y), self.min.z.min(p.z));
        self.max = Pt3::new(self.max.x.max(p.x), self.max.y.max(p.y), self.max.z.max(p.z));
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        let mut b = *self;
        b.grow(other.min);
        b.grow(other.max);
        b
    }

    pub fn padded(&self, r: f64) -> Aabb {
        Aabb {
            min: Pt3::new(self.min.x - r, self.min.y - r, self.min.z - r),
            max: Pt3::new(self.max.x + r, self.max.y + r, self.max.z + r),
        }
    }

    pub fn center(&self) -> Pt3 {
        Pt3::from((self.min.coords + self.max.coords) * 0.5)
    }

    pub fn diagonal(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn contains(&self, p: Pt3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Closest point of the box to `p` (identity for interior points).
    pub fn clamp_point(&self, p: Pt3) -> Pt3 {
        Pt3::new(
            p.x.clamp(self.min.x, self.max.x),
            p.y.clamp(self.min.y, self.max.y),
            p.z.clamp(self.min.z, self.max.z),
        )
    }

    pub fn distance(&self, p: Pt3) -> f64 {
        (p - self.clamp_point(p)).norm()
    }

    /// Box scaled about its own center; `factor = 1.5` gives the query
    /// domain convention used by descriptor fields.
    pub fn scaled_about_center(&self, factor: f64) -> Aabb {
        let c = self.center().coords;
        let h = self.diagonal() * 0.5 * factor;
        Aabb { min: Pt3::from(c - h), max: Pt3::from(c + h) }
    }

    /// Slab test; returns the entry parameter of the ray segment inside the
    /// box if it intersects `[0, t_max]`.
    fn ray_enter(&self, origin: Pt3, inv_dir: Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0_f64;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.min[k] - origin[k]) * inv_dir[k];
            let b = (self.max[k] - origin[k]) * inv_dir[k];
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    aabb: Aabb,
    /// Leaf: start index into `order`. Internal: left child index.
    a: u32,
    /// Leaf: primitive count. Internal: right child index.
    b: u32,
    leaf: bool,
}

const LEAF_SIZE: usize = 4;

/// Spatial index over one geometry, shared read-only across threads.
/// A ray-surface intersection with its unit surface normal, oriented to
/// face the ray origin.
#[derive(Clone, Copy, Debug)]
pub struct RayHit {
    pub t: f64,
    pub normal: Vec3,
}

pub struct RayAccelerator {
    geom: Arc<Geometry>,
    nodes: Vec<Node>,
    order: Vec<u32>,
    bsphere_center: Pt3,
    bsphere_radius: f64,
}

impl RayAccelerator {
    pub fn build(geom: Arc<Geometry>) -> Result<Self, GeometryError> {
        let prim_count = match geom.kind() {
            GeometryKind::Mesh => geom.triangles().len(),
            GeometryKind::SplatCloud => geom.points().len(),
        };
        if prim_count == 0 {
            return Err(GeometryError::Empty);
        }

        let prim_aabb = |i: u32| -> Aabb {
            match geom.kind() {
                GeometryKind::Mesh => {
                    let (a, b, c) = geom.triangle_points(i as usize);
                    Aabb::from_points([a, b, c])
                }
                GeometryKind::SplatCloud => {
                    let r = geom.splat_radius().unwrap_or(0.0);
                    Aabb::from_points([geom.points()[i as usize]]).padded(r)
                }
            }
        };

        let mut order: Vec<u32> = (0..prim_count as u32).collect();
        let centroids: Vec<Pt3> = order.iter().map(|&i| prim_aabb(i).center()).collect();
        let mut nodes = Vec::with_capacity(2 * prim_count);
        build_node(&mut nodes, &mut order, &centroids, &prim_aabb, 0, prim_count);

        let (bsphere_center, bsphere_radius) = ritter_sphere(&geom);
        Ok(Self { geom, nodes, order, bsphere_center, bsphere_radius })
    }

    pub fn geometry(&self) -> &Arc<Geometry> {
        &self.geom
    }

    /// Ritter bounding sphere (with one tightening pass); covers splat extent.
    pub fn bounding_sphere(&self) -> (Pt3, f64) {
        (self.bsphere_center, self.bsphere_radius)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.bsphere_radius
    }

    /// First surface hit along a unit-direction ray, as a ray parameter.
    pub fn cast_ray(&self, origin: Pt3, dir: Vec3) -> Result<Option<f64>, GeometryError> {
        check_unit(dir)?;
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best = f64::INFINITY;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.aabb.ray_enter(origin, inv_dir, best).is_none() {
                continue;
            }
            if node.leaf {
                for &pi in &self.order[node.a as usize..(node.a + node.b) as usize] {
                    if let Some(t) = self.prim_ray(pi, origin, dir) {
                        best = best.min(t);
                    }
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
        Ok(best.is_finite().then_some(best))
    }

    /// First hit with its geometric normal. The normal is oriented against
    /// the ray (`n . dir <= 0`) and is unit length.
    pub fn cast_ray_hit(&self, origin: Pt3, dir: Vec3) -> Result<Option<RayHit>, GeometryError> {
        check_unit(dir)?;
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best = f64::INFINITY;
        let mut best_pi: Option<u32> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.aabb.ray_enter(origin, inv_dir, best).is_none() {
                continue;
            }
            if node.leaf {
                for &pi in &self.order[node.a as usize..(node.a + node.b) as usize] {
                    if let Some(t) = self.prim_ray(pi, origin, dir) {
                        if t < best {
                            best = t;
                            best_pi = Some(pi);
                        }
                    }
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
        let Some(pi) = best_pi else { return Ok(None) };
        let mut normal = match self.geom.kind() {
            GeometryKind::Mesh => {
                let (a, b, c) = self.geom.triangle_points(pi as usize);
                let n = (b - a).cross(&(c - a));
                let len = n.norm();
                if len == 0.0 {
                    return Ok(Some(RayHit { t: best, normal: -dir }));
                }
                n / len
            }
            GeometryKind::SplatCloud => {
                let r = self.geom.splat_radius().unwrap_or(0.0);
                let hit = origin + dir * best;
                let c = self.geom.points()[pi as usize];
                if r > 0.0 { (hit - c) / r } else { -dir }
            }
        };
        if normal.dot(&dir) > 0.0 {
            normal = -normal;
        }
        Ok(Some(RayHit { t: best, normal }))
    }

    /// Unsigned distance to the surface.
    pub fn nearest_distance(&self, p: Pt3) -> f64 {
        let splat_r = self.geom.splat_radius().unwrap_or(0.0);
        let mut best = f64::INFINITY;
        // (bound, node) stack; visit closer child first for tighter pruning.
        let mut stack: Vec<(f64, usize)> = vec![(self.nodes[0].aabb.distance(p), 0)];
        while let Some((bound, ni)) = stack.pop() {
            if bound >= best {
                continue;
            }
            let node = &self.nodes[ni];
            if node.leaf {
                for &pi in &self.order[node.a as usize..(node.a + node.b) as usize] {
                    best = best.min(self.prim_distance(pi, p));
                }
            } else {
                let l = node.a as usize;
                let r = node.b as usize;
                let dl = self.nodes[l].aabb.distance(p);
                let dr = self.nodes[r].aabb.distance(p);
                // Splat AABBs are padded by the radius, so the box distance
                // already lower-bounds the splat surface distance.
                let _ = splat_r;
                if dl <= dr {
                    stack.push((dr, r));
                    stack.push((dl, l));
                } else {
                    stack.push((dl, l));
                    stack.push((dr, r));
                }
            }
        }
        match self.geom.kind() {
            GeometryKind::Mesh => best,
            GeometryKind::SplatCloud => best.max(0.0),
        }
    }

    /// Point-in-solid test for watertight meshes: ray-crossing parity along
    /// three fixed irrational directions, majority vote so an unlucky edge
    /// graze cannot flip the answer. Splat clouds have no interior; `false`.
    pub fn contains(&self, p: Pt3) -> bool {
        if self.geom.kind() != GeometryKind::Mesh {
            return false;
        }
        let dirs = [
            Vec3::new(1.0, 2.0, 3.0).normalize(),
            Vec3::new(-4.0, 5.0, 6.0).normalize(),
            Vec3::new(6.0, 1.0, -4.0).normalize(),
        ];
        let mut votes = 0;
        for d in dirs {
            if self.count_hits(p, d) % 2 == 1 {
                votes += 1;
            }
        }
        votes >= 2
    }

    fn count_hits(&self, origin: Pt3, dir: Vec3) -> usize {
        let inv_dir = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut hits = 0;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if node.aabb.ray_enter(origin, inv_dir, f64::INFINITY).is_none() {
                continue;
            }
            if node.leaf {
                for &pi in &self.order[node.a as usize..(node.a + node.b) as usize] {
                    if self.prim_ray(pi, origin, dir).is_some() {
                        hits += 1;
                    }
                }
            } else {
                stack.push(node.a as usize);
                stack.push(node.b as usize);
            }
        }
        hits
    }

    fn prim_ray(&self, pi: u32, origin: Pt3, dir: Vec3) -> Option<f64> {
        match self.geom.kind() {
            GeometryKind::Mesh => {
                let (a, b, c) = self.geom.triangle_points(pi as usize);
                tri::ray_triangle(origin, dir, a, b, c)
            }
            GeometryKind::SplatCloud => {
                let r = self.geom.splat_radius().unwrap_or(0.0);
                tri::ray_sphere(origin, dir, self.geom.points()[pi as usize], r)
            }
        }
    }

    fn prim_distance(&self, pi: u32, p: Pt3) -> f64 {
        match self.geom.kind() {
            GeometryKind::Mesh => {
                let (a, b, c) = self.geom.triangle_points(pi as usize);
                tri::point_triangle_distance(p, a, b, c)
            }
            GeometryKind::SplatCloud => {
                let r = self.geom.splat_radius().unwrap_or(0.0);
                (p - self.geom.points()[pi as usize]).norm() - r
            }
        }
    }
}

fn build_node(
    nodes: &mut Vec<Node>,
    order: &mut [u32],
    centroids: &[Pt3],
    prim_aabb: &impl Fn(u32) -> Aabb,
    offset: usize,
    len: usize,
) -> usize {
    let mut aabb = Aabb::empty();
    for &pi in order[..len].iter() {
        aabb = aabb.union(&prim_aabb(pi));
    }
    let me = nodes.len();
    nodes.push(Node { aabb, a: 0, b: 0, leaf: true });

    if len <= LEAF_SIZE {
        nodes[me].a = offset as u32;
        nodes[me].b = len as u32;
        return me;
    }

    let mut cb = Aabb::empty();
    for &pi in order[..len].iter() {
        cb.grow(centroids[pi as usize]);
    }
    let d = cb.diagonal();
    let axis = if d.x >= d.y && d.x >= d.z { 0 } else if d.y >= d.z { 1 } else { 2 };
    // Degenerate spread: all centroids coincide; fall back to an arbitrary
    // even split to guarantee termination.
    if d[axis] <= 0.0 {
        let mid = len / 2;
        let (left_slice, right_slice) = order.split_at_mut(mid);
        let l = build_node(nodes, left_slice, centroids, prim_aabb, offset, mid);
        let r = build_node(nodes, right_slice, centroids, prim_aabb, offset + mid, len - mid);
        nodes[me].leaf = false;
        nodes[me].a = l as u32;
        nodes[me].b = r as u32;
        return me;
    }

    order[..len].sort_unstable_by(|&i, &j| {
        let ci = centroids[i as usize][axis];
        let cj = centroids[j as usize][axis];
        ci.partial_cmp(&cj).unwrap().then(i.cmp(&j))
    });
    let mid = len / 2;
    let (left_slice, right_slice) = order.split_at_mut(mid);
    let l = build_node(nodes, left_slice, centroids, prim_aabb, offset, mid);
    let r = build_node(nodes, right_slice, centroids, prim_aabb, offset + mid, len - mid);
    nodes[me].leaf = false;
    nodes[me].a = l as u32;
    nodes[me].b = r as u32;
    me
}

/// Ritter's approximate bounding sphere, then one exact cover pass that
/// recomputes the radius for the final center. Splat clouds are padded by
/// their radius so the sphere covers the fattened surface.
fn ritter_sphere(geom: &Geometry) -> (Pt3, f64) {
    let pts = geom.points();
    let x = pts[0];
    let y = *pts
        .iter()
        .max_by(|a, b| (*a - x).norm().partial_cmp(&(*b - x).norm()).unwrap())
        .unwrap();
    let z = *pts
        .iter()
        .max_by(|a, b| (*a - y).norm().partial_cmp(&(*b - y).norm()).unwrap())
        .unwrap();
    let mut center = Pt3::from((y.coords + z.coords) * 0.5);
    let mut radius = (y - z).norm() * 0.5;

    for &p in pts {
        let d = (p - center).norm();
        if d > radius {
            let nr = (radius + d) * 0.5;
            center += (p - center) * ((d - nr) / d);
            radius = nr;
        }
    }
    // Tightening pass: exact cover radius for the settled center.
    let mut exact = 0.0_f64;
    for &p in pts {
        exact = exact.max((p - center).norm());
    }
    radius = exact;
    if let Some(r) = geom.splat_radius() {
        radius += r;
    }
    (center, radius)
}
