//! Procedural watertight shapes and their demonstrated grasps.
//!
//! Every shape is built as a closed, consistently oriented triangle mesh so
//! that parity ray tests give reliable inside/outside answers. Builders
//! validate their output (manifold edges, expected Euler characteristic,
//! positive volume) and refuse to hand back a broken mesh.

use std::f64::consts::{PI, TAU};

use rand::Rng;

use crate::geometry::{Geometry, GeometryError, Mat3, Pt3, RigidTransform, Vec3};
use crate::geometry::rotation_from_scaled_axis;
use crate::rng::rng_from_seed;

#[derive(Debug, thiserror::Error)]
pub enum ShapeError {
    #[error("profile must start and end on the axis with positive radii between")]
    BadProfile,
    #[error("need at least 3 angular segments, got {got}")]
    TooFewSegments { got: usize },
    #[error("polygon must have at least 3 vertices")]
    BadPolygon,
    #[error("ear clipping failed; polygon is degenerate or self-intersecting")]
    EarClipping,
    #[error("mesh validation failed: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Closed-mesh invariants: every edge shared by exactly two triangles in
/// opposite directions, no degenerate triangles, and the volume enclosed.
pub struct MeshStats {
    pub euler: i64,
    pub volume: f64,
}

/// Checks edge-manifoldness and consistent orientation, returning the Euler
/// characteristic and the signed enclosed volume.
pub fn validate_closed_mesh(points: &[Pt3], tris: &[[u32; 3]]) -> Result<MeshStats, ShapeError> {
    use std::collections::HashMap;
    let mut edges: HashMap<(u32, u32), i32> = HashMap::new();
    for (i, t) in tris.iter().enumerate() {
        if t[0] == t[1] || t[1] == t[2] || t[2] == t[0] {
            return Err(ShapeError::Invalid(format!("triangle {i} repeats a vertex")));
        }
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            // Count +1 for the canonical direction, -1 for the reverse; a
            // consistently oriented closed surface nets to zero everywhere.
            let (key, sign) = if a < b { ((a, b), 1) } else { ((b, a), -1) };
            *edges.entry(key).or_insert(0) += sign;
        }
    }
    let mut edge_count = 0i64;
    for (&(a, b), &net) in &edges {
        if net != 0 {
            return Err(ShapeError::Invalid(format!(
                "edge ({a},{b}) is traversed unevenly (net {net})"
            )));
        }
        edge_count += 1;
    }
    // Net zero guarantees direction balance; closedness also needs each edge
    // used exactly twice, which V - E + F will expose for over-used edges
    // only in combination with the total count check below.
    let mut uses: HashMap<(u32, u32), u32> = HashMap::new();
    for t in tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = if a < b { (a, b) } else { (b, a) };
            *uses.entry(key).or_insert(0) += 1;
        }
    }
    for (&(a, b), &n) in &uses {
        if n != 2 {
            return Err(ShapeError::Invalid(format!("edge ({a},{b}) used {n} times")));
        }
    }
    let volume: f64 = tris
        .iter()
        .map(|t| {
            let a = points[t[0] as usize].coords;
            let b = points[t[1] as usize].coords;
            let c = points[t[2] as usize].coords;
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum();
    let euler = points.len() as i64 - edge_count + tris.len() as i64;
    Ok(MeshStats { euler, volume })
}

/// Vertex layout of one profile row after revolution.
enum Row {
    Axis(u32),
    /// `segments` consecutive vertex ids starting here.
    Ring(u32),
}

/// Revolves an axis-to-axis profile (pairs of `(radius, z)`) around the z
/// axis. Ring vertex `j` sits at angle `(2j - 1) pi / segments`, so the quad
/// between columns 0 and 1 straddles the +x direction (the mug builder cuts
/// its handle holes there). Returns the triangles consistently oriented
/// outward (positive volume).
fn revolve(
    profile: &[(f64, f64)],
    segments: usize,
) -> Result<(Vec<Pt3>, Vec<[u32; 3]>, Vec<Row>), ShapeError> {
    if segments < 3 {
        return Err(ShapeError::TooFewSegments { got: segments });
    }
    let n = profile.len();
    if n < 3
        || profile[0].0 != 0.0
        || profile[n - 1].0 != 0.0
        || profile[1..n - 1].iter().any(|&(r, _)| r <= 0.0)
    {
        return Err(ShapeError::BadProfile);
    }

    let mut points: Vec<Pt3> = Vec::new();
    let mut rows: Vec<Row> = Vec::with_capacity(n);
    for &(r, z) in profile {
        if r == 0.0 {
            rows.push(Row::Axis(points.len() as u32));
            points.push(Pt3::new(0.0, 0.0, z));
        } else {
            rows.push(Row::Ring(points.len() as u32));
            for j in 0..segments {
                let phi = TAU * j as f64 / segments as f64 - PI / segments as f64;
                points.push(Pt3::new(r * phi.cos(), r * phi.sin(), z));
            }
        }
    }

    let ring = |start: u32, j: usize| start + (j % segments) as u32;
    let mut tris: Vec<[u32; 3]> = Vec::new();
    for w in rows.windows(2) {
        match (&w[0], &w[1]) {
            (Row::Axis(a), Row::Ring(s)) => {
                for j in 0..segments {
                    tris.push([*a, ring(*s, j), ring(*s, j + 1)]);
                }
            }
            (Row::Ring(s), Row::Axis(a)) => {
                for j in 0..segments {
                    tris.push([*a, ring(*s, j + 1), ring(*s, j)]);
                }
            }
            (Row::Ring(lo), Row::Ring(hi)) => {
                for j in 0..segments {
                    let (a, b) = (ring(*lo, j), ring(*hi, j));
                    let (c, d) = (ring(*hi, j + 1), ring(*lo, j + 1));
                    tris.push([a, b, c]);
                    tris.push([a, c, d]);
                }
            }
            (Row::Axis(_), Row::Axis(_)) => return Err(ShapeError::BadProfile),
        }
    }

    // The traversal rule above is orientation-consistent either way round;
    // pick the winding that makes the volume positive.
    let stats = validate_closed_mesh(&points, &tris)?;
    if stats.volume < 0.0 {
        for t in &mut tris {
            t.swap(1, 2);
        }
    }
    Ok((points, tris, rows))
}

fn revolve_solid(profile: &[(f64, f64)], segments: usize) -> Result<Geometry, ShapeError> {
    let (points, tris, _) = revolve(profile, segments)?;
    let stats = validate_closed_mesh(&points, &tris)?;
    if stats.euler != 2 {
        return Err(ShapeError::Invalid(format!(
            "revolved solid has Euler characteristic {}, expected 2",
            stats.euler
        )));
    }
    Ok(Geometry::mesh(points, tris)?)
}

/// Ear-clipping triangulation of a simple polygon (counterclockwise, may be
/// concave). Returns index triples into the polygon.
fn triangulate_polygon(poly: &[(f64, f64)]) -> Result<Vec<[u32; 3]>, ShapeError> {
    let n = poly.len();
    if n < 3 {
        return Err(ShapeError::BadPolygon);
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| -> f64 {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let inside = |p: (f64, f64), a: (f64, f64), b: (f64, f64), c: (f64, f64)| -> bool {
        cross(a, b, p) > 0.0 && cross(b, c, p) > 0.0 && cross(c, a, p) > 0.0
    };
    let mut idx: Vec<u32> = (0..n as u32).collect();
    let mut tris = Vec::with_capacity(n - 2);
    let mut guard = 0;
    while idx.len() > 3 {
        guard += 1;
        if guard > n * n {
            return Err(ShapeError::EarClipping);
        }
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (pi, ci, ni) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (a, b, c) = (poly[pi as usize], poly[ci as usize], poly[ni as usize]);
            if cross(a, b, c) <= 0.0 {
                continue; // reflex corner, not an ear
            }
            let blocked = idx
                .iter()
                .any(|&j| j != pi && j != ci && j != ni && inside(poly[j as usize], a, b, c));
            if blocked {
                continue;
            }
            tris.push([pi, ci, ni]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            return Err(ShapeError::EarClipping);
        }
    }
    tris.push([idx[0], idx[1], idx[2]]);
    Ok(tris)
}

/// Extrudes a counterclockwise simple polygon in the (x, z) plane along +y,
/// centered so the solid spans `y` in `[-depth/2, depth/2]`.
fn extrude_polygon(poly: &[(f64, f64)], depth: f64) -> Result<Geometry, ShapeError> {
    // Normalize to counterclockwise so cap and wall windings agree.
    let shoelace: f64 = poly
        .iter()
        .zip(poly.iter().cycle().skip(1))
        .map(|(a, b)| a.0 * b.1 - b.0 * a.1)
        .sum();
    let ccw: Vec<(f64, f64)> = if shoelace >= 0.0 {
        poly.to_vec()
    } else {
        poly.iter().rev().copied().collect()
    };

    let n = ccw.len();
    let cap = triangulate_polygon(&ccw)?;
    let half = depth / 2.0;
    let mut points = Vec::with_capacity(2 * n);
    for &(x, z) in &ccw {
        points.push(Pt3::new(x, -half, z));
    }
    for &(x, z) in &ccw {
        points.push(Pt3::new(x, half, z));
    }
    let top = |i: u32| i + n as u32;

    let mut tris: Vec<[u32; 3]> = Vec::new();
    // Bottom cap keeps the 2D winding (normal -y), top cap reverses it.
    for t in &cap {
        tris.push([t[0], t[1], t[2]]);
        tris.push([top(t[0]), top(t[2]), top(t[1])]);
    }
    for i in 0..n as u32 {
        let j = (i + 1) % n as u32;
        tris.push([i, top(i), top(j)]);
        tris.push([i, top(j), j]);
    }

    let stats = validate_closed_mesh(&points, &tris)?;
    if stats.euler != 2 {
        return Err(ShapeError::Invalid(format!(
            "extruded solid has Euler characteristic {}, expected 2",
            stats.euler
        )));
    }
    if stats.volume <= 0.0 {
        return Err(ShapeError::Invalid("extruded solid wound inward".to_string()));
    }
    Ok(Geometry::mesh(points, tris)?)
}

/// Mug proportions. All lengths share one unit; see [`MugParams::default`].
#[derive(Clone, Debug)]
pub struct MugParams {
    pub outer_radius: f64,
    pub height: f64,
    pub wall: f64,
    pub base: f64,
    pub segments: usize,
}

impl Default for MugParams {
    fn default() -> Self {
        Self { outer_radius: 0.4, height: 0.85, wall: 0.07, base: 0.1, segments: 32 }
    }
}

/// Outer wall rows; handle holes sit at rows 2..3 and 5..6 of 8, symmetric
/// about mid-height so a rigid half-turn sweep meets both exactly.
const MUG_WALL_ROWS: usize = 8;
const MUG_HOLE_LOW: usize = 2;
const MUG_HOLE_HIGH: usize = 5;
const MUG_HANDLE_SEGMENTS: usize = 10;

/// A mug: revolved cup body with a square-section handle stitched through
/// two holes in the outer wall. Genus one (Euler characteristic zero).
pub fn mug(params: &MugParams) -> Result<Geometry, ShapeError> {
    let MugParams { outer_radius: r, height: h, wall: w, base: b, segments } = *params;
    if !(r > w && h > b && w > 0.0 && b > 0.0) {
        return Err(ShapeError::Invalid("mug proportions out of order".to_string()));
    }

    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0), (r, 0.0)];
    let wall_rows_start = profile.len();
    for k in 1..=MUG_WALL_ROWS {
        profile.push((r, h * k as f64 / MUG_WALL_ROWS as f64));
    }
    // Rim, then the inner wall back down to the cavity floor.
    profile.push((r - w, h));
    let inner_rows = 5;
    for k in 1..=inner_rows {
        let t = k as f64 / inner_rows as f64;
        profile.push((r - w, h - (h - b) * t));
    }
    profile.push((0.0, b));

    let (mut points, mut tris, rows) = revolve(&profile, segments)?;

    // Outer wall ring ids; ring k sits at z = h k / MUG_WALL_ROWS.
    let wall_ring = |k: usize| -> u32 {
        // Profile row 1 is the z = 0 ring, rows wall_rows_start.. are k = 1..
        let row = if k == 0 { 1 } else { wall_rows_start + k - 1 };
        match rows[row] {
            Row::Ring(s) => s,
            Row::Axis(_) => unreachable!("wall rows are rings"),
        }
    };

    // The two hole quads span columns 0..1, straddling +x by the revolve's
    // angular offset. Corners: a = lower-left, b = upper-left (column 0),
    // c = upper-right, d = lower-right (column 1).
    let corners = |k: usize| -> [u32; 4] {
        let lo = wall_ring(k);
        let hi = wall_ring(k + 1);
        [lo, hi, hi + 1, lo + 1]
    };
    let lower = corners(MUG_HOLE_LOW);
    let upper = corners(MUG_HOLE_HIGH);

    // Match the quad's two triangles by vertex set: the revolve may have
    // flipped every winding to fix the volume sign.
    let sorted = |t: [u32; 3]| {
        let mut s = t;
        s.sort_unstable();
        s
    };
    for hole in [lower, upper] {
        let [a, bb, c, d] = hole;
        let quad = [sorted([a, bb, c]), sorted([a, c, d])];
        let before = tris.len();
        tris.retain(|t| !quad.contains(&sorted(*t)));
        if tris.len() != before - 2 {
            return Err(ShapeError::Invalid("hole quad not found in wall".to_string()));
        }
    }

    // Handle sweep: rotate the lower hole corners rigidly about the y-parallel
    // line through (x_c, z_mid) by psi in [0, pi]. Symmetric hole placement
    // makes psi = pi land exactly on the upper hole corners.
    let x_c = r * (PI / segments as f64).cos();
    let z_mid = h / 2.0;
    let sweep = |p: Pt3, psi: f64| -> Pt3 {
        let dx = p.x - x_c;
        let dz = p.z - z_mid;
        Pt3::new(
            x_c + dx * psi.cos() - dz * psi.sin(),
            p.y,
            z_mid + dx * psi.sin() + dz * psi.cos(),
        )
    };

    let lower_pts: Vec<Pt3> = lower.iter().map(|&i| points[i as usize]).collect();
    // psi = pi maps lower (a, b, c, d) onto upper (b, a, d, c).
    let upper_match = [upper[1], upper[0], upper[3], upper[2]];
    for (m, &id) in upper_match.iter().enumerate() {
        let expect = sweep(lower_pts[m], PI);
        let got = points[id as usize];
        if (expect - got).norm() > 1e-9 {
            return Err(ShapeError::Invalid("handle sweep misses the upper hole".to_string()));
        }
    }

    let mut rings: Vec<[u32; 4]> = Vec::with_capacity(MUG_HANDLE_SEGMENTS + 1);
    rings.push(lower);
    for k in 1..MUG_HANDLE_SEGMENTS {
        let psi = PI * k as f64 / MUG_HANDLE_SEGMENTS as f64;
        let start = points.len() as u32;
        for m in 0..4 {
            points.push(sweep(lower_pts[m], psi));
        }
        rings.push([start, start + 1, start + 2, start + 3]);
    }
    rings.push(upper_match);

    // Tube orientation must mesh with the body where the quads were removed;
    // try one winding and flip if the seam comes out inconsistent.
    for attempt in 0..2 {
        let mut candidate = tris.clone();
        for win in rings.windows(2) {
            let (r0, r1) = (win[0], win[1]);
            for m in 0..4 {
                let mm = (m + 1) % 4;
                if attempt == 0 {
                    candidate.push([r0[m], r0[mm], r1[mm]]);
                    candidate.push([r0[m], r1[mm], r1[m]]);
                } else {
                    candidate.push([r0[m], r1[mm], r0[mm]]);
                    candidate.push([r0[m], r1[m], r1[mm]]);
                }
            }
        }
        if let Ok(stats) = validate_closed_mesh(&points, &candidate) {
            if stats.euler != 0 {
                return Err(ShapeError::Invalid(format!(
                    "mug has Euler characteristic {}, expected 0",
                    stats.euler
                )));
            }
            if stats.volume <= 0.0 {
                return Err(ShapeError::Invalid("mug wound inward".to_string()));
            }
            return Ok(Geometry::mesh(points, candidate)?);
        }
    }
    Err(ShapeError::Invalid("handle stitching failed in both windings".to_string()))
}

#[derive(Clone, Debug)]
pub struct BowlParams {
    pub rim_radius: f64,
    pub height: f64,
    pub wall: f64,
    pub segments: usize,
    pub arc_steps: usize,
}

impl Default for BowlParams {
    fn default() -> Self {
        // Deep proportions: near the rim the wall is close to vertical, so a
        // straight-slot gripper can straddle it without touching.
        Self { rim_radius: 0.46, height: 0.41, wall: 0.06, segments: 32, arc_steps: 10 }
    }
}

/// An open bowl: spherical-cap outer surface, concentric inner surface, flat
/// rim. Genus zero.
pub fn bowl(params: &BowlParams) -> Result<Geometry, ShapeError> {
    let BowlParams { rim_radius: r, height: h, wall: w, segments, arc_steps } = *params;
    if !(h > w && r > w && w > 0.0) {
        return Err(ShapeError::Invalid("bowl proportions out of order".to_string()));
    }
    // Sphere through (0, 0) and (r, h), center on the axis at z = c.
    let c = (r * r + h * h) / (2.0 * h);
    let t_rim = (r / c).asin().max(1e-9);
    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0)];
    for k in 1..=arc_steps {
        let t = t_rim * k as f64 / arc_steps as f64;
        profile.push((c * t.sin(), c - c * t.cos()));
    }
    // Inner surface: same center, radius c - w, from the rim back to the axis.
    let ci = c - w;
    let cos_inner = ((c - h) / ci).clamp(-1.0, 1.0);
    let t_inner = cos_inner.acos();
    for k in 0..arc_steps {
        let t = t_inner * (arc_steps - k) as f64 / arc_steps as f64;
        profile.push((ci * t.sin(), c - ci * t.cos()));
    }
    profile.push((0.0, w));
    revolve_solid(&profile, segments)
}

#[derive(Clone, Debug)]
pub struct BottleParams {
    pub body_radius: f64,
    pub body_height: f64,
    pub neck_radius: f64,
    pub neck_height: f64,
    pub shoulder_steps: usize,
    pub segments: usize,
}

impl Default for BottleParams {
    fn default() -> Self {
        // The neck is long enough for the gripper to straddle it sideways
        // even on the smallest generated scale.
        Self {
            body_radius: 0.32,
            body_height: 0.55,
            neck_radius: 0.072,
            neck_height: 0.54,
            shoulder_steps: 6,
            segments: 32,
        }
    }
}

/// A solid bottle: cylindrical body, cosine shoulder, cylindrical neck.
pub fn bottle(params: &BottleParams) -> Result<Geometry, ShapeError> {
    let BottleParams {
        body_radius: rb,
        body_height: hb,
        neck_radius: rn,
        neck_height: hn,
        shoulder_steps,
        segments,
    } = *params;
    if !(rb > rn && rn > 0.0 && hb > 0.0 && hn > 0.0) {
        return Err(ShapeError::Invalid("bottle proportions out of order".to_string()));
    }
    let shoulder = 0.35 * hb;
    let mut profile: Vec<(f64, f64)> = vec![(0.0, 0.0), (rb, 0.0), (rb, hb)];
    for k in 1..shoulder_steps {
        let t = k as f64 / shoulder_steps as f64;
        let blend = 0.5 - 0.5 * (PI * t).cos();
        profile.push((rb + (rn - rb) * blend, hb + shoulder * t));
    }
    profile.push((rn, hb + shoulder));
    profile.push((rn, hb + shoulder + hn));
    profile.push((0.0, hb + shoulder + hn));
    revolve_solid(&profile, segments)
}

#[derive(Clone, Debug)]
pub struct RackParams {
    pub arm: f64,
    pub upright: f64,
    pub thickness: f64,
    pub depth: f64,
}

impl Default for RackParams {
    fn default() -> Self {
        Self { arm: 1.2, upright: 0.9, thickness: 0.12, depth: 0.5 }
    }
}

/// An L-section prism: a shelf with an upright back.
pub fn rack(params: &RackParams) -> Result<Geometry, ShapeError> {
    let RackParams { arm, upright, thickness: t, depth } = *params;
    if !(arm > t && upright > t && t > 0.0 && depth > 0.0) {
        return Err(ShapeError::Invalid("rack proportions out of order".to_string()));
    }
    let poly = [(0.0, 0.0), (arm, 0.0), (arm, t), (t, t), (t, upright), (0.0, upright)];
    extrude_polygon(&poly, depth)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GripperParams {
    pub width: f64,
    pub height: f64,
    pub finger: f64,
    pub slot_depth: f64,
    pub depth: f64,
}

impl Default for GripperParams {
    fn default() -> Self {
        Self { width: 0.36, height: 0.5, finger: 0.06, slot_depth: 0.3, depth: 0.24 }
    }
}

impl GripperParams {
    pub fn slot_width(&self) -> f64 {
        self.width - 2.0 * self.finger
    }
}

/// A U-section prism: two fingers and a palm, slot opening toward -z, slot
/// midplane at x = 0, y-centered. The shared anchor object for every grasp.
pub fn gripper(params: &GripperParams) -> Result<Geometry, ShapeError> {
    let GripperParams { width: w, height: h, finger: f, slot_depth: sd, depth } = *params;
    let g = params.slot_width();
    if !(g > 0.0 && sd > 0.0 && sd < h && f > 0.0 && depth > 0.0) {
        return Err(ShapeError::Invalid("gripper proportions out of order".to_string()));
    }
    let poly = [
        (-w / 2.0, 0.0),
        (-g / 2.0, 0.0),
        (-g / 2.0, sd),
        (g / 2.0, sd),
        (g / 2.0, 0.0),
        (w / 2.0, 0.0),
        (w / 2.0, h),
        (-w / 2.0, h),
    ];
    extrude_polygon(&poly, depth)
}

/// Object categories the benchmark grasps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Mug,
    Bowl,
    Bottle,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Mug, Category::Bowl, Category::Bottle];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Mug => "mug",
            Category::Bowl => "bowl",
            Category::Bottle => "bottle",
        }
    }
}

impl std::str::FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mug" => Ok(Category::Mug),
            "bowl" => Ok(Category::Bowl),
            "bottle" => Ok(Category::Bottle),
            other => Err(format!("unknown category {other:?} (mug|bowl|bottle)")),
        }
    }
}

/// How far the grasped feature is inserted into the slot, as a fraction of
/// slot depth. Bowls get a shallower grip: their walls slope inward below
/// the rim, and the gripper is rigid.
pub fn grasp_insertion(category: Category, grip: &GripperParams) -> f64 {
    let fraction = match category {
        Category::Mug | Category::Bottle => 0.6,
        Category::Bowl => 0.4,
    };
    fraction * grip.slot_depth
}

/// One generated object with its demonstrated grasp.
pub struct ShapeInstance {
    pub category: Category,
    pub geometry: std::sync::Arc<Geometry>,
    /// Demonstrated gripper pose (gripper model frame to object model frame).
    pub grasp: RigidTransform,
    /// Rotational symmetry of the grasp task around the object.
    pub symmetry: super::metrics::Symmetry,
}

/// Deterministically generates an instance of a category with seeded
/// proportions. The gripper (the anchor) is fixed; see [`gripper`].
pub fn generate_instance(
    category: Category,
    seed: u64,
    grip: &GripperParams,
) -> Result<ShapeInstance, ShapeError> {
    generate_instance_scaled(category, seed, grip, 1.0)
}

/// [`generate_instance`] with a uniform scale applied to every length
/// parameter. The gripper does not scale with the object, so insertion
/// depths stay absolute; the valid scale range for grasp clearance is about
/// [0.8, 1.2].
pub fn generate_instance_scaled(
    category: Category,
    seed: u64,
    grip: &GripperParams,
    scale: f64,
) -> Result<ShapeInstance, ShapeError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ShapeError::Invalid(format!("bad instance scale {scale}")));
    }
    let mut rng = rng_from_seed(seed);
    fn draw(rng: &mut impl Rng, scale: f64, lo: f64, hi: f64) -> f64 {
        scale * (lo + (hi - lo) * rng.gen::<f64>())
    }
    let insertion = grasp_insertion(category, grip);

    match category {
        Category::Mug => {
            let params = MugParams {
                outer_radius: draw(&mut rng, scale, 0.34, 0.48),
                height: draw(&mut rng, scale, 0.75, 1.0),
                wall: draw(&mut rng, scale, 0.06, 0.09),
                base: draw(&mut rng, scale, 0.08, 0.12),
                segments: 32,
            };
            let geometry = std::sync::Arc::new(mug(&params)?);
            // Rim grasp opposite the handle (the handle sits at +x): half
            // turn about z, slot midplane through the wall centerline.
            let rot = rotation_from_scaled_axis(Vec3::new(0.0, 0.0, PI));
            let t = Vec3::new(
                -(params.outer_radius - params.wall / 2.0),
                0.0,
                params.height - insertion,
            );
            Ok(ShapeInstance {
                category,
                geometry,
                grasp: RigidTransform::from_parts_renormalized(rot, t),
                // The handle breaks rotational symmetry.
                symmetry: super::metrics::Symmetry::None,
            })
        }
        Category::Bowl => {
            // Radius and height are drawn jointly: height close to the
            // radius keeps the near-rim wall steep enough to straddle.
            let rim_radius = draw(&mut rng, scale, 0.42, 0.52);
            let ratio = 0.85 + 0.10 * rng.gen::<f64>();
            let params = BowlParams {
                rim_radius,
                height: rim_radius * ratio,
                wall: draw(&mut rng, scale, 0.05, 0.07),
                segments: 32,
                arc_steps: 10,
            };
            let geometry = std::sync::Arc::new(bowl(&params)?);
            // Rim grasp at +x with the upright gripper straddling the wall.
            let t = Vec3::new(
                rim_midline_radius(&params),
                0.0,
                params.height - insertion,
            );
            Ok(ShapeInstance {
                category,
                geometry,
                grasp: RigidTransform::from_translation(t),
                symmetry: super::metrics::Symmetry::Axis {
                    axis: Vec3::z(),
                    point: Pt3::origin(),
                    order: 0,
                },
            })
        }
        Category::Bottle => {
            let params = BottleParams {
                body_radius: draw(&mut rng, scale, 0.28, 0.36),
                body_height: draw(&mut rng, scale, 0.45, 0.6),
                neck_radius: draw(&mut rng, scale, 0.065, 0.078),
                neck_height: draw(&mut rng, scale, 0.5, 0.58),
                shoulder_steps: 6,
                segments: 32,
            };
            let geometry = std::sync::Arc::new(bottle(&params)?);
            // Side grasp around the neck: slot depth axis along +x so the
            // approach is horizontal, gap axis along y so the fingers pass
            // either side of the neck, extrusion axis vertical.
            let rot = Mat3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
            let neck_mid =
                params.body_height + 0.35 * params.body_height + params.neck_height / 2.0;
            let t = Vec3::new(-insertion, 0.0, neck_mid);
            Ok(ShapeInstance {
                category,
                geometry,
                grasp: RigidTransform::from_parts_renormalized(rot, t),
                symmetry: super::metrics::Symmetry::Axis {
                    axis: Vec3::z(),
                    point: Pt3::origin(),
                    order: 0,
                },
            })
        }
    }
}

/// Radius of the bowl rim's wall centerline at rim height.
fn rim_midline_radius(params: &BowlParams) -> f64 {
    let r = params.rim_radius;
    let h = params.height;
    let c = (r * r + h * h) / (2.0 * h);
    let ci = c - params.wall;
    let cos_inner = ((c - h) / ci).clamp(-1.0, 1.0);
    let inner_rim = ci * cos_inner.acos().sin();
    (r + inner_rim) / 2.0
}
