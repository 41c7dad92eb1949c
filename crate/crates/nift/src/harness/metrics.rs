//! Quality metrics for a recovered interaction pose: physical plausibility
//! (interpenetration) and accuracy against the demonstrated pose, with the
//! object's rotational symmetry factored out.

use crate::geometry::{
    rotation_angle, rotation_from_scaled_axis, sample_surface, Geometry, GeometryError, Mat3,
    Pt3, RayAccelerator, RigidTransform, Vec3,
};

/// Rotational symmetry of the target object about an axis: equally valid
/// demonstrations come in a family generated by these rotations.
#[derive(Clone, Copy, Debug)]
pub enum Symmetry {
    None,
    /// Rotations about `axis` through `point`. `order` 0 means continuous;
    /// `order` n means the n discrete multiples of `2 pi / n`.
    Axis { axis: Vec3, point: Pt3, order: u32 },
}

impl Symmetry {
    /// The same symmetry after the object is moved by `pose`: the axis
    /// rotates, the point rides along.
    pub fn transformed(&self, pose: &RigidTransform) -> Symmetry {
        match *self {
            Symmetry::None => Symmetry::None,
            Symmetry::Axis { axis, point, order } => Symmetry::Axis {
                axis: pose.apply_vector(axis),
                point: pose.apply(point),
                order,
            },
        }
    }
}

/// Pose deviation after symmetry reduction.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct PoseDeviation {
    pub rotation_rad: f64,
    pub translation: f64,
}

impl PoseDeviation {
    pub fn rotation_deg(&self) -> f64 {
        self.rotation_rad.to_degrees()
    }
}

/// Deviation of `recovered` from the nearest member of the family
/// `{S_phi compose ground_truth}`, where `S_phi` rotates about the symmetry
/// axis. The family member is chosen to minimize the rotation angle (for the
/// continuous case in closed form); translation is reported at that member.
/// In the degenerate case where every azimuth gives the same rotation angle,
/// `phi = 0` is used.
pub fn pose_deviation(
    recovered: &RigidTransform,
    ground_truth: &RigidTransform,
    symmetry: &Symmetry,
) -> PoseDeviation {
    match symmetry {
        Symmetry::None => PoseDeviation {
            rotation_rad: recovered.rotation_distance(ground_truth),
            translation: (recovered.translation() - ground_truth.translation()).norm(),
        },
        Symmetry::Axis { axis, point, order } => {
            let a = axis.normalize();
            if *order == 0 {
                let phi = best_continuous_phi(recovered, ground_truth, &a);
                deviation_at_phi(recovered, ground_truth, &a, point, phi)
            } else {
                (0..*order)
                    .map(|k| {
                        let phi = std::f64::consts::TAU * k as f64 / *order as f64;
                        deviation_at_phi(recovered, ground_truth, &a, point, phi)
                    })
                    .min_by(|x, y| {
                        (x.rotation_rad, x.translation)
                            .partial_cmp(&(y.rotation_rad, y.translation))
                            .expect("finite deviations")
                    })
                    .expect("order > 0")
            }
        }
    }
}

/// Maximizes `tr(M^T Rot_a(phi))` over phi, where `M = R_rec R_gt^T`; by
/// Rodrigues the trace is `A cos(phi) + B sin(phi) + C`, so the optimum is
/// `atan2(B, A)`.
fn best_continuous_phi(rec: &RigidTransform, gt: &RigidTransform, a: &Vec3) -> f64 {
    let m: Mat3 = rec.rotation() * gt.rotation().transpose();
    let ama = (a.transpose() * m * a)[(0, 0)];
    let big_a = m.trace() - ama;
    let big_b = a.x * (m[(2, 1)] - m[(1, 2)])
        + a.y * (m[(0, 2)] - m[(2, 0)])
        + a.z * (m[(1, 0)] - m[(0, 1)]);
    if big_a.hypot(big_b) < 1e-12 {
        0.0
    } else {
        big_b.atan2(big_a)
    }
}

fn deviation_at_phi(
    rec: &RigidTransform,
    gt: &RigidTransform,
    a: &Vec3,
    point: &Pt3,
    phi: f64,
) -> PoseDeviation {
    let rot = rotation_from_scaled_axis(a * phi);
    let equiv_rotation = rot * gt.rotation();
    let equiv_translation = rot * (gt.translation() - point.coords) + point.coords;
    PoseDeviation {
        rotation_rad: rotation_angle(&(rec.rotation() * equiv_rotation.transpose())),
        translation: (rec.translation() - equiv_translation).norm(),
    }
}

/// Maximum depth by which the posed anchor surface dips inside the scene
/// solid: anchor surface points are sampled, those the scene contains score
/// their distance to the scene surface, and the worst case is returned.
/// Zero means no sampled contact. The scene must be a closed mesh for the
/// parity test to be meaningful.
pub fn penetration_depth(
    anchor: &Geometry,
    pose: &RigidTransform,
    scene: &RayAccelerator,
    samples: usize,
    seed: u64,
) -> Result<f64, GeometryError> {
    let placed = anchor.transformed(pose);
    let points = sample_surface(&placed, samples, seed)?;
    Ok(points
        .iter()
        .filter(|p| scene.contains(**p))
        .map(|p| scene.nearest_distance(*p))
        .fold(0.0, f64::max))
}
