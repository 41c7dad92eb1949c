use nalgebra::{Matrix3, Point3, Vector3};
use rand::Rng;

use super::GeometryError;

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;
pub type Pt3 = Point3<f64>;

/// Tolerance for accepting a matrix as a rotation (orthonormality and
/// determinant checks in the `RigidTransform` constructor).
pub const ROTATION_TOL: f64 = 1e-9;

/// A proper rigid motion: `x ↦ R x + t` with `R ∈ SO(3)`.
///
/// Serializes as the row-major homogeneous 4x4; deserialization re-runs the
/// rotation checks, so a hand-edited pose file cannot smuggle in a reflection.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(into = "[f64; 16]", try_from = "[f64; 16]")]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl From<RigidTransform> for [f64; 16] {
    fn from(t: RigidTransform) -> Self {
        t.to_matrix4_row_major()
    }
}

impl TryFrom<[f64; 16]> for RigidTransform {
    type Error = GeometryError;

    fn try_from(m: [f64; 16]) -> Result<Self, Self::Error> {
        Self::from_matrix4_row_major(&m)
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    /// Builds a transform, rejecting rotation parts that are not orthonormal
    /// with determinant +1 within `ROTATION_TOL`.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Mat3::identity()).abs().max();
        let det_err = (rotation.determinant() - 1.0).abs();
        if ortho_err > ROTATION_TOL || det_err > ROTATION_TOL {
            return Err(GeometryError::NotARotation { ortho_err, det_err });
        }
        Ok(Self { rotation, translation })
    }

    /// Builds from a rotation that may carry accumulated round-off, snapping
    /// it back to SO(3) first.
    pub fn from_parts_renormalized(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation: orthonormalize(rotation), translation }
    }

    pub fn from_rotation(rotation: Mat3) -> Result<Self, GeometryError> {
        Self::new(rotation, Vec3::zeros())
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self { rotation: Mat3::identity(), translation }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: Pt3) -> Pt3 {
        Pt3::from(self.rotation * p.coords + self.translation)
    }

    pub fn apply_vector(&self, v: Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self.compose(&other)` applies `other` first: `(self ∘ other)(x) = self(other(x))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Row-major homogeneous 4x4, the on-disk pose convention.
    pub fn to_matrix4_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn from_matrix4_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let rotation = Mat3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        if m[12] != 0.0 || m[13] != 0.0 || m[14] != 0.0 || m[15] != 1.0 {
            return Err(GeometryError::NotARotation { ortho_err: f64::INFINITY, det_err: f64::INFINITY });
        }
        Self::new(rotation, Vec3::new(m[3], m[7], m[11]))
    }

    /// Geodesic distance to another rotation, in radians.
    pub fn rotation_distance(&self, other: &RigidTransform) -> f64 {
        rotation_angle(&(self.rotation * other.rotation.transpose()))
    }
}

/// Angle of a rotation matrix in radians, in `[0, π]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Rodrigues map from an axis-angle vector (angle = norm).
pub fn rotation_from_scaled_axis(w: Vec3) -> Mat3 {
    nalgebra::Rotation3::from_scaled_axis(w).into_inner()
}

/// Nearest rotation matrix in the Frobenius sense, via SVD with a
/// determinant-sign fix. Used to stop round-off drift when rotation
/// increments are chained by an optimizer.
pub fn orthonormalize(m: Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 SVD always yields U");
    let vt = svd.v_t.expect("3x3 SVD always yields V^T");
    let d = (u * vt).determinant();
    let fix = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d.signum()));
    u * fix * vt
}

/// Haar-uniform random rotation (Shoemake's subgroup algorithm: three
/// uniforms to a uniform unit quaternion).
pub fn haar_random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Mat3 {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let t2 = std::f64::consts::TAU * u2;
    let t3 = std::f64::consts::TAU * u3;
    let q = nalgebra::Quaternion::new(b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin());
    nalgebra::UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn rejects_non_rotation() {
        let m = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(m, Vec3::zeros()).is_err(), "reflection must be rejected");
        let scaled = Mat3::identity() * 1.001;
        assert!(RigidTransform::new(scaled, Vec3::zeros()).is_err());
    }

    #[test]
    fn matrix4_round_trip() {
        let mut rng = rng_from_seed(3);
        for _ in 0..50 {
            let t = RigidTransform::from_parts_renormalized(
                haar_random_rotation(&mut rng),
                Vec3::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
            );
            let back = RigidTransform::from_matrix4_row_major(&t.to_matrix4_row_major()).unwrap();
            assert_relative_eq!(t.rotation(), back.rotation(), epsilon = 1e-12);
            assert_relative_eq!(t.translation(), back.translation(), epsilon = 1e-12);
        }
    }

    #[test]
    fn haar_rotations_are_orthonormal() {
        let mut rng = rng_from_seed(11);
        for _ in 0..200 {
            let r = haar_random_rotation(&mut rng);
            let err = (r.transpose() * r - Mat3::identity()).abs().max();
            assert!(err <= 1e-9, "orthonormality residual {err}");
            assert!((r.determinant() - 1.0).abs() <= 1e-9);
        }
    }

    // Uniform SO(3) has angle density (1 - cos a)/π on [0, π]; the mean is
    // π/2 + 2/π ≈ 126.476 degrees and the CDF is (a - sin a)/π.
    #[test]
    fn haar_rotation_angle_statistics() {
        let n = 100_000usize;
        let mut rng = rng_from_seed(2024);
        let mut angles: Vec<f64> = (0..n).map(|_| rotation_angle(&haar_random_rotation(&mut rng))).collect();

        let mean = angles.iter().sum::<f64>() / n as f64;
        let expected = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
        assert!(
            (mean - expected).abs() < 1.0_f64.to_radians(),
            "mean angle {:.4} deg, expected {:.4} deg",
            mean.to_degrees(),
            expected.to_degrees()
        );

        angles.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |a: f64| (a - a.sin()) / std::f64::consts::PI;
        let mut d: f64 = 0.0;
        for (i, &a) in angles.iter().enumerate() {
            let f = cdf(a);
            d = d.max((f - i as f64 / n as f64).abs());
            d = d.max((f - (i + 1) as f64 / n as f64).abs());
        }
        // Kolmogorov-Smirnov: do not reject uniformity at the 1% level.
        let critical = 1.628 / (n as f64).sqrt();
        assert!(d < critical, "KS statistic {d:.5} >= critical {critical:.5}");
    }

    proptest! {
        #[test]
        fn apply_preserves_distances(
            seed in 0u64..1000,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
        ) {
            let mut rng = rng_from_seed(seed);
            let t = RigidTransform::from_parts_renormalized(
                haar_random_rotation(&mut rng),
                Vec3::new(0.3, -0.7, 2.0),
            );
            let a = Pt3::new(ax, ay, az);
            let b = Pt3::new(bx, by, bz);
            let before = (a - b).norm();
            let after = (t.apply(a) - t.apply(b)).norm();
            prop_assert!((before - after).abs() <= 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(seed in 0u64..1000) {
            let mut rng = rng_from_seed(seed);
            let t = RigidTransform::from_parts_renormalized(
                haar_random_rotation(&mut rng),
                Vec3::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>(), rng.gen::<f64>()),
            );
            let id = t.compose(&t.invert());
            prop_assert!((id.rotation() - Mat3::identity()).abs().max() <= 1e-12);
            prop_assert!(id.translation().norm() <= 1e-12);
        }

        #[test]
        fn compose_applies_right_operand_first(seed in 0u64..200) {
            let mut rng = rng_from_seed(seed);
            let a = RigidTransform::from_parts_renormalized(haar_random_rotation(&mut rng), Vec3::new(1.0, 0.0, 0.0));
            let b = RigidTransform::from_parts_renormalized(haar_random_rotation(&mut rng), Vec3::new(0.0, -2.0, 0.5));
            let p = Pt3::new(0.1, 0.2, 0.3);
            let lhs = a.compose(&b).apply(p);
            let rhs = a.apply(b.apply(p));
            prop_assert!((lhs - rhs).norm() <= 1e-12);
        }
    }

    #[test]
    fn orthonormalize_fixes_drift() {
        let mut rng = rng_from_seed(5);
        let r = haar_random_rotation(&mut rng);
        let drifted = r + Mat3::new(1e-4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let fixed = orthonormalize(drifted);
        assert!((fixed.transpose() * fixed - Mat3::identity()).abs().max() <= 1e-12);
        assert!(rotation_angle(&(fixed * r.transpose())) < 1e-3);
    }
}
