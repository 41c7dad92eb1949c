//! Descriptor fields over an object: maps from a query point to a feature
//! vector that changes smoothly with the query and characterizes where the
//! point sits relative to the object. Two families are provided, one
//! analytic (harmonic band powers of the normalized distance function) and
//! one learned (concatenated decoder activations of a trained network).

pub mod encoder;
pub mod heatmap;
pub mod mlp;
pub mod model;
pub mod train;

pub use encoder::{Canonicalizer, PointNetEncoder};
pub use heatmap::{export_heatmap, GridSpec, Heatmap};
pub use mlp::{Activation, Mlp};
pub use model::{FieldHead, FieldNet, ObjectBinding};
pub use train::{
    generate_occupancy_set, generate_training_set, train, DataConfig, ObjectSamples,
    TrainConfig, TrainReport, TrainingSet,
};

use std::io;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{Pt3, RayAccelerator, Vec3};
use crate::scf::{self, make_direction_set, DirectionSet, ScfConfig, ScfError};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("i/o: {0}")]
    Io(#[source] io::Error),
    #[error("bad field file: {0}")]
    Format(String),
    #[error(transparent)]
    Scf(#[from] ScfError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("descriptor length mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Queries outside the field's domain are pulled back to its boundary;
/// `excess` is how far the original point overshot.
#[derive(Clone, Copy, Debug)]
pub struct ClampedQuery {
    pub point: Pt3,
    pub excess: f64,
}

/// A descriptor field bound to one object instance. Cloning is cheap: the
/// accelerator and weights are shared, only the binding is copied.
#[derive(Clone)]
pub enum DescriptorField {
    /// Band powers of the normalized spherical distance function, evaluated
    /// by ray casting. Differentiable almost everywhere via hit normals.
    Scf {
        accel: Arc<RayAccelerator>,
        dirs: DirectionSet,
        order: usize,
        config: ScfConfig,
    },
    /// A trained network bound to the object's sampled surface cloud.
    Learned { net: Arc<FieldNet>, binding: ObjectBinding },
}

impl DescriptorField {
    pub fn scf(accel: Arc<RayAccelerator>, config: ScfConfig) -> Self {
        let dirs = make_direction_set(config.dir_count, config.scheme);
        DescriptorField::Scf { accel, dirs, order: config.order, config }
    }

    pub fn learned(net: Arc<FieldNet>, cloud: &[Pt3]) -> Self {
        let binding = net.bind(cloud);
        DescriptorField::Learned { net, binding }
    }

    pub fn descriptor_len(&self) -> usize {
        match self {
            DescriptorField::Scf { order, .. } => order + 1,
            DescriptorField::Learned { net, .. } => net.descriptor_len(),
        }
    }

    /// Bounding sphere of the object the field is bound to.
    pub fn object_sphere(&self) -> (Pt3, f64) {
        match self {
            DescriptorField::Scf { accel, .. } => accel.bounding_sphere(),
            DescriptorField::Learned { binding, .. } => {
                (binding.canon.centroid, binding.canon.radius)
            }
        }
    }

    /// Domain sphere: 1.5x the object's bounding sphere. Beyond it the
    /// descriptor is extrapolated by clamping, with the excess reported so
    /// optimizers can penalize leaving the informative region.
    pub fn domain(&self) -> (Pt3, f64) {
        let (c, r) = self.object_sphere();
        (c, 1.5 * r)
    }

    pub fn clamp(&self, q: Pt3) -> ClampedQuery {
        let (c, r) = self.domain();
        let v = q - c;
        let dist = v.norm();
        if dist <= r {
            ClampedQuery { point: q, excess: 0.0 }
        } else {
            ClampedQuery { point: c + v * (r / dist), excess: dist - r }
        }
    }

    /// Descriptor at a point, assumed already inside the domain.
    pub fn descriptor(&self, q: Pt3) -> Result<Vec<f64>, FieldError> {
        match self {
            DescriptorField::Scf { accel, dirs, order, .. } => {
                Ok(scf::scf_at(accel, q, dirs, *order)?.powers)
            }
            DescriptorField::Learned { net, binding } => Ok(net.descriptor(binding, q)),
        }
    }

    /// Descriptor and the gradient of `cot . descriptor` with respect to the
    /// query, sharing one evaluation. `cot` is produced by the caller from
    /// the residual (it is the loss gradient in descriptor space).
    pub fn descriptor_and_query_grad(
        &self,
        q: Pt3,
        cot_of: impl FnOnce(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec3), FieldError> {
        match self {
            DescriptorField::Scf { accel, dirs, order, .. } => {
                let eval = scf::scf_eval(accel, q, dirs, *order)?;
                let desc = eval.descriptor.powers.clone();
                let cot = cot_of(&desc);
                let g = scf::scf_query_vjp(&eval, dirs, *order, &cot);
                Ok((desc, g))
            }
            DescriptorField::Learned { net, binding } => {
                let (desc, cache) = net.descriptor_with_cache(binding, q);
                let cot = cot_of(&desc);
                let g = net.query_grad_from_cache(binding, &cache, &cot);
                Ok((desc, g))
            }
        }
    }

    /// Identifies the descriptor semantics: network weights for learned
    /// fields, the exact configuration for analytic ones. Two fields with
    /// equal fingerprints produce comparable descriptors.
    pub fn fingerprint(&self) -> String {
        match self {
            DescriptorField::Scf { config, .. } => {
                let bytes = serde_json::to_vec(config).expect("config serializes");
                let digest = Sha256::digest(&bytes);
                let mut hex = String::with_capacity(68);
                hex.push_str("scf:");
                for b in digest {
                    use std::fmt::Write as _;
                    write!(hex, "{b:02x}").unwrap();
                }
                hex
            }
            DescriptorField::Learned { net, .. } => format!("net:{}", net.fingerprint()),
        }
    }
}

/// Content hash for geometry, used to pin templates to the exact anchor
/// object they were built from.
pub fn geometry_fingerprint(geom: &crate::geometry::Geometry) -> String {
    let mut hasher = Sha256::new();
    for p in geom.points() {
        for c in [p.x, p.y, p.z] {
            hasher.update(c.to_le_bytes());
        }
    }
    for t in geom.triangles() {
        for i in t {
            hasher.update(i.to_le_bytes());
        }
    }
    if let Some(r) = geom.splat_radius() {
        hasher.update(r.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write as _;
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::fixtures::icosphere;
    use crate::geometry::Geometry;
    use crate::rng::rng_from_seed;

    fn sphere_field() -> DescriptorField {
        let accel = RayAccelerator::build(Arc::new(icosphere(3, 1.0))).unwrap();
        let cfg = ScfConfig { dir_count: 400, ..Default::default() };
        DescriptorField::scf(Arc::new(accel), cfg)
    }

    #[test]
    fn clamp_is_identity_inside_and_radial_outside() {
        let field = sphere_field();
        let (c, r) = field.domain();
        assert!((r - 1.5).abs() < 0.05, "domain should be 1.5x the bounding sphere");
        let inside = Pt3::new(0.5, 0.0, 0.0);
        let cq = field.clamp(inside);
        assert_eq!(cq.point, inside);
        assert_eq!(cq.excess, 0.0);
        let outside = Pt3::new(4.0, 0.0, 0.0);
        let cq = field.clamp(outside);
        assert!(((cq.point - c).norm() - r).abs() < 1e-12);
        assert!((cq.excess - ((outside - c).norm() - r)).abs() < 1e-12);
    }

    #[test]
    fn scf_descriptor_and_grad_agree_with_separate_calls() {
        let field = sphere_field();
        let q = Pt3::new(0.2, 0.1, -0.3);
        let d1 = field.descriptor(q).unwrap();
        let cot = vec![1.0; d1.len()];
        let (d2, g) = field.descriptor_and_query_grad(q, |_| cot.clone()).unwrap();
        assert_eq!(d1, d2);
        assert!(g.norm() > 0.0, "interior query must have nonzero gradient");
    }

    #[test]
    fn learned_field_wires_through_the_network() {
        let mut net = FieldNet::new(FieldHead::BandPowers { order: 5 });
        net.init(&mut rng_from_seed(3));
        let cloud: Vec<Pt3> = icosphere(2, 1.0).points().to_vec();
        let field = DescriptorField::learned(Arc::new(net), &cloud);
        assert_eq!(field.descriptor_len(), 166);
        let q = Pt3::new(0.4, 0.0, 0.2);
        let d = field.descriptor(q).unwrap();
        assert_eq!(d.len(), 166);
        let (d2, g) = field
            .descriptor_and_query_grad(q, |desc| desc.iter().map(|v| 2.0 * v).collect())
            .unwrap();
        assert_eq!(d, d2);
        assert!(g.norm() > 0.0);
    }

    #[test]
    fn fingerprints_distinguish_configs_and_weights() {
        let f1 = sphere_field();
        let accel = RayAccelerator::build(Arc::new(icosphere(3, 1.0))).unwrap();
        let f2 = DescriptorField::scf(
            Arc::new(accel),
            ScfConfig { dir_count: 500, ..Default::default() },
        );
        assert_ne!(f1.fingerprint(), f2.fingerprint());
        assert!(f1.fingerprint().starts_with("scf:"));

        let mut net_a = FieldNet::new(FieldHead::BandPowers { order: 5 });
        net_a.init(&mut rng_from_seed(1));
        let mut net_b = FieldNet::new(FieldHead::BandPowers { order: 5 });
        net_b.init(&mut rng_from_seed(2));
        let cloud: Vec<Pt3> = icosphere(1, 1.0).points().to_vec();
        let la = DescriptorField::learned(Arc::new(net_a), &cloud);
        let lb = DescriptorField::learned(Arc::new(net_b), &cloud);
        assert_ne!(la.fingerprint(), lb.fingerprint());
    }

    #[test]
    fn geometry_fingerprint_tracks_content() {
        let a = icosphere(2, 1.0);
        let b = icosphere(2, 1.0);
        assert_eq!(geometry_fingerprint(&a), geometry_fingerprint(&b));
        let c = icosphere(2, 1.0000001);
        assert_ne!(geometry_fingerprint(&a), geometry_fingerprint(&c));
        let mut pts = a.points().to_vec();
        pts.push(Pt3::new(5.0, 5.0, 5.0));
        let cloud = Geometry::splat_cloud(pts, Some(0.1)).unwrap();
        assert_ne!(geometry_fingerprint(&a), geometry_fingerprint(&cloud));
    }
}
