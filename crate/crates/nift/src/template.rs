//! Interaction templates.
//!
//! A template records a demonstrated spatial relation between two objects:
//! points sampled from the bisector surface between them, each labeled with
//! the scene object's descriptor field at that location. Points are stored
//! in the anchor object's model frame, so the template travels with the
//! anchor and a recovered template pose is directly the anchor's pose.
//!
//! Working in the anchor frame also makes template extraction equivariant
//! under joint rigid motion of a demonstration by construction: moving scene
//! and anchor together leaves the relative configuration, and therefore the
//! extracted points, unchanged.

use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{geometry_fingerprint, DescriptorField, FieldError};
use crate::geometry::{Geometry, GeometryError, Pt3, RayAccelerator, RigidTransform};
use crate::ibs::{compute_ibs, weighted_index_sample, IbsConfig, IbsError};
use crate::rng::derive_seed;

/// Smallest template that still constrains a pose meaningfully.
pub const MIN_TEMPLATE_POINTS: usize = 32;

/// Tag identifying template JSON files.
pub const FORMAT_TAG: &str = "nift-template-v1";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template build needs at least one demonstration")]
    NoDemonstrations,
    #[error("template must keep at least {min} points, got {got}")]
    TooFewPoints { got: usize, min: usize },
    #[error("samples_per_demo must be positive")]
    NoSamplesRequested,
    #[error("demonstration {index}: anchor geometry differs from the first demonstration")]
    AnchorMismatch { index: usize },
    #[error("demonstration {index}: descriptor field differs from the first demonstration")]
    FieldMismatch { index: usize },
    #[error("pooled bisector samples hold {got} points, template needs {need}")]
    NotEnoughCandidates { got: usize, need: usize },
    #[error("file tag {got:?} is not {want:?}")]
    FormatTag { got: String, want: String },
    #[error("template holds {points} points but {descriptors} descriptors")]
    LengthMismatch { points: usize, descriptors: usize },
    #[error("descriptor {index} has length {got}, template records {want}")]
    DescriptorLength { index: usize, got: usize, want: usize },
    #[error("template contains non-finite values")]
    NonFinite,
    #[error("template was built against descriptor field {want}, given {got}")]
    FieldFingerprint { want: String, got: String },
    #[error("template was built for a different anchor geometry")]
    AnchorFingerprint,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Ibs(#[from] IbsError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One demonstrated interaction.
pub struct Demonstration {
    /// Scene object in its demonstrated placement.
    pub scene: Arc<Geometry>,
    /// Descriptor field bound to `scene` in that same placement.
    pub field: DescriptorField,
    /// Anchor geometry in its model frame. Must be the same object across
    /// every demonstration that feeds one template.
    pub anchor: Arc<Geometry>,
    /// Pose the anchor held in the demonstration (model frame to world).
    pub anchor_pose: RigidTransform,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateConfig {
    /// Bisector surface extraction settings.
    pub ibs: IbsConfig,
    /// Points importance-sampled from each demonstration's bisector.
    pub samples_per_demo: usize,
    /// Final template size after cross-demonstration aggregation.
    pub template_size: usize,
    pub seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        Self {
            ibs: IbsConfig::default(),
            samples_per_demo: 512,
            template_size: 128,
            seed: 0,
        }
    }
}

/// A demonstrated interaction, ready to be imitated.
///
/// `points` live in the anchor model frame and `descriptors[i]` is what the
/// scene's descriptor field reported at the world-frame image of `points[i]`,
/// averaged over demonstrations.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractionTemplate {
    pub format: String,
    pub points: Vec<Pt3>,
    pub descriptors: Vec<Vec<f64>>,
    pub descriptor_len: usize,
    /// Pose of the anchor relative to the template points. Identity, because
    /// points are stored in the anchor model frame; kept explicit so the
    /// imitation result composes as `recovered_pose * anchor_pose_ref`.
    pub anchor_pose_ref: RigidTransform,
    /// Identifies the descriptor field family (settings or trained weights,
    /// not the bound scene instance).
    pub field_fingerprint: String,
    /// Content hash of the anchor geometry.
    pub anchor_fingerprint: String,
    /// Mean demonstration scene diameter, the length scale callers use for
    /// step sizes and out-of-domain penalties.
    pub scene_diameter: f64,
    pub demo_count: usize,
    pub config: TemplateConfig,
}

impl InteractionTemplate {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Structural checks run on every load and available to callers that
    /// build templates by hand.
    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.format != FORMAT_TAG {
            return Err(TemplateError::FormatTag {
                got: self.format.clone(),
                want: FORMAT_TAG.to_string(),
            });
        }
        if self.points.len() != self.descriptors.len() {
            return Err(TemplateError::LengthMismatch {
                points: self.points.len(),
                descriptors: self.descriptors.len(),
            });
        }
        if self.points.len() < MIN_TEMPLATE_POINTS {
            return Err(TemplateError::TooFewPoints {
                got: self.points.len(),
                min: MIN_TEMPLATE_POINTS,
            });
        }
        for (index, d) in self.descriptors.iter().enumerate() {
            if d.len() != self.descriptor_len {
                return Err(TemplateError::DescriptorLength {
                    index,
                    got: d.len(),
                    want: self.descriptor_len,
                });
            }
        }
        let points_finite = self.points.iter().all(|p| p.coords.iter().all(|c| c.is_finite()));
        let desc_finite = self.descriptors.iter().flatten().all(|v| v.is_finite());
        if !points_finite || !desc_finite || !self.scene_diameter.is_finite() {
            return Err(TemplateError::NonFinite);
        }
        Ok(())
    }

    /// Rejects descriptor fields from a different family than the template
    /// was demonstrated with; descriptors would not be comparable.
    pub fn check_field(&self, field: &DescriptorField) -> Result<(), TemplateError> {
        let got = field.fingerprint();
        if got != self.field_fingerprint {
            return Err(TemplateError::FieldFingerprint {
                want: self.field_fingerprint.clone(),
                got,
            });
        }
        Ok(())
    }

    /// Rejects anchors that are not the demonstrated object; template points
    /// are only meaningful in that object's model frame.
    pub fn check_anchor(&self, anchor: &Geometry) -> Result<(), TemplateError> {
        if geometry_fingerprint(anchor) != self.anchor_fingerprint {
            return Err(TemplateError::AnchorFingerprint);
        }
        Ok(())
    }

    pub fn to_json_string(&self) -> Result<String, TemplateError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self, TemplateError> {
        let t: Self = serde_json::from_str(s)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<(), TemplateError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let file = std::fs::File::open(path)?;
        let t: Self = serde_json::from_reader(BufReader::new(file))?;
        t.validate()?;
        Ok(t)
    }
}

/// Extracts a template from one or more demonstrations of the same anchor
/// against the same descriptor field family.
///
/// Per demonstration, the bisector between anchor and scene is computed in
/// the anchor model frame (anchor at identity, scene carried through the
/// inverse anchor pose) and importance-sampled. The per-demonstration sets
/// are pooled; a density weight from the mean distance to the k nearest
/// pooled neighbors (k = number of demonstrations) then concentrates the
/// final resample where demonstrations agree. Each kept point is labeled
/// with the mean descriptor across demonstrations, every demonstration
/// queried at its own world-frame image of the point.
pub fn build_template(
    demos: &[Demonstration],
    cfg: &TemplateConfig,
) -> Result<InteractionTemplate, TemplateError> {
    let first = check_demo_consistency(demos)?;
    if cfg.template_size < MIN_TEMPLATE_POINTS {
        return Err(TemplateError::TooFewPoints {
            got: cfg.template_size,
            min: MIN_TEMPLATE_POINTS,
        });
    }
    if cfg.samples_per_demo == 0 {
        return Err(TemplateError::NoSamplesRequested);
    }

    let anchor_accel = Arc::new(RayAccelerator::build(first.anchor.clone())?);

    // Candidate points, all expressed in the anchor model frame.
    let mut pooled: Vec<Pt3> = Vec::with_capacity(demos.len() * cfg.samples_per_demo);
    let mut scene_diameter_sum = 0.0;
    for (index, demo) in demos.iter().enumerate() {
        let to_anchor = demo.anchor_pose.invert();
        let scene_in_anchor = Arc::new(demo.scene.transformed(&to_anchor));
        let scene_accel = Arc::new(RayAccelerator::build(scene_in_anchor)?);
        scene_diameter_sum += scene_accel.diameter();
        let surface = compute_ibs(&anchor_accel, &scene_accel, &cfg.ibs)?;
        let set = surface.sample(cfg.samples_per_demo, derive_seed(cfg.seed, index as u64 + 1));
        pooled.extend_from_slice(&set.points);
    }
    if pooled.len() < cfg.template_size {
        return Err(TemplateError::NotEnoughCandidates {
            got: pooled.len(),
            need: cfg.template_size,
        });
    }

    let weights = knn_density_weights(&pooled, demos.len());
    let chosen = weighted_index_sample(&weights, cfg.template_size, derive_seed(cfg.seed, 0));
    let points: Vec<Pt3> = chosen.iter().map(|&i| pooled[i]).collect();

    assemble_template(demos, points, scene_diameter_sum / demos.len() as f64, cfg)
}

/// Builds a template from caller-provided points in the anchor model frame,
/// skipping bisector extraction. This is the hook for alternative query-point
/// schemes (fixed random sets, hand-picked probes); labeling, metadata, and
/// validation are identical to [`build_template`].
pub fn build_template_from_points(
    demos: &[Demonstration],
    points: Vec<Pt3>,
    cfg: &TemplateConfig,
) -> Result<InteractionTemplate, TemplateError> {
    check_demo_consistency(demos)?;
    if points.len() < MIN_TEMPLATE_POINTS {
        return Err(TemplateError::TooFewPoints {
            got: points.len(),
            min: MIN_TEMPLATE_POINTS,
        });
    }
    let mut scene_diameter_sum = 0.0;
    for demo in demos {
        let scene_accel = RayAccelerator::build(demo.scene.clone())?;
        scene_diameter_sum += scene_accel.diameter();
    }
    assemble_template(demos, points, scene_diameter_sum / demos.len() as f64, cfg)
}

/// Shared guards: at least one demonstration, and every demonstration uses
/// the same anchor geometry and descriptor-field family as the first.
fn check_demo_consistency(demos: &[Demonstration]) -> Result<&Demonstration, TemplateError> {
    let Some(first) = demos.first() else {
        return Err(TemplateError::NoDemonstrations);
    };
    let anchor_fingerprint = geometry_fingerprint(&first.anchor);
    let field_fingerprint = first.field.fingerprint();
    for (index, demo) in demos.iter().enumerate().skip(1) {
        if geometry_fingerprint(&demo.anchor) != anchor_fingerprint {
            return Err(TemplateError::AnchorMismatch { index });
        }
        if demo.field.fingerprint() != field_fingerprint {
            return Err(TemplateError::FieldMismatch { index });
        }
    }
    Ok(first)
}

/// Labels the chosen points with demonstration-mean descriptors and packs
/// the template struct.
fn assemble_template(
    demos: &[Demonstration],
    points: Vec<Pt3>,
    scene_diameter: f64,
    cfg: &TemplateConfig,
) -> Result<InteractionTemplate, TemplateError> {
    let first = &demos[0];
    let descriptor_len = first.field.descriptor_len();
    let descriptors: Vec<Vec<f64>> = points
        .par_iter()
        .map(|&p| -> Result<Vec<f64>, TemplateError> {
            let mut mean = vec![0.0; descriptor_len];
            for demo in demos {
                let world = demo.anchor_pose.apply(p);
                let clamped = demo.field.clamp(world);
                let d = demo.field.descriptor(clamped.point)?;
                for (m, v) in mean.iter_mut().zip(&d) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= demos.len() as f64;
            }
            Ok(mean)
        })
        .collect::<Result<_, _>>()?;

    Ok(InteractionTemplate {
        format: FORMAT_TAG.to_string(),
        points,
        descriptors,
        descriptor_len,
        anchor_pose_ref: RigidTransform::identity(),
        field_fingerprint: first.field.fingerprint(),
        anchor_fingerprint: geometry_fingerprint(&first.anchor),
        scene_diameter,
        demo_count: demos.len(),
        config: cfg.clone(),
    })
}

/// Density weight per pooled point: the reciprocal mean distance to its `k`
/// nearest neighbors (self excluded), softened by a small fraction of the
/// pooled extent so exact duplicates cannot dominate the resample.
fn knn_density_weights(points: &[Pt3], k: usize) -> Vec<f64> {
    let k = k.clamp(1, points.len().saturating_sub(1));
    if k == 0 {
        return vec![1.0; points.len()];
    }
    let aabb = crate::geometry::Aabb::from_points(points.iter().copied());
    let delta = (1e-4 * aabb.diagonal().norm()).max(1e-12);
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut dists: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, q)| (q - p).norm())
                .collect();
            dists.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
            let mean = dists[..k].iter().sum::<f64>() / k as f64;
            1.0 / (mean + delta)
        })
        .collect()
}
