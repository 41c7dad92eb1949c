//! Pose recovery: place the anchor object relative to a new scene object so
//! the scene's descriptor field reproduces the template's recorded values.
//!
//! The objective over a candidate pose `T` is the mean, over template points
//! `p_i` with recorded descriptors `D_i`, of
//!
//! `‖D_i − f(clamp(T p_i))‖₁ + w · excess_i / diameter`
//!
//! where `f` is the target field, queries outside its domain are pulled back
//! to the boundary, and the excess penalty steers wandering poses home. The
//! pose is driven by Adam on a six-dimensional increment (axis-angle composed
//! on the left of the rotation, plus a translation step), from several random
//! restarts in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::{DescriptorField, FieldError};
use crate::geometry::{
    haar_random_rotation, orthonormalize, rotation_from_scaled_axis, Mat3, Pt3, RigidTransform,
    Vec3,
};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scf::ScfError;
use crate::template::{InteractionTemplate, TemplateError};

#[derive(Debug, thiserror::Error)]
pub enum ImitateError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("template descriptors have length {template}, the field produces {field}")]
    DescriptorMismatch { template: usize, field: usize },
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("every restart diverged to a non-finite objective")]
    AllRestartsDiverged,
}

/// How the pose gradient is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientMode {
    /// Chain the field's query gradient through the pose parameters.
    Analytic,
    /// Central differences over the six pose increments. Slower by the
    /// number of objective evaluations, but field-agnostic; kept as a
    /// cross-check and a fallback.
    FiniteDifference,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ImitateConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub lr: f64,
    /// Stop when the best objective improved by less than `min_improvement`
    /// over this many iterations.
    pub convergence_window: usize,
    pub min_improvement: f64,
    pub gradient: GradientMode,
    /// Radius of the random initial translation jitter, as a fraction of the
    /// target object diameter.
    pub init_jitter: f64,
    /// Weight of the out-of-domain penalty term.
    pub excess_weight: f64,
    pub seed: u64,
}

impl Default for ImitateConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            lr: 1e-2,
            convergence_window: 10,
            min_improvement: 1e-6,
            gradient: GradientMode::Analytic,
            init_jitter: 0.1,
            excess_weight: 1.0,
            seed: 0,
        }
    }
}

/// Outcome of a single descent.
#[derive(Clone, Debug, Serialize)]
pub struct RestartOutcome {
    /// Best pose seen (anchor model frame to scene frame).
    pub pose: RigidTransform,
    /// Objective at that pose; infinite if no finite value was ever seen.
    pub residual: f64,
    pub iters: usize,
    pub converged: bool,
    pub diverged: bool,
}

/// Best outcome across restarts.
#[derive(Clone, Debug, Serialize)]
pub struct PoseResult {
    /// Recovered anchor pose (model frame to scene frame).
    pub pose: RigidTransform,
    /// Mean per-point objective at the recovered pose.
    pub residual: f64,
    /// Index of the winning restart.
    pub restart: usize,
    pub iters: usize,
    pub converged: bool,
    pub diverged_restarts: usize,
}

/// Recovers the demonstrated pose against a new scene, trying
/// `cfg.restarts` random initializations in parallel and keeping the lowest
/// residual (ties broken by restart index).
pub fn imitate(
    template: &InteractionTemplate,
    field: &DescriptorField,
    cfg: &ImitateConfig,
) -> Result<PoseResult, ImitateError> {
    check_compatibility(template, field, cfg)?;
    let scale = target_scale(field);
    let objective = Objective { template, field, excess_weight: cfg.excess_weight, scale };
    let (target_center, _) = field.object_sphere();
    let template_centroid = centroid(&template.points);

    let outcomes: Vec<RestartOutcome> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| -> Result<RestartOutcome, ImitateError> {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, k as u64));
            let r0 = haar_random_rotation(&mut rng);
            let jitter = uniform_ball(&mut rng) * (cfg.init_jitter * scale);
            // Start with the template centroid on the target center: poses
            // that overlap the informative region descend; ones far outside
            // the domain see a flat clamped field.
            let t0 = target_center.coords + jitter - r0 * template_centroid.coords;
            let init = RigidTransform::from_parts_renormalized(r0, t0);
            run_descent(&objective, init, cfg)
        })
        .collect::<Result<_, _>>()?;

    let diverged_restarts = outcomes.iter().filter(|o| o.diverged).count();
    let best = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.residual.is_finite())
        .min_by(|(i, a), (j, b)| {
            a.residual.partial_cmp(&b.residual).expect("finite residuals").then(i.cmp(j))
        });
    let Some((restart, best)) = best else {
        return Err(ImitateError::AllRestartsDiverged);
    };
    Ok(PoseResult {
        pose: best.pose,
        residual: best.residual,
        restart,
        iters: best.iters,
        converged: best.converged,
        diverged_restarts,
    })
}

/// One descent from a caller-chosen pose; no restarts, no jitter. The
/// deterministic building block behind [`imitate`], exposed for callers that
/// have a pose hypothesis of their own.
pub fn imitate_single(
    template: &InteractionTemplate,
    field: &DescriptorField,
    init: RigidTransform,
    cfg: &ImitateConfig,
) -> Result<RestartOutcome, ImitateError> {
    check_compatibility(template, field, cfg)?;
    let objective = Objective {
        template,
        field,
        excess_weight: cfg.excess_weight,
        scale: target_scale(field),
    };
    run_descent(&objective, init, cfg)
}

fn check_compatibility(
    template: &InteractionTemplate,
    field: &DescriptorField,
    cfg: &ImitateConfig,
) -> Result<(), ImitateError> {
    template.validate()?;
    template.check_field(field)?;
    let flen = field.descriptor_len();
    if template.descriptor_len != flen {
        return Err(ImitateError::DescriptorMismatch {
            template: template.descriptor_len,
            field: flen,
        });
    }
    if cfg.restarts == 0 || cfg.max_iters == 0 || cfg.convergence_window == 0 {
        return Err(ImitateError::Config(
            "restarts, max_iters and convergence_window must be positive".to_string(),
        ));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(ImitateError::Config("lr must be positive and finite".to_string()));
    }
    if cfg.min_improvement < 0.0 || cfg.init_jitter < 0.0 || cfg.excess_weight < 0.0 {
        return Err(ImitateError::Config(
            "min_improvement, init_jitter and excess_weight must be non-negative".to_string(),
        ));
    }
    Ok(())
}

fn run_descent(
    obj: &Objective<'_>,
    init: RigidTransform,
    cfg: &ImitateConfig,
) -> Result<RestartOutcome, ImitateError> {
    let mut rot = *init.rotation();
    let mut trans = *init.translation();
    let mut adam = Adam::new(6);
    let mut best_loss = f64::INFINITY;
    let mut best_pose = init;
    // best_trace[i] holds the best loss seen through iteration i.
    let mut best_trace = Vec::with_capacity(cfg.max_iters);
    let mut iters = 0;
    let mut converged = false;
    let mut diverged = false;

    for iter in 0..cfg.max_iters {
        iters = iter + 1;
        let (loss, grad) = match cfg.gradient {
            GradientMode::Analytic => obj.loss_and_grad(&rot, &trans)?,
            GradientMode::FiniteDifference => {
                let loss = obj.loss(&rot, &trans)?;
                let grad = obj.fd_grad(&rot, &trans, FD_ROT_STEP, FD_TRANS_FRACTION * obj.scale)?;
                (loss, grad)
            }
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            diverged = true;
            break;
        }
        if loss < best_loss {
            best_loss = loss;
            best_pose = RigidTransform::from_parts_renormalized(rot, trans);
        }
        best_trace.push(best_loss);
        if iter >= cfg.convergence_window {
            let earlier = best_trace[iter - cfg.convergence_window];
            if earlier - best_loss < cfg.min_improvement {
                converged = true;
                break;
            }
        }
        let mut delta = [0.0; 6];
        adam.step_delta(&grad, cfg.lr, &mut delta);
        let spin = rotation_from_scaled_axis(Vec3::new(delta[0], delta[1], delta[2]));
        // Left-composed increment; re-orthonormalize to stop round-off drift.
        rot = orthonormalize(spin * rot);
        trans += Vec3::new(delta[3], delta[4], delta[5]);
    }

    Ok(RestartOutcome { pose: best_pose, residual: best_loss, iters, converged, diverged })
}

const FD_ROT_STEP: f64 = 1e-3;
const FD_TRANS_FRACTION: f64 = 1e-3;

struct Objective<'a> {
    template: &'a InteractionTemplate,
    field: &'a DescriptorField,
    excess_weight: f64,
    /// Target object diameter; normalizes the excess penalty.
    scale: f64,
}

impl Objective<'_> {
    fn loss(&self, rot: &Mat3, trans: &Vec3) -> Result<f64, ImitateError> {
        let terms: Vec<f64> = self
            .template
            .points
            .par_iter()
            .zip(&self.template.descriptors)
            .map(|(p, target)| -> Result<f64, ImitateError> {
                let q = Pt3::from(rot * p.coords + trans);
                let clamped = self.field.clamp(q);
                let desc = descriptor_or_zero(self.field, clamped.point)?;
                let l1: f64 = desc.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
                Ok(l1 + self.excess_weight * clamped.excess / self.scale)
            })
            .collect::<Result<_, _>>()?;
        // Summed sequentially so the result does not depend on thread timing.
        Ok(terms.iter().sum::<f64>() / self.template.len() as f64)
    }

    /// Objective and its gradient with respect to the six pose increments
    /// (axis-angle applied on the left, then translation), sharing one field
    /// evaluation per point.
    fn loss_and_grad(&self, rot: &Mat3, trans: &Vec3) -> Result<(f64, [f64; 6]), ImitateError> {
        let (domain_center, domain_radius) = self.field.domain();
        let per_point: Vec<(f64, Vec3, Vec3)> = self
            .template
            .points
            .par_iter()
            .zip(&self.template.descriptors)
            .map(|(p, target)| -> Result<(f64, Vec3, Vec3), ImitateError> {
                let y = rot * p.coords;
                let q = Pt3::from(y + trans);
                let clamped = self.field.clamp(q);
                let (desc, g_at_clamped) =
                    descriptor_grad_or_zero(self.field, clamped.point, |desc: &[f64]| {
                        desc.iter().zip(target).map(|(a, b)| l1_sign(a - b)).collect()
                    })?;
                let mut loss: f64 =
                    desc.iter().zip(target).map(|(a, b)| (a - b).abs()).sum();
                let mut g_q = g_at_clamped;
                if clamped.excess > 0.0 {
                    // Pull the descriptor gradient back through the radial
                    // clamp (radial motion no longer changes the query) and
                    // add the penalty's pull toward the domain.
                    let v = q - domain_center;
                    let dist = v.norm();
                    let vhat = v / dist;
                    g_q = (domain_radius / dist) * (g_at_clamped - vhat * vhat.dot(&g_at_clamped))
                        + (self.excess_weight / self.scale) * vhat;
                    loss += self.excess_weight * clamped.excess / self.scale;
                }
                // d(loss)/d(axis-angle) = y x g_q, d(loss)/d(translation) = g_q.
                Ok((loss, y.cross(&g_q), g_q))
            })
            .collect::<Result<_, _>>()?;

        let n = self.template.len() as f64;
        let mut loss = 0.0;
        let mut grad = [0.0; 6];
        for (l, gw, gt) in &per_point {
            loss += l;
            grad[0] += gw.x;
            grad[1] += gw.y;
            grad[2] += gw.z;
            grad[3] += gt.x;
            grad[4] += gt.y;
            grad[5] += gt.z;
        }
        loss /= n;
        for g in &mut grad {
            *g /= n;
        }
        Ok((loss, grad))
    }

    /// Central differences over the same six increments the descent steps in.
    fn fd_grad(
        &self,
        rot: &Mat3,
        trans: &Vec3,
        h_rot: f64,
        h_trans: f64,
    ) -> Result<[f64; 6], ImitateError> {
        let mut grad = [0.0; 6];
        for k in 0..3 {
            let mut w = Vec3::zeros();
            w[k] = h_rot;
            let plus = self.loss(&(rotation_from_scaled_axis(w) * rot), trans)?;
            let minus = self.loss(&(rotation_from_scaled_axis(-w) * rot), trans)?;
            grad[k] = (plus - minus) / (2.0 * h_rot);
        }
        for k in 0..3 {
            let mut d = Vec3::zeros();
            d[k] = h_trans;
            let plus = self.loss(rot, &(trans + d))?;
            let minus = self.loss(rot, &(trans - d))?;
            grad[3 + k] = (plus - minus) / (2.0 * h_trans);
        }
        Ok(grad)
    }
}

/// Subgradient of `|x|` that is zero at the kink.
fn l1_sign(x: f64) -> f64 {
    match x.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Greater) => 1.0,
        Some(std::cmp::Ordering::Less) => -1.0,
        _ => 0.0,
    }
}

/// Ray-based descriptors read as identically zero when every ray misses;
/// treat that as the zero descriptor instead of an error so a wandering pose
/// keeps a defined objective.
fn descriptor_or_zero(field: &DescriptorField, q: Pt3) -> Result<Vec<f64>, FieldError> {
    match field.descriptor(q) {
        Ok(d) => Ok(d),
        Err(FieldError::Scf(ScfError::NoHits)) => Ok(vec![0.0; field.descriptor_len()]),
        Err(e) => Err(e),
    }
}

fn descriptor_grad_or_zero(
    field: &DescriptorField,
    q: Pt3,
    cot_of: impl FnOnce(&[f64]) -> Vec<f64>,
) -> Result<(Vec<f64>, Vec3), FieldError> {
    match field.descriptor_and_query_grad(q, cot_of) {
        Ok(out) => Ok(out),
        Err(FieldError::Scf(ScfError::NoHits)) => {
            Ok((vec![0.0; field.descriptor_len()], Vec3::zeros()))
        }
        Err(e) => Err(e),
    }
}

fn target_scale(field: &DescriptorField) -> f64 {
    let (_, r) = field.object_sphere();
    (2.0 * r).max(f64::MIN_POSITIVE)
}

fn centroid(points: &[Pt3]) -> Pt3 {
    let mut sum = Vec3::zeros();
    for p in points {
        sum += p.coords;
    }
    Pt3::from(sum / points.len() as f64)
}

fn uniform_ball<R: rand::Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
            rng.gen::<f64>() * 2.0 - 1.0,
        );
        if v.norm_squared() <= 1.0 {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldHead, FieldNet};
    use crate::geometry::Geometry;
    use crate::scf::ScfConfig;
    use crate::template::{TemplateConfig, FORMAT_TAG};
    use std::sync::Arc;

    fn random_cloud(n: usize, radius: f64, seed: u64) -> Vec<Pt3> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| Pt3::from(uniform_ball(&mut rng) * radius)).collect()
    }

    /// A smooth field with no rays involved: a randomly initialized network
    /// bound to a random cloud. Cheap to query and differentiable, which is
    /// what the optimizer plumbing tests need.
    fn learned_fixture() -> DescriptorField {
        let mut net = FieldNet::new(FieldHead::BandPowers { order: 5 });
        net.init(&mut rng_from_seed(99));
        DescriptorField::learned(Arc::new(net), &random_cloud(64, 1.0, 100))
    }

    /// Template whose descriptors are the field's own values at `pose`, so
    /// the objective is exactly zero there.
    fn fabricated_template(
        field: &DescriptorField,
        pose: &RigidTransform,
        n: usize,
        seed: u64,
    ) -> InteractionTemplate {
        let points = random_cloud(n, 0.35, seed);
        let descriptors: Vec<Vec<f64>> = points
            .iter()
            .map(|p| {
                let clamped = field.clamp(pose.apply(*p));
                field.descriptor(clamped.point).unwrap()
            })
            .collect();
        InteractionTemplate {
            format: FORMAT_TAG.to_string(),
            descriptor_len: field.descriptor_len(),
            points,
            descriptors,
            anchor_pose_ref: RigidTransform::identity(),
            field_fingerprint: field.fingerprint(),
            anchor_fingerprint: "fabricated".to_string(),
            scene_diameter: 2.0,
            demo_count: 1,
            config: TemplateConfig::default(),
        }
    }

    fn small_pose(angle: f64, axis: Vec3, trans: Vec3) -> RigidTransform {
        let rot = rotation_from_scaled_axis(axis.normalize() * angle);
        RigidTransform::from_parts_renormalized(rot, trans)
    }

    #[test]
    fn analytic_pose_gradient_matches_finite_differences() {
        let field = learned_fixture();
        let truth = small_pose(0.4, Vec3::new(1.0, 2.0, -0.5), Vec3::new(0.2, -0.1, 0.15));
        let template = fabricated_template(&field, &truth, 48, 7);
        let obj = Objective {
            template: &template,
            field: &field,
            excess_weight: 1.0,
            scale: target_scale(&field),
        };

        let mut rng = rng_from_seed(17);
        for trial in 0..6 {
            let rot = haar_random_rotation(&mut rng);
            // Trials alternate between poses that keep queries inside the
            // domain and ones that push most of them outside, so the clamp
            // pull-back is exercised too.
            let offset = if trial % 2 == 0 { 0.3 } else { 2.2 };
            let trans = uniform_ball(&mut rng) * offset;
            let (loss_a, g_a) = obj.loss_and_grad(&rot, &trans).unwrap();
            let loss_direct = obj.loss(&rot, &trans).unwrap();
            assert!((loss_a - loss_direct).abs() <= 1e-12);

            let g_fd = obj.fd_grad(&rot, &trans, 1e-6, 1e-6).unwrap();
            let num: f64 =
                g_a.iter().zip(&g_fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let den: f64 = g_fd.iter().map(|g| g * g).sum::<f64>().sqrt().max(1e-9);
            assert!(
                num / den <= 1e-4,
                "trial {trial}: gradient mismatch {} (analytic {g_a:?}, fd {g_fd:?})",
                num / den
            );
        }
    }

    #[test]
    fn descent_recovers_the_demonstrated_pose_from_nearby() {
        let field = learned_fixture();
        let truth = small_pose(0.45, Vec3::new(0.3, 1.0, 0.2), Vec3::new(0.25, -0.1, 0.2));
        let template = fabricated_template(&field, &truth, 48, 11);

        let nudge = small_pose(0.07, Vec3::new(1.0, -1.0, 0.4), Vec3::new(0.04, 0.03, -0.05));
        let init = nudge.compose(&truth);
        let cfg = ImitateConfig {
            max_iters: 400,
            lr: 5e-3,
            convergence_window: 30,
            min_improvement: 1e-9,
            seed: 1,
            ..ImitateConfig::default()
        };
        let out = imitate_single(&template, &field, init, &cfg).unwrap();

        assert!(!out.diverged);
        assert!(out.residual < 5e-3, "residual {}", out.residual);
        let rot_err = out.pose.rotation_distance(&truth);
        let trans_err = (out.pose.translation() - truth.translation()).norm();
        assert!(rot_err < 0.02, "rotation error {rot_err} rad");
        assert!(trans_err < 0.02, "translation error {trans_err}");
    }

    #[test]
    fn finite_difference_mode_matches_analytic_mode() {
        let field = learned_fixture();
        let truth = small_pose(0.3, Vec3::new(0.0, 1.0, 0.3), Vec3::new(0.2, 0.05, -0.1));
        let template = fabricated_template(&field, &truth, 40, 13);

        let nudge = small_pose(0.05, Vec3::new(0.2, 1.0, 0.0), Vec3::new(-0.03, 0.02, 0.04));
        let init = nudge.compose(&truth);
        let base = ImitateConfig {
            max_iters: 200,
            lr: 5e-3,
            convergence_window: 25,
            min_improvement: 1e-9,
            ..ImitateConfig::default()
        };
        let fd_cfg = ImitateConfig { gradient: GradientMode::FiniteDifference, ..base.clone() };

        let a = imitate_single(&template, &field, init, &base).unwrap();
        let f = imitate_single(&template, &field, init, &fd_cfg).unwrap();
        assert!(a.residual < 2e-2 && f.residual < 2e-2, "a {} f {}", a.residual, f.residual);
        assert!(a.pose.rotation_distance(&f.pose) < 0.05);
        assert!((a.pose.translation() - f.pose.translation()).norm() < 0.05);
    }

    #[test]
    fn restarts_recover_the_pose_without_a_hint() {
        let field = learned_fixture();
        let truth = small_pose(0.5, Vec3::new(0.4, -0.2, 1.0), Vec3::new(0.15, 0.2, -0.1));
        let template = fabricated_template(&field, &truth, 48, 19);

        let cfg = ImitateConfig {
            restarts: 10,
            max_iters: 400,
            lr: 1e-2,
            convergence_window: 40,
            min_improvement: 1e-9,
            seed: 5,
            ..ImitateConfig::default()
        };
        let out = imitate(&template, &field, &cfg).unwrap();
        assert_eq!(out.diverged_restarts, 0);
        assert!(out.residual < 0.05, "best residual {}", out.residual);
        let rot_err = out.pose.rotation_distance(&truth);
        let trans_err = (out.pose.translation() - truth.translation()).norm();
        assert!(rot_err < 0.1, "rotation error {rot_err} rad");
        assert!(trans_err < 0.05, "translation error {trans_err}");
    }

    #[test]
    fn scene_translation_translates_the_recovered_pose() {
        let mut net = FieldNet::new(FieldHead::BandPowers { order: 5 });
        net.init(&mut rng_from_seed(99));
        let net = Arc::new(net);

        let cloud = random_cloud(64, 1.0, 100);
        let field = DescriptorField::learned(net.clone(), &cloud);
        let truth = small_pose(0.35, Vec3::new(0.5, 1.0, 0.0), Vec3::new(0.2, -0.15, 0.1));
        let template = fabricated_template(&field, &truth, 48, 23);

        let shift = Vec3::new(4.0, -1.0, 2.5);
        let moved_cloud: Vec<Pt3> = cloud.iter().map(|p| p + shift).collect();
        let moved_field = DescriptorField::learned(net, &moved_cloud);

        let nudge = small_pose(0.06, Vec3::new(1.0, 0.3, -0.2), Vec3::new(0.03, -0.04, 0.02));
        let init = nudge.compose(&truth);
        let moved_init = RigidTransform::from_translation(shift).compose(&init);
        let cfg = ImitateConfig {
            max_iters: 250,
            lr: 5e-3,
            convergence_window: 25,
            min_improvement: 1e-9,
            ..ImitateConfig::default()
        };

        let base = imitate_single(&template, &field, init, &cfg).unwrap();
        let moved = imitate_single(&template, &moved_field, moved_init, &cfg).unwrap();

        // Centroid canonicalization makes the translated problem identical
        // up to round-off, so the whole descent trajectory translates.
        let expected = RigidTransform::from_translation(shift).compose(&base.pose);
        assert!(moved.pose.rotation_distance(&expected) < 1e-3);
        assert!((moved.pose.translation() - expected.translation()).norm() < 1e-3);
        assert!((moved.residual - base.residual).abs() < 1e-6);
    }

    #[test]
    fn scene_rotation_rotates_the_recovered_pose() {
        // Ray-cast descriptors are rotation invariant to quadrature accuracy,
        // so a rotated scene must yield the correspondingly rotated pose up
        // to that tolerance.
        let scene = Arc::new(crate::geometry::fixtures::cube_mesh(1.2));
        let accel = Arc::new(crate::geometry::RayAccelerator::build(scene.clone()).unwrap());
        let scf_cfg = ScfConfig { order: 3, dir_count: 512, ..ScfConfig::default() };
        let field = DescriptorField::scf(accel, scf_cfg.clone());

        let truth = small_pose(0.4, Vec3::new(0.2, 1.0, -0.3), Vec3::new(0.3, 0.1, -0.2));
        let template = fabricated_template(&field, &truth, 40, 29);

        let mut rng = rng_from_seed(31);
        let motion = RigidTransform::from_parts_renormalized(
            haar_random_rotation(&mut rng),
            Vec3::new(0.8, -0.5, 1.1),
        );
        let moved_scene = Arc::new(scene.transformed(&motion));
        let moved_accel =
            Arc::new(crate::geometry::RayAccelerator::build(moved_scene).unwrap());
        let moved_field = DescriptorField::scf(moved_accel, scf_cfg);

        let nudge = small_pose(0.05, Vec3::new(0.1, 0.2, 1.0), Vec3::new(0.02, 0.03, -0.02));
        let init = nudge.compose(&truth);
        let cfg = ImitateConfig {
            max_iters: 220,
            lr: 4e-3,
            convergence_window: 25,
            min_improvement: 1e-9,
            ..ImitateConfig::default()
        };

        let base = imitate_single(&template, &field, init, &cfg).unwrap();
        let moved =
            imitate_single(&template, &moved_field, motion.compose(&init), &cfg).unwrap();

        let expected = motion.compose(&base.pose);
        let rot_err = moved.pose.rotation_distance(&expected);
        let trans_err = (moved.pose.translation() - expected.translation()).norm();
        assert!(rot_err < 2e-2, "rotation deviation {rot_err} rad");
        assert!(trans_err < 2e-2, "translation deviation {trans_err}");
    }

    #[test]
    fn all_misses_read_as_the_zero_descriptor() {
        let geom = Arc::new(Geometry::splat_cloud(vec![Pt3::origin()], Some(0.01)).unwrap());
        let accel = Arc::new(crate::geometry::RayAccelerator::build(geom).unwrap());
        let field =
            DescriptorField::scf(accel, ScfConfig { order: 2, dir_count: 128, ..Default::default() });

        let far = Pt3::new(100.0, 0.0, 0.0);
        let desc = descriptor_or_zero(&field, far).unwrap();
        assert!(desc.iter().all(|&v| v == 0.0));
        let (desc, grad) =
            descriptor_grad_or_zero(&field, far, |d| vec![1.0; d.len()]).unwrap();
        assert!(desc.iter().all(|&v| v == 0.0));
        assert_eq!(grad, Vec3::zeros());
    }

    #[test]
    fn non_finite_objectives_fail_honestly() {
        let field = learned_fixture();
        let truth = RigidTransform::identity();
        let mut template = fabricated_template(&field, &truth, 40, 37);
        // Finite but large enough that summing 166 of them overflows.
        for d in &mut template.descriptors {
            for v in d.iter_mut() {
                *v = f64::MAX;
            }
        }
        let cfg = ImitateConfig { restarts: 3, max_iters: 5, ..ImitateConfig::default() };
        assert!(matches!(
            imitate(&template, &field, &cfg),
            Err(ImitateError::AllRestartsDiverged)
        ));
    }

    #[test]
    fn incompatible_inputs_are_rejected() {
        let field = learned_fixture();
        let truth = RigidTransform::identity();
        let template = fabricated_template(&field, &truth, 40, 41);

        let mut wrong_family = template.clone();
        wrong_family.field_fingerprint = "scf:bogus".to_string();
        assert!(matches!(
            imitate(&wrong_family, &field, &ImitateConfig::default()),
            Err(ImitateError::Template(TemplateError::FieldFingerprint { .. }))
        ));

        let mut wrong_len = template.clone();
        wrong_len.descriptor_len = 3;
        for d in &mut wrong_len.descriptors {
            d.truncate(3);
        }
        assert!(matches!(
            imitate(&wrong_len, &field, &ImitateConfig::default()),
            Err(ImitateError::DescriptorMismatch { .. })
        ));

        let bad_cfg = ImitateConfig { restarts: 0, ..ImitateConfig::default() };
        assert!(matches!(
            imitate(&template, &field, &bad_cfg),
            Err(ImitateError::Config(_))
        ));

        let bad_lr = ImitateConfig { lr: f64::NAN, ..ImitateConfig::default() };
        assert!(matches!(
            imitate(&template, &field, &bad_lr),
            Err(ImitateError::Config(_))
        ));
    }
}
