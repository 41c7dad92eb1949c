//! Dataset generation and the training loop for descriptor field networks.
//!
//! Targets come from the analytic descriptor (band powers) or from the
//! parity inside test (occupancy). Validation objects are held out whole, so
//! the reported quality measures generalization to unseen instances, not
//! unseen queries. The loop itself is single-threaded and fully seeded;
//! only dataset generation fans out across objects.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::model::{FieldHead, FieldNet};
use super::encoder::Canonicalizer;
use super::FieldError;
use crate::geometry::{haar_random_rotation, Geometry, Pt3, RayAccelerator};
use crate::optim::Adam;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scf::{self, make_direction_set, ScfConfig, ScfError};

/// One object's contribution to a training set.
#[derive(Clone, Debug)]
pub struct ObjectSamples {
    /// Surface cloud fed to the encoder.
    pub cloud: Vec<Pt3>,
    pub queries: Vec<Pt3>,
    pub targets: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrainingSet {
    pub objects: Vec<ObjectSamples>,
    pub target_dim: usize,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Points sampled from each object surface for the encoder input.
    pub cloud_size: usize,
    pub queries_per_object: usize,
    /// Descriptor settings used to label regression queries.
    pub scf: ScfConfig,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            cloud_size: 256,
            queries_per_object: 256,
            scf: ScfConfig { dir_count: 512, ..Default::default() },
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fraction of objects held out for validation.
    pub val_fraction: f64,
    /// Random joint rotations of cloud and query each batch; the targets are
    /// rotation invariant, so this teaches the encoder the same invariance.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 1e-4, batch_size: 64, val_fraction: 0.1, augment: true, seed: 0 }
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Coefficient of determination per output dimension on held-out
    /// objects, raw target scale. Empty for occupancy heads.
    pub r2_per_band: Vec<f64>,
    pub mean_r2: f64,
    /// Held-out classification accuracy. Only for occupancy heads.
    pub accuracy: Option<f64>,
    pub train_objects: usize,
    pub val_objects: usize,
    pub seconds: f64,
}

/// Standard normal via Box-Muller; two uniforms per draw keeps it simple.
fn normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn uniform_ball(rng: &mut impl Rng, center: Pt3, radius: f64) -> Pt3 {
    loop {
        let v = crate::geometry::Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if v.norm_squared() <= 1.0 {
            return center + v * radius;
        }
    }
}

/// Query positions mix near-surface points (where descriptors vary fastest)
/// with uniform draws over the working volume.
fn draw_query(
    rng: &mut impl Rng,
    surface: &[Pt3],
    center: Pt3,
    radius: f64,
) -> Pt3 {
    if rng.gen_bool(0.5) {
        let base = surface[rng.gen_range(0..surface.len())];
        let sigma = 0.15 * radius;
        base + crate::geometry::Vec3::new(
            sigma * normal(rng),
            sigma * normal(rng),
            sigma * normal(rng),
        )
    } else {
        uniform_ball(rng, center, 1.4 * radius)
    }
}

/// Labels every object with analytic band-power targets. Queries whose rays
/// all miss are redrawn; an object that cannot produce enough usable queries
/// is a hard error.
pub fn generate_training_set(
    geoms: &[Arc<Geometry>],
    cfg: &DataConfig,
) -> Result<TrainingSet, FieldError> {
    let dirs = make_direction_set(cfg.scf.dir_count, cfg.scf.scheme);
    let order = cfg.scf.order;
    let objects: Result<Vec<ObjectSamples>, FieldError> = geoms
        .par_iter()
        .enumerate()
        .map(|(oi, geom)| {
            let accel = RayAccelerator::build(Arc::clone(geom))?;
            let (center, radius) = accel.bounding_sphere();
            let mut rng = rng_from_seed(derive_seed(cfg.seed, oi as u64));
            let cloud = crate::geometry::sample_surface(geom, cfg.cloud_size, rng.gen())?;
            let mut queries = Vec::with_capacity(cfg.queries_per_object);
            let mut targets = Vec::with_capacity(cfg.queries_per_object);
            let mut attempts = 0usize;
            while queries.len() < cfg.queries_per_object {
                attempts += 1;
                if attempts > 40 * cfg.queries_per_object {
                    return Err(FieldError::Scf(ScfError::NoHits));
                }
                let q = draw_query(&mut rng, &cloud, center, radius);
                match scf::scf_at(&accel, q, &dirs, order) {
                    Ok(desc) => {
                        queries.push(q);
                        targets.push(desc.powers);
                    }
                    Err(ScfError::NoHits) => continue,
                    Err(e) => return Err(e.into()),
                }
            }
            Ok(ObjectSamples { cloud, queries, targets })
        })
        .collect();
    Ok(TrainingSet { objects: objects?, target_dim: order + 1 })
}

/// Labels queries with 0/1 parity occupancy instead of band powers.
pub fn generate_occupancy_set(
    geoms: &[Arc<Geometry>],
    cfg: &DataConfig,
) -> Result<TrainingSet, FieldError> {
    let objects: Result<Vec<ObjectSamples>, FieldError> = geoms
        .par_iter()
        .enumerate()
        .map(|(oi, geom)| {
            let accel = RayAccelerator::build(Arc::clone(geom))?;
            let (center, radius) = accel.bounding_sphere();
            let mut rng = rng_from_seed(derive_seed(cfg.seed ^ 0x0cc0, oi as u64));
            let cloud = crate::geometry::sample_surface(geom, cfg.cloud_size, rng.gen())?;
            let mut queries = Vec::with_capacity(cfg.queries_per_object);
            let mut targets = Vec::with_capacity(cfg.queries_per_object);
            for _ in 0..cfg.queries_per_object {
                let q = draw_query(&mut rng, &cloud, center, radius);
                queries.push(q);
                targets.push(vec![if accel.contains(q) { 1.0 } else { 0.0 }]);
            }
            Ok(ObjectSamples { cloud, queries, targets })
        })
        .collect();
    Ok(TrainingSet { objects: objects?, target_dim: 1 })
}

struct LossGrad {
    loss: f64,
    /// d loss / d head outputs, same length as the head.
    grad: Vec<f64>,
}

fn loss_and_grad(head: FieldHead, pred: &[f64], target: &[f64]) -> LossGrad {
    match head {
        FieldHead::BandPowers { .. } => {
            let dim = pred.len() as f64;
            let mut loss = 0.0;
            let grad = pred
                .iter()
                .zip(target)
                .map(|(p, t)| {
                    loss += (p - t).abs();
                    // Subgradient 0 at ties; f64::signum(0.0) is 1.
                    match p.partial_cmp(t) {
                        Some(std::cmp::Ordering::Greater) => 1.0 / dim,
                        Some(std::cmp::Ordering::Less) => -1.0 / dim,
                        _ => 0.0,
                    }
                })
                .collect();
            LossGrad { loss: loss / dim, grad }
        }
        FieldHead::Occupancy => {
            let z = pred[0];
            let y = target[0];
            let loss = z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
            let sigma = 1.0 / (1.0 + (-z).exp());
            LossGrad { loss, grad: vec![sigma - y] }
        }
    }
}

/// Per-dimension mean and standard deviation over all training targets.
fn target_stats(set: &TrainingSet, train_idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let dim = set.target_dim;
    let mut mean = vec![0.0f64; dim];
    let mut count = 0usize;
    for &oi in train_idx {
        for t in &set.objects[oi].targets {
            for (m, v) in mean.iter_mut().zip(t) {
                *m += v;
            }
            count += 1;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &oi in train_idx {
        for t in &set.objects[oi].targets {
            for ((v, m), x) in var.iter_mut().zip(&mean).zip(t) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std = var.iter().map(|v| (v / count as f64).sqrt().max(1e-8)).collect();
    (mean, std)
}

/// Trains in place. Regression targets are standardized per dimension for
/// the loss and the affine map is folded back into the linear head
/// afterwards, so the deployed network predicts raw band powers.
pub fn train(
    net: &mut FieldNet,
    set: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<TrainReport, FieldError> {
    if net.out_dim() != set.target_dim {
        return Err(FieldError::DimensionMismatch {
            expected: net.out_dim(),
            got: set.target_dim,
        });
    }
    if set.objects.is_empty() {
        return Err(FieldError::Format("empty training set".into()));
    }
    let started = Instant::now();
    let mut rng = rng_from_seed(cfg.seed);
    net.init(&mut rng);

    // Hold out whole objects.
    let n = set.objects.len();
    let mut object_order: Vec<usize> = (0..n).collect();
    object_order.shuffle(&mut rng);
    let mut n_val = ((n as f64) * cfg.val_fraction).round() as usize;
    n_val = n_val.min(n.saturating_sub(1));
    let val_idx: Vec<usize> = object_order[..n_val].to_vec();
    let train_idx: Vec<usize> = object_order[n_val..].to_vec();

    let regression = matches!(net.head(), FieldHead::BandPowers { .. });
    let (t_mean, t_std) = if regression {
        target_stats(set, &train_idx)
    } else {
        (vec![0.0; set.target_dim], vec![1.0; set.target_dim])
    };
    let standardize = |t: &[f64]| -> Vec<f64> {
        t.iter().zip(&t_mean).zip(&t_std).map(|((x, m), s)| (x - m) / s).collect()
    };

    // Canonical clouds are fixed per object; rotations compose on top.
    let canons: Vec<Canonicalizer> =
        set.objects.iter().map(|o| Canonicalizer::fit(&o.cloud)).collect();
    let canon_clouds: Vec<Vec<[f64; 3]>> = set
        .objects
        .iter()
        .zip(&canons)
        .map(|(o, c)| o.cloud.iter().map(|&p| c.apply(p)).collect())
        .collect();

    let mut adam_point = Adam::new(net.encoder.point_mlp.param_count());
    let mut adam_post = Adam::new(net.encoder.post.param_count());
    let mut adam_dec = Adam::new(net.decoder.param_count());
    let mut g_point = vec![0.0f64; net.encoder.point_mlp.param_count()];
    let mut g_post = vec![0.0f64; net.encoder.post.param_count()];
    let mut g_dec = vec![0.0f64; net.decoder.param_count()];

    let head = net.head();
    let mut train_loss_curve = Vec::with_capacity(cfg.epochs);
    let mut val_loss_curve = Vec::with_capacity(cfg.epochs);

    let mut shuffled_objects = train_idx.clone();
    for _epoch in 0..cfg.epochs {
        shuffled_objects.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_samples = 0usize;
        for &oi in &shuffled_objects {
            let obj = &set.objects[oi];
            let canon = &canons[oi];
            let mut q_order: Vec<usize> = (0..obj.queries.len()).collect();
            q_order.shuffle(&mut rng);
            for batch in q_order.chunks(cfg.batch_size) {
                let rot = if cfg.augment {
                    haar_random_rotation(&mut rng)
                } else {
                    crate::geometry::Mat3::identity()
                };
                let rotate = |c: [f64; 3]| -> [f64; 3] {
                    let v = rot * crate::geometry::Vec3::new(c[0], c[1], c[2]);
                    [v.x, v.y, v.z]
                };
                let cloud_in: Vec<[f64; 3]> =
                    canon_clouds[oi].iter().map(|&c| rotate(c)).collect();
                let enc_cache = net.encode_cached(&cloud_in);
                let embedding = enc_cache.embedding().to_vec();

                g_point.iter_mut().for_each(|g| *g = 0.0);
                g_post.iter_mut().for_each(|g| *g = 0.0);
                g_dec.iter_mut().for_each(|g| *g = 0.0);
                let mut cot_emb = vec![0.0f64; embedding.len()];
                let scale = 1.0 / batch.len() as f64;

                for &qi in batch {
                    let q_canon = rotate(canon.apply(obj.queries[qi]));
                    let cache = net.decode(&embedding, q_canon);
                    let target = standardize(&obj.targets[qi]);
                    let lg = loss_and_grad(head, cache.output(), &target);
                    epoch_loss += lg.loss;
                    epoch_samples += 1;
                    let cot: Vec<f64> = lg.grad.iter().map(|g| g * scale).collect();
                    let gin = net.decoder.backward(&cache, &cot, &mut g_dec);
                    for (ce, gi) in cot_emb.iter_mut().zip(&gin) {
                        *ce += gi;
                    }
                }
                net.encoder.backward(&enc_cache, &cot_emb, &mut g_point, &mut g_post);
                adam_dec.step(net.decoder.params_mut(), &g_dec, cfg.lr);
                adam_point.step(net.encoder.point_mlp.params_mut(), &g_point, cfg.lr);
                adam_post.step(net.encoder.post.params_mut(), &g_post, cfg.lr);
            }
        }
        train_loss_curve.push(epoch_loss / epoch_samples.max(1) as f64);

        // Validation loss on the standardized scale, to be comparable.
        let mut vloss = 0.0;
        let mut vcount = 0usize;
        for &oi in &val_idx {
            let obj = &set.objects[oi];
            let cache = net.encode_cached(&canon_clouds[oi]);
            let embedding = cache.embedding().to_vec();
            for (q, t) in obj.queries.iter().zip(&obj.targets) {
                let out = net.decode(&embedding, canons[oi].apply(*q));
                vloss += loss_and_grad(head, out.output(), &standardize(t)).loss;
                vcount += 1;
            }
        }
        val_loss_curve.push(if vcount > 0 { vloss / vcount as f64 } else { f64::NAN });
    }

    if regression {
        net.decoder.affine_fold_output(&t_std, &t_mean);
    }

    // Quality on held-out objects, raw target scale, after folding.
    let mut r2_per_band = Vec::new();
    let mut accuracy = None;
    if !val_idx.is_empty() {
        let mut preds: Vec<Vec<f64>> = Vec::new();
        let mut targets: Vec<&Vec<f64>> = Vec::new();
        for &oi in &val_idx {
            let obj = &set.objects[oi];
            let binding_cache = net.encode_cached(&canon_clouds[oi]);
            let embedding = binding_cache.embedding().to_vec();
            for (q, t) in obj.queries.iter().zip(&obj.targets) {
                preds.push(net.decode(&embedding, canons[oi].apply(*q)).output().to_vec());
                targets.push(t);
            }
        }
        if regression {
            r2_per_band = r_squared(&preds, &targets, set.target_dim);
        } else {
            let correct = preds
                .iter()
                .zip(&targets)
                .filter(|(p, t)| (p[0] > 0.0) == (t[0] > 0.5))
                .count();
            accuracy = Some(correct as f64 / preds.len() as f64);
        }
    }
    let mean_r2 = if r2_per_band.is_empty() {
        f64::NAN
    } else {
        r2_per_band.iter().sum::<f64>() / r2_per_band.len() as f64
    };

    Ok(TrainReport {
        train_loss: train_loss_curve,
        val_loss: val_loss_curve,
        r2_per_band,
        mean_r2,
        accuracy,
        train_objects: train_idx.len(),
        val_objects: val_idx.len(),
        seconds: started.elapsed().as_secs_f64(),
    })
}

fn r_squared(preds: &[Vec<f64>], targets: &[&Vec<f64>], dim: usize) -> Vec<f64> {
    let n = preds.len() as f64;
    (0..dim)
        .map(|j| {
            let mean = targets.iter().map(|t| t[j]).sum::<f64>() / n;
            let sst: f64 = targets.iter().map(|t| (t[j] - mean) * (t[j] - mean)).sum();
            let sse: f64 = preds
                .iter()
                .zip(targets)
                .map(|(p, t)| (p[j] - t[j]) * (p[j] - t[j]))
                .sum();
            1.0 - sse / sst.max(1e-12)
        })
        .collect()
}
