//! Set encoder for object point clouds: a shared per-point MLP, feature-wise
//! max pooling, and a post-pool layer. Pooling makes the embedding invariant
//! to point order; canonicalization (centroid shift plus bounding-radius
//! scale) makes it invariant to placement and size.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpCache};
use crate::geometry::Pt3;

/// Translation/scale normalizer fitted to a point cloud.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Canonicalizer {
    pub centroid: Pt3,
    pub radius: f64,
}

impl Canonicalizer {
    /// Centroid and bounding radius of the cloud. Degenerate clouds
    /// (all points coincident) get radius 1 so the map stays invertible.
    pub fn fit(points: &[Pt3]) -> Self {
        assert!(!points.is_empty());
        let mut c = Pt3::origin().coords;
        for p in points {
            c += p.coords;
        }
        c /= points.len() as f64;
        let centroid = Pt3::from(c);
        let radius = points
            .iter()
            .map(|p| (p - centroid).norm())
            .fold(0.0, f64::max);
        Self { centroid, radius: if radius > 0.0 { radius } else { 1.0 } }
    }

    pub fn apply(&self, p: Pt3) -> [f64; 3] {
        let v = (p - self.centroid) / self.radius;
        [v.x, v.y, v.z]
    }

    /// Jacobian of `apply` is `I / radius`; gradients in canonical
    /// coordinates shrink by the same factor on the way back.
    pub fn grad_scale(&self) -> f64 {
        1.0 / self.radius
    }
}

#[derive(Clone, Debug)]
pub struct PointNetEncoder {
    pub point_mlp: Mlp,
    pub post: Mlp,
}

/// Forward state of one encoding pass, kept for the reverse pass.
pub struct EncoderCache {
    point_caches: Vec<MlpCache>,
    /// Which point supplied each pooled feature.
    argmax: Vec<usize>,
    post_cache: MlpCache,
}

impl EncoderCache {
    pub fn embedding(&self) -> &[f64] {
        self.post_cache.output()
    }
}

impl PointNetEncoder {
    pub fn new(feature_dim: usize) -> Self {
        let point_mlp =
            Mlp::new(&[3, feature_dim, feature_dim], &[Activation::Tanh, Activation::Tanh]);
        let post = Mlp::new(&[feature_dim, feature_dim], &[Activation::Tanh]);
        Self { point_mlp, post }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.point_mlp.init(rng);
        self.post.init(rng);
    }

    pub fn embedding_dim(&self) -> usize {
        self.post.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.point_mlp.param_count() + self.post.param_count()
    }

    /// Encodes a canonicalized cloud.
    pub fn forward(&self, points: &[[f64; 3]]) -> EncoderCache {
        assert!(!points.is_empty());
        let feat = self.point_mlp.out_dim();
        let point_caches: Vec<MlpCache> =
            points.iter().map(|p| self.point_mlp.forward(p)).collect();
        let mut pooled = vec![f64::NEG_INFINITY; feat];
        let mut argmax = vec![0usize; feat];
        for (pi, cache) in point_caches.iter().enumerate() {
            for (f, &v) in cache.output().iter().enumerate() {
                if v > pooled[f] {
                    pooled[f] = v;
                    argmax[f] = pi;
                }
            }
        }
        let post_cache = self.post.forward(&pooled);
        EncoderCache { point_caches, argmax, post_cache }
    }

    /// Accumulates parameter gradients for a cotangent on the embedding.
    /// Max pooling routes each feature's gradient to its winning point.
    pub fn backward(
        &self,
        cache: &EncoderCache,
        cot: &[f64],
        point_grads: &mut [f64],
        post_grads: &mut [f64],
    ) {
        let g_pooled = self.post.backward(&cache.post_cache, cot, post_grads);
        let feat = self.point_mlp.out_dim();
        // Group pooled-feature gradients by winning point so each point's
        // reverse pass runs once.
        let mut per_point: Vec<Option<Vec<f64>>> = vec![None; cache.point_caches.len()];
        for f in 0..feat {
            if g_pooled[f] == 0.0 {
                continue;
            }
            let slot = per_point[cache.argmax[f]].get_or_insert_with(|| vec![0.0; feat]);
            slot[f] += g_pooled[f];
        }
        for (pi, maybe_cot) in per_point.iter().enumerate() {
            if let Some(c) = maybe_cot {
                self.point_mlp.backward(&cache.point_caches[pi], c, point_grads);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn cloud(seed: u64, n: usize) -> Vec<[f64; 3]> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
    }

    #[test]
    fn canonicalizer_normalizes_centroid_and_radius() {
        let pts = vec![
            Pt3::new(2.0, 0.0, 0.0),
            Pt3::new(4.0, 0.0, 0.0),
            Pt3::new(3.0, 1.0, 0.0),
            Pt3::new(3.0, -1.0, 0.0),
        ];
        let canon = Canonicalizer::fit(&pts);
        assert_eq!(canon.centroid, Pt3::new(3.0, 0.0, 0.0));
        assert_eq!(canon.radius, 1.0);
        let mapped: Vec<[f64; 3]> = pts.iter().map(|&p| canon.apply(p)).collect();
        let max_norm = mapped
            .iter()
            .map(|m| (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt())
            .fold(0.0, f64::max);
        assert!((max_norm - 1.0).abs() < 1e-12);
        // Shifting and scaling the cloud must not change canonical coords.
        let moved: Vec<Pt3> = pts
            .iter()
            .map(|p| Pt3::from(p.coords * 2.5 + crate::geometry::Vec3::new(5.0, -1.0, 2.0)))
            .collect();
        let canon2 = Canonicalizer::fit(&moved);
        for (p, m) in moved.iter().zip(&mapped) {
            let m2 = canon2.apply(*p);
            for k in 0..3 {
                assert!((m2[k] - m[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn degenerate_cloud_keeps_unit_scale() {
        let pts = vec![Pt3::new(1.0, 2.0, 3.0); 5];
        let canon = Canonicalizer::fit(&pts);
        assert_eq!(canon.radius, 1.0);
        assert_eq!(canon.apply(pts[0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn embedding_is_permutation_invariant() {
        let mut enc = PointNetEncoder::new(16);
        enc.init(&mut rng_from_seed(2));
        let pts = cloud(3, 40);
        let base = enc.forward(&pts).embedding().to_vec();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(0, 17);
        let out = enc.forward(&shuffled).embedding().to_vec();
        for (a, b) in base.iter().zip(&out) {
            assert_eq!(a, b, "pooling must erase point order");
        }
    }

    // FD check across both sub-networks, including the argmax routing.
    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut enc = PointNetEncoder::new(8);
        enc.init(&mut rng_from_seed(11));
        let pts = cloud(5, 12);
        let cot: Vec<f64> = (0..8).map(|i| 0.3 + 0.1 * i as f64).collect();
        let loss = |enc: &PointNetEncoder| -> f64 {
            enc.forward(&pts).embedding().iter().zip(&cot).map(|(o, c)| o * c).sum()
        };

        let cache = enc.forward(&pts);
        let mut gp = vec![0.0; enc.point_mlp.param_count()];
        let mut gq = vec![0.0; enc.post.param_count()];
        enc.backward(&cache, &cot, &mut gp, &mut gq);

        let h = 1e-6;
        for p in (0..enc.point_mlp.param_count()).step_by(13) {
            let orig = enc.point_mlp.params()[p];
            enc.point_mlp.params_mut()[p] = orig + h;
            let up = loss(&enc);
            enc.point_mlp.params_mut()[p] = orig - h;
            let dn = loss(&enc);
            enc.point_mlp.params_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (gp[p] - fd).abs() <= 1e-6 + 1e-5 * fd.abs(),
                "point param {p}: {} vs {fd}",
                gp[p]
            );
        }
        for p in (0..enc.post.param_count()).step_by(7) {
            let orig = enc.post.params()[p];
            enc.post.params_mut()[p] = orig + h;
            let up = loss(&enc);
            enc.post.params_mut()[p] = orig - h;
            let dn = loss(&enc);
            enc.post.params_mut()[p] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((gq[p] - fd).abs() <= 1e-6 + 1e-5 * fd.abs());
        }
    }
}
