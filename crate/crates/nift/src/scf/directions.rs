//! Quadrature direction sets on the unit sphere.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionScheme {
    /// Golden-angle spiral; near-uniform, equal weights. The default.
    Fibonacci,
    /// Latitude/longitude grid with sin-theta weights.
    Equiangular,
}

/// Unit directions with quadrature weights summing to the sphere area 4π.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    dirs: Vec<Vec3>,
    weights: Vec<f64>,
}

impl DirectionSet {
    pub fn dirs(&self) -> &[Vec3] {
        &self.dirs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    /// Expansion up to band `order` needs at least `4 (order+1)^2` directions
    /// to keep the quadrature Gram matrix near identity.
    pub fn supports_order(&self, order: usize) -> bool {
        self.len() >= 4 * (order + 1) * (order + 1)
    }
}

/// Builds a direction set. Fibonacci emits exactly `count` directions with
/// equal weights `4π / count`; equiangular emits the smallest grid of at
/// least `count` directions (`n_theta * n_phi`), weights normalized so they
/// sum to 4π exactly.
pub fn make_direction_set(count: usize, scheme: DirectionScheme) -> DirectionSet {
    assert!(count > 0, "direction count must be positive");
    match scheme {
        DirectionScheme::Fibonacci => {
            let golden_angle = std::f64::consts::PI * (3.0 - 5.0_f64.sqrt());
            let n = count as f64;
            let mut dirs = Vec::with_capacity(count);
            for i in 0..count {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden_angle * i as f64;
                dirs.push(Vec3::new(r * phi.cos(), r * phi.sin(), z).normalize());
            }
            let w = 4.0 * std::f64::consts::PI / n;
            DirectionSet { weights: vec![w; count], dirs }
        }
        DirectionScheme::Equiangular => {
            let n_theta = ((count as f64 / 2.0).sqrt().ceil() as usize).max(1);
            let n_phi = count.div_ceil(n_theta).max(1);
            let mut dirs = Vec::with_capacity(n_theta * n_phi);
            let mut weights = Vec::with_capacity(n_theta * n_phi);
            for i in 0..n_theta {
                let theta = (i as f64 + 0.5) * std::f64::consts::PI / n_theta as f64;
                let (st, ct) = theta.sin_cos();
                for j in 0..n_phi {
                    let phi = (j as f64 + 0.5) * std::f64::consts::TAU / n_phi as f64;
                    dirs.push(Vec3::new(st * phi.cos(), st * phi.sin(), ct));
                    weights.push(st);
                }
            }
            let total: f64 = weights.iter().sum();
            let scale = 4.0 * std::f64::consts::PI / total;
            for w in &mut weights {
                *w *= scale;
            }
            DirectionSet { dirs, weights }
        }
    }
}
