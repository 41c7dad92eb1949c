//! Feature-difference heatmaps.
//!
//! Take one query point on a reference object, then score every point of a
//! lattice around a second object by how far its descriptor is from the
//! reference descriptor (L1). Small distances mean "this location plays the
//! same role on the other object". The result exports as a colored point
//! cloud: blue where the match is good, red where it is poor.

use std::path::Path;

use rayon::prelude::*;

use crate::geometry::{save_ply, GeometryError, PlyEncoding, PlyPayload, Pt3};

use super::{DescriptorField, FieldError};

/// Axis-aligned cubic lattice of query points.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub center: Pt3,
    /// Half the cube edge length.
    pub half_extent: f64,
    /// Lattice points per axis; at least 2.
    pub resolution: usize,
}

impl GridSpec {
    /// A lattice whose cube circumscribes the field's query domain.
    pub fn covering(field: &DescriptorField, resolution: usize) -> Self {
        let (center, radius) = field.domain();
        GridSpec { center, half_extent: radius, resolution }
    }

    /// Lattice points, x varying fastest, then y, then z.
    pub fn points(&self) -> Vec<Pt3> {
        let n = self.resolution.max(2);
        let step = 2.0 * self.half_extent / (n - 1) as f64;
        let origin = self.center - nalgebra::Vector3::repeat(self.half_extent);
        let mut pts = Vec::with_capacity(n * n * n);
        for iz in 0..n {
            for iy in 0..n {
                for ix in 0..n {
                    pts.push(Pt3::new(
                        origin.x + step * ix as f64,
                        origin.y + step * iy as f64,
                        origin.z + step * iz as f64,
                    ));
                }
            }
        }
        pts
    }
}

/// Lattice points with their descriptor distances and display colors.
#[derive(Clone, Debug)]
pub struct Heatmap {
    pub points: Vec<Pt3>,
    /// L1 distance from the reference descriptor, one per point.
    pub values: Vec<f64>,
    /// Blue-to-red ramp over the value range, one RGB triple per point.
    pub colors: Vec<[u8; 3]>,
    /// Index of the best (smallest-difference) point.
    pub min_index: usize,
}

impl Heatmap {
    pub fn min_point(&self) -> Pt3 {
        self.points[self.min_index]
    }

    pub fn min_value(&self) -> f64 {
        self.values[self.min_index]
    }

    /// Write the map as a colored point cloud with the raw distances attached
    /// as a per-vertex scalar channel.
    pub fn save_ply(&self, path: impl AsRef<Path>) -> Result<(), GeometryError> {
        let payload = PlyPayload {
            points: &self.points,
            faces: &[],
            colors: Some(&self.colors),
            scalars: &[("difference", &self.values)],
        };
        save_ply(path, &payload, PlyEncoding::BinaryLittleEndian)
    }
}

fn ramp(t: f64) -> [u8; 3] {
    // Blue at 0, red at 1, dipping through a dark violet rather than white so
    // the extremes stay readable on both light and dark backgrounds.
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let g = (64.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    [r, g, b]
}

/// Evaluate `reference` on `field_a`, then score every lattice point of
/// `grid` on `field_b` by the L1 distance between descriptors. Lattice
/// points outside `field_b`'s domain are clamped to its boundary first.
pub fn export_heatmap(
    field_a: &DescriptorField,
    reference: Pt3,
    field_b: &DescriptorField,
    grid: &GridSpec,
) -> Result<Heatmap, FieldError> {
    if field_a.descriptor_len() != field_b.descriptor_len() {
        return Err(FieldError::DimensionMismatch {
            expected: field_a.descriptor_len(),
            got: field_b.descriptor_len(),
        });
    }
    let anchor = field_a.descriptor(field_a.clamp(reference).point)?;
    let points = grid.points();
    let values = points
        .par_iter()
        .map(|&g| {
            let desc = field_b.descriptor(field_b.clamp(g).point)?;
            Ok(desc.iter().zip(&anchor).map(|(d, a)| (d - a).abs()).sum())
        })
        .collect::<Result<Vec<f64>, FieldError>>()?;

    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let colors = values
        .iter()
        .map(|&v| if span > 0.0 { ramp((v - lo) / span) } else { ramp(0.0) })
        .collect();
    let min_index = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);

    Ok(Heatmap { points, values, colors, min_index })
}
