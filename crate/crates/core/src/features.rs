//! Augmented per-pixel features and their discretization into weighted
//! point clouds.
//!
//! Each pixel becomes a vector concatenating its color, a normalized
//! position, and (when a normal map is supplied) a unit normal. Position and
//! normal blocks are scaled by their weights at build time, so downstream
//! cost functions need no special casing. Clouds are either the exact
//! empirical distribution (duplicates merged) or a seeded k-means
//! condensation when the pixel count exceeds the requested support size.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::image_io::{decode_normal, GeometryMaps, ImageBuffer};
use crate::rng::Rng;

/// One pixel's point in augmented feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPixelFeature {
    /// Raw color in [0, 1], unscaled.
    pub color: [f64; 3],
    /// Normalized position already multiplied by the position weight.
    /// Two entries for synthetic coordinates, three when a position map is used.
    pub position: Vec<f64>,
    /// Unit normal multiplied by the normal weight; absent without a normal map.
    pub normal: Option<[f64; 3]>,
    /// (row, col) of the source pixel.
    pub pixel_index: (usize, usize),
}

impl AugmentedPixelFeature {
    /// Feature dimensionality: 3 + |position| + 3 if a normal is present.
    pub fn dim(&self) -> usize {
        3 + self.position.len() + if self.normal.is_some() { 3 } else { 0 }
    }

    /// Flatten into a single vector, color block first.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(&self.color);
        v.extend_from_slice(&self.position);
        if let Some(n) = &self.normal {
            v.extend_from_slice(n);
        }
        v
    }
}

/// Discrete distribution over feature space: support points plus weights
/// summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointCloud {
    points: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
}

impl WeightedPointCloud {
    /// Validate and assemble a cloud from row-major points.
    pub fn new(points: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || weights.is_empty() || points.len() != weights.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "cloud shape: {} values, {} weights, dim {dim}",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cloud contains non-finite point".into()));
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("negative weight {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(WeightedPointCloud {
            points,
            weights,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    /// Weighted per-dimension mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.weights[i];
            for (m, &x) in mu.iter_mut().zip(self.point(i)) {
                *m += w * x;
            }
        }
        mu
    }

    /// Weighted per-dimension standard deviation (population form).
    pub fn std_dev(&self) -> Vec<f64> {
        let mu = self.mean();
        let mut var = vec![0.0; self.dim];
        for i in 0..self.len() {
            let w = self.weights[i];
            for (d, (v, &x)) in var.iter_mut().zip(self.point(i)).enumerate() {
                let c = x - mu[d];
                *v += w * c * c;
            }
        }
        var.iter().map(|v| v.sqrt()).collect()
    }
}

/// Extract one augmented feature per pixel.
///
/// Without a position map the position is the synthetic pair
/// `(col / (W-1), row / (H-1))` (zero along a degenerate axis); with one it
/// is the map's color triple. Normals come only from a normal map and are
/// re-normalized to unit length after decoding.
pub fn build_augmented_features(
    image: &ImageBuffer,
    geometry: &GeometryMaps,
    position_weight: f64,
    normal_weight: f64,
) -> Result<Vec<AugmentedPixelFeature>> {
    for (name, w) in [("position", position_weight), ("normal", normal_weight)] {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::InvalidArgument(format!("{name}_weight {w} must be nonnegative")));
        }
    }
    geometry.validate_for(image)?;
    let (w, h) = (image.width(), image.height());
    let mut features = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let color = image.pixel(row, col);
            let position = match &geometry.position_map {
                Some(map) => map
                    .pixel(row, col)
                    .iter()
                    .map(|&p| p * position_weight)
                    .collect(),
                None => {
                    let x = if w > 1 { col as f64 / (w - 1) as f64 } else { 0.0 };
                    let y = if h > 1 { row as f64 / (h - 1) as f64 } else { 0.0 };
                    vec![x * position_weight, y * position_weight]
                }
            };
            let normal = geometry.normal_map.as_ref().map(|map| {
                let n = decode_normal(map.pixel(row, col));
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                [
                    n[0] / len * normal_weight,
                    n[1] / len * normal_weight,
                    n[2] / len * normal_weight,
                ]
            });
            features.push(AugmentedPixelFeature {
                color,
                position,
                normal,
                pixel_index: (row, col),
            });
        }
    }
    Ok(features)
}

/// Condense features into a weighted cloud of at most `max_points` support
/// points.
///
/// When the number of distinct feature vectors fits, the cloud is the exact
/// empirical distribution: uniform mass 1/N per pixel with bit-identical
/// duplicates merged (first-occurrence order). Otherwise k-means with
/// k-means++ seeding runs on the distinct points, and weights are cluster
/// mass fractions.
pub fn quantize_to_cloud(
    features: &[AugmentedPixelFeature],
    max_points: usize,
    seed: u64,
) -> Result<WeightedPointCloud> {
    if features.is_empty() {
        return Err(Error::InvalidArgument("no features to quantize".into()));
    }
    if max_points == 0 {
        return Err(Error::InvalidArgument("max_points must be >= 1".into()));
    }
    let dim = features[0].dim();
    if features.iter().any(|f| f.dim() != dim) {
        return Err(Error::InvalidArgument("mixed feature dimensionality".into()));
    }
    let n = features.len();
    let (unique, counts) = merge_duplicates(features, dim);
    let k = unique.len() / dim;
    if k <= max_points {
        let weights = counts.iter().map(|&c| c as f64 / n as f64).collect();
        return WeightedPointCloud::new(unique, weights, dim);
    }
    let masses: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let (centroids, cluster_mass) =
        weighted_kmeans(&unique, &masses, dim, max_points, &mut Rng::derive(seed, 0x6b6d65616e73));
    WeightedPointCloud::new(centroids, cluster_mass, dim)
}

/// Nearest cloud point for every feature (squared Euclidean, lowest index on
/// ties). This is the pixel-to-support assignment used to apply a transport
/// plan back onto an image.
pub fn assign_to_cloud(features: &[AugmentedPixelFeature], cloud: &WeightedPointCloud) -> Result<Vec<usize>> {
    if features.is_empty() {
        return Ok(Vec::new());
    }
    if features[0].dim() != cloud.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dim {} vs cloud dim {}",
            features[0].dim(),
            cloud.dim()
        )));
    }
    let mut assignment = Vec::with_capacity(features.len());
    let mut scratch = Vec::new();
    for f in features {
        scratch.clear();
        scratch.extend(f.color);
        scratch.extend_from_slice(&f.position);
        if let Some(n) = &f.normal {
            scratch.extend_from_slice(n);
        }
        assignment.push(nearest(&scratch, cloud));
    }
    Ok(assignment)
}

fn nearest(x: &[f64], cloud: &WeightedPointCloud) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for i in 0..cloud.len() {
        let d = sq_dist(x, cloud.point(i));
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Merge bit-identical feature vectors, preserving first-occurrence order.
fn merge_duplicates(features: &[AugmentedPixelFeature], dim: usize) -> (Vec<f64>, Vec<usize>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(features.len());
    let mut unique = Vec::new();
    let mut counts = Vec::new();
    for f in features {
        let v = f.to_vector();
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        match index.get(&key) {
            Some(&i) => counts[i] += 1,
            None => {
                index.insert(key, counts.len());
                unique.extend_from_slice(&v);
                counts.push(1);
            }
        }
    }
    debug_assert_eq!(unique.len() / dim, counts.len());
    (unique, counts)
}

/// Weighted Lloyd iterations with k-means++ seeding.
///
/// Fixed 50-iteration cap and 1e-6 tolerance on the largest centroid move;
/// empty clusters are reseeded deterministically to the point farthest from
/// its assigned centroid.
pub(crate) fn weighted_kmeans(
    points: &[f64],
    masses: &[f64],
    dim: usize,
    k: usize,
    rng: &mut Rng,
) -> (Vec<f64>, Vec<f64>) {
    const MAX_ITER: usize = 50;
    const TOL: f64 = 1e-6;
    let n = masses.len();
    debug_assert!(k < n);
    let point = |i: usize| &points[i * dim..(i + 1) * dim];

    // k-means++: first center mass-weighted, then proportional to mass * D^2.
    let mut centers: Vec<f64> = Vec::with_capacity(k * dim);
    let first = rng.weighted_index(masses);
    centers.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    let mut scores = vec![0.0; n];
    while centers.len() < k * dim {
        for i in 0..n {
            scores[i] = masses[i] * d2[i];
        }
        let next = if scores.iter().sum::<f64>() > 0.0 {
            rng.weighted_index(&scores)
        } else {
            rng.weighted_index(masses)
        };
        centers.extend_from_slice(point(next));
        let c = centers.len() / dim - 1;
        for i in 0..n {
            let d = sq_dist(point(i), &centers[c * dim..(c + 1) * dim]);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..MAX_ITER {
        // Assign (lowest index wins ties).
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(point(i), &centers[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            assignment[i] = best;
        }
        // Update.
        let mut sums = vec![0.0; k * dim];
        let mut mass = vec![0.0; k];
        for i in 0..n {
            let c = assignment[i];
            mass[c] += masses[i];
            for d in 0..dim {
                sums[c * dim + d] += masses[i] * point(i)[d];
            }
        }
        // Reseed empty clusters to the point farthest from its centroid.
        for c in 0..k {
            if mass[c] == 0.0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(point(a), &centers[assignment[a] * dim..(assignment[a] + 1) * dim]);
                        let db = sq_dist(point(b), &centers[assignment[b] * dim..(assignment[b] + 1) * dim]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                sums[c * dim..(c + 1) * dim].copy_from_slice(point(far));
                mass[c] = masses[far];
                // The donor's old cluster keeps its remaining mass; a full
                // reassignment happens on the next sweep.
            }
        }
        let mut moved: f64 = 0.0;
        for c in 0..k {
            for d in 0..dim {
                let new = sums[c * dim + d] / mass[c].max(f64::MIN_POSITIVE);
                let delta = new - centers[c * dim + d];
                moved = moved.max(delta.abs());
                centers[c * dim + d] = new;
            }
        }
        if moved < TOL {
            break;
        }
    }

    // Final assignment and mass fractions against the converged centers.
    let mut mass = vec![0.0; k];
    for i in 0..n {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let d = sq_dist(point(i), &centers[c * dim..(c + 1) * dim]);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        mass[best] += masses[i];
    }
    // Drop support points that ended up with zero mass so the cloud stays a
    // strict distribution.
    let mut out_centers = Vec::with_capacity(k * dim);
    let mut out_mass = Vec::with_capacity(k);
    for c in 0..k {
        if mass[c] > 0.0 {
            out_centers.extend_from_slice(&centers[c * dim..(c + 1) * dim]);
            out_mass.push(mass[c]);
        }
    }
    let total: f64 = out_mass.iter().sum();
    for m in out_mass.iter_mut() {
        *m /= total;
    }
    (out_centers, out_mass)
}
