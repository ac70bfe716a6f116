//! End-to-end appearance transfer: images to augmented clouds, a transport
//! solve (entropic, exact, or neural), a per-support-point displacement
//! readout, and residual-preserving application back onto the pixels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    assign_to_cloud, build_augmented_features, quantize_to_cloud, WeightedPointCloud,
};
use crate::image_io::{GeometryMaps, ImageBuffer};
use crate::metrics::histogram_w_distance;
use crate::neural::{train_notpe, transport_sample, ConditionVector, SampleSet, TrainConfig};
use crate::ot::{
    cost_matrix, exact_ot_small, plan_cost, sinkhorn, CostKind, TransportPlan, EXACT_SOLVER_LIMIT,
};
use crate::parallel;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMethod {
    Sinkhorn,
    Exact,
    Neural,
}

impl TransferMethod {
    pub fn name(self) -> &'static str {
        match self {
            TransferMethod::Sinkhorn => "sinkhorn",
            TransferMethod::Exact => "exact",
            TransferMethod::Neural => "neural",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "sinkhorn" => Ok(TransferMethod::Sinkhorn),
            "exact" => Ok(TransferMethod::Exact),
            "neural" => Ok(TransferMethod::Neural),
            other => Err(Error::InvalidArgument(format!("unknown method {other:?}"))),
        }
    }
}

/// Pipeline configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferOptions {
    pub method: TransferMethod,
    /// Cloud support size; capped at 64 for the exact method.
    pub max_points: usize,
    /// Entropic regularization for the sinkhorn method.
    pub epsilon: f64,
    pub position_weight: f64,
    pub normal_weight: f64,
    pub seed: u64,
    /// Box-blur radius applied to the per-pixel color delta.
    pub smoothing_radius: usize,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    /// Training hyperparameters for the neural method.
    pub train: TrainConfig,
}

impl TransferOptions {
    /// Method-appropriate defaults: 256 support points (64 for exact),
    /// epsilon 0.05, moderate geometry weights, smoothing radius 2.
    pub fn new(method: TransferMethod) -> Self {
        TransferOptions {
            method,
            max_points: match method {
                TransferMethod::Exact => EXACT_SOLVER_LIMIT,
                _ => 256,
            },
            epsilon: 0.05,
            position_weight: 0.5,
            normal_weight: 0.5,
            seed: 0,
            smoothing_radius: 2,
            sinkhorn_max_iter: 10_000,
            sinkhorn_tol: 1e-7,
            train: TrainConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_points == 0 {
            return Err(Error::InvalidArgument("max_points must be >= 1".into()));
        }
        if self.method == TransferMethod::Exact && self.max_points > EXACT_SOLVER_LIMIT {
            return Err(Error::InvalidArgument(format!(
                "exact method supports at most {EXACT_SOLVER_LIMIT} points, got {}",
                self.max_points
            )));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon {} must be > 0",
                self.epsilon
            )));
        }
        if !(self.sinkhorn_tol > 0.0) || self.sinkhorn_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "sinkhorn_tol must be > 0 and sinkhorn_max_iter >= 1".into(),
            ));
        }
        for (name, w) in [
            ("position_weight", self.position_weight),
            ("normal_weight", self.normal_weight),
        ] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} {w} must be nonnegative")));
            }
        }
        self.train.validate()
    }
}

/// Summary of one transfer run, serializable as JSON.
#[derive(Debug, Clone, Serialize)]
pub struct TransferReport {
    pub method: String,
    /// Plan cost for the coupling methods; mean squared displacement of the
    /// learned map for the neural method.
    pub cost: f64,
    /// Max marginal L1 error of the plan; absent for the neural method.
    pub marginal_error: Option<f64>,
    pub seconds: f64,
    pub histogram_distance_before: f64,
    pub histogram_distance_after: f64,
}

/// Conditional-mean readout of a plan: each source point maps to the
/// coupling-weighted average of the target support; rows without mass map to
/// their own source point.
pub fn barycentric_map(
    plan: &TransportPlan,
    source: &WeightedPointCloud,
    target: &WeightedPointCloud,
) -> Result<Vec<Vec<f64>>> {
    if plan.cols() != target.len() || plan.rows() != source.len() {
        return Err(Error::DimensionMismatch(format!(
            "plan {}x{} vs clouds {}/{}",
            plan.rows(),
            plan.cols(),
            source.len(),
            target.len()
        )));
    }
    let d = target.dim();
    let mut mapped = Vec::with_capacity(plan.rows());
    for i in 0..plan.rows() {
        let row = plan.row(i);
        let mass: f64 = row.iter().sum();
        if mass <= 0.0 {
            mapped.push(source.point(i).to_vec());
            continue;
        }
        let mut point = vec![0.0; d];
        for (j, &w) in row.iter().enumerate() {
            if w > 0.0 {
                for (acc, &x) in point.iter_mut().zip(target.point(j)) {
                    *acc += w * x;
                }
            }
        }
        for x in point.iter_mut() {
            *x /= mass;
        }
        mapped.push(point);
    }
    Ok(mapped)
}

/// Rewrite pixel colors: every pixel moves by its support point's color
/// displacement, preserving the pixel's own residual detail. The per-pixel
/// delta field is optionally box-blurred before application, and the result
/// is clamped to [0, 1].
pub fn apply_mapping(
    image: &ImageBuffer,
    source_cloud: &WeightedPointCloud,
    mapped_points: &[Vec<f64>],
    assignment: &[usize],
    smoothing_radius: usize,
) -> Result<ImageBuffer> {
    if assignment.len() != image.pixel_count() {
        return Err(Error::DimensionMismatch(format!(
            "assignment covers {} pixels, image has {}",
            assignment.len(),
            image.pixel_count()
        )));
    }
    if mapped_points.len() != source_cloud.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} mapped points vs {} support points",
            mapped_points.len(),
            source_cloud.len()
        )));
    }
    // Color displacement per support point.
    let mut deltas = Vec::with_capacity(source_cloud.len());
    for (k, mapped) in mapped_points.iter().enumerate() {
        let original = source_cloud.point(k);
        if mapped.len() != original.len() {
            return Err(Error::DimensionMismatch(format!(
                "mapped point {k} has dim {}, cloud dim {}",
                mapped.len(),
                original.len()
            )));
        }
        deltas.push([
            mapped[0] - original[0],
            mapped[1] - original[1],
            mapped[2] - original[2],
        ]);
    }
    let (w, h) = (image.width(), image.height());
    let mut delta_field = vec![0.0; w * h * 3];
    for (p, &k) in assignment.iter().enumerate() {
        if k >= deltas.len() {
            return Err(Error::InvalidArgument(format!(
                "assignment index {k} out of range"
            )));
        }
        delta_field[p * 3..p * 3 + 3].copy_from_slice(&deltas[k]);
    }
    if smoothing_radius > 0 {
        delta_field = box_blur(&delta_field, w, h, smoothing_radius);
    }
    let mut out = image.clone();
    let src = image.data();
    parallel::for_each_chunk_mut(out.data_mut(), 3, |chunk, base| {
        for (i, v) in chunk.iter_mut().enumerate() {
            *v = (src[base + i] + delta_field[base + i]).clamp(0.0, 1.0);
        }
    });
    Ok(out)
}

/// Separable truncated box blur on an interleaved RGB field; border windows
/// normalize by the pixels actually present.
fn box_blur(field: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let mut horizontal = vec![0.0; field.len()];
    for row in 0..height {
        for col in 0..width {
            let lo = (col as isize - r).max(0) as usize;
            let hi = (col as isize + r).min(width as isize - 1) as usize;
            let n = (hi - lo + 1) as f64;
            for ch in 0..3 {
                let mut acc = 0.0;
                for c in lo..=hi {
                    acc += field[(row * width + c) * 3 + ch];
                }
                horizontal[(row * width + col) * 3 + ch] = acc / n;
            }
        }
    }
    let mut out = vec![0.0; field.len()];
    for row in 0..height {
        let lo = (row as isize - r).max(0) as usize;
        let hi = (row as isize + r).min(height as isize - 1) as usize;
        let n = (hi - lo + 1) as f64;
        for col in 0..width {
            for ch in 0..3 {
                let mut acc = 0.0;
                for rr in lo..=hi {
                    acc += horizontal[(rr * width + col) * 3 + ch];
                }
                out[(row * width + col) * 3 + ch] = acc / n;
            }
        }
    }
    out
}

const QUANT_STREAM: u64 = 0x7175616e74;

/// Full pipeline: features, clouds, solve, map, apply. Returns the output
/// image and a run report.
pub fn transfer_appearance(
    source: &ImageBuffer,
    target: &ImageBuffer,
    source_geom: &GeometryMaps,
    target_geom: &GeometryMaps,
    options: &TransferOptions,
) -> Result<(ImageBuffer, TransferReport)> {
    options.validate()?;
    let start = Instant::now();
    let before = histogram_w_distance(source, target, EXACT_SOLVER_LIMIT)?;

    let feats_s = build_augmented_features(source, source_geom, options.position_weight, options.normal_weight)?;
    let feats_t = build_augmented_features(target, target_geom, options.position_weight, options.normal_weight)?;
    if feats_s[0].dim() != feats_t[0].dim() {
        return Err(Error::DimensionMismatch(format!(
            "source features dim {} vs target {}; supply matching geometry maps",
            feats_s[0].dim(),
            feats_t[0].dim()
        )));
    }
    // One quantization stream for both sides: identical inputs give
    // identical clouds, making the identity transfer exact.
    let quant_seed = Rng::derive(options.seed, QUANT_STREAM).next_u64();
    let cloud_s = quantize_to_cloud(&feats_s, options.max_points, quant_seed)?;
    let cloud_t = quantize_to_cloud(&feats_t, options.max_points, quant_seed)?;
    let assignment = assign_to_cloud(&feats_s, &cloud_s)?;

    let (mapped, cost, marginal_error) = match options.method {
        TransferMethod::Sinkhorn => {
            let cost_m = cost_matrix(&cloud_s, &cloud_t, CostKind::SquaredEuclidean)?;
            let plan = sinkhorn(
                &cost_m,
                cloud_s.weights(),
                cloud_t.weights(),
                options.epsilon,
                options.sinkhorn_max_iter,
                options.sinkhorn_tol,
            )?;
            let c = plan_cost(&plan, &cost_m)?;
            let mapped = barycentric_map(&plan, &cloud_s, &cloud_t)?;
            (mapped, c, Some(plan.max_marginal_error()))
        }
        TransferMethod::Exact => {
            let cost_m = cost_matrix(&cloud_s, &cloud_t, CostKind::SquaredEuclidean)?;
            let plan = exact_ot_small(&cost_m, cloud_s.weights(), cloud_t.weights())?;
            let c = plan_cost(&plan, &cost_m)?;
            let mapped = barycentric_map(&plan, &cloud_s, &cloud_t)?;
            (mapped, c, Some(plan.max_marginal_error()))
        }
        TransferMethod::Neural => {
            let src_samples = SampleSet::from_cloud(&cloud_s);
            let tgt_samples = SampleSet::from_cloud(&cloud_t);
            let condition = ConditionVector::from_clouds(&cloud_s, &cloud_t)?;
            let mut cfg = options.train.clone();
            cfg.seed = options.seed;
            let map_net = train_notpe(&src_samples, &tgt_samples, &condition, &cfg)?;
            let mut mapped = Vec::with_capacity(cloud_s.len());
            let mut displacement_cost = 0.0;
            for i in 0..cloud_s.len() {
                let v = cloud_s.point(i);
                let y = transport_sample(&map_net, v, &condition)?;
                displacement_cost += cloud_s.weights()[i]
                    * y.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                mapped.push(y);
            }
            (mapped, displacement_cost, None)
        }
    };

    let output = apply_mapping(source, &cloud_s, &mapped, &assignment, options.smoothing_radius)?;
    let after = histogram_w_distance(&output, target, EXACT_SOLVER_LIMIT)?;
    let report = TransferReport {
        method: options.method.name().to_string(),
        cost,
        marginal_error,
        seconds: start.elapsed().as_secs_f64(),
        histogram_distance_before: before,
        histogram_distance_after: after,
    };
    Ok((output, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::quantize_to_cloud;
    use crate::ot::TransportPlan;

    fn cloud(points: Vec<f64>, weights: Vec<f64>, dim: usize) -> WeightedPointCloud {
        WeightedPointCloud::new(points, weights, dim).unwrap()
    }

    fn plan_from(coupling: Vec<f64>, rows: usize, cols: usize) -> TransportPlan {
        // Marginals are irrelevant for the readout; diagnostics unused here.
        TransportPlan::from_parts(coupling, rows, cols, &vec![0.0; rows], &vec![0.0; cols], 0)
    }

    #[test]
    fn permutation_plan_maps_to_matched_points() {
        let source = cloud(vec![0.0, 0.0, 1.0, 1.0], vec![0.5, 0.5], 2);
        let target = cloud(vec![5.0, 5.0, 9.0, 9.0], vec![0.5, 0.5], 2);
        // Anti-diagonal permutation.
        let plan = plan_from(vec![0.0, 0.5, 0.5, 0.0], 2, 2);
        let mapped = barycentric_map(&plan, &source, &target).unwrap();
        assert_eq!(mapped[0], vec![9.0, 9.0]);
        assert_eq!(mapped[1], vec![5.0, 5.0]);
    }

    #[test]
    fn uniform_plan_maps_to_weighted_mean() {
        let source = cloud(vec![0.0, 1.0], vec![0.5, 0.5], 1);
        let target = cloud(vec![2.0, 6.0], vec![0.5, 0.5], 1);
        let plan = plan_from(vec![0.25; 4], 2, 2);
        let mapped = barycentric_map(&plan, &source, &target).unwrap();
        assert_eq!(mapped[0], vec![4.0]);
        assert_eq!(mapped[1], vec![4.0]);
    }

    #[test]
    fn zero_mass_row_keeps_source_point() {
        let source = cloud(vec![3.0, 7.0], vec![0.5, 0.5], 1);
        let target = cloud(vec![9.0], vec![1.0], 1);
        let plan = plan_from(vec![1.0, 0.0], 2, 1);
        let mapped = barycentric_map(&plan, &source, &target).unwrap();
        assert_eq!(mapped[0], vec![9.0]);
        assert_eq!(mapped[1], vec![7.0]);
    }

    #[test]
    fn barycentric_matches_row_normalized_product() {
        let mut rng = Rng::new(41);
        let n = 4;
        let m = 5;
        let source = cloud((0..n * 2).map(|_| rng.next_f64()).collect(), vec![0.25; n], 2);
        let target = cloud((0..m * 2).map(|_| rng.next_f64()).collect(), vec![0.2; m], 2);
        let coupling: Vec<f64> = (0..n * m).map(|_| rng.next_f64()).collect();
        let plan = plan_from(coupling.clone(), n, m);
        let mapped = barycentric_map(&plan, &source, &target).unwrap();
        for i in 0..n {
            let mass: f64 = coupling[i * m..(i + 1) * m].iter().sum();
            for d in 0..2 {
                let want: f64 = (0..m)
                    .map(|j| coupling[i * m + j] * target.point(j)[d])
                    .sum::<f64>()
                    / mass;
                assert!((mapped[i][d] - want).abs() < 1e-12);
            }
        }
    }

    fn two_tone_image(w: usize, h: usize, left: [f64; 3], right: [f64; 3]) -> ImageBuffer {
        let mut img = ImageBuffer::new(w, h).unwrap();
        for row in 0..h {
            for col in 0..w {
                img.set_pixel(row, col, if col < w / 2 { left } else { right });
            }
        }
        img
    }

    #[test]
    fn identity_mapping_returns_input_exactly() {
        let img = two_tone_image(8, 6, [0.2, 0.3, 0.4], [0.7, 0.6, 0.5]);
        let feats = build_augmented_features(&img, &GeometryMaps::none(), 0.5, 0.0).unwrap();
        let cloud = quantize_to_cloud(&feats, 64, 3).unwrap();
        let assignment = assign_to_cloud(&feats, &cloud).unwrap();
        let mapped: Vec<Vec<f64>> = (0..cloud.len()).map(|i| cloud.point(i).to_vec()).collect();
        let out = apply_mapping(&img, &cloud, &mapped, &assignment, 0).unwrap();
        assert_eq!(out, img);
        // Smoothing a zero delta field is still zero.
        let smoothed = apply_mapping(&img, &cloud, &mapped, &assignment, 2).unwrap();
        assert_eq!(smoothed, img);
    }

    #[test]
    fn constant_shift_applies_uniformly() {
        let img = ImageBuffer::from_data(4, 4, vec![0.3; 48]).unwrap();
        let feats = build_augmented_features(&img, &GeometryMaps::none(), 0.0, 0.0).unwrap();
        let cloud = quantize_to_cloud(&feats, 4, 0).unwrap();
        assert_eq!(cloud.len(), 1);
        let assignment = assign_to_cloud(&feats, &cloud).unwrap();
        let mut mapped = vec![cloud.point(0).to_vec()];
        for c in mapped[0].iter_mut().take(3) {
            *c += 0.2;
        }
        let out = apply_mapping(&img, &cloud, &mapped, &assignment, 1).unwrap();
        for v in out.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_delta_constant_within_cluster() {
        // Pixels sharing a support point shift by the same delta when
        // smoothing is off.
        let mut img = two_tone_image(6, 4, [0.2, 0.2, 0.2], [0.8, 0.8, 0.8]);
        // Perturb one left pixel slightly; with coarse quantization it still
        // lands in the left cluster.
        img.set_pixel(0, 0, [0.25, 0.2, 0.2]);
        let feats = build_augmented_features(&img, &GeometryMaps::none(), 0.0, 0.0).unwrap();
        let cloud = quantize_to_cloud(&feats, 2, 5).unwrap();
        let assignment = assign_to_cloud(&feats, &cloud).unwrap();
        let mapped: Vec<Vec<f64>> = (0..cloud.len())
            .map(|i| {
                let mut p = cloud.point(i).to_vec();
                p[0] += 0.1;
                p
            })
            .collect();
        let out = apply_mapping(&img, &cloud, &mapped, &assignment, 0).unwrap();
        for p in 0..img.pixel_count() {
            let delta = out.data()[p * 3] - img.data()[p * 3];
            assert!((delta - 0.1).abs() < 1e-12, "pixel {p} delta {delta}");
        }
    }

    #[test]
    fn transfer_identity_is_exact_for_exact_method() {
        let img = two_tone_image(10, 8, [0.3, 0.5, 0.2], [0.6, 0.1, 0.7]);
        let options = TransferOptions::new(TransferMethod::Exact);
        let (out, report) =
            transfer_appearance(&img, &img, &GeometryMaps::none(), &GeometryMaps::none(), &options)
                .unwrap();
        let mad: f64 = out
            .data()
            .iter()
            .zip(img.data())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / img.data().len() as f64;
        assert!(mad <= 2.0 / 255.0, "mean abs diff {mad}");
        assert!(report.histogram_distance_after < 1e-12);
    }

    #[test]
    fn gray_to_gray_forced_coupling() {
        let src = ImageBuffer::from_data(6, 6, vec![0.25; 108]).unwrap();
        let tgt = ImageBuffer::from_data(6, 6, vec![0.75; 108]).unwrap();
        for method in [TransferMethod::Sinkhorn, TransferMethod::Exact] {
            let mut options = TransferOptions::new(method);
            options.position_weight = 0.0;
            let (out, _) = transfer_appearance(
                &src,
                &tgt,
                &GeometryMaps::none(),
                &GeometryMaps::none(),
                &options,
            )
            .unwrap();
            for v in out.data() {
                assert!((v - 0.75).abs() <= 1.0 / 255.0, "component {v}");
            }
        }
    }

    #[test]
    fn geometry_weight_steers_mass_to_matching_side() {
        // Source: red left, blue right. Target: green left, yellow right.
        // With position information the left region must adopt the target's
        // left color, not chase the globally nearest color.
        let source = two_tone_image(8, 8, [0.8, 0.1, 0.1], [0.1, 0.1, 0.8]);
        let target = two_tone_image(8, 8, [0.1, 0.8, 0.1], [0.8, 0.8, 0.1]);
        let mut options = TransferOptions::new(TransferMethod::Exact);
        options.position_weight = 2.0;
        options.smoothing_radius = 0;
        let (out, _) = transfer_appearance(
            &source,
            &target,
            &GeometryMaps::none(),
            &GeometryMaps::none(),
            &options,
        )
        .unwrap();
        let dist = |a: [f64; 3], b: [f64; 3]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
        };
        for row in 0..8 {
            let left = out.pixel(row, 1);
            let right = out.pixel(row, 6);
            assert!(
                dist(left, [0.1, 0.8, 0.1]) < dist(left, [0.8, 0.8, 0.1]),
                "left region did not turn green: {left:?}"
            );
            assert!(
                dist(right, [0.8, 0.8, 0.1]) < dist(right, [0.1, 0.8, 0.1]),
                "right region did not turn yellow: {right:?}"
            );
        }
    }

    #[test]
    fn outputs_stay_in_unit_range_and_deterministic() {
        let mut rng = Rng::new(55);
        let mk = |seed: u64| {
            let mut r = Rng::new(seed);
            let data: Vec<f64> = (0..12 * 10 * 3).map(|_| r.next_f64()).collect();
            ImageBuffer::from_data(12, 10, data).unwrap()
        };
        let src = mk(rng.next_u64());
        let tgt = mk(rng.next_u64());
        let mut options = TransferOptions::new(TransferMethod::Sinkhorn);
        options.max_points = 32;
        options.seed = 99;
        let (a, ra) = transfer_appearance(&src, &tgt, &GeometryMaps::none(), &GeometryMaps::none(), &options).unwrap();
        let (b, rb) = transfer_appearance(&src, &tgt, &GeometryMaps::none(), &GeometryMaps::none(), &options).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.cost.to_bits(), rb.cost.to_bits());
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn exact_method_rejects_oversized_support() {
        let mut options = TransferOptions::new(TransferMethod::Exact);
        options.max_points = 128;
        assert!(options.validate().is_err());
    }
}
