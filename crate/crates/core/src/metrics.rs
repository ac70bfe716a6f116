//! Evaluation metrics: SSIM on the whole image and on edge maps, a Gram
//! matrix style loss over a fixed random convolution bank, an L1 content
//! loss over the same bank, and an exact small-cloud Wasserstein distance
//! between color histograms.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::WeightedPointCloud;
use crate::image_io::ImageBuffer;
use crate::ot::{cost_matrix, exact_ot_small, plan_cost, CostKind, EXACT_SOLVER_LIMIT};
use crate::rng::Rng;

/// Single-channel image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayBuffer {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl GrayBuffer {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// BT.601 luma.
pub fn luma(image: &ImageBuffer) -> GrayBuffer {
    let mut values = Vec::with_capacity(image.pixel_count());
    for px in image.data().chunks_exact(3) {
        values.push(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]);
    }
    GrayBuffer {
        width: image.width(),
        height: image.height(),
        values,
    }
}

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean local SSIM between two images on the luma channel, with the default
/// 8x8 sliding window (stride 1) and dynamic-range-1 constants.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    ssim_with(a, b, SSIM_WINDOW, SSIM_C1, SSIM_C2)
}

pub fn ssim_with(a: &ImageBuffer, b: &ImageBuffer, window: usize, c1: f64, c2: f64) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    ssim_gray(&luma(a), &luma(b), window, c1, c2)
}

/// SSIM on raw single-channel planes.
pub fn ssim_gray(a: &GrayBuffer, b: &GrayBuffer, window: usize, c1: f64, c2: f64) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if window == 0 || a.width < window || a.height < window {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} smaller than the {window}x{window} window",
            a.width, a.height
        )));
    }
    let inv_n = 1.0 / (window * window) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for row in 0..=(a.height - window) {
        for col in 0..=(a.width - window) {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for r in row..row + window {
                for c in col..col + window {
                    let x = a.at(r, c);
                    let y = b.at(r, c);
                    sa += x;
                    sb += y;
                    saa += x * x;
                    sbb += y * y;
                    sab += x * y;
                }
            }
            let mu_a = sa * inv_n;
            let mu_b = sb * inv_n;
            let var_a = saa * inv_n - mu_a * mu_a;
            let var_b = sbb * inv_n - mu_b * mu_b;
            let cov = sab * inv_n - mu_a * mu_b;
            let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            total += value;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Sobel gradient magnitude on luma, normalized by its maximum (an all-flat
/// image maps to zeros). Borders replicate.
pub fn edge_map(image: &ImageBuffer) -> GrayBuffer {
    let l = luma(image);
    let (w, h) = (l.width, l.height);
    let sample = |row: isize, col: isize| -> f64 {
        let r = row.clamp(0, h as isize - 1) as usize;
        let c = col.clamp(0, w as isize - 1) as usize;
        l.at(r, c)
    };
    let mut values = Vec::with_capacity(w * h);
    let mut max = 0.0_f64;
    for row in 0..h as isize {
        for col in 0..w as isize {
            // Difference form cancels exactly on flat regions.
            let gx = (sample(row - 1, col + 1) - sample(row - 1, col - 1))
                + 2.0 * (sample(row, col + 1) - sample(row, col - 1))
                + (sample(row + 1, col + 1) - sample(row + 1, col - 1));
            let gy = (sample(row + 1, col - 1) - sample(row - 1, col - 1))
                + 2.0 * (sample(row + 1, col) - sample(row - 1, col))
                + (sample(row + 1, col + 1) - sample(row - 1, col + 1));
            let g = (gx * gx + gy * gy).sqrt();
            max = max.max(g);
            values.push(g);
        }
    }
    if max > 0.0 {
        for v in values.iter_mut() {
            *v /= max;
        }
    }
    GrayBuffer {
        width: w,
        height: h,
        values,
    }
}

/// SSIM between the edge maps of two images. Which pair to compare (against
/// the source or the target) is the caller's choice.
pub fn ssim_edge(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    ssim_gray(&edge_map(a), &edge_map(b), SSIM_WINDOW, SSIM_C1, SSIM_C2)
}

/// Fixed bank of seeded random 3x3 kernels applied to luma at full and half
/// resolution. Stands in for a learned feature extractor in the style and
/// content losses.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    kernels: Vec<[f64; 9]>,
    seed: u64,
}

pub const BANK_KERNELS: usize = 16;
pub const BANK_SCALES: usize = 2;
const DEFAULT_BANK_SEED: u64 = 0xFEA7;

impl Default for FeatureBank {
    fn default() -> Self {
        FeatureBank::new(DEFAULT_BANK_SEED)
    }
}

impl FeatureBank {
    /// Kernels are uniform in [-1, 1], zero-mean, unit L2 norm.
    pub fn new(seed: u64) -> Self {
        let mut rng = Rng::derive(seed, 0x62_61_6e_6b);
        let mut kernels = Vec::with_capacity(BANK_KERNELS);
        for _ in 0..BANK_KERNELS {
            let mut k = [0.0; 9];
            for v in k.iter_mut() {
                *v = rng.range_f64(-1.0, 1.0);
            }
            let mean: f64 = k.iter().sum::<f64>() / 9.0;
            for v in k.iter_mut() {
                *v -= mean;
            }
            let norm: f64 = k.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in k.iter_mut() {
                *v /= norm;
            }
            kernels.push(k);
        }
        FeatureBank { kernels, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Response maps: `BANK_KERNELS` planes per scale (full, then half).
    pub fn responses(&self, image: &ImageBuffer) -> Vec<Vec<GrayBuffer>> {
        let full = luma(image);
        let half = downsample_half(&full);
        [full, half]
            .iter()
            .map(|plane| {
                self.kernels
                    .iter()
                    .map(|k| convolve3(plane, k))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// 2x box downsample (ceiling sizes; ragged edge cells average what exists).
fn downsample_half(g: &GrayBuffer) -> GrayBuffer {
    let w = g.width.div_ceil(2);
    let h = g.height.div_ceil(2);
    let mut values = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let mut sum = 0.0;
            let mut n = 0.0;
            for dr in 0..2 {
                for dc in 0..2 {
                    let r = row * 2 + dr;
                    let c = col * 2 + dc;
                    if r < g.height && c < g.width {
                        sum += g.at(r, c);
                        n += 1.0;
                    }
                }
            }
            values.push(sum / n);
        }
    }
    GrayBuffer {
        width: w,
        height: h,
        values,
    }
}

/// Same-size 3x3 convolution with replicated borders.
fn convolve3(g: &GrayBuffer, kernel: &[f64; 9]) -> GrayBuffer {
    let (w, h) = (g.width, g.height);
    let sample = |row: isize, col: isize| -> f64 {
        let r = row.clamp(0, h as isize - 1) as usize;
        let c = col.clamp(0, w as isize - 1) as usize;
        g.at(r, c)
    };
    let mut values = Vec::with_capacity(w * h);
    for row in 0..h as isize {
        for col in 0..w as isize {
            let mut acc = 0.0;
            for (ki, &kv) in kernel.iter().enumerate() {
                let dr = (ki / 3) as isize - 1;
                let dc = (ki % 3) as isize - 1;
                acc += kv * sample(row + dr, col + dc);
            }
            values.push(acc);
        }
    }
    GrayBuffer {
        width: w,
        height: h,
        values,
    }
}

fn gram(responses: &[GrayBuffer]) -> Vec<f64> {
    let k = responses.len();
    let hw = responses[0].values.len() as f64;
    let mut g = vec![0.0; k * k];
    for p in 0..k {
        for q in p..k {
            let dot: f64 = responses[p]
                .values
                .iter()
                .zip(&responses[q].values)
                .map(|(x, y)| x * y)
                .sum::<f64>()
                / hw;
            g[p * k + q] = dot;
            g[q * k + p] = dot;
        }
    }
    g
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Style distance: mean over scales of the mean squared entrywise difference
/// between Gram matrices of bank responses.
pub fn gram_loss(a: &ImageBuffer, b: &ImageBuffer, bank: &FeatureBank) -> Result<f64> {
    check_dims(a, b)?;
    let ra = bank.responses(a);
    let rb = bank.responses(b);
    let mut total = 0.0;
    for (sa, sb) in ra.iter().zip(&rb) {
        let ga = gram(sa);
        let gb = gram(sb);
        let k2 = ga.len() as f64;
        let diff: f64 = ga.iter().zip(&gb).map(|(x, y)| (x - y) * (x - y)).sum();
        total += diff / k2;
    }
    Ok(total / BANK_SCALES as f64)
}

/// Content distance: mean absolute difference over all bank responses.
pub fn content_loss(a: &ImageBuffer, b: &ImageBuffer, bank: &FeatureBank) -> Result<f64> {
    check_dims(a, b)?;
    let ra = bank.responses(a);
    let rb = bank.responses(b);
    let mut total = 0.0;
    let mut count = 0usize;
    for (sa, sb) in ra.iter().zip(&rb) {
        for (pa, pb) in sa.iter().zip(sb) {
            for (x, y) in pa.values.iter().zip(&pb.values) {
                total += (x - y).abs();
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Exact squared-Euclidean Wasserstein distance between the color
/// distributions of two images, after quantizing each to at most
/// `max_points` (≤ 64) support colors.
pub fn histogram_w_distance(a: &ImageBuffer, b: &ImageBuffer, max_points: usize) -> Result<f64> {
    if max_points == 0 || max_points > EXACT_SOLVER_LIMIT {
        return Err(Error::InvalidArgument(format!(
            "max_points {max_points} must be in 1..={EXACT_SOLVER_LIMIT}"
        )));
    }
    let ca = color_cloud(a, max_points)?;
    let cb = color_cloud(b, max_points)?;
    let cost = cost_matrix(&ca, &cb, CostKind::SquaredEuclidean)?;
    let plan = exact_ot_small(&cost, ca.weights(), cb.weights())?;
    plan_cost(&plan, &cost)
}

/// Color-only cloud of an image (positions ignored), deterministic.
pub fn color_cloud(image: &ImageBuffer, max_points: usize) -> Result<WeightedPointCloud> {
    use crate::features::{build_augmented_features, quantize_to_cloud};
    use crate::image_io::GeometryMaps;
    let features = build_augmented_features(image, &GeometryMaps::none(), 0.0, 0.0)?;
    // Zero position weight makes duplicates collapse to pure colors; the
    // fixed seed keeps the metric deterministic.
    let cloud = quantize_to_cloud(&features, max_points, 0)?;
    // Keep only the color block.
    let mut points = Vec::with_capacity(cloud.len() * 3);
    for i in 0..cloud.len() {
        points.extend_from_slice(&cloud.point(i)[..3]);
    }
    WeightedPointCloud::new(points, cloud.weights().to_vec(), 3)
}

/// Bundle of every metric, serializable for reports.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub ssim_whole: f64,
    pub ssim_edge: f64,
    pub gram_loss: f64,
    pub content_loss: f64,
    pub histogram_w: f64,
}

/// Compute the full report. `ssim_edge` compares `a` against `edge_ref`
/// (typically the source image); the other metrics compare `a` against `b`.
pub fn metric_report(
    a: &ImageBuffer,
    b: &ImageBuffer,
    edge_ref: &ImageBuffer,
    bank: &FeatureBank,
) -> Result<MetricReport> {
    Ok(MetricReport {
        ssim_whole: ssim(a, b)?,
        ssim_edge: ssim_edge(a, edge_ref)?,
        gram_loss: gram_loss(a, b, bank)?,
        content_loss: content_loss(a, b, bank)?,
        histogram_w: histogram_w_distance(a, b, EXACT_SOLVER_LIMIT)?,
    })
}
