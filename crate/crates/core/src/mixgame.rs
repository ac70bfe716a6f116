//! The segmentation game: random rectangular mix-masks, convex image
//! mixing, the masked real/fake score decomposition, a toy dense patch
//! critic, and the weighted total loss.
//!
//! Mask convention: 1 marks the real/target region, 0 the generated one, so
//! an all-zero mask returns the generated image untouched.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image_io::ImageBuffer;
use crate::metrics::GrayBuffer;
use crate::neural::SmallDenseNetwork;
use crate::rng::Rng;

/// A [0, 1]-valued blending mask plus the patch rectangles that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MixMask {
    width: usize,
    height: usize,
    values: Vec<f64>,
    seed: u64,
    patches: Vec<PatchRect>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl MixMask {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn patches(&self) -> &[PatchRect] {
        &self.patches
    }

    /// Wrap explicit values (all in [0, 1]) as a mask.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("mask value outside [0, 1]".into()));
        }
        Ok(MixMask {
            width,
            height,
            values,
            seed: 0,
            patches: Vec::new(),
        })
    }

    /// Save as a single-channel PNG with values quantized by round(m * 255).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::image_io::save_gray_png(&self.values, self.width, self.height, path)
    }
}

/// Drop `num_patches` random axis-aligned rectangles of value 1 onto a zero
/// mask. Side lengths are drawn as fractions of the frame from
/// `patch_fraction_range`; `soft_edge` adds a linear ramp of that width just
/// inside each rectangle border. Deterministic under `seed`.
pub fn generate_mix_mask(
    height: usize,
    width: usize,
    num_patches: usize,
    patch_fraction_range: (f64, f64),
    soft_edge: usize,
    seed: u64,
) -> Result<MixMask> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument("mask dimensions must be positive".into()));
    }
    let (lo, hi) = patch_fraction_range;
    if !(lo > 0.0) || lo > hi || hi > 1.0 {
        return Err(Error::InvalidArgument(format!(
            "patch fraction range ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"
        )));
    }
    let mut rng = Rng::derive(seed, 0x6d61736b);
    let mut values = vec![0.0; width * height];
    let mut patches = Vec::with_capacity(num_patches);
    for _ in 0..num_patches {
        let ph = ((rng.range_f64(lo, hi) * height as f64).round() as usize).clamp(1, height);
        let pw = ((rng.range_f64(lo, hi) * width as f64).round() as usize).clamp(1, width);
        let row = rng.below(height - ph + 1);
        let col = rng.below(width - pw + 1);
        patches.push(PatchRect {
            row,
            col,
            height: ph,
            width: pw,
        });
        for r in row..row + ph {
            for c in col..col + pw {
                let v = if soft_edge == 0 {
                    1.0
                } else {
                    // Distance to the nearest rectangle border, ramped.
                    let d = (r - row)
                        .min(row + ph - 1 - r)
                        .min(c - col)
                        .min(col + pw - 1 - c);
                    ((d + 1) as f64 / (soft_edge + 1) as f64).min(1.0)
                };
                let slot = &mut values[r * width + c];
                *slot = f64::max(*slot, v);
            }
        }
    }
    Ok(MixMask {
        width,
        height,
        values,
        seed,
        patches,
    })
}

/// Per-pixel convex combination: `(1 - m) * generated + m * real`.
pub fn mix_images(generated: &ImageBuffer, real: &ImageBuffer, mask: &MixMask) -> Result<ImageBuffer> {
    if !generated.same_dims(real)
        || mask.width != generated.width()
        || mask.height != generated.height()
    {
        return Err(Error::DimensionMismatch(format!(
            "mix: {}x{}, {}x{}, mask {}x{}",
            generated.width(),
            generated.height(),
            real.width(),
            real.height(),
            mask.width,
            mask.height
        )));
    }
    let mut data = Vec::with_capacity(generated.data().len());
    for (i, (g, r)) in generated.data().iter().zip(real.data()).enumerate() {
        let m = mask.values[i / 3];
        data.push((1.0 - m) * g + m * r);
    }
    ImageBuffer::from_data(generated.width(), generated.height(), data)
}

/// Decomposition of a mixed-image score map against its mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsdLoss {
    /// Mean of `mask * scores`: mass the critic assigns to real regions.
    pub real_term: f64,
    /// Mean of `(1 - mask) * scores`: mass assigned to generated regions.
    pub fake_term: f64,
    /// What the critic descends: `fake_term - real_term`.
    pub critic_loss: f64,
    /// What the generator descends: `-fake_term`.
    pub generator_loss: f64,
}

/// Masked real/fake split of a pixelwise score map.
pub fn msd_loss(scores: &GrayBuffer, mask: &MixMask) -> Result<MsdLoss> {
    if scores.width != mask.width || scores.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "scores {}x{} vs mask {}x{}",
            scores.width, scores.height, mask.width, mask.height
        )));
    }
    let n = scores.values.len() as f64;
    let mut real = 0.0;
    let mut fake = 0.0;
    for (s, m) in scores.values.iter().zip(&mask.values) {
        real += m * s;
        fake += (1.0 - m) * s;
    }
    let real_term = real / n;
    let fake_term = fake / n;
    Ok(MsdLoss {
        real_term,
        fake_term,
        critic_loss: fake_term - real_term,
        generator_loss: -fake_term,
    })
}

/// Score every non-overlapping `patch_size` square with a dense network and
/// broadcast the scalar score to the patch's pixels. Images whose sides are
/// not multiples of the patch size are padded by edge replication.
pub fn toy_patch_critic(
    image: &ImageBuffer,
    critic: &SmallDenseNetwork,
    patch_size: usize,
) -> Result<GrayBuffer> {
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch_size must be >= 1".into()));
    }
    let expected = patch_size * patch_size * 3;
    if critic.input_dim() != expected || critic.output_dim() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "critic {}->{} vs patch input {expected}->1",
            critic.input_dim(),
            critic.output_dim()
        )));
    }
    let (w, h) = (image.width(), image.height());
    let tiles_x = w.div_ceil(patch_size);
    let tiles_y = h.div_ceil(patch_size);
    let mut values = vec![0.0; w * h];
    let mut patch = vec![0.0; expected];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            for pr in 0..patch_size {
                for pc in 0..patch_size {
                    let row = (ty * patch_size + pr).min(h - 1);
                    let col = (tx * patch_size + pc).min(w - 1);
                    let px = image.pixel(row, col);
                    let base = (pr * patch_size + pc) * 3;
                    patch[base..base + 3].copy_from_slice(&px);
                }
            }
            let score = critic.forward(&patch)?[0];
            for pr in 0..patch_size {
                for pc in 0..patch_size {
                    let row = ty * patch_size + pr;
                    let col = tx * patch_size + pc;
                    if row < h && col < w {
                        values[row * w + col] = score;
                    }
                }
            }
        }
    }
    Ok(GrayBuffer {
        width: w,
        height: h,
        values,
    })
}

/// Weights of the four loss terms; all default to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub content: f64,
    pub appearance: f64,
    pub recon: f64,
    pub msd: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            content: 1.0,
            appearance: 1.0,
            recon: 1.0,
            msd: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("content", self.content),
            ("appearance", self.appearance),
            ("recon", self.recon),
            ("msd", self.msd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} weight {v} must be finite and nonnegative"
                )));
            }
        }
        Ok(())
    }
}

/// Weighted sum of the four training losses.
pub fn total_loss(
    content: f64,
    appearance: f64,
    recon: f64,
    msd_generator: f64,
    weights: &LossWeights,
) -> Result<f64> {
    weights.validate()?;
    for (name, v) in [
        ("content", content),
        ("appearance", appearance),
        ("recon", recon),
        ("msd_generator", msd_generator),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("{name} loss {v} is not finite")));
        }
    }
    Ok(weights.content * content
        + weights.appearance * appearance
        + weights.recon * recon
        + weights.msd * msd_generator)
}
