//! Run configuration: defaults, overridden by an optional JSON config file,
//! overridden by command-line flags. Unknown keys in the file are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use appearance_ot::error::{Error, Result};
use appearance_ot::mixgame::LossWeights;
use appearance_ot::neural::TrainConfig;
use appearance_ot::transfer::{TransferMethod, TransferOptions};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub method: Option<String>,
    pub max_points: Option<usize>,
    pub epsilon: Option<f64>,
    pub position_weight: Option<f64>,
    pub normal_weight: Option<f64>,
    pub seed: Option<u64>,
    pub smoothing_radius: Option<usize>,
    pub sinkhorn_max_iter: Option<usize>,
    pub sinkhorn_tol: Option<f64>,
    pub learning_rate: Option<f64>,
    pub critic_steps: Option<usize>,
    pub total_iterations: Option<usize>,
    pub batch_size: Option<usize>,
    pub clip_bound: Option<f64>,
    pub loss_weights: Option<LossWeightsConfig>,
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeightsConfig {
    pub content: f64,
    pub appearance: f64,
    pub recon: f64,
    pub msd: f64,
}

impl Default for LossWeightsConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        LossWeightsConfig {
            content: w.content,
            appearance: w.appearance,
            recon: w.recon,
            msd: w.msd,
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            action: "read",
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved configuration, echoed verbatim into reports.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub method: String,
    pub max_points: usize,
    pub epsilon: f64,
    pub position_weight: f64,
    pub normal_weight: f64,
    pub seed: u64,
    pub smoothing_radius: usize,
    pub sinkhorn_max_iter: usize,
    pub sinkhorn_tol: f64,
    pub learning_rate: f64,
    pub critic_steps: usize,
    pub total_iterations: usize,
    pub batch_size: usize,
    pub clip_bound: f64,
    pub loss_weights: LossWeightsConfig,
}

/// Flag-level overrides collected from the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<TransferMethod>,
    pub max_points: Option<usize>,
    pub epsilon: Option<f64>,
    pub position_weight: Option<f64>,
    pub normal_weight: Option<f64>,
    pub seed: Option<u64>,
    pub smoothing_radius: Option<usize>,
    pub total_iterations: Option<usize>,
}

/// defaults <- file <- flags.
pub fn resolve(file: &FileConfig, flags: &Overrides) -> Result<ResolvedConfig> {
    let method = match (&flags.method, &file.method) {
        (Some(m), _) => *m,
        (None, Some(name)) => TransferMethod::from_name(name)?,
        (None, None) => TransferMethod::Sinkhorn,
    };
    let base = TransferOptions::new(method);
    let train = TrainConfig::default();
    Ok(ResolvedConfig {
        method: method.name().to_string(),
        max_points: flags.max_points.or(file.max_points).unwrap_or(base.max_points),
        epsilon: flags.epsilon.or(file.epsilon).unwrap_or(base.epsilon),
        position_weight: flags
            .position_weight
            .or(file.position_weight)
            .unwrap_or(base.position_weight),
        normal_weight: flags
            .normal_weight
            .or(file.normal_weight)
            .unwrap_or(base.normal_weight),
        seed: flags.seed.or(file.seed).unwrap_or(0),
        smoothing_radius: flags
            .smoothing_radius
            .or(file.smoothing_radius)
            .unwrap_or(base.smoothing_radius),
        sinkhorn_max_iter: file.sinkhorn_max_iter.unwrap_or(base.sinkhorn_max_iter),
        sinkhorn_tol: file.sinkhorn_tol.unwrap_or(base.sinkhorn_tol),
        learning_rate: file.learning_rate.unwrap_or(train.learning_rate),
        critic_steps: file.critic_steps.unwrap_or(train.critic_steps),
        total_iterations: flags
            .total_iterations
            .or(file.total_iterations)
            .unwrap_or(train.total_iterations),
        batch_size: file.batch_size.unwrap_or(train.batch_size),
        clip_bound: file.clip_bound.unwrap_or(train.clip_bound),
        loss_weights: file.loss_weights.unwrap_or_default(),
    })
}

impl ResolvedConfig {
    pub fn transfer_options(&self) -> Result<TransferOptions> {
        let method = TransferMethod::from_name(&self.method)?;
        let options = TransferOptions {
            method,
            max_points: self.max_points,
            epsilon: self.epsilon,
            position_weight: self.position_weight,
            normal_weight: self.normal_weight,
            seed: self.seed,
            smoothing_radius: self.smoothing_radius,
            sinkhorn_max_iter: self.sinkhorn_max_iter,
            sinkhorn_tol: self.sinkhorn_tol,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                critic_steps: self.critic_steps,
                total_iterations: self.total_iterations,
                batch_size: self.batch_size,
                clip_bound: self.clip_bound,
                seed: self.seed,
            },
        };
        options.validate()?;
        let weights = LossWeights {
            content: self.loss_weights.content,
            appearance: self.loss_weights.appearance,
            recon: self.loss_weights.recon,
            msd: self.loss_weights.msd,
        };
        weights.validate()?;
        Ok(options)
    }
}
