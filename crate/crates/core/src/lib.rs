//! Geometry-aware appearance transfer between images via optimal transport.
//!
//! The crate maps the color distribution of a source image onto a target's
//! by solving discrete Kantorovich problems over augmented per-pixel
//! features (color, position, normal), either with entropic regularization,
//! an exact small-instance solver, or a neural dual-trained transport map.
//! It also ships the mix-mask segmentation-game losses and the evaluation
//! metrics used to score transfers.
//!
//! Modules:
//! - [`image_io`]: PNG/PPM loading and saving, geometry-map validation.
//! - [`features`]: augmented pixel features and weighted point clouds.
//! - [`ot`]: Sinkhorn and exact transportation-simplex solvers.
//! - [`neural`]: manual-backprop networks, W1 dual estimation, transport
//!   map training.
//! - [`transfer`]: the end-to-end pipeline.
//! - [`mixgame`]: mix-masks, image mixing, masked critic losses.
//! - [`metrics`]: SSIM (whole/edge), Gram and content losses, histogram
//!   Wasserstein distance.

pub mod error;
pub mod features;
pub mod image_io;
pub mod metrics;
pub mod mixgame;
pub mod neural;
pub mod ot;
pub mod parallel;
pub mod rng;
pub mod transfer;

pub use error::{Error, Result};
pub use features::{
    assign_to_cloud, build_augmented_features, quantize_to_cloud, AugmentedPixelFeature,
    WeightedPointCloud,
};
pub use image_io::{load_image, save_image, GeometryMaps, ImageBuffer};
pub use metrics::{
    content_loss, edge_map, gram_loss, histogram_w_distance, ssim, ssim_edge, FeatureBank,
    MetricReport,
};
pub use mixgame::{generate_mix_mask, mix_images, msd_loss, total_loss, LossWeights, MixMask};
pub use neural::{
    estimate_w1, train_notpe, transport_sample, ConditionVector, SampleSet, SmallDenseNetwork,
    TrainConfig,
};
pub use ot::{
    cost_matrix, exact_ot_small, plan_cost, sinkhorn, CostKind, CostMatrix, TransportPlan,
};
pub use transfer::{
    apply_mapping, barycentric_map, transfer_appearance, TransferMethod, TransferOptions,
    TransferReport,
};
