//! Neural Wasserstein machinery: small dense networks with manual
//! backpropagation, dual-objective distance estimation with weight clipping,
//! and adversarial training of a conditional transport map.

mod checkpoint;
mod dual;
mod net;

pub use checkpoint::{load_network, save_network, CHECKPOINT_FORMAT};
pub use dual::{
    estimate_w1, train_notpe, transport_sample, ConditionVector, SampleSet, TrainConfig,
    HIDDEN_WIDTH,
};
pub use net::{Activation, ForwardTrace, Gradients, Layer, RmsProp, SmallDenseNetwork};
