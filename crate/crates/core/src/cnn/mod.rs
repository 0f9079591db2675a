//! Convolutional networks executed as a sequence of patch streams through
//! photonic interference units.

mod geometry;
mod network;
mod sweep;
mod train;

pub use geometry::{extract_patches, repatch, ImageTensor, LayerGeometry};
pub use network::{
    agreement, argmax_set, predicted_class, toy_network, LayerSpec, Network, NetworkSpec, WEIGHTS_VERSION,
};
pub use sweep::{median_by_sigma, perturbation_experiment, AgreementRow, SweepConfig};
pub use train::{initial_weights, mean_loss, train_reference, TrainConfig, TrainOutcome};
