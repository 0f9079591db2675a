//! Simulation of a time-multiplexed photonic convolutional neural network.
//!
//! Kernel matrices are factored into rotation meshes ([`reck`],
//! [`photonic`]), images are streamed patch by patch through them ([`cnn`]),
//! delay lines reassemble each layer's outputs into the next layer's patches
//! ([`delayline`]), and [`energy`] holds the optical, electronic and hybrid
//! energy models. [`io`] covers the dataset and artifact formats.

pub mod cnn;
pub mod delayline;
pub mod energy;
pub mod error;
pub mod exec;
pub mod io;
pub mod linalg;
pub mod photonic;
pub mod reck;

pub use error::{Error, Result};
pub use exec::Execution;
pub use linalg::Matrix;
