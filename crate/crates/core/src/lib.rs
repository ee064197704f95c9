//! Inverse-consistent deformable registration of 3D volumes.
//!
//! A single encoder feeds two decoders that predict a forward flow
//! (source to target) and a backward flow (target to source) in one pass.
//! Both flows are trained jointly with reciprocal local cross-correlation
//! terms and an L1 round-trip penalty. Everything needed to train, register
//! and evaluate lives here: the volume containers and file formats, a
//! differentiable trilinear warp, the losses with exact adjoints, the
//! network with hand-written backpropagation, a network-free field optimizer,
//! Dice/BIR metrics and a synthetic ground-truth generator.
//!
//! All arithmetic runs in `f64`. Parallel kernels only ever write disjoint
//! outputs and keep every reduction serial, so results are bitwise
//! independent of the number of threads.

pub mod cli;
pub mod error;
pub mod fieldopt;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod train;
pub mod volume;
pub mod warp;

pub use error::{Error, Result};
pub use loss::{LossConfig, LossReport};
pub use net::{Network, NetworkConfig};

pub use volume::{FlowField3, LabelVolume3, Volume3, VolumeHeader};
