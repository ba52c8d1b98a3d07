//! Moving-speaker multichannel separation toolkit.
//!
//! The crate simulates moving-source mixtures in shoebox rooms, implements the
//! PS2 dual-branch separation network on a reverse-mode tape with verified
//! gradients, and carries the matching evaluation and sensitivity-analysis
//! machinery.

pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod params;
pub mod room;
pub mod sensitivity;
pub mod signal;
pub mod tensor;
pub mod train;
pub mod wav;

pub use signal::{ComplexSpectrogram, StftConfig, Waveform};
pub use tensor::{Scalar, Tape, Tensor, Var};
