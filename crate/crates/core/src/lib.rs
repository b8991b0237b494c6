//! Adaptive wavelet network for non-stationary time series.
//!
//! The pipeline splits each window into a moving-average trend and a seasonal
//! residual. The seasonal part runs through a stack of learnable lifting
//! steps, its coarsest approximation is mixed across channels by
//! self-attention, and learned inverse lifting steps rebuild the seasonal
//! prediction. The trend part goes through per-cluster linear heads whose
//! channel groups come from k-means. The two predictions are summed.
//!
//! Everything runs on a small f64 reverse-mode autodiff engine in [`tensor`].

pub mod attention;
pub mod bench;
pub mod data;
pub mod decomposition;
pub mod error;
pub mod grouped_linear;
pub mod lifting;
pub mod model;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
