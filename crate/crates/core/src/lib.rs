//! Hierarchical recurrent sequence-to-sequence sleep staging.
//!
//! The pipeline runs raw multichannel 30-second epochs through a log-power
//! spectrogram frontend ([`tfr`]), channel-specific learnable filterbanks
//! ([`filterbank`]), an attention-pooled bidirectional GRU per epoch
//! ([`recurrent`], [`attention`]) and a sequence-level bidirectional GRU with
//! per-step softmax outputs ([`model`]). Overlapping-window posteriors are fused
//! in the log domain and scored by [`eval`]. All gradients come from the small
//! reverse-mode engine in [`diffcore`].

pub mod attention;
pub mod diffcore;
pub mod error;
pub mod eval;
pub mod filterbank;
pub mod harness;
pub mod model;
pub mod recurrent;
pub mod stage;
pub mod tfr;

pub use error::{Error, Result};
pub use stage::Stage;

/// Floor added before every logarithm of a power or probability.
pub const EPS_FLOOR: f64 = 1e-12;
