//! Reverse-mode differentiation, parameters, optimizer and gradient checking.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{dropout, linear, Mode};
pub use params::{ParamId, ParamKind, Parameter, ParameterStore};
pub use tape::{Gradients, Mat, Tape, Var};
