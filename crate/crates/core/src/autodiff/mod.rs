//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Operations are recorded on a [`Tape`] as they are evaluated. Parameters live
//! in a [`ParamStore`] and are bound to a tape per forward pass; a parameter
//! bound without tracking behaves as a constant, which is how freezing works.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, DEFAULT_EPSILON};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{stable_softmax_in_place, NodeId, Tape, Var};
