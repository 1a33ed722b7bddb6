//! Differentiable building blocks shared by every network stage.

pub mod layers;
pub mod params;
pub mod tape;

pub use layers::{Linear, Mlp};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, RowMix, Tape, Var};
