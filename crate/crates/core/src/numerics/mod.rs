//! Dense-tensor math with reverse-mode differentiation, the recurrent and
//! attention layer vocabulary, an Adam optimizer and a finite-difference
//! gradient checker. Every module above this one composes these primitives.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{GradCheckReport, DELTA, TOLERANCE};
pub use params::{ParamStore, Session};
pub use tape::{NodeId, Tape, PROB_CLIP};
pub use tensor::Tensor;
