//! Minimal dense-network engine: parameters, forward primitives,
//! reverse-mode gradients and Adam.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig, StepOutcome};
pub use checkpoint::Checkpoint;
pub use mlp::{fourier_encode, forward, forward_with_tangents, mlp_forward};
pub use params::{Activation, MlpSpec, ParameterBlock};
pub use tape::{Gradients, Tape, Var};
