//! Dense real-array values with reverse-mode automatic differentiation.
//!
//! The graph is define-by-run: every operation on gradient-tracking inputs
//! records its parents and a backward closure on the result node. Calling
//! [`Value::backward`] on a scalar root walks the reachable subgraph once in
//! reverse topological order and accumulates `∂root/∂node` into each
//! gradient-tracking node. Accumulation is additive: a second backward pass
//! without [`Value::zero_grad`] doubles the stored gradients.
//!
//! Shape rules are strict (no implicit broadcasting beyond the fused ops
//! provided here); mismatches panic with a message naming both shapes.
//! Data-dependent failures (non-finite gradients, malformed checkpoints)
//! return `Result` from the operations that can detect them.
//!
//! Everything is 64-bit. Values are immutable after construction; the only
//! sanctioned mutation is the optimizer updating parameter data between
//! graphs and `zero_grad` clearing accumulated gradients.

mod adam;
mod nn;
mod ops;
mod params;
#[cfg(test)]
mod tests;
mod value;

pub use adam::{Adam, AdamConfig};
pub use nn::{
    lstm_step, sinusoidal_embedding, Activation, Affine, LayerNorm, LstmCell, Mlp,
};
pub use ops::concat;
pub use params::ParamSet;
pub use value::Value;
