//! Dense tensor arithmetic with reverse-mode differentiation.
//!
//! Everything is 64-bit: Hamiltonian rollouts over 20-30 steps amplify
//! rounding noise and the finite-difference gradient oracle needs headroom.
//! The [`Tape`] is rebuilt per forward pass (define-by-run) because molecule
//! sizes vary per sample; tensors are immutable after construction, so a
//! shared read-only [`ParamSet`] can back any number of concurrent tapes.

mod gradcheck;
mod params;
mod rng;
mod svd3;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_wrt, scalar_fn, GradCheckError};
pub use params::{
    init_params, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, GradSet, ParamSet,
    CHECKPOINT_FORMAT_VERSION,
};
pub use rng::Rng;
pub use svd3::{svd3_decompose, Svd3Error};
pub use tape::{Grads, Tape, Var};
pub use tensor::Tensor;
