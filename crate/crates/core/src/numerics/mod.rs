//! Dense fp64 tensors, a recording tape for reverse-mode gradients, and a
//! finite-difference checker.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{finite_diff_check, gradcheck, GradCheck};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{Backward, Tape, Var};
pub use tensor::{matvec, sigmoid, softmax, tanh_act, Tensor};

pub(crate) use tensor::{dot, log_sum_exp, matvec_into, sigmoid_scalar, softmax_slice, tanh_scalar};

/// Seedable PCG generator used for every stochastic operation.
pub type Rng = rand_pcg::Pcg64;

pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
