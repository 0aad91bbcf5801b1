//! Dense tensors, small linear algebra, the AMSGrad optimizer, and a
//! finite-difference gradient oracle shared by all training modules.

mod amsgrad;
mod finitediff;
mod linalg;
mod rng;
mod tensor;

pub use amsgrad::{AmsGradHyper, AmsGradState};
pub use finitediff::finite_diff_grad;
pub use linalg::{least_squares, numerical_rank, solve_spd_small, GRAM_CONDITION_LIMIT};
pub use rng::{seeded_rng, split_seed, Rng64};
pub use tensor::Tensor;
