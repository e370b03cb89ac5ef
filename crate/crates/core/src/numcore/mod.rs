//! Minimal dense-tensor reverse-mode autodiff with seeded randomness,
//! Xavier initialization, Adam, and a finite-difference oracle. Everything
//! runs in f64; exact oracle comparisons matter more than speed here.

mod adam;
mod fd;
mod init;
mod rng;
mod tensor;

pub use adam::Adam;
pub use fd::finite_difference_gradient;
pub use init::xavier_init;
pub use rng::Rng;
pub use tensor::{logsumexp_slice, sigmoid, softplus, Tensor};
