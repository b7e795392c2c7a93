//! Regularization-free factored gradient descent for low-rank matrix
//! estimation, together with the diagnostics that certify why it works:
//! alignment oracles, benign-penalty gradients, augmented-Hessian curvature
//! checks, noise functionals, and contraction-rate fitting.
//!
//! The estimation problem is min over factors of L(U V^T) (or L(Z Z^T) in
//! the symmetric model) for a pluggable loss L; three losses are bundled
//! (quadratic denoising, matrix sensing, Bernoulli logistic). The descent
//! engine runs the plain factored updates with a constant step size; the
//! diagnostics modules turn the supporting landscape analysis into runnable
//! numeric certificates.

pub mod align;
pub mod descent;
pub mod diagnostics;
pub mod error;
pub mod loss;
pub mod matrix;
pub mod penalty;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::{FactorPoint, GroundTruth, Mat, Mode};
