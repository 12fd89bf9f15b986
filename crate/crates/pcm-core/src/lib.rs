//! Objective-function approximation for amortized optimization built around
//! a parameterized convex minorant: a log-sum-exp network that is convex in
//! the optimization variable lower-bounds an expressive approximator, so the
//! approximator's global minimizer comes from a single convex optimization.
//!
//! Modules:
//! - [`numerics`]: log-sum-exp/softmax kernels, Adam, finite differences, RNG streams.
//! - [`approximators`]: FNN, max-affine, LSE, parameterized LSE (+variant), DLSE.
//! - [`solve`]: box-constrained projected Newton, DCA, multistart, grid oracle.
//! - [`implicit`]: minimizer gradients through the convex solve.
//! - [`pcm`]: the minorant-plus-gap model, training, metrics.
//! - [`gcm`]: discrete greatest-convex-minorant oracle for property tests.
//! - [`wingrock`]: wing-rock dynamics, NMPC objective, datasets, simulation.
//! - [`checkpoint`]: bitwise-exact model serialization.
//! - [`check`]: reusable gradient/property suites behind the CLI reports.

pub mod approximators;
pub mod check;
pub mod checkpoint;
pub mod gcm;
pub mod implicit;
pub mod numerics;
pub mod pcm;
pub mod solve;
pub mod wingrock;
