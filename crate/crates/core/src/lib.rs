//! Snapshot matching of discretized surfaces by kernel-generated flows.
//!
//! A grid `x⁰` is carried through a sequence of target snapshots `y¹ … y^L`
//! by velocity fields spanned by Gaussian kernels centred on `x⁰`. The
//! matching cost balances kinetic energy against a kernel disparity between
//! each moved grid and its snapshot; [`osa::solve`] minimizes it by
//! Douglas–Rachford splitting and [`baseline::solve_gd`] by plain gradient
//! descent.

pub mod baseline;
pub mod dynamics;
pub mod error;
pub mod kernel;
pub mod osa;
pub mod problem;
pub mod strain;
pub mod surface;
pub mod synth;

pub type Point = nalgebra::Vector3<f64>;

pub use error::{Error, Result};
pub use problem::{ProblemSettings, SnapshotProblem};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/dynamics.md")]
    mod dynamics {}
    #[doc = include_str!("../../../book/src/disparity.md")]
    mod disparity {}
    #[doc = include_str!("../../../book/src/splitting.md")]
    mod splitting {}
    #[doc = include_str!("../../../book/src/baseline.md")]
    mod baseline {}
    #[doc = include_str!("../../../book/src/strain.md")]
    mod strain {}
}
