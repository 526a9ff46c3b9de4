//! Adiabatic charge transport in slowly deformed crystals.
//!
//! The crate works fiberwise: a time-dependent periodic potential is expanded in plane waves,
//! each quasi-momentum k gives a small dense Hamiltonian H(k,t), and everything else
//! (curvatures, Chern numbers, super-adiabatic projectors, propagated densities, semiclassical
//! flows) is assembled from these fibers on a (k, t) mesh.

pub mod bands;
pub mod config;
pub mod dynamics;
pub mod fit;
pub mod geometry;
mod error;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod run;
pub mod semiclassics;
pub mod superadiabatic;
pub mod symmetry;

pub use error::{Error, Result};
pub use linalg::CMat;
pub use num_complex::Complex64 as C64;
