//! Isotropic stochastic Lagrangian flows on the sphere: divergence-free
//! spectral bases, isotropic kernels, flow integration, and the distance and
//! rotation processes of coupled particles.

pub mod basis;
pub mod config;
pub mod distance;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod identities;
pub mod kernel_table;
pub mod kernels;
pub mod quadrature;
pub mod rng;
pub mod rotation;

pub use error::{Error, Result};
