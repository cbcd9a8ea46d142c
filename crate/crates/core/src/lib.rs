//! Semiclassical wave packets for one-dimensional Hartree equations.
//!
//! The crate builds coherent-state approximations
//! `eps^{-1/4} u(t, (x - x(t))/sqrt(eps)) exp(i (S(t) + xi(t)(x - x(t)))/eps)`
//! for `i eps d_t psi + eps^2/2 psi'' = V psi + eps^alpha (K * |psi|^2) psi`,
//! solves the exact problem with split-step Fourier methods, and measures how
//! the two differ as `eps -> 0`.

pub mod classical;
pub mod direct;
pub mod envelope;
pub mod error;
pub mod experiments;
pub mod packet;
mod propagate;
pub mod spectral;

pub use error::{Error, Result};
