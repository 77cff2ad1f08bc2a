//! Numerical machinery for fully nonlinear integro-differential equations
//! with comparable-to-power-law jump kernels: extremal (Pucci-type)
//! operators with and without gradient truncation, radial barrier
//! construction and certification, concave envelopes with contact-set and
//! cube-decomposition diagnostics, a monotone explicit solver, and the
//! measurement harness built on top of them.

pub mod abp;
pub mod barrier;
pub mod envelope;
pub mod error;
pub mod geom;
pub mod grid;
pub mod kernel;
pub mod measure;
pub mod operator;
pub mod quad;
pub mod radial;
pub mod solver;

pub use error::{Error, Result};
