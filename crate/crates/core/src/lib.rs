//! Orientation-aware interaction-based deep material network.
//!
//! Offline, a binary tree of laminate interactions with rotated cubic
//! material nodes is fitted to homogenized elastic stiffness data. Online,
//! the fitted network is driven by a macroscopic deformation gradient with
//! finite-strain local laws at every node, giving homogenized stress,
//! consistent tangent and the evolution of node orientations.

pub mod error;
pub mod homogenizer;
pub mod io;
pub mod material;
pub mod network;
pub mod solver;
pub mod tape;
pub mod tensor;
pub mod texture;
pub mod trainer;

pub use error::{Error, Result};
