//! Safe exploration by constraint-manifold action mapping.
//!
//! A policy picks coordinates `alpha` in the tangent space of the constraint
//! manifold; [`controller::AtacomController`] maps them to actions that keep
//! inequality constraints satisfied, using slack variables to turn them into
//! equalities.

pub mod constraints;
pub mod controller;
pub mod envs;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod learn;
pub mod slack;
pub mod systems;
pub mod tangent;

pub use error::{Error, Result};
