//! Lasso, Adaptive Lasso, Group Lasso and Adaptive Group Lasso solution paths
//! with unbiased degrees-of-freedom estimates, Monte Carlo / divergence oracles,
//! and information-criterion model selection.

pub mod dof;
pub mod error;
pub mod experiments;
pub mod model;
pub mod numkit;
pub mod oracle;
pub mod selection;
pub mod solvers;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};
