//! Maximum Covariance Unfolding regression: covariate-aware nonlinear
//! dimension reduction for point-cloud responses, linear regression on
//! the learned embedding, and inverse process optimization recovering
//! control settings that reproduce a nominal shape.

pub mod data;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod io_util;
pub mod optimize;
pub mod pipeline;
pub mod regress;
pub mod sdp;
pub mod unfold;

pub use error::{McuError, Result};
