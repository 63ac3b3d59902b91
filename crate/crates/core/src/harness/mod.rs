//! Estimation, fitting and the experiment runners.

pub mod estimate;
pub mod experiments;
pub mod fit;
