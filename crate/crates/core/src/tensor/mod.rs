//! Numerical primitives: image and coefficient containers, strided
//! convolutional analysis/synthesis as an exact adjoint pair,
//! soft-thresholding, unit-ball projection and spectral norm estimation.
//!
//! Geometry: a filter of size `p` is anchored at offset `c = (p - 1) / 2`.
//! Analysis is zero-padded "same" correlation evaluated on the stride grid,
//!
//! ```text
//! z[j, a, b] = sum_{u, v} w[j, u, v] * x[a*s + u - c, b*s + v - c]
//! ```
//!
//! producing `ceil(H/s) x ceil(W/s)` coefficients per channel. Synthesis is
//! the exact transpose of that map, including the boundary truncation.

mod conv;
mod prox;
mod spectral;
mod types;

pub use conv::{
    conv_analysis, conv_analysis_counted, conv_macs, conv_synthesis, conv_synthesis_counted,
    conv_synthesis_into, filter_gradient, grid_len,
};
pub use prox::{project_unit_ball, project_unit_ball_in_place, soft_threshold, soft_threshold_in_place};
pub use spectral::{spectral_norm, PowerIteration};
pub use types::{CoeffMap, FilterBank, Image};
