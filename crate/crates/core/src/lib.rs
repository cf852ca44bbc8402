//! Score-distillation editing of voxel radiance fields with adaptive parameter perturbation.
//!
//! A source field is edited toward a target distribution (an analytic
//! mixture denoiser standing in for a text-conditioned diffusion model) by
//! probing the loss landscape, perturbing the parameters toward a random
//! initialization, running multi-view score distillation with an annealed
//! noise range, and refining with identity-preserving gradients.

#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::too_many_arguments,
    clippy::needless_range_loop
)]

pub mod checkpoint;
pub mod denoiser;
pub mod distill;
pub mod error;
pub mod field;
pub mod image;
pub mod io;
pub mod ipg;
pub mod oracles;
pub mod pipeline;
pub mod probe;
pub mod render;
pub mod scenario;

pub use error::{PnrError, Result};
pub use field::{Bbox, FieldParams, GridDims, InitDistribution};
pub use image::Image;
