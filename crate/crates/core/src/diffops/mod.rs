//! Differentiable image kernels with hand-written adjoints.
//!
//! Each forward kernel has a matching `*_backward` that maps an upstream
//! gradient on the output to gradients on the inputs. All kernels are
//! generic over [`Real`](crate::Real) so they can be checked against
//! central differences in double precision.

mod charbonnier;
mod gradcheck;
mod gradients;
mod ssim;
mod warp;

pub use charbonnier::{charbonnier, charbonnier_backward, Charbonnier};
pub use gradcheck::{grad_check, GradCheckReport, GradOp, InputReport};
pub use gradients::{spatial_gradients, spatial_gradients_backward};
pub use ssim::{ssim_map, ssim_map_backward, SsimConfig};
pub use warp::{sample_bilinear, warp_bilinear, warp_bilinear_backward};
