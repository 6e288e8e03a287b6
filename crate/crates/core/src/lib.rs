//! Two-stage document image enhancement.
//!
//! A global stage ([`gppnet`]) regresses brightness, contrast and saturation
//! parameters from a fixed 224×224 thumbnail and applies them at full
//! resolution. A local stage ([`dblrnet`]) predicts per-pixel gain and offset
//! maps that are applied to a smoothed copy of the image. Both networks run on
//! the small reverse-mode autodiff engine in [`diffcore`].

pub mod dblrnet;
pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod gppnet;
pub mod imageio;
pub mod losses;
pub mod pipeline;
pub mod synthdoc;

pub use error::{Error, Result};
