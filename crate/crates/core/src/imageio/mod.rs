//! Image buffers, file formats, resampling and the three global color filters.

pub mod buffer;
pub mod filters;
pub mod io;

pub use buffer::{ImageBuffer, ResizeMethod, GRAY_WEIGHTS};
pub use filters::{apply_filter, filter, gray, FilterKind, ParamSet};
pub use io::{load_image, save_image};
