pub mod evaluate;
pub mod predict;
pub mod preprocess;
pub mod train;

use anyhow::Result;
use cardiolens_core::imgproc::{resize_bilinear, GrayImage};

/// Resizes an image to the model's square input size when needed.
pub fn fit_to(img: &GrayImage, side: usize) -> Result<GrayImage> {
    if img.width() == side && img.height() == side {
        Ok(img.clone())
    } else {
        Ok(resize_bilinear(img, (side, side))?)
    }
}
