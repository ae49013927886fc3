//! Radiograph enhancement: intensity transforms, linear filters, edge
//! detection, and mathematical morphology.
//!
//! Every function here is a pure function of its inputs and safe to call
//! concurrently on shared read-only images.

mod edge;
mod filter;
mod gray;
mod morph;
mod preprocess;

pub use edge::{canny, sobel_gradients, SobelGradients};
pub use filter::{convolve2d, log_intensity_statistic, sharpen, Kernel};
pub use gray::{
    equalize_histogram, resize_bilinear, to_grayscale, FloatGrid, GrayImage, RgbImage,
};
pub(crate) use gray::sample_bilinear;
pub use morph::{
    close, dilate, erode, open, opening_by_reconstruction, reconstruct_by_dilation,
    reconstruct_by_dilation_counted, StructuringElement,
};
pub use preprocess::{preprocess, preprocess_gray, PreprocessConfig, PreprocessOutput, PreprocessReport};

/// Errors from image construction and the preprocessing operations.
#[derive(Debug, thiserror::Error)]
pub enum ImgProcError {
    #[error("image dimensions must be at least 1x1")]
    EmptyImage,
    #[error("resize target must be at least 1x1")]
    EmptyTarget,
    #[error("expected {expected} values, got {actual}")]
    DataLength { expected: usize, actual: usize },
    #[error("intensity level count {0} is below 2")]
    BadLevels(u32),
    #[error("kernel sides must be odd, got {width}x{height}")]
    EvenKernel { width: usize, height: usize },
    #[error("image {width}x{height} is smaller than the filter kernel")]
    ImageSmallerThanKernel { width: usize, height: usize },
    #[error("thresholds must satisfy 0 <= low < high, got low {low}, high {high}")]
    BadThresholds { low: f64, high: f64 },
    #[error("structuring element anchor lies outside the grid")]
    AnchorOutOfBounds,
    #[error("structuring element anchor cell must be set")]
    AnchorNotSet,
    #[error("marker exceeds mask; geodesic reconstruction needs marker <= mask")]
    MarkerExceedsMask,
    #[error("dimension mismatch: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("preprocess target {0:?} is below the 8x8 minimum")]
    TargetTooSmall((usize, usize)),
    #[error("sharpen strength must be nonnegative, got {0}")]
    NegativeSharpen(f64),
}
