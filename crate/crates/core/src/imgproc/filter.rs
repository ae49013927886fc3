//! Linear filtering: kernels, correlation, and sharpening.

use super::gray::{FloatGrid, GrayImage};
use super::ImgProcError;

/// Odd-sided filter kernel anchored at its center cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    width: usize,
    height: usize,
    coefficients: Vec<f64>,
}

impl Kernel {
    pub fn new(width: usize, height: usize, coefficients: Vec<f64>) -> Result<Self, ImgProcError> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) || width == 0 || height == 0 {
            return Err(ImgProcError::EvenKernel { width, height });
        }
        if coefficients.len() != width * height {
            return Err(ImgProcError::DataLength {
                expected: width * height,
                actual: coefficients.len(),
            });
        }
        Ok(Self { width, height, coefficients })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.coefficients[row * self.width + col]
    }

    /// 4-neighbor Laplacian `[[0,1,0],[1,-4,1],[0,1,0]]`.
    pub fn laplacian_4() -> Self {
        Self::new(3, 3, vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]).unwrap()
    }

    /// Identity (delta) kernel of the given odd side length.
    pub fn delta(side: usize) -> Result<Self, ImgProcError> {
        let mut coefficients = vec![0.0; side * side];
        coefficients[(side / 2) * side + side / 2] = 1.0;
        Self::new(side, side, coefficients)
    }

    /// Normalized 5x5 Gaussian (sigma 1.4), the smoothing stage of edge
    /// detection.
    pub fn gaussian_5x5() -> Self {
        let sigma = 1.4f64;
        let mut coefficients = Vec::with_capacity(25);
        for r in -2i32..=2 {
            for c in -2i32..=2 {
                let d2 = (r * r + c * c) as f64;
                coefficients.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        let sum: f64 = coefficients.iter().sum();
        for v in &mut coefficients {
            *v /= sum;
        }
        Self::new(5, 5, coefficients).unwrap()
    }
}

/// Cross-correlation of `img` with `k` (no kernel flip), replicate border.
///
/// Output pixel `(y, x)` is `sum_{i,j} I(y + i, x + j) * K(i, j)` with the
/// kernel indices centered on its anchor. The result is unclamped.
pub fn convolve2d(img: &GrayImage, k: &Kernel) -> FloatGrid {
    let (w, h) = (img.width(), img.height());
    let (ar, ac) = (k.height() as isize / 2, k.width() as isize / 2);
    let mut out = FloatGrid::zeros(w, h);
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for kr in 0..k.height() {
                for kc in 0..k.width() {
                    let sr = row as isize + kr as isize - ar;
                    let sc = col as isize + kc as isize - ac;
                    acc += img.get_clamped(sr, sc) * k.get(kr, kc);
                }
            }
            out.set(row, col, acc);
        }
    }
    out
}

/// Sum of `log(max(I, 1))` over all pixels, scaled by `1/sqrt(N)`.
///
/// This is the scalar `variance_v` of the preprocessing quality report; it
/// also drives the optional offset in [`sharpen`].
pub fn log_intensity_statistic(img: &GrayImage) -> f64 {
    let n = img.pixel_count() as f64;
    let sum: f64 = img.data().iter().map(|&v| v.max(1.0).ln()).sum();
    sum / n.sqrt()
}

/// Laplacian sharpening `I - k * laplacian(I)`, optionally offset by the
/// squared log-intensity statistic, clamped back into the image range.
pub fn sharpen(img: &GrayImage, k: f64, apply_v_offset: bool) -> GrayImage {
    let lap = convolve2d(img, &Kernel::laplacian_4());
    let offset = if apply_v_offset {
        let v = log_intensity_statistic(img);
        v * v
    } else {
        0.0
    };
    GrayImage::from_fn_with_levels(img.width(), img.height(), img.levels(), |row, col| {
        img.get(row, col) - k * lap.get(row, col) + offset
    })
}
