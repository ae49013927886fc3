//! Sobel gradients and the Canny edge detector.

use super::filter::{convolve2d, Kernel};
use super::gray::{FloatGrid, GrayImage};
use super::ImgProcError;

/// Sobel gradient pair plus the two scalar edge-energy summaries.
#[derive(Debug, Clone)]
pub struct SobelGradients {
    /// Response to intensity change down the rows (horizontal edges).
    pub row_grad: FloatGrid,
    /// Response to intensity change across the columns (vertical edges).
    pub col_grad: FloatGrid,
    /// `sum(row_grad^2) / sqrt(N)`.
    pub edge_energy_e1: f64,
    /// `(sum(col_grad) / N)^3`.
    pub edge_energy_e2: f64,
}

fn sobel_row_kernel() -> Kernel {
    Kernel::new(3, 3, vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0]).unwrap()
}

fn sobel_col_kernel() -> Kernel {
    Kernel::new(3, 3, vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0]).unwrap()
}

/// Computes both 3x3 Sobel responses (replicate border) and the edge-energy
/// scalars derived from them.
pub fn sobel_gradients(img: &GrayImage) -> Result<SobelGradients, ImgProcError> {
    if img.width() < 3 || img.height() < 3 {
        return Err(ImgProcError::ImageSmallerThanKernel {
            width: img.width(),
            height: img.height(),
        });
    }
    let row_grad = convolve2d(img, &sobel_row_kernel());
    let col_grad = convolve2d(img, &sobel_col_kernel());
    let n = img.pixel_count() as f64;
    let edge_energy_e1 = row_grad.data().iter().map(|g| g * g).sum::<f64>() / n.sqrt();
    let edge_energy_e2 = (col_grad.data().iter().sum::<f64>() / n).powi(3);
    Ok(SobelGradients { row_grad, col_grad, edge_energy_e1, edge_energy_e2 })
}

/// Canny edge detection: Gaussian 5x5 smoothing, Sobel magnitude/direction,
/// non-maximum suppression, double threshold, and hysteresis over
/// 8-connected neighborhoods. Output pixels are 0 or `levels - 1`.
pub fn canny(img: &GrayImage, low: f64, high: f64) -> Result<GrayImage, ImgProcError> {
    if !(low >= 0.0 && low < high) {
        return Err(ImgProcError::BadThresholds { low, high });
    }
    let smoothed = convolve2d(img, &Kernel::gaussian_5x5()).into_gray(img.levels());
    let row_grad = convolve2d(&smoothed, &sobel_row_kernel());
    let col_grad = convolve2d(&smoothed, &sobel_col_kernel());

    let (w, h) = (img.width(), img.height());
    let mut magnitude = FloatGrid::zeros(w, h);
    for row in 0..h {
        for col in 0..w {
            magnitude.set(row, col, row_grad.get(row, col).hypot(col_grad.get(row, col)));
        }
    }

    let thinned = non_maximum_suppression(&magnitude, &row_grad, &col_grad);
    Ok(hysteresis(&thinned, low, high, img.levels()))
}

/// Keeps a pixel only if its magnitude dominates both neighbors along the
/// quantized gradient direction. Ties keep exactly one of the pair (the
/// earlier pixel in scan order) so a symmetric step yields a 1-pixel line.
fn non_maximum_suppression(magnitude: &FloatGrid, row_grad: &FloatGrid, col_grad: &FloatGrid) -> FloatGrid {
    let (w, h) = (magnitude.width(), magnitude.height());
    let mut out = FloatGrid::zeros(w, h);
    for row in 0..h {
        for col in 0..w {
            let m = magnitude.get(row, col);
            if m == 0.0 {
                continue;
            }
            let gr = row_grad.get(row, col);
            let gc = col_grad.get(row, col);
            let mut angle = gr.atan2(gc).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            // Offsets along the gradient direction, quantized to 45 degrees.
            let (dr, dc) = if !(22.5..157.5).contains(&angle) {
                (0isize, 1isize) // horizontal gradient, vertical edge
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let before = sample_or_zero(magnitude, row as isize - dr, col as isize - dc);
            let after = sample_or_zero(magnitude, row as isize + dr, col as isize + dc);
            if m >= before && m > after {
                out.set(row, col, m);
            }
        }
    }
    out
}

fn sample_or_zero(grid: &FloatGrid, row: isize, col: isize) -> f64 {
    if row < 0 || col < 0 || row >= grid.height() as isize || col >= grid.width() as isize {
        0.0
    } else {
        grid.get(row as usize, col as usize)
    }
}

fn hysteresis(thinned: &FloatGrid, low: f64, high: f64, levels: u32) -> GrayImage {
    let (w, h) = (thinned.width(), thinned.height());
    let max = (levels - 1) as f64;
    let mut out = GrayImage::constant(w, h, 0.0);
    let mut stack: Vec<(usize, usize)> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            if thinned.get(row, col) >= high && out.get(row, col) == 0.0 {
                out.set(row, col, max);
                stack.push((row, col));
                while let Some((r, c)) = stack.pop() {
                    for dr in -1isize..=1 {
                        for dc in -1isize..=1 {
                            let (nr, nc) = (r as isize + dr, c as isize + dc);
                            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                                continue;
                            }
                            let (nr, nc) = (nr as usize, nc as usize);
                            if out.get(nr, nc) == 0.0 && thinned.get(nr, nc) >= low {
                                out.set(nr, nc, max);
                                stack.push((nr, nc));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
