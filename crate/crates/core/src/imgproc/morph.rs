//! Grayscale mathematical morphology.
//!
//! Erosion is the minimum over the structuring-element support and dilation
//! the maximum over the reflected support, so the pair is dual under
//! complement and reduces to the usual set definitions on binary images.
//! Borders replicate: eroding an all-max image leaves it unchanged.

use super::gray::GrayImage;
use super::ImgProcError;

/// Binary probe shape with an anchor cell inside its grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuringElement {
    width: usize,
    height: usize,
    mask: Vec<bool>,
    anchor: (usize, usize),
}

impl StructuringElement {
    pub fn new(
        width: usize,
        height: usize,
        mask: Vec<bool>,
        anchor: (usize, usize),
    ) -> Result<Self, ImgProcError> {
        if mask.len() != width * height {
            return Err(ImgProcError::DataLength { expected: width * height, actual: mask.len() });
        }
        let (ar, ac) = anchor;
        if ar >= height || ac >= width {
            return Err(ImgProcError::AnchorOutOfBounds);
        }
        if !mask[ar * width + ac] {
            return Err(ImgProcError::AnchorNotSet);
        }
        Ok(Self { width, height, mask, anchor })
    }

    /// Fully set rectangle anchored at its center.
    pub fn rect(width: usize, height: usize) -> Result<Self, ImgProcError> {
        if width == 0 || height == 0 {
            return Err(ImgProcError::EmptyImage);
        }
        Self::new(width, height, vec![true; width * height], (height / 2, width / 2))
    }

    /// The default 3x3 fully set square.
    pub fn full_3x3() -> Self {
        Self::rect(3, 3).unwrap()
    }

    /// 4-neighborhood plus center.
    pub fn cross_3x3() -> Self {
        let mask = vec![false, true, false, true, true, true, false, true, false];
        Self::new(3, 3, mask, (1, 1)).unwrap()
    }

    /// Reflection through the anchor: offset `o` becomes `-o`.
    pub fn reflect(&self) -> Self {
        let mut mask = vec![false; self.mask.len()];
        let (ar, ac) = (self.anchor.0 as isize, self.anchor.1 as isize);
        for (dr, dc) in self.offsets() {
            let r = ar - dr;
            let c = ac - dc;
            // Reflected offsets stay inside a grid of the same size only when
            // the anchor is centered; grow the grid otherwise.
            if r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width {
                mask[r as usize * self.width + c as usize] = true;
            }
        }
        if self.offsets().count() == mask.iter().filter(|&&m| m).count() {
            Self { width: self.width, height: self.height, mask, anchor: self.anchor }
        } else {
            // Regenerate on a grid wide enough for every reflected offset.
            let offs: Vec<(isize, isize)> = self.offsets().map(|(r, c)| (-r, -c)).collect();
            Self::from_offsets(&offs)
        }
    }

    /// Builds the smallest element containing the given anchor-relative
    /// offsets; `(0, 0)` is added if absent so the anchor stays set.
    pub fn from_offsets(offsets: &[(isize, isize)]) -> Self {
        let mut offs: Vec<(isize, isize)> = offsets.to_vec();
        if !offs.contains(&(0, 0)) {
            offs.push((0, 0));
        }
        let min_r = offs.iter().map(|o| o.0).min().unwrap();
        let max_r = offs.iter().map(|o| o.0).max().unwrap();
        let min_c = offs.iter().map(|o| o.1).min().unwrap();
        let max_c = offs.iter().map(|o| o.1).max().unwrap();
        let height = (max_r - min_r + 1) as usize;
        let width = (max_c - min_c + 1) as usize;
        let anchor = ((-min_r) as usize, (-min_c) as usize);
        let mut mask = vec![false; width * height];
        for (r, c) in offs {
            mask[(r - min_r) as usize * width + (c - min_c) as usize] = true;
        }
        Self { width, height, mask, anchor }
    }

    /// Anchor-relative offsets of all set cells.
    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        let (ar, ac) = (self.anchor.0 as isize, self.anchor.1 as isize);
        self.mask.iter().enumerate().filter(|(_, &set)| set).map(move |(i, _)| {
            let r = (i / self.width) as isize;
            let c = (i % self.width) as isize;
            (r - ar, c - ac)
        })
    }
}

/// Grayscale erosion: minimum over the element support, replicate border.
pub fn erode(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    let offsets: Vec<(isize, isize)> = se.offsets().collect();
    GrayImage::from_fn_with_levels(img.width(), img.height(), img.levels(), |row, col| {
        offsets
            .iter()
            .map(|&(dr, dc)| img.get_clamped(row as isize + dr, col as isize + dc))
            .fold(f64::INFINITY, f64::min)
    })
}

/// Grayscale dilation: maximum over the reflected element support.
pub fn dilate(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    let offsets: Vec<(isize, isize)> = se.offsets().collect();
    GrayImage::from_fn_with_levels(img.width(), img.height(), img.levels(), |row, col| {
        offsets
            .iter()
            .map(|&(dr, dc)| img.get_clamped(row as isize - dr, col as isize - dc))
            .fold(f64::NEG_INFINITY, f64::max)
    })
}

/// Opening: erosion then dilation. Removes bright structures smaller than
/// the element; anti-extensive and idempotent.
pub fn open(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    dilate(&erode(img, se), se)
}

/// Closing: dilation then erosion. Fills dark structures smaller than the
/// element; extensive and idempotent.
pub fn close(img: &GrayImage, se: &StructuringElement) -> GrayImage {
    erode(&dilate(img, se), se)
}

/// Geodesic reconstruction by dilation: iterate
/// `marker <- min(dilate(marker, se), mask)` to the fixed point.
pub fn reconstruct_by_dilation(
    marker: &GrayImage,
    mask: &GrayImage,
    se: &StructuringElement,
) -> Result<GrayImage, ImgProcError> {
    reconstruct_by_dilation_counted(marker, mask, se).map(|(img, _)| img)
}

/// [`reconstruct_by_dilation`] that also reports how many geodesic dilation
/// sweeps ran before stabilizing.
pub fn reconstruct_by_dilation_counted(
    marker: &GrayImage,
    mask: &GrayImage,
    se: &StructuringElement,
) -> Result<(GrayImage, usize), ImgProcError> {
    if marker.width() != mask.width() || marker.height() != mask.height() {
        return Err(ImgProcError::DimensionMismatch {
            a: (marker.width(), marker.height()),
            b: (mask.width(), mask.height()),
        });
    }
    for (m, f) in marker.data().iter().zip(mask.data()) {
        if m > f {
            return Err(ImgProcError::MarkerExceedsMask);
        }
    }
    let mut current = marker.clone();
    let mut iterations = 0;
    loop {
        let dilated = dilate(&current, se);
        let next = GrayImage::from_fn_with_levels(mask.width(), mask.height(), mask.levels(), |r, c| {
            dilated.get(r, c).min(mask.get(r, c))
        });
        if next == current {
            return Ok((current, iterations));
        }
        current = next;
        iterations += 1;
    }
}

/// Opening by reconstruction: erode `n` times, then rebuild every surviving
/// structure to its full extent under the original image. `n = 0` returns
/// the input unchanged.
pub fn opening_by_reconstruction(
    img: &GrayImage,
    se: &StructuringElement,
    n: usize,
) -> GrayImage {
    let mut marker = img.clone();
    for _ in 0..n {
        marker = erode(&marker, se);
    }
    reconstruct_by_dilation(&marker, img, se)
        .expect("erosion is anti-extensive, so the marker stays under the mask")
}
