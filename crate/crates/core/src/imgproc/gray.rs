//! Raster types and intensity transforms.

use super::ImgProcError;

/// 8-bit RGB raster, row-major `(r, g, b)` triples.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImgProcError> {
        if width == 0 || height == 0 {
            return Err(ImgProcError::EmptyImage);
        }
        if data.len() != 3 * width * height {
            return Err(ImgProcError::DataLength {
                expected: 3 * width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (u8, u8, u8)) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for row in 0..height {
            for col in 0..width {
                let (r, g, b) = f(row, col);
                data.extend_from_slice(&[r, g, b]);
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(r, g, b)` at `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> (u8, u8, u8) {
        let i = 3 * (row * self.width + col);
        (self.data[i], self.data[i + 1], self.data[i + 2])
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

/// Single-channel raster with an explicit intensity range.
///
/// Values are `f64` clamped to `[0, levels - 1]`. The default level count is
/// 256, matching 8-bit sources, but any `levels >= 2` is accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: u32,
    data: Vec<f64>,
}

impl GrayImage {
    pub const DEFAULT_LEVELS: u32 = 256;

    /// Builds an image, clamping every value into `[0, levels - 1]`.
    pub fn new(width: usize, height: usize, levels: u32, data: Vec<f64>) -> Result<Self, ImgProcError> {
        if width == 0 || height == 0 {
            return Err(ImgProcError::EmptyImage);
        }
        if levels < 2 {
            return Err(ImgProcError::BadLevels(levels));
        }
        if data.len() != width * height {
            return Err(ImgProcError::DataLength {
                expected: width * height,
                actual: data.len(),
            });
        }
        let max = (levels - 1) as f64;
        let data = data.into_iter().map(|v| v.clamp(0.0, max)).collect();
        Ok(Self { width, height, levels, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let max = (Self::DEFAULT_LEVELS - 1) as f64;
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col).clamp(0.0, max));
            }
        }
        Self { width, height, levels: Self::DEFAULT_LEVELS, data }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    /// Largest representable intensity, `levels - 1`.
    pub fn max_value(&self) -> f64 {
        (self.levels - 1) as f64
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let max = self.max_value();
        self.data[row * self.width + col] = value.clamp(0.0, max);
    }

    /// Sample with coordinates clamped to the image bounds (replicate border).
    pub fn get_clamped(&self, row: isize, col: isize) -> f64 {
        let r = row.clamp(0, self.height as isize - 1) as usize;
        let c = col.clamp(0, self.width as isize - 1) as usize;
        self.get(r, c)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// True when every pixel is either 0 or `levels - 1`.
    pub fn is_binary(&self) -> bool {
        let max = self.max_value();
        self.data.iter().all(|&v| v == 0.0 || v == max)
    }
}

/// Unclamped float raster produced by linear filters.
///
/// Filter outputs can overshoot the intensity range; callers that need an
/// image again clamp through [`FloatGrid::into_gray`].
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FloatGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_gray(self, levels: u32) -> GrayImage {
        GrayImage::new(self.width, self.height, levels, self.data)
            .expect("grid dimensions are valid image dimensions")
    }
}

/// Luma conversion: `round(0.299 r + 0.587 g + 0.114 b)` per pixel.
pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0)
        })
        .collect();
    GrayImage::new(img.width(), img.height(), GrayImage::DEFAULT_LEVELS, data)
        .expect("dimensions carried over from a valid image")
}

/// Bilinear resize. Output pixel `(x', y')` samples source `(x'/r_x, y'/r_y)`
/// where `r_x`, `r_y` are the target/source scale factors; source coordinates
/// past the last pixel clamp to it.
pub fn resize_bilinear(img: &GrayImage, target: (usize, usize)) -> Result<GrayImage, ImgProcError> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(ImgProcError::EmptyTarget);
    }
    let sx = img.width() as f64 / tw as f64;
    let sy = img.height() as f64 / th as f64;
    let out = GrayImage::from_fn_with_levels(tw, th, img.levels(), |row, col| {
        sample_bilinear(img, col as f64 * sx, row as f64 * sy)
    });
    Ok(out)
}

impl GrayImage {
    pub fn from_fn_with_levels(
        width: usize,
        height: usize,
        levels: u32,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let max = (levels - 1) as f64;
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col).clamp(0.0, max));
            }
        }
        Self { width, height, levels, data }
    }
}

pub(crate) fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (img.width() - 1) as f64);
    let y = y.clamp(0.0, (img.height() - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
    let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Histogram equalization through the cumulative distribution:
/// `T(i) = cdf(i) * (levels - 1)`, rounded with ties toward the lower level.
///
/// The mapping is monotone non-decreasing and keeps outputs in range.
pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    let levels = img.levels() as usize;
    let mut hist = vec![0u64; levels];
    for &v in img.data() {
        hist[(v.round() as usize).min(levels - 1)] += 1;
    }
    let total = img.pixel_count() as f64;
    let max = img.max_value();
    let mut map = vec![0.0f64; levels];
    let mut cum = 0u64;
    for (i, &count) in hist.iter().enumerate() {
        cum += count;
        map[i] = round_half_down(cum as f64 / total * max);
    }
    GrayImage::from_fn_with_levels(img.width(), img.height(), img.levels(), |row, col| {
        map[(img.get(row, col).round() as usize).min(levels - 1)]
    })
}

/// Round to nearest, with exact .5 ties going down.
pub(crate) fn round_half_down(x: f64) -> f64 {
    (x - 0.5).ceil().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grayscale_extremes() {
        let img = RgbImage::from_fn(2, 1, |_, col| if col == 0 { (255, 255, 255) } else { (0, 0, 0) });
        let gray = to_grayscale(&img);
        assert_eq!(gray.get(0, 0), 255.0);
        assert_eq!(gray.get(0, 1), 0.0);
    }

    #[test]
    fn grayscale_red_channel() {
        // 0.299 * 255 = 76.245, rounds to 76
        let img = RgbImage::from_fn(1, 1, |_, _| (255, 0, 0));
        assert_eq!(to_grayscale(&img).get(0, 0), 76.0);
    }

    #[test]
    fn resize_constant_field() {
        let img = GrayImage::constant(2, 2, 10.0);
        let out = resize_bilinear(&img, (4, 4)).unwrap();
        assert_eq!(out.width(), 4);
        assert_eq!(out.height(), 4);
        assert!(out.data().iter().all(|&v| v == 10.0));
    }

    #[test]
    fn resize_identity() {
        let img = GrayImage::from_fn(3, 2, |r, c| (r * 3 + c) as f64 * 11.0);
        let out = resize_bilinear(&img, (3, 2)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_row_interpolation() {
        // Source row [0, 255] widened to 4 columns; source x = col * 2/4:
        // 0.0 -> 0, 0.5 -> 127.5, 1.0 -> 255, 1.5 -> clamped to 255.
        let img = GrayImage::new(2, 1, 256, vec![0.0, 255.0]).unwrap();
        let out = resize_bilinear(&img, (4, 1)).unwrap();
        assert_eq!(out.data(), &[0.0, 127.5, 255.0, 255.0]);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = GrayImage::constant(2, 2, 1.0);
        assert!(matches!(resize_bilinear(&img, (0, 4)), Err(ImgProcError::EmptyTarget)));
    }

    #[test]
    fn equalize_constant_image_saturates() {
        let img = GrayImage::constant(4, 4, 17.0);
        let out = equalize_histogram(&img);
        assert!(out.data().iter().all(|&v| v == 255.0));
    }

    #[test]
    fn equalize_two_level_split() {
        // Half zeros, half 255s: cdf(0) = 0.5 -> 127, cdf(255) = 1.0 -> 255.
        let img = GrayImage::from_fn(4, 2, |_, col| if col < 2 { 0.0 } else { 255.0 });
        let out = equalize_histogram(&img);
        for col in 0..4 {
            let expect = if col < 2 { 127.0 } else { 255.0 };
            assert_eq!(out.get(0, col), expect);
            assert_eq!(out.get(1, col), expect);
        }
    }

    #[test]
    fn equalize_uniform_histogram_is_near_identity() {
        // 16x16 image holding every level of a 256-level histogram exactly once.
        let img = GrayImage::from_fn(16, 16, |r, c| (r * 16 + c) as f64);
        let out = equalize_histogram(&img);
        for (a, b) in img.data().iter().zip(out.data()) {
            assert!((a - b).abs() <= 1.0, "{a} mapped to {b}");
        }
    }

    #[test]
    fn equalize_mapping_is_monotone() {
        let img = GrayImage::from_fn(16, 16, |r, c| ((r * c * 7) % 256) as f64);
        let out = equalize_histogram(&img);
        let mut pairs: Vec<(f64, f64)> = img.data().iter().copied().zip(out.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    proptest::proptest! {
        #[test]
        fn equalize_monotone_and_bounded(values in proptest::collection::vec(0.0f64..256.0, 16)) {
            let img = GrayImage::new(4, 4, 256, values).unwrap();
            let out = equalize_histogram(&img);
            proptest::prop_assert!(out.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
            let mut pairs: Vec<(f64, f64)> =
                img.data().iter().copied().zip(out.data().iter().copied()).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in pairs.windows(2) {
                proptest::prop_assert!(w[0].1 <= w[1].1, "mapping must be monotone");
            }
        }
    }

    #[test]
    fn image_constructor_validates() {
        assert!(GrayImage::new(0, 3, 256, vec![]).is_err());
        assert!(GrayImage::new(2, 2, 1, vec![0.0; 4]).is_err());
        assert!(GrayImage::new(2, 2, 256, vec![0.0; 3]).is_err());
        // Values clamp on construction.
        let img = GrayImage::new(1, 1, 256, vec![300.0]).unwrap();
        assert_eq!(img.get(0, 0), 255.0);
    }
}
