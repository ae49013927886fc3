//! Reading and writing 8-bit PNG and binary PGM (P5) rasters.

use crate::imgproc::{to_grayscale, GrayImage, RgbImage};
use image::ImageReader;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageIoError {
    #[error("failed to read {path}: {source}")]
    Read { path: String, source: image::ImageError },
    #[error("failed to write {path}: {source}")]
    Write { path: String, source: image::ImageError },
    #[error("failed to open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error("unsupported output extension for {0}; use .png or .pgm")]
    UnsupportedExtension(String),
}

fn read_dynamic(path: &Path) -> Result<image::DynamicImage, ImageIoError> {
    let reader = ImageReader::open(path)
        .map_err(|source| ImageIoError::Open { path: path.display().to_string(), source })?;
    reader
        .decode()
        .map_err(|source| ImageIoError::Read { path: path.display().to_string(), source })
}

/// Loads any supported raster as RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage, ImageIoError> {
    let rgb = read_dynamic(path)?.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, rgb.into_raw()).expect("decoder output is consistent"))
}

/// Loads a raster as grayscale. Single-channel sources pass through
/// unchanged; color sources go through the standard luma conversion.
pub fn load_gray(path: &Path) -> Result<GrayImage, ImageIoError> {
    let dynamic = read_dynamic(path)?;
    match dynamic {
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = img.dimensions();
            let data = img.into_raw().into_iter().map(f64::from).collect();
            Ok(GrayImage::new(w as usize, h as usize, 256, data).expect("consistent decode"))
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let rgb = RgbImage::new(w as usize, h as usize, rgb.into_raw())
                .expect("decoder output is consistent");
            Ok(to_grayscale(&rgb))
        }
    }
}

/// Writes a grayscale image as 8-bit PNG or binary PGM (P5), chosen by
/// extension. Intensities round to the nearest integer and clamp to
/// `[0, 255]`.
pub fn save_gray(path: &Path, img: &GrayImage) -> Result<(), ImageIoError> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let bytes: Vec<u8> = img.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let write_err =
        |source| ImageIoError::Write { path: path.display().to_string(), source };
    match ext.as_deref() {
        Some("png") => image::save_buffer(
            path,
            &bytes,
            img.width() as u32,
            img.height() as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(write_err),
        Some("pgm") => {
            use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
            use image::ImageEncoder;
            let file = std::fs::File::create(path)
                .map_err(|source| ImageIoError::Open { path: path.display().to_string(), source })?;
            PnmEncoder::new(std::io::BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
                .write_image(
                    &bytes,
                    img.width() as u32,
                    img.height() as u32,
                    image::ExtendedColorType::L8,
                )
                .map_err(write_err)
        }
        _ => Err(ImageIoError::UnsupportedExtension(path.display().to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |r, c| if (r + c) % 2 == 0 { 17.0 } else { 230.0 })
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = checkerboard(9, 5);
        save_gray(&path, &img).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pgm_roundtrip_is_binary_p5() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = checkerboard(6, 8);
        save_gray(&path, &img).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..2], b"P5", "raw graymap magic");
        let back = load_gray(&path).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn reads_external_p5() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ext.pgm");
        std::fs::write(&path, b"P5\n3 2\n255\n\x00\x7f\xff\x10\x20\x30").unwrap();
        let img = load_gray(&path).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.get(0, 1), 127.0);
        assert_eq!(img.get(1, 2), 48.0);
    }

    #[test]
    fn rgb_png_loads_through_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("color.png");
        let bytes: Vec<u8> = vec![255, 0, 0, 0, 255, 0]; // one red, one green pixel
        image::save_buffer(&path, &bytes, 2, 1, image::ExtendedColorType::Rgb8).unwrap();
        let gray = load_gray(&path).unwrap();
        assert_eq!(gray.get(0, 0), 76.0); // 0.299 * 255 rounded
        assert_eq!(gray.get(0, 1), 150.0); // 0.587 * 255 rounded
    }

    #[test]
    fn unreadable_path_errors() {
        assert!(load_gray(Path::new("/nonexistent/file.png")).is_err());
        let dir = tempfile::tempdir().unwrap();
        let img = checkerboard(2, 2);
        assert!(matches!(
            save_gray(&dir.path().join("img.webp"), &img),
            Err(ImageIoError::UnsupportedExtension(_))
        ));
    }
}
