//! Dataset manifests, stratified splits, training-time augmentation, and a
//! synthetic desk-scale dataset generator.
//!
//! Manifests are UTF-8 CSV with the exact header `id,label`, LF line
//! endings, and `Yes`/`No` labels mapping to `Present`/`NotPresent`.

use crate::imageio::{load_gray, ImageIoError};
use crate::imgproc::{sample_bilinear, GrayImage};
use crate::metrics::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("failed to read manifest {path}: {source}")]
    ManifestIo { path: String, source: std::io::Error },
    #[error("manifest {path} must start with the header `id,label`, found {found:?}")]
    BadHeader { path: String, found: String },
    #[error("manifest {path} has no data rows")]
    EmptyManifest { path: String },
    #[error("manifest row {row}: expected `id,label`, found {found:?}")]
    BadRow { row: usize, found: String },
    #[error("manifest row {row}: unknown label value {value:?} (expected Yes or No)")]
    UnknownLabelValue { row: usize, value: String },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("image file for sample {id:?} does not exist: {path}")]
    MissingImage { id: String, path: String },
    #[error(transparent)]
    ImageIo(#[from] ImageIoError),
    #[error("split fractions must be positive and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("class {label} has {count} samples, fewer than the 3 splits")]
    ClassTooSmall { label: Label, count: usize },
    #[error("synthetic dataset size must be even and at least 2, got {0}")]
    OddCount(usize),
    #[error("failed to write manifest {path}: {source}")]
    WriteManifest { path: String, source: std::io::Error },
    #[error("sample {0:?} is memory-backed and has no file")]
    NoBackingFile(String),
}

#[derive(Debug, Clone)]
enum SampleSource {
    File(PathBuf),
    Memory(GrayImage),
}

/// One labeled radiograph; the pixel data loads lazily for file-backed
/// samples.
#[derive(Debug, Clone)]
pub struct Sample {
    id: String,
    label: Label,
    source: SampleSource,
}

impl Sample {
    pub fn from_file(id: String, label: Label, path: PathBuf) -> Self {
        Self { id, label, source: SampleSource::File(path) }
    }

    pub fn in_memory(id: String, label: Label, image: GrayImage) -> Self {
        Self { id, label, source: SampleSource::Memory(image) }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> Label {
        self.label
    }

    pub fn load_image(&self) -> Result<GrayImage, DataError> {
        match &self.source {
            SampleSource::File(path) => Ok(load_gray(path)?),
            SampleSource::Memory(img) => Ok(img.clone()),
        }
    }
}

/// Ordered collection of unique samples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    samples: Vec<Sample>,
    root: PathBuf,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, root: PathBuf) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.clone()) {
                return Err(DataError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { samples, root })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `(present, not_present)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let present = self.samples.iter().filter(|s| s.label.is_positive()).count();
        (present, self.samples.len() - present)
    }

    /// Serializes the membership back to manifest CSV (`Yes`/`No` labels,
    /// LF endings).
    pub fn write_manifest(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::from("id,label\n");
        for s in &self.samples {
            let label = if s.label.is_positive() { "Yes" } else { "No" };
            writeln!(out, "{},{}", s.id, label).expect("string write cannot fail");
        }
        std::fs::write(path, out)
            .map_err(|source| DataError::WriteManifest { path: path.display().to_string(), source })
    }
}

/// Reads a manifest CSV and checks that every referenced image exists under
/// `image_root`.
pub fn load_manifest(csv_path: &Path, image_root: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(csv_path)
        .map_err(|source| DataError::ManifestIo { path: csv_path.display().to_string(), source })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "id,label" => {}
        other => {
            return Err(DataError::BadHeader {
                path: csv_path.display().to_string(),
                found: other.map(|(_, l)| l.to_string()).unwrap_or_default(),
            })
        }
    }
    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let row = idx + 1; // 1-based, counting the header as row 1
        let (id, label_text) = line
            .split_once(',')
            .ok_or_else(|| DataError::BadRow { row, found: line.to_string() })?;
        let label = match label_text {
            "Yes" => Label::Present,
            "No" => Label::NotPresent,
            other => {
                return Err(DataError::UnknownLabelValue { row, value: other.to_string() })
            }
        };
        if !seen.insert(id.to_string()) {
            return Err(DataError::DuplicateId(id.to_string()));
        }
        let path = image_root.join(id);
        if !path.is_file() {
            return Err(DataError::MissingImage {
                id: id.to_string(),
                path: path.display().to_string(),
            });
        }
        samples.push(Sample::from_file(id.to_string(), label, path));
    }
    if samples.is_empty() {
        return Err(DataError::EmptyManifest { path: csv_path.display().to_string() });
    }
    Dataset::new(samples, image_root.to_path_buf())
}

/// Training-time augmentation settings. Parameters are drawn per
/// `(seed, draw_index)` pair, so a given epoch/sample combination always
/// produces the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    /// Rotation range in degrees, `(lo, hi)`.
    pub rotation_degrees: (f64, f64),
    /// When set, each draw flips horizontally with probability 1/2.
    pub horizontal_flip: bool,
    /// Zoom factor range around 1.0, `(lo, hi)`.
    pub scale_range: (f64, f64),
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            rotation_degrees: (0.0, 0.0),
            horizontal_flip: false,
            scale_range: (1.0, 1.0),
            noise_sigma: 0.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    pub fn is_identity(&self) -> bool {
        self.rotation_degrees == (0.0, 0.0)
            && !self.horizontal_flip
            && self.scale_range == (1.0, 1.0)
            && self.noise_sigma == 0.0
    }
}

/// Mirrors the image about its vertical center line. Applying it twice
/// restores the original exactly.
pub fn flip_horizontal(img: &GrayImage) -> GrayImage {
    let w = img.width();
    GrayImage::from_fn_with_levels(w, img.height(), img.levels(), |r, c| img.get(r, w - 1 - c))
}

fn warp(img: &GrayImage, map: impl Fn(f64, f64) -> (f64, f64)) -> GrayImage {
    GrayImage::from_fn_with_levels(img.width(), img.height(), img.levels(), |r, c| {
        let (x, y) = map(c as f64, r as f64);
        sample_bilinear(img, x, y)
    })
}

fn rotate_about_center(img: &GrayImage, degrees: f64) -> GrayImage {
    if degrees == 0.0 {
        return img.clone();
    }
    let (cx, cy) = ((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    // inverse rotation of the output grid back onto the source
    warp(img, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
    })
}

fn scale_about_center(img: &GrayImage, factor: f64) -> GrayImage {
    if factor == 1.0 {
        return img.clone();
    }
    let (cx, cy) = ((img.width() - 1) as f64 / 2.0, (img.height() - 1) as f64 / 2.0);
    warp(img, |x, y| (cx + (x - cx) / factor, cy + (y - cy) / factor))
}

/// Applies rotation, flip, scale, and noise in that order, deterministically
/// for a given `(spec.seed, draw_index)`.
pub fn augment(img: &GrayImage, spec: &AugmentSpec, draw_index: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(draw_index);

    let degrees = if spec.rotation_degrees.0 == spec.rotation_degrees.1 {
        spec.rotation_degrees.0
    } else {
        rng.random_range(spec.rotation_degrees.0..=spec.rotation_degrees.1)
    };
    let flip = spec.horizontal_flip && rng.random::<bool>();
    let factor = if spec.scale_range.0 == spec.scale_range.1 {
        spec.scale_range.0
    } else {
        rng.random_range(spec.scale_range.0..=spec.scale_range.1)
    };

    let mut out = rotate_about_center(img, degrees);
    if flip {
        out = flip_horizontal(&out);
    }
    out = scale_about_center(&out, factor);
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("sigma checked positive");
        let max = out.max_value();
        let noisy: Vec<f64> =
            out.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, max)).collect();
        out = GrayImage::new(out.width(), out.height(), out.levels(), noisy)
            .expect("dimensions unchanged");
    }
    out
}

/// Stratified split into train/val/test. Per class, sizes follow the
/// fractions by largest remainder; membership is a seeded shuffle and the
/// three parts are disjoint with union equal to the input.
pub fn split(
    ds: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let (ft, fv, fe) = fractions;
    if !(ft > 0.0 && fv > 0.0 && fe > 0.0) || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(DataError::BadFractions(fractions));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for label in [Label::Present, Label::NotPresent] {
        let mut indices: Vec<usize> = ds
            .samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == label)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        if indices.len() < 3 {
            return Err(DataError::ClassTooSmall { label, count: indices.len() });
        }
        // Fisher-Yates with the shared seeded rng
        for i in (1..indices.len()).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
        let counts = largest_remainder(indices.len(), [ft, fv, fe]);
        let mut cursor = 0;
        for (part, &count) in parts.iter_mut().zip(&counts) {
            part.extend_from_slice(&indices[cursor..cursor + count]);
            cursor += count;
        }
    }
    let build = |mut idx: Vec<usize>| -> Dataset {
        idx.sort_unstable();
        let samples = idx.into_iter().map(|i| ds.samples[i].clone()).collect();
        Dataset { samples, root: ds.root.clone() }
    };
    let [train, val, test] = parts;
    Ok((build(train), build(val), build(test)))
}

/// Integer allocation of `n` into three parts proportional to `fractions`,
/// distributing the remainder to the largest fractional parts (ties to the
/// earlier split).
fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut leftover = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in &order {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Generates `n` in-memory samples, half `Present` (bright ellipse spanning
/// at least 55% of the width) and half `NotPresent` (at most 40%), over a
/// noisy background. Deterministic given `seed`.
pub fn synth_dataset(n: usize, image_size: (usize, usize), seed: u64) -> Result<Dataset, DataError> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(DataError::OddCount(n));
    }
    let (w, h) = image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = Normal::new(40.0, 8.0).expect("valid sigma");
    let texture = Normal::new(0.0, 6.0).expect("valid sigma");
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i % 2 == 0 { Label::Present } else { Label::NotPresent };
        let width_ratio = match label {
            Label::Present => rng.random_range(0.55..0.70),
            Label::NotPresent => rng.random_range(0.25..0.40),
        };
        let a = width_ratio * w as f64 / 2.0;
        let b = a * rng.random_range(0.60..0.80);
        let cx = w as f64 / 2.0 + rng.random_range(-0.05..0.05) * w as f64;
        let cy = h as f64 / 2.0 + rng.random_range(-0.05..0.05) * h as f64;
        let brightness = rng.random_range(170.0..210.0);
        let mut data = Vec::with_capacity(w * h);
        for row in 0..h {
            for col in 0..w {
                let dx = (col as f64 - cx) / a;
                let dy = (row as f64 - cy) / b;
                let base: f64 = if dx * dx + dy * dy <= 1.0 {
                    brightness + texture.sample(&mut rng)
                } else {
                    background.sample(&mut rng)
                };
                data.push(base.clamp(0.0, 255.0));
            }
        }
        let image = GrayImage::new(w, h, 256, data).expect("consistent dimensions");
        samples.push(Sample::in_memory(format!("synth_{i:05}.png"), label, image));
    }
    Dataset::new(samples, PathBuf::new())
}
