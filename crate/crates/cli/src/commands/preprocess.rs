use crate::config::{resolve, resolve_path, FileConfig, Resolved};
use crate::PreprocessArgs;
use anyhow::{bail, Context, Result};
use cardiolens_core::imageio::{load_gray, save_gray};
use cardiolens_core::imgproc::{preprocess_gray, PreprocessConfig, PreprocessReport};
use std::fmt::Write as _;
use std::path::PathBuf;

pub fn run(args: PreprocessArgs) -> Result<u8> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut echo = Resolved::default();

    let input = resolve_path(&mut echo, "input", args.input, &file)
        .context("--input directory is required")?;
    let output = resolve_path(&mut echo, "output", args.output, &file)
        .context("--output directory is required")?;
    let target_width = resolve(&mut echo, "target_width", args.target_width, &file, 128)?;
    let target_height = resolve(&mut echo, "target_height", args.target_height, &file, 128)?;
    let sharpen_k = resolve(&mut echo, "sharpen_k", args.sharpen_k, &file, 1.0)?;
    let apply_v_offset = resolve(&mut echo, "apply_v_offset", args.apply_v_offset, &file, false)?;
    let canny_low = resolve(&mut echo, "canny_low", args.canny_low, &file, 30.0)?;
    let canny_high = resolve(&mut echo, "canny_high", args.canny_high, &file, 100.0)?;
    let reconstruction_n = resolve(&mut echo, "reconstruction_n", args.reconstruction_n, &file, 1)?;
    echo.echo();

    let cfg = PreprocessConfig {
        target_size: (target_width, target_height),
        sharpen_k,
        apply_v_offset,
        canny_low,
        canny_high,
        reconstruction_n,
        ..Default::default()
    };
    cfg.validate()?;

    if !input.is_dir() {
        bail!("input directory does not exist or is not a directory: {}", input.display());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(&input)
        .with_context(|| format!("cannot read input directory {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png") | Some("pgm")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG or PGM images found in {}", input.display());
    }

    std::fs::create_dir_all(&output)
        .with_context(|| format!("cannot create output directory {}", output.display()))?;

    let mut report_csv = format!("id,{}\n", PreprocessReport::CSV_HEADER);
    let mut failures = 0usize;
    let mut succeeded = 0usize;
    for path in &files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("<non-utf8>").to_string();
        match process_one(path, &output, &cfg) {
            Ok(report) => {
                succeeded += 1;
                writeln!(report_csv, "{name},{}", report.csv_row()).expect("string write");
            }
            Err(err) => {
                failures += 1;
                eprintln!("failed: {name}: {err:#}");
            }
        }
    }
    std::fs::write(output.join("reports.csv"), report_csv)
        .with_context(|| format!("cannot write {}", output.join("reports.csv").display()))?;
    eprintln!("processed {succeeded} of {} images", files.len());
    Ok(if failures > 0 { 1 } else { 0 })
}

fn process_one(
    path: &std::path::Path,
    output: &std::path::Path,
    cfg: &PreprocessConfig,
) -> Result<PreprocessReport> {
    let img = load_gray(path)?;
    let result = preprocess_gray(&img, cfg)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("png").to_ascii_lowercase();
    save_gray(&output.join(format!("{stem}.{ext}")), &result.image)?;
    save_gray(&output.join(format!("{stem}_edges.{ext}")), &result.edges)?;
    Ok(result.report)
}
