use super::fit_to;
use crate::config::{resolve_path, FileConfig, Resolved};
use crate::EvaluateArgs;
use anyhow::{anyhow, bail, Context, Result};
use cardiolens_core::data::load_manifest;
use cardiolens_core::metrics::{confusion_matrix, roc_auc, scalar_metrics, Label, MetricReport};
use cardiolens_core::model::Model;
use std::path::{Path, PathBuf};

pub fn run(args: EvaluateArgs) -> Result<u8> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut echo = Resolved::default();

    let checkpoint = resolve_path(&mut echo, "checkpoint", args.checkpoint, &file);
    let predictions = resolve_path(&mut echo, "predictions", args.predictions, &file);
    let manifest = resolve_path(&mut echo, "manifest", args.manifest, &file);
    let image_root = resolve_path(&mut echo, "image_root", args.image_root, &file);
    let metrics_out = resolve_path(&mut echo, "metrics_out", args.metrics_out, &file)
        .unwrap_or_else(|| PathBuf::from("metrics.csv"));
    echo.echo();

    let (preds, truths, scores) = match (&checkpoint, &predictions) {
        (Some(ckpt), None) => {
            let manifest = manifest.context("--manifest is required with --checkpoint")?;
            let root = image_root.context("--image-root is required with --checkpoint")?;
            score_with_model(ckpt, &manifest, &root)?
        }
        (None, Some(preds_path)) => load_predictions(preds_path)?,
        (Some(_), Some(_)) => bail!("--checkpoint and --predictions are mutually exclusive"),
        (None, None) => bail!("either --checkpoint or --predictions is required"),
    };

    let cm = confusion_matrix(&preds, &truths)?;
    let mut report = scalar_metrics(&cm);
    report.auc = roc_auc(&scores, &truths).ok();

    let metrics_csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, report.csv_row());
    print!("{metrics_csv}");
    println!("tp,tn,fp,fn");
    let [tp, tn, fp, fnc] = cm.counts();
    println!("{tp},{tn},{fp},{fnc}");
    std::fs::write(&metrics_out, metrics_csv)
        .with_context(|| format!("cannot write {}", metrics_out.display()))?;
    Ok(0)
}

fn score_with_model(
    checkpoint: &Path,
    manifest: &Path,
    image_root: &Path,
) -> Result<(Vec<Label>, Vec<Label>, Vec<f64>)> {
    if !checkpoint.is_file() {
        bail!("checkpoint does not exist: {}", checkpoint.display());
    }
    let model = Model::load(checkpoint)?;
    let side = model.config().input_size.0;
    let ds = load_manifest(manifest, image_root)?;
    let mut preds = Vec::with_capacity(ds.len());
    let mut truths = Vec::with_capacity(ds.len());
    let mut scores = Vec::with_capacity(ds.len());
    for sample in ds.samples() {
        let img = fit_to(&sample.load_image()?, side)?;
        let input = model.image_to_input(&img)?;
        let probs = model.forward(&input)?;
        let p_present = probs.data()[Label::Present.class_index()];
        preds.push(cardiolens_core::model::decide(probs.data()[0], probs.data()[1]).0);
        truths.push(sample.label());
        scores.push(p_present);
    }
    Ok((preds, truths, scores))
}

/// Reads an injected prediction set: CSV with header `id,pred,truth,score`,
/// labels spelled `Present`/`NotPresent`, score being the Present-class
/// probability.
fn load_predictions(path: &Path) -> Result<(Vec<Label>, Vec<Label>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read predictions file {}", path.display()))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "id,pred,truth,score" => {}
        other => bail!(
            "predictions file must start with `id,pred,truth,score`, found {:?}",
            other.map(|(_, l)| l).unwrap_or_default()
        ),
    }
    let mut preds = Vec::new();
    let mut truths = Vec::new();
    let mut scores = Vec::new();
    for (lineno, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            bail!("{}:{}: expected 4 fields, found {raw:?}", path.display(), lineno + 1);
        }
        preds.push(fields[1].parse::<Label>().map_err(|e| anyhow!("{}:{}: {e}", path.display(), lineno + 1))?);
        truths.push(fields[2].parse::<Label>().map_err(|e| anyhow!("{}:{}: {e}", path.display(), lineno + 1))?);
        scores.push(
            fields[3]
                .parse::<f64>()
                .map_err(|e| anyhow!("{}:{}: bad score: {e}", path.display(), lineno + 1))?,
        );
    }
    if preds.is_empty() {
        bail!("predictions file {} has no data rows", path.display());
    }
    Ok((preds, truths, scores))
}
