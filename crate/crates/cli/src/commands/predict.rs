use super::fit_to;
use crate::config::{resolve_path, FileConfig, Resolved};
use crate::PredictArgs;
use anyhow::{bail, Context, Result};
use cardiolens_core::imageio::load_gray;
use cardiolens_core::model::Model;

pub fn run(args: PredictArgs) -> Result<u8> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut echo = Resolved::default();
    let checkpoint = resolve_path(&mut echo, "checkpoint", args.checkpoint, &file)
        .context("--checkpoint is required")?;
    echo.put("image", &args.image.display());
    echo.echo();

    if !checkpoint.is_file() {
        bail!("checkpoint does not exist: {}", checkpoint.display());
    }
    let model = Model::load(&checkpoint)?;
    let img = load_gray(&args.image)?;
    let side = model.config().input_size.0;
    let (label, confidence) = model.predict(&fit_to(&img, side)?)?;
    println!("{label},{confidence:.6}");
    Ok(0)
}
