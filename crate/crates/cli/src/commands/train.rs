use super::fit_to;
use crate::config::{resolve, resolve_opt, resolve_path, resolve_seed, FileConfig, Resolved};
use crate::TrainArgs;
use anyhow::{bail, Context, Result};
use cardiolens_core::autodiff::{Tape, Tensor, CROSS_ENTROPY_EPS};
use cardiolens_core::data::{augment, load_manifest, split, synth_dataset, AugmentSpec, Dataset};
use cardiolens_core::imgproc::GrayImage;
use cardiolens_core::metrics::{
    confusion_matrix, format_metric_field, roc_auc, scalar_metrics, Label, MetricReport,
};
use cardiolens_core::model::{decide, Model, ModelConfig};
use cardiolens_core::optim::{Hyperparams, Optimizer, OptimizerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::Path;

pub const CURVES_HEADER: &str =
    "epoch,split,loss,accuracy,precision,recall,specificity,sensitivity,f1,auc";

struct TrainSettings {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    optimizer: OptimizerKind,
    hyper: Hyperparams,
    image_size: usize,
    heads: usize,
    dropout_rate: f64,
    init_checkpoint: Option<std::path::PathBuf>,
    freeze: Vec<String>,
    augment_spec: Option<AugmentSpec>,
    fractions: (f64, f64, f64),
}

/// One split held in memory: images already resized to the model input.
struct SplitData {
    images: Vec<GrayImage>,
    labels: Vec<Label>,
    /// Position of each sample in the original dataset ordering; keys the
    /// augmentation draws.
    origin: Vec<usize>,
}

impl SplitData {
    fn load(ds: &Dataset, side: usize, origin_of: &dyn Fn(&str) -> usize) -> Result<Self> {
        let mut images = Vec::with_capacity(ds.len());
        let mut labels = Vec::with_capacity(ds.len());
        let mut origin = Vec::with_capacity(ds.len());
        for s in ds.samples() {
            images.push(fit_to(&s.load_image()?, side)?);
            labels.push(s.label());
            origin.push(origin_of(s.id()));
        }
        Ok(Self { images, labels, origin })
    }

    fn len(&self) -> usize {
        self.images.len()
    }
}

fn batch_tensor(images: &[&GrayImage]) -> Tensor {
    let (h, w) = (images[0].height(), images[0].width());
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        let scale = 1.0 / img.max_value();
        data.extend(img.data().iter().map(|&v| v * scale));
    }
    Tensor::new(vec![images.len(), 1, h, w], data).expect("consistent dimensions")
}

fn onehot(labels: &[Label]) -> Tensor {
    let mut data = vec![0.0; labels.len() * 2];
    for (i, l) in labels.iter().enumerate() {
        data[i * 2 + l.class_index()] = 1.0;
    }
    Tensor::new(vec![labels.len(), 2], data).expect("consistent dimensions")
}

pub fn run(args: TrainArgs) -> Result<u8> {
    let file = FileConfig::load(args.config.as_deref())?;
    let mut echo = Resolved::default();

    let seed = resolve_seed(&mut echo, args.seed, &file)?;
    let epochs = resolve(&mut echo, "epochs", args.epochs, &file, 25usize)?;
    let batch_size = resolve(&mut echo, "batch_size", args.batch_size, &file, 16usize)?;
    let optimizer_name = resolve(&mut echo, "optimizer", args.optimizer, &file, "rmsprop".to_string())?;
    let optimizer: OptimizerKind = optimizer_name.parse()?;
    let mut hyper = Hyperparams::defaults(optimizer);
    hyper.learning_rate =
        resolve(&mut echo, "learning_rate", args.learning_rate, &file, hyper.learning_rate)?;
    hyper.momentum_beta =
        resolve(&mut echo, "momentum_beta", args.momentum_beta, &file, hyper.momentum_beta)?;
    hyper.rms_avg = resolve(&mut echo, "rms_avg", args.rms_avg, &file, hyper.rms_avg)?;
    hyper.beta1 = resolve(&mut echo, "beta1", args.beta1, &file, hyper.beta1)?;
    hyper.beta2 = resolve(&mut echo, "beta2", args.beta2, &file, hyper.beta2)?;
    hyper.eps = resolve(&mut echo, "epsilon", args.epsilon, &file, hyper.eps)?;
    let image_size = resolve(&mut echo, "image_size", args.image_size, &file, 128usize)?;
    let heads = resolve(&mut echo, "heads", args.heads, &file, 4usize)?;
    let dropout_rate = resolve(&mut echo, "dropout_rate", args.dropout_rate, &file, 0.4)?;
    let init_checkpoint = resolve_path(&mut echo, "init_checkpoint", args.init_checkpoint, &file);
    let freeze = resolve_opt(&mut echo, "freeze", args.freeze, &file)?
        .map(|s| s.split(',').map(str::trim).map(String::from).collect::<Vec<_>>())
        .unwrap_or_default();
    let use_augment = resolve(&mut echo, "augment", args.augment, &file, false)?;
    let augment_rotation =
        resolve(&mut echo, "augment_rotation", args.augment_rotation, &file, 10.0)?;
    let augment_scale = resolve(&mut echo, "augment_scale", args.augment_scale, &file, 0.1)?;
    let augment_noise = resolve(&mut echo, "augment_noise", args.augment_noise, &file, 4.0)?;
    let train_frac = resolve(&mut echo, "train_frac", args.train_frac, &file, 0.8)?;
    let val_frac = resolve(&mut echo, "val_frac", args.val_frac, &file, 0.1)?;
    let test_frac = resolve(&mut echo, "test_frac", args.test_frac, &file, 0.1)?;
    let synthetic = resolve_opt(&mut echo, "synthetic", args.synthetic, &file)?;
    let manifest = resolve_path(&mut echo, "manifest", args.manifest, &file);
    let image_root = resolve_path(&mut echo, "image_root", args.image_root, &file);
    let run_dir = resolve_path(&mut echo, "run_dir", args.run_dir, &file)
        .context("--run-dir is required")?;
    echo.echo();

    if epochs == 0 {
        bail!("epochs must be at least 1");
    }
    if batch_size == 0 {
        bail!("batch_size must be at least 1");
    }
    if use_augment {
        if augment_rotation.is_nan() || augment_rotation < 0.0 {
            bail!("augment_rotation must be nonnegative, got {augment_rotation}");
        }
        if !(0.0..1.0).contains(&augment_scale) {
            bail!("augment_scale must lie in [0, 1), got {augment_scale}");
        }
        if augment_noise.is_nan() || augment_noise < 0.0 {
            bail!("augment_noise must be nonnegative, got {augment_noise}");
        }
    }

    let dataset = match (synthetic, &manifest) {
        (Some(n), None) => {
            let ds = synth_dataset(n, (image_size, image_size), seed)?;
            // materialize the generated images so the split manifests are
            // loadable by `evaluate` afterwards
            let images_dir = run_dir.join("images");
            std::fs::create_dir_all(&images_dir)
                .with_context(|| format!("cannot create {}", images_dir.display()))?;
            for s in ds.samples() {
                cardiolens_core::imageio::save_gray(&images_dir.join(s.id()), &s.load_image()?)?;
            }
            eprintln!("synthetic images written to {}", images_dir.display());
            ds
        }
        (None, Some(manifest_path)) => {
            let root = image_root.clone().context("--image-root is required with --manifest")?;
            load_manifest(manifest_path, &root)?
        }
        (Some(_), Some(_)) => bail!("--synthetic and --manifest are mutually exclusive"),
        (None, None) => bail!("either --synthetic or --manifest is required"),
    };
    let (present, not_present) = dataset.class_counts();
    eprintln!("dataset: {} samples ({present} Present, {not_present} NotPresent)", dataset.len());

    let settings = TrainSettings {
        seed,
        epochs,
        batch_size,
        optimizer,
        hyper,
        image_size,
        heads,
        dropout_rate,
        init_checkpoint,
        freeze,
        augment_spec: use_augment.then(|| AugmentSpec {
            rotation_degrees: (-augment_rotation, augment_rotation),
            horizontal_flip: true,
            scale_range: (1.0 - augment_scale, 1.0 + augment_scale),
            noise_sigma: augment_noise,
            seed,
        }),
        fractions: (train_frac, val_frac, test_frac),
    };
    train(&dataset, &settings, &run_dir)
}

fn train(dataset: &Dataset, s: &TrainSettings, run_dir: &Path) -> Result<u8> {
    std::fs::create_dir_all(run_dir)
        .with_context(|| format!("cannot create run directory {}", run_dir.display()))?;

    let (train_ds, val_ds, test_ds) = split(dataset, s.fractions, s.seed)?;
    train_ds.write_manifest(&run_dir.join("train.csv"))?;
    val_ds.write_manifest(&run_dir.join("val.csv"))?;
    test_ds.write_manifest(&run_dir.join("test.csv"))?;
    eprintln!(
        "split: train {} / val {} / test {}",
        train_ds.len(),
        val_ds.len(),
        test_ds.len()
    );

    let origin_of = |id: &str| -> usize {
        dataset.samples().iter().position(|smp| smp.id() == id).expect("split keeps membership")
    };
    let train_data = SplitData::load(&train_ds, s.image_size, &origin_of)?;
    let val_data = SplitData::load(&val_ds, s.image_size, &origin_of)?;
    if train_data.len() == 0 {
        bail!("training split is empty; provide more samples or larger fractions");
    }

    let mut model = match &s.init_checkpoint {
        Some(path) => {
            let loaded = Model::load(path)?;
            if loaded.config().input_size != (s.image_size, s.image_size) {
                bail!(
                    "checkpoint expects input {:?} but image_size is {}",
                    loaded.config().input_size,
                    s.image_size
                );
            }
            eprintln!("initialized from {}", path.display());
            loaded
        }
        None => Model::build(
            ModelConfig {
                input_size: (s.image_size, s.image_size),
                heads: s.heads,
                dropout_rate: s.dropout_rate,
                ..Default::default()
            },
            s.seed,
        )?,
    };
    for prefix in &s.freeze {
        let matched = model.set_trainable(prefix, false)?;
        eprintln!("froze {matched} parameter tensors under prefix {prefix:?}");
    }
    eprintln!("model: {} parameters", model.param_count());
    let mut optimizer = Optimizer::new(s.optimizer, s.hyper)?;
    if let Some(init) = &s.init_checkpoint {
        // resume optimizer state when the matching sidecar file exists
        let state_path = init.with_extension("opt.clns");
        if state_path.is_file() {
            let entries: Vec<(String, Vec<f64>)> =
                cardiolens_core::checkpoint::load_tensors(&state_path)?
                    .into_iter()
                    .map(|(name, t)| (name, t.data().to_vec()))
                    .collect();
            let filled = optimizer.load_state_entries(&entries);
            eprintln!("restored {filled} optimizer state slots from {}", state_path.display());
        }
    }

    let mut curves = String::from(CURVES_HEADER);
    curves.push('\n');
    let mut best_val_accuracy = f64::NEG_INFINITY;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(s.seed);

    for epoch in 1..=s.epochs {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        for (batch_index, chunk) in order.chunks(s.batch_size).enumerate() {
            let augmented: Vec<GrayImage>;
            let images: Vec<&GrayImage> = match &s.augment_spec {
                Some(spec) => {
                    augmented = chunk
                        .iter()
                        .map(|&i| {
                            let draw = (epoch as u64 - 1)
                                .wrapping_mul(dataset.len() as u64)
                                .wrapping_add(train_data.origin[i] as u64);
                            augment(&train_data.images[i], spec, draw)
                        })
                        .collect();
                    augmented.iter().collect()
                }
                None => chunk.iter().map(|&i| &train_data.images[i]).collect(),
            };
            let labels: Vec<Label> = chunk.iter().map(|&i| train_data.labels[i]).collect();
            let batch = batch_tensor(&images);
            let targets = onehot(&labels);

            let mut tape = Tape::new();
            let mut dropout_rng = ChaCha8Rng::seed_from_u64(s.seed);
            dropout_rng.set_stream(((epoch as u64) << 32) | batch_index as u64);
            let pass = model.forward_on_tape(&mut tape, &batch, true, &mut dropout_rng)?;
            let target_var = tape.constant(targets.clone());
            let loss = tape.cross_entropy(pass.probs, target_var)?;
            let loss_value = tape.value(loss).item();

            // Divergence: a non-finite loss, or a true-class probability at
            // the log clamp (the unclamped loss would be infinite).
            let clamped = tape
                .value(pass.probs)
                .data()
                .chunks_exact(2)
                .zip(&labels)
                .any(|(row, l)| row[l.class_index()] <= CROSS_ENTROPY_EPS);
            if !loss_value.is_finite() || clamped {
                eprintln!(
                    "numerical divergence at epoch {epoch}, batch {batch_index}: loss {loss_value}"
                );
                return Ok(3);
            }

            tape.backward(loss)?;
            let grads: Vec<(String, Vec<f64>)> = pass
                .param_vars
                .iter()
                .map(|(name, var)| {
                    (name.clone(), tape.grad_slice(*var).expect("trainable param").to_vec())
                })
                .collect();
            drop(tape);
            for (name, tensor) in model.trainable_params_mut() {
                if let Some((_, g)) = grads.iter().find(|(n, _)| n == name) {
                    optimizer.step(name, tensor.data_mut(), g)?;
                }
            }
        }

        let train_row = evaluate_split(&model, &train_data, s.batch_size)?;
        let val_row = evaluate_split(&model, &val_data, s.batch_size)?;
        append_row(&mut curves, epoch, "train", &train_row);
        append_row(&mut curves, epoch, "val", &val_row);
        eprintln!(
            "epoch {epoch}: train loss {} acc {} | val loss {} acc {}",
            format_metric_field(train_row.loss),
            format_metric_field(train_row.report.accuracy),
            format_metric_field(val_row.loss),
            format_metric_field(val_row.report.accuracy),
        );

        if let Some(acc) = val_row.report.accuracy {
            if acc > best_val_accuracy {
                best_val_accuracy = acc;
                model.save(&run_dir.join("best.clns"))?;
            }
        }
    }

    std::fs::write(run_dir.join("curves.csv"), &curves)
        .with_context(|| format!("cannot write {}", run_dir.join("curves.csv").display()))?;
    model.save(&run_dir.join("final.clns"))?;
    if !run_dir.join("best.clns").exists() {
        model.save(&run_dir.join("best.clns"))?;
    }
    let opt_entries: Vec<(String, Tensor)> = optimizer
        .state_entries()
        .into_iter()
        .map(|(name, data)| {
            let len = data.len();
            (name, Tensor::new(vec![len], data).expect("flat state"))
        })
        .collect();
    cardiolens_core::checkpoint::save_tensors(&run_dir.join("final.opt.clns"), &opt_entries)?;
    eprintln!("run artifacts written to {}", run_dir.display());
    Ok(0)
}

struct SplitEvaluation {
    loss: Option<f64>,
    report: MetricReport,
}

/// Inference pass over one split: mean cross-entropy, scalar metrics, and
/// ROC AUC from the Present-class probabilities.
fn evaluate_split(model: &Model, data: &SplitData, batch_size: usize) -> Result<SplitEvaluation> {
    if data.len() == 0 {
        return Ok(SplitEvaluation { loss: None, report: MetricReport::default() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout is inactive at inference
    let mut scores = Vec::with_capacity(data.len());
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss_sum = 0.0;
    for chunk_start in (0..data.len()).step_by(batch_size) {
        let chunk_end = (chunk_start + batch_size).min(data.len());
        let images: Vec<&GrayImage> = (chunk_start..chunk_end).map(|i| &data.images[i]).collect();
        let labels = &data.labels[chunk_start..chunk_end];
        let batch = batch_tensor(&images);
        let mut tape = Tape::new();
        let pass = model.forward_on_tape(&mut tape, &batch, false, &mut rng)?;
        let target_var = tape.constant(onehot(labels));
        let loss = tape.cross_entropy(pass.probs, target_var)?;
        loss_sum += tape.value(loss).item() * labels.len() as f64;
        for row in tape.value(pass.probs).data().chunks_exact(2) {
            scores.push(row[Label::Present.class_index()]);
            predictions.push(decide(row[0], row[1]).0);
        }
    }
    let cm = confusion_matrix(&predictions, &data.labels)?;
    let mut report = scalar_metrics(&cm);
    report.auc = roc_auc(&scores, &data.labels).ok();
    Ok(SplitEvaluation { loss: Some(loss_sum / data.len() as f64), report })
}

fn append_row(out: &mut String, epoch: usize, split: &str, row: &SplitEvaluation) {
    let r = &row.report;
    writeln!(
        out,
        "{epoch},{split},{},{},{},{},{},{},{},{}",
        format_metric_field(row.loss),
        format_metric_field(r.accuracy),
        format_metric_field(r.precision),
        format_metric_field(r.recall),
        format_metric_field(r.specificity),
        format_metric_field(r.sensitivity),
        format_metric_field(r.f1),
        format_metric_field(r.auc),
    )
    .expect("string write cannot fail");
}
