//! The classifier: a small inception-style backbone, a multi-head channel
//! attention block over the final feature map, and a GAP -> dropout ->
//! dense -> softmax head.
//!
//! The backbone runs parallel multi-scale branches per block (1x1, 3x3,
//! factorized 5x5, pooled projection) with stride-2 reductions between
//! blocks. Inference over a shared read-only model is thread-safe; training
//! mutates parameters and stays on one thread.

use crate::attention::{AttentionError, AttentionVars, AttentionWeights};
use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::checkpoint::{self, CheckpointError};
use crate::imgproc::GrayImage;
use crate::metrics::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("final feature channels {channels} are not divisible by {heads} attention heads")]
    ChannelsNotDivisible { channels: usize, heads: usize },
    #[error("input batch shape {actual:?} does not match expected {expected:?}")]
    BadInput { expected: Vec<usize>, actual: Vec<usize> },
    #[error("image is {actual:?} but the model expects {expected:?} (width, height)")]
    BadImageSize { expected: (usize, usize), actual: (usize, usize) },
    #[error("no layer matches prefix {0:?}")]
    NoSuchPrefix(String),
    #[error("checkpoint parameter {name:?} has shape {actual:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("failed to read sidecar {path}: {source}")]
    SidecarIo { path: String, source: std::io::Error },
    #[error("bad sidecar line {0:?}")]
    BadSidecar(String),
}

/// Channel counts of one inception-style block's branches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub conv1x1: usize,
    pub conv3x3: usize,
    /// Wide-receptive-field branch; two stacked 3x3 convolutions when
    /// `factorize_5x5`, one direct 5x5 otherwise.
    pub conv5x5: usize,
    pub pool_proj: usize,
    pub factorize_5x5: bool,
}

impl BlockSpec {
    pub fn new(conv1x1: usize, conv3x3: usize, conv5x5: usize, pool_proj: usize) -> Self {
        Self { conv1x1, conv3x3, conv5x5, pool_proj, factorize_5x5: true }
    }

    pub fn output_channels(&self) -> usize {
        self.conv1x1 + self.conv3x3 + self.conv5x5 + self.pool_proj
    }

    fn validate(&self) -> Result<(), ModelError> {
        if [self.conv1x1, self.conv3x3, self.conv5x5, self.pool_proj].contains(&0) {
            return Err(ModelError::BadConfig("every branch needs at least 1 channel".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Grayscale input size `(height, width)`.
    pub input_size: (usize, usize),
    pub stem_channels: usize,
    pub blocks: Vec<BlockSpec>,
    pub heads: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: (128, 128),
            stem_channels: 8,
            blocks: vec![
                BlockSpec::new(4, 8, 4, 4),
                BlockSpec::new(8, 12, 6, 6),
                BlockSpec::new(8, 16, 8, 8),
            ],
            heads: 4,
            dropout_rate: 0.4,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    /// Channel count entering the attention block and the classifier head.
    pub fn final_channels(&self) -> usize {
        self.blocks.last().map_or(self.stem_channels, BlockSpec::output_channels)
    }

    /// Spatial size of the final feature map.
    pub fn final_spatial(&self) -> (usize, usize) {
        let shrink = |mut v: usize| {
            v = (v + 2 - 3) / 2 + 1; // stem conv 3x3 stride 2 pad 1
            v /= 2; // stem max pool
            for _ in 1..self.blocks.len().max(1) {
                v /= 2; // reduction after every block but the last
            }
            v
        };
        (shrink(self.input_size.0), shrink(self.input_size.1))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.num_classes != 2 {
            return Err(ModelError::BadConfig(format!(
                "this is a binary classifier; num_classes must be 2, got {}",
                self.num_classes
            )));
        }
        if self.stem_channels == 0 {
            return Err(ModelError::BadConfig("stem_channels must be at least 1".into()));
        }
        if self.blocks.is_empty() {
            return Err(ModelError::BadConfig("at least one block is required".into()));
        }
        for b in &self.blocks {
            b.validate()?;
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.heads == 0 || !self.final_channels().is_multiple_of(self.heads) {
            return Err(ModelError::ChannelsNotDivisible {
                channels: self.final_channels(),
                heads: self.heads,
            });
        }
        let (fh, fw) = self.final_spatial();
        if fh == 0 || fw == 0 {
            return Err(ModelError::BadConfig(format!(
                "input {:?} collapses to an empty feature map; use a larger input or fewer blocks",
                self.input_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Parameter {
    value: Tensor,
    trainable: bool,
}

/// The assembled classifier: named parameters plus the architecture drawn
/// from its [`ModelConfig`].
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    params: Vec<(String, Parameter)>,
}

/// Handles produced by a forward pass for training loops.
pub struct ForwardPass {
    /// Softmax probabilities, shape `[batch, 2]`.
    pub probs: Var,
    /// Tape handle per trainable parameter, in model parameter order.
    pub param_vars: Vec<(String, Var)>,
}

impl Model {
    /// Builds a model with He-uniform conv/dense weights, zero biases, and
    /// He-uniform attention projections, deterministically from the seed.
    pub fn build(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();

        let conv = |params: &mut Vec<(String, Parameter)>,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        out_c: usize,
                        in_c: usize,
                        k: usize| {
            let fan_in = in_c * k * k;
            let limit = (6.0 / fan_in as f64).sqrt();
            let data = (0..out_c * in_c * k * k).map(|_| rng.random_range(-limit..limit)).collect();
            let weight = Tensor::new(vec![out_c, in_c, k, k], data).expect("consistent shape");
            params.push((format!("{name}.w"), Parameter { value: weight, trainable: true }));
            params.push((
                format!("{name}.b"),
                Parameter { value: Tensor::zeros(vec![out_c]), trainable: true },
            ));
        };

        conv(&mut params, &mut rng, "stem", cfg.stem_channels, 1, 3);
        let mut channels = cfg.stem_channels;
        for (i, block) in cfg.blocks.iter().enumerate() {
            let base = format!("block{}", i + 1);
            conv(&mut params, &mut rng, &format!("{base}.b1x1"), block.conv1x1, channels, 1);
            conv(&mut params, &mut rng, &format!("{base}.b3x3"), block.conv3x3, channels, 3);
            if block.factorize_5x5 {
                conv(&mut params, &mut rng, &format!("{base}.b5x5a"), block.conv5x5, channels, 3);
                conv(&mut params, &mut rng, &format!("{base}.b5x5b"), block.conv5x5, block.conv5x5, 3);
            } else {
                conv(&mut params, &mut rng, &format!("{base}.b5x5"), block.conv5x5, channels, 5);
            }
            conv(&mut params, &mut rng, &format!("{base}.pool"), block.pool_proj, channels, 1);
            channels = block.output_channels();
        }

        let attn = AttentionWeights::init(channels, cfg.heads, &mut rng)?;
        for (i, head) in attn.heads().iter().enumerate() {
            for (suffix, tensor) in [("wq", &head.wq), ("wk", &head.wk), ("wv", &head.wv)] {
                params.push((
                    format!("attn.head{i}.{suffix}"),
                    Parameter { value: tensor.clone(), trainable: true },
                ));
            }
        }
        params.push(("attn.wo".to_string(), Parameter { value: attn.wo().clone(), trainable: true }));

        let limit = (6.0 / channels as f64).sqrt();
        let dense_w: Vec<f64> =
            (0..cfg.num_classes * channels).map(|_| rng.random_range(-limit..limit)).collect();
        params.push((
            "head.dense.w".to_string(),
            Parameter {
                value: Tensor::new(vec![cfg.num_classes, channels], dense_w).expect("consistent"),
                trainable: true,
            },
        ));
        params.push((
            "head.dense.b".to_string(),
            Parameter { value: Tensor::zeros(vec![cfg.num_classes]), trainable: true },
        ));

        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, p)| p.value.numel()).sum()
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, p)| &p.value)
    }

    pub fn is_trainable(&self, name: &str) -> Option<bool> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, p)| p.trainable)
    }

    /// Mutable access for optimizer updates: `(name, tensor)` for every
    /// trainable parameter, in architecture order.
    pub fn trainable_params_mut(&mut self) -> Vec<(&str, &mut Tensor)> {
        self.params
            .iter_mut()
            .filter(|(_, p)| p.trainable)
            .map(|(n, p)| (n.as_str(), &mut p.value))
            .collect()
    }

    /// Flips the trainable flag on every parameter whose name starts with
    /// `prefix`; returns how many matched.
    pub fn set_trainable(&mut self, prefix: &str, flag: bool) -> Result<usize, ModelError> {
        let mut matched = 0;
        for (name, p) in &mut self.params {
            if name.starts_with(prefix) {
                p.trainable = flag;
                matched += 1;
            }
        }
        if matched == 0 {
            return Err(ModelError::NoSuchPrefix(prefix.to_string()));
        }
        Ok(matched)
    }

    fn var_of(&self, tape: &mut Tape, name: &str) -> Var {
        let p = &self.params.iter().find(|(n, _)| n == name).expect("parameter exists").1;
        if p.trainable {
            tape.param(p.value.clone())
        } else {
            tape.constant(p.value.clone())
        }
    }

    /// Records the full forward graph for an input batch already on the
    /// tape (shape `[N, 1, H, W]`, intensities normalized to `[0, 1]`).
    pub fn forward_from_var(
        &self,
        tape: &mut Tape,
        batch: Var,
        training: bool,
        dropout_rng: &mut impl Rng,
    ) -> Result<ForwardPass, ModelError> {
        let shape = tape.value(batch).shape().to_vec();
        let (h, w) = self.cfg.input_size;
        if shape.len() != 4 || shape[1] != 1 || shape[2] != h || shape[3] != w {
            return Err(ModelError::BadInput { expected: vec![0, 1, h, w], actual: shape });
        }

        let mut vars: Vec<(String, Var)> = Vec::new();
        let mut get = |tape: &mut Tape, name: &str| -> Var {
            let v = self.var_of(tape, name);
            if self.is_trainable(name) == Some(true) {
                vars.push((name.to_string(), v));
            }
            v
        };

        // stem: conv 3x3 stride 2 -> relu -> max pool 2x2
        let stem_w = get(tape, "stem.w");
        let stem_b = get(tape, "stem.b");
        let mut x = tape.conv2d(batch, stem_w, 2, 1)?;
        x = tape.bias_nchw(x, stem_b)?;
        x = tape.relu(x);
        x = tape.maxpool2d(x, (2, 2), 2, 0)?;

        let block_count = self.cfg.blocks.len();
        for (i, block) in self.cfg.blocks.iter().enumerate() {
            let base = format!("block{}", i + 1);
            let branch = |tape: &mut Tape,
                              get: &mut dyn FnMut(&mut Tape, &str) -> Var,
                              name: String,
                              input: Var,
                              pad: usize|
             -> Result<Var, ModelError> {
                let w = get(tape, &format!("{name}.w"));
                let b = get(tape, &format!("{name}.b"));
                let mut y = tape.conv2d(input, w, 1, pad)?;
                y = tape.bias_nchw(y, b)?;
                Ok(tape.relu(y))
            };
            let b1 = branch(tape, &mut get, format!("{base}.b1x1"), x, 0)?;
            let b3 = branch(tape, &mut get, format!("{base}.b3x3"), x, 1)?;
            let b5 = if block.factorize_5x5 {
                let t = branch(tape, &mut get, format!("{base}.b5x5a"), x, 1)?;
                branch(tape, &mut get, format!("{base}.b5x5b"), t, 1)?
            } else {
                branch(tape, &mut get, format!("{base}.b5x5"), x, 2)?
            };
            let pooled = tape.avgpool2d(x, (3, 3), 1, 1)?;
            let bp = branch(tape, &mut get, format!("{base}.pool"), pooled, 0)?;
            x = tape.concat_channels(&[b1, b3, b5, bp])?;
            if i + 1 < block_count {
                x = tape.maxpool2d(x, (2, 2), 2, 0)?;
            }
        }

        // attention over the final feature map
        let attn_vars = AttentionVars {
            heads: (0..self.cfg.heads)
                .map(|i| crate::attention::HeadVars {
                    wq: get(tape, &format!("attn.head{i}.wq")),
                    wk: get(tape, &format!("attn.head{i}.wk")),
                    wv: get(tape, &format!("attn.head{i}.wv")),
                })
                .collect(),
            wo: get(tape, "attn.wo"),
        };
        x = crate::attention::attend_feature_map(tape, x, &attn_vars)?;

        let mut features = tape.global_average_pool(x)?;
        features = tape.dropout(features, self.cfg.dropout_rate, training, dropout_rng)?;
        let dense_w = get(tape, "head.dense.w");
        let dense_b = get(tape, "head.dense.b");
        let logits = tape.dense(features, dense_w, dense_b)?;
        let probs = tape.softmax(logits)?;
        Ok(ForwardPass { probs, param_vars: vars })
    }

    /// Forward pass from a raw batch tensor.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        batch: &Tensor,
        training: bool,
        dropout_rng: &mut impl Rng,
    ) -> Result<ForwardPass, ModelError> {
        let batch = tape.constant(batch.clone());
        self.forward_from_var(tape, batch, training, dropout_rng)
    }

    /// Inference-only forward returning the probability tensor.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0); // dropout is off in inference
        let pass = self.forward_on_tape(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(pass.probs).clone())
    }

    /// Normalizes a grayscale image into a `[1, 1, H, W]` input tensor.
    pub fn image_to_input(&self, img: &GrayImage) -> Result<Tensor, ModelError> {
        let (h, w) = self.cfg.input_size;
        if (img.height(), img.width()) != (h, w) {
            return Err(ModelError::BadImageSize {
                expected: (w, h),
                actual: (img.width(), img.height()),
            });
        }
        let scale = 1.0 / img.max_value();
        let data = img.data().iter().map(|&v| v * scale).collect();
        Ok(Tensor::new(vec![1, 1, h, w], data)?)
    }

    /// Classifies one image sized to the model input. Ties resolve to
    /// `NotPresent`; the confidence is the winning probability.
    pub fn predict(&self, img: &GrayImage) -> Result<(Label, f64), ModelError> {
        let input = self.image_to_input(img)?;
        let probs = self.forward(&input)?;
        Ok(decide(probs.data()[0], probs.data()[1]))
    }

    /// Writes the parameter tensors plus a `key = value` sidecar
    /// (`<path>.cfg`) describing the architecture.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let entries: Vec<(String, Tensor)> =
            self.params.iter().map(|(n, p)| (n.clone(), p.value.clone())).collect();
        checkpoint::save_tensors(path, &entries)?;
        let sidecar = sidecar_path(path);
        std::fs::write(&sidecar, encode_config(&self.cfg))
            .map_err(|source| ModelError::SidecarIo { path: sidecar.display().to_string(), source })?;
        Ok(())
    }

    /// Loads a checkpoint written by [`Model::save`]. Every architecture
    /// parameter must be present with its expected shape; all parameters
    /// load as trainable.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let sidecar = sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar)
            .map_err(|source| ModelError::SidecarIo { path: sidecar.display().to_string(), source })?;
        let cfg = decode_config(&text)?;
        let mut template = Model::build(cfg, 0)?;
        let mut entries = checkpoint::load_tensors(path)?;
        for (name, p) in &mut template.params {
            let tensor = checkpoint::take_tensor(&mut entries, name)?;
            if tensor.shape() != p.value.shape() {
                return Err(ModelError::ParamShape {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    actual: tensor.shape().to_vec(),
                });
            }
            p.value = tensor;
        }
        Ok(template)
    }
}

/// Argmax decision with the documented tie rule (exact equality goes to
/// `NotPresent`).
pub fn decide(prob_not_present: f64, prob_present: f64) -> (Label, f64) {
    if prob_present > prob_not_present {
        (Label::Present, prob_present)
    } else {
        (Label::NotPresent, prob_not_present)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".cfg");
    std::path::PathBuf::from(os)
}

fn encode_config(cfg: &ModelConfig) -> String {
    let blocks = cfg
        .blocks
        .iter()
        .map(|b| {
            format!(
                "{},{},{},{},{}",
                b.conv1x1,
                b.conv3x3,
                b.conv5x5,
                b.pool_proj,
                if b.factorize_5x5 { "f" } else { "p" }
            )
        })
        .collect::<Vec<_>>()
        .join(";");
    format!(
        "input_height = {}\ninput_width = {}\nstem_channels = {}\nblocks = {}\nheads = {}\ndropout_rate = {}\nnum_classes = {}\n",
        cfg.input_size.0,
        cfg.input_size.1,
        cfg.stem_channels,
        blocks,
        cfg.heads,
        cfg.dropout_rate,
        cfg.num_classes
    )
}

fn decode_config(text: &str) -> Result<ModelConfig, ModelError> {
    let mut cfg = ModelConfig::default();
    let mut blocks_seen = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ModelError::BadSidecar(line.to_string()))?;
        let bad = || ModelError::BadSidecar(line.to_string());
        match key {
            "input_height" => cfg.input_size.0 = value.parse().map_err(|_| bad())?,
            "input_width" => cfg.input_size.1 = value.parse().map_err(|_| bad())?,
            "stem_channels" => cfg.stem_channels = value.parse().map_err(|_| bad())?,
            "heads" => cfg.heads = value.parse().map_err(|_| bad())?,
            "dropout_rate" => cfg.dropout_rate = value.parse().map_err(|_| bad())?,
            "num_classes" => cfg.num_classes = value.parse().map_err(|_| bad())?,
            "blocks" => {
                blocks_seen = true;
                cfg.blocks = value
                    .split(';')
                    .map(|spec| {
                        let parts: Vec<&str> = spec.split(',').collect();
                        if parts.len() != 5 {
                            return Err(bad());
                        }
                        Ok(BlockSpec {
                            conv1x1: parts[0].parse().map_err(|_| bad())?,
                            conv3x3: parts[1].parse().map_err(|_| bad())?,
                            conv5x5: parts[2].parse().map_err(|_| bad())?,
                            pool_proj: parts[3].parse().map_err(|_| bad())?,
                            factorize_5x5: match parts[4] {
                                "f" => true,
                                "p" => false,
                                _ => return Err(bad()),
                            },
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
            }
            _ => return Err(ModelError::BadSidecar(line.to_string())),
        }
    }
    if !blocks_seen {
        return Err(ModelError::BadSidecar("missing blocks entry".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}
