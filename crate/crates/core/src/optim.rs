//! First-order optimizers.
//!
//! Four update rules over flat parameter slices: plain gradient descent,
//! classical momentum, RMSprop, and the uncorrected adaptive-moment update
//! `w <- w - lr * m / sqrt(v + eps)`. The [`Optimizer`] wrapper keeps
//! per-parameter state keyed by name so a training loop can drive any mix
//! of tensors; frozen parameters simply never reach it.

use std::collections::BTreeMap;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("parameter/gradient length mismatch: {params} vs {grads}")]
    ShapeMismatch { params: usize, grads: usize },
    #[error("state length mismatch for {slot}: {expected} vs {actual}")]
    StateMismatch { slot: &'static str, expected: usize, actual: usize },
    #[error("{name} must satisfy {requirement}, got {value}")]
    BadHyper { name: &'static str, requirement: &'static str, value: f64 },
    #[error("unknown optimizer {0:?}; expected sgd, momentum, rmsprop, or adam")]
    UnknownKind(String),
}

fn check_lengths(params: &[f64], grads: &[f64]) -> Result<(), OptimError> {
    if params.len() != grads.len() {
        return Err(OptimError::ShapeMismatch { params: params.len(), grads: grads.len() });
    }
    Ok(())
}

fn check_state(slot: &'static str, state: &[f64], expected: usize) -> Result<(), OptimError> {
    if state.len() != expected {
        return Err(OptimError::StateMismatch { slot, expected, actual: state.len() });
    }
    Ok(())
}

fn positive(name: &'static str, value: f64) -> Result<(), OptimError> {
    let ok = value > 0.0;
    if !ok {
        return Err(OptimError::BadHyper { name, requirement: "> 0", value });
    }
    Ok(())
}

fn unit_interval(name: &'static str, value: f64) -> Result<(), OptimError> {
    if !(0.0..1.0).contains(&value) {
        return Err(OptimError::BadHyper { name, requirement: "in [0, 1)", value });
    }
    Ok(())
}

/// `w <- w - lr * g`
pub fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), OptimError> {
    positive("learning rate", lr)?;
    check_lengths(params, grads)?;
    for (w, g) in params.iter_mut().zip(grads) {
        *w -= lr * g;
    }
    Ok(())
}

/// Two-stage momentum update: `z <- beta * z + g`, then `w <- w - lr * z`.
/// `momentum` starts at zero.
pub fn momentum_step(
    params: &mut [f64],
    grads: &[f64],
    momentum: &mut [f64],
    lr: f64,
    beta: f64,
) -> Result<(), OptimError> {
    positive("learning rate", lr)?;
    unit_interval("momentum coefficient", beta)?;
    check_lengths(params, grads)?;
    check_state("momentum", momentum, params.len())?;
    for ((w, g), z) in params.iter_mut().zip(grads).zip(momentum.iter_mut()) {
        *z = beta * *z + g;
        *w -= lr * *z;
    }
    Ok(())
}

/// RMSprop: exponentially weighted squared-gradient average
/// `s <- avg * s + (1 - avg) * g^2`, then `w <- w - step * g / sqrt(s + eps)`.
pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    sq_avg: &mut [f64],
    avg: f64,
    step: f64,
    eps: f64,
) -> Result<(), OptimError> {
    unit_interval("averaging factor", avg)?;
    positive("step size", step)?;
    positive("epsilon", eps)?;
    check_lengths(params, grads)?;
    check_state("squared-gradient average", sq_avg, params.len())?;
    for ((w, g), s) in params.iter_mut().zip(grads).zip(sq_avg.iter_mut()) {
        *s = avg * *s + (1.0 - avg) * g * g;
        *w -= step / (*s + eps).sqrt() * g;
    }
    Ok(())
}

/// Adaptive-moment update without bias correction:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`,
/// `w <- w - lr * m / sqrt(v + eps)`.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_moment_step(
    params: &mut [f64],
    grads: &[f64],
    first_moment: &mut [f64],
    second_moment: &mut [f64],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), OptimError> {
    positive("learning rate", lr)?;
    unit_interval("beta1", beta1)?;
    unit_interval("beta2", beta2)?;
    positive("epsilon", eps)?;
    check_lengths(params, grads)?;
    check_state("first moment", first_moment, params.len())?;
    check_state("second moment", second_moment, params.len())?;
    for (((w, g), m), v) in
        params.iter_mut().zip(grads).zip(first_moment.iter_mut()).zip(second_moment.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *w -= lr * *m / (*v + eps).sqrt();
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Momentum,
    RmsProp,
    AdaptiveMoment,
}

impl OptimizerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Momentum => "momentum",
            Self::RmsProp => "rmsprop",
            Self::AdaptiveMoment => "adam",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = OptimError;

    fn from_str(s: &str) -> Result<Self, OptimError> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "momentum" => Ok(Self::Momentum),
            "rmsprop" => Ok(Self::RmsProp),
            "adam" => Ok(Self::AdaptiveMoment),
            other => Err(OptimError::UnknownKind(other.to_string())),
        }
    }
}

/// Hyperparameters shared across the four rules; unused fields are ignored
/// by kinds that do not read them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub learning_rate: f64,
    /// Momentum coefficient (momentum kind).
    pub momentum_beta: f64,
    /// Squared-gradient averaging factor (RMSprop kind).
    pub rms_avg: f64,
    /// First/second moment decay (adaptive-moment kind).
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Hyperparams {
    /// Library defaults per kind: SGD lr 0.01; momentum lr 0.01, beta 0.9;
    /// RMSprop avg 0.9, step 0.001; adaptive-moment lr 0.001 with
    /// betas (0.9, 0.999). Epsilon is 1e-8 throughout.
    pub fn defaults(kind: OptimizerKind) -> Self {
        let learning_rate = match kind {
            OptimizerKind::Sgd | OptimizerKind::Momentum => 0.01,
            OptimizerKind::RmsProp | OptimizerKind::AdaptiveMoment => 0.001,
        };
        Self {
            learning_rate,
            momentum_beta: 0.9,
            rms_avg: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn validate(&self, kind: OptimizerKind) -> Result<(), OptimError> {
        positive("learning rate", self.learning_rate)?;
        positive("epsilon", self.eps)?;
        match kind {
            OptimizerKind::Sgd => Ok(()),
            OptimizerKind::Momentum => unit_interval("momentum coefficient", self.momentum_beta),
            OptimizerKind::RmsProp => unit_interval("averaging factor", self.rms_avg),
            OptimizerKind::AdaptiveMoment => {
                unit_interval("beta1", self.beta1)?;
                unit_interval("beta2", self.beta2)
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct Slot {
    a: Vec<f64>,
    b: Vec<f64>,
}

/// A configured update rule plus its per-parameter state, keyed by
/// parameter name.
#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    hyper: Hyperparams,
    slots: BTreeMap<String, Slot>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, hyper: Hyperparams) -> Result<Self, OptimError> {
        hyper.validate(kind)?;
        Ok(Self { kind, hyper, slots: BTreeMap::new() })
    }

    pub fn with_defaults(kind: OptimizerKind) -> Self {
        Self::new(kind, Hyperparams::defaults(kind)).expect("defaults are valid")
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    /// Applies one update to the named parameter buffer.
    pub fn step(&mut self, name: &str, params: &mut [f64], grads: &[f64]) -> Result<(), OptimError> {
        let h = self.hyper;
        match self.kind {
            OptimizerKind::Sgd => sgd_step(params, grads, h.learning_rate),
            OptimizerKind::Momentum => {
                let slot = self.slot(name, params.len(), false);
                momentum_step(params, grads, &mut slot.a, h.learning_rate, h.momentum_beta)
            }
            OptimizerKind::RmsProp => {
                let slot = self.slot(name, params.len(), false);
                rmsprop_step(params, grads, &mut slot.a, h.rms_avg, h.learning_rate, h.eps)
            }
            OptimizerKind::AdaptiveMoment => {
                let slot = self.slot(name, params.len(), true);
                adaptive_moment_step(
                    params,
                    grads,
                    &mut slot.a,
                    &mut slot.b,
                    h.learning_rate,
                    h.beta1,
                    h.beta2,
                    h.eps,
                )
            }
        }
    }

    fn slot(&mut self, name: &str, len: usize, dual: bool) -> &mut Slot {
        self.slots.entry(name.to_string()).or_insert_with(|| Slot {
            a: vec![0.0; len],
            b: if dual { vec![0.0; len] } else { Vec::new() },
        })
    }

    /// State buffers as `(name, data)` pairs for checkpointing, prefixed
    /// `opt.`; deterministic order.
    pub fn state_entries(&self) -> Vec<(String, Vec<f64>)> {
        let (first, second) = match self.kind {
            OptimizerKind::Sgd => return Vec::new(),
            OptimizerKind::Momentum => ("momentum", None),
            OptimizerKind::RmsProp => ("sq_avg", None),
            OptimizerKind::AdaptiveMoment => ("m", Some("v")),
        };
        let mut out = Vec::new();
        for (name, slot) in &self.slots {
            out.push((format!("opt.{first}.{name}"), slot.a.clone()));
            if let Some(second) = second {
                out.push((format!("opt.{second}.{name}"), slot.b.clone()));
            }
        }
        out
    }

    /// Restores state buffers previously produced by
    /// [`Optimizer::state_entries`]; returns how many slots were filled.
    /// Entries for other optimizer kinds are ignored.
    pub fn load_state_entries(&mut self, entries: &[(String, Vec<f64>)]) -> usize {
        let (first, second) = match self.kind {
            OptimizerKind::Sgd => return 0,
            OptimizerKind::Momentum => ("opt.momentum.", None),
            OptimizerKind::RmsProp => ("opt.sq_avg.", None),
            OptimizerKind::AdaptiveMoment => ("opt.m.", Some("opt.v.")),
        };
        let mut filled = 0;
        for (name, data) in entries {
            if let Some(param) = name.strip_prefix(first) {
                let slot = self.slot(param, data.len(), second.is_some());
                slot.a = data.clone();
                filled += 1;
            } else if let Some(second) = second {
                if let Some(param) = name.strip_prefix(second) {
                    let slot = self.slot(param, data.len(), true);
                    slot.b = data.clone();
                    filled += 1;
                }
            }
        }
        filled
    }

    /// True when every stored state value is nonnegative; squared-gradient
    /// and second-moment buffers must satisfy this at all times.
    pub fn squared_state_nonnegative(&self) -> bool {
        match self.kind {
            OptimizerKind::Sgd | OptimizerKind::Momentum => true,
            OptimizerKind::RmsProp => {
                self.slots.values().all(|s| s.a.iter().all(|&v| v >= 0.0))
            }
            OptimizerKind::AdaptiveMoment => {
                self.slots.values().all(|s| s.b.iter().all(|&v| v >= 0.0))
            }
        }
    }
}

#[cfg(test)]
mod tests;
