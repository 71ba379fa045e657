//! Whole-network finite-difference gradient verification.
//!
//! Every parameter tensor is one group. For each group a seeded sample of
//! elements is perturbed by `±h` and the central difference of the training
//! loss is compared with the gradient from the tape.
//!
//! The loss is only piecewise smooth (ReLU, max-pool) and batch norm lets one
//! parameter move every pre-activation, so perturbations routinely cross
//! kinks. The perturbed passes therefore replay the ReLU masks and max-pool
//! winners of the unperturbed pass: the differenced function is then the
//! smooth piece whose gradient backpropagation computes.
//!
//! The central differences at `h` and `2h` are combined by Richardson
//! extrapolation, which cancels the `h^2` error term and so tolerates the
//! larger steps that 32-bit roundoff requires.
//!
//! * 64-bit mode: per-element relative error
//!   `|a - n| / max(|a|, |n|, floor)` must stay below the tolerance.
//! * 32-bit mode: the group's max-norm relative error
//!   `max|a - n| / max(max|a|, max|n|)` must stay below the tolerance.

use std::fmt;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::autograd::{ActivationPattern, Tape};
use crate::error::Result;
use crate::loss::LossKind;
use crate::nn::{Mode, ModelConfig, RgaNet};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn default_step(self) -> f64 {
        match self {
            Precision::F32 => 1e-2,
            Precision::F64 => 1e-5,
        }
    }

    pub fn default_tolerance(self) -> f64 {
        match self {
            Precision::F32 => 1e-2,
            Precision::F64 => 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub loss: LossKind,
    pub size: usize,
    pub batch: usize,
    pub precision: Precision,
    pub step: f64,
    pub tolerance: f64,
    /// Elements checked per group; `None` checks every element.
    pub samples_per_group: Option<usize>,
    /// Gradients below this magnitude are compared absolutely (64-bit mode).
    pub floor: f64,
    pub seed: u64,
    /// Combines steps `h` and `2h` to cancel the `h^2` truncation term.
    pub richardson: bool,
    /// Replays the unperturbed activation pattern in perturbed passes.
    pub freeze_pattern: bool,
    /// Deliberately corrupts the ReLU backward pass (negative control).
    pub corrupt_backward: bool,
}

impl GradCheckConfig {
    pub fn new(precision: Precision) -> Self {
        GradCheckConfig {
            model: ModelConfig::default(),
            loss: LossKind::default(),
            size: 32,
            batch: 2,
            precision,
            step: precision.default_step(),
            tolerance: precision.default_tolerance(),
            samples_per_group: Some(12),
            floor: 1e-5,
            seed: 0,
            freeze_pattern: true,
            richardson: true,
            corrupt_backward: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub name: String,
    pub numel: usize,
    pub checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub precision: Precision,
    pub tolerance: f64,
    pub loss: f64,
    pub groups: Vec<GroupResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> Option<&GroupResult> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.groups.iter().map(|g| g.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>7}  {:>7}  {:>12}  result", "group", "numel", "checked", "max_rel_err")?;
        for g in &self.groups {
            writeln!(
                f,
                "{:<width$}  {:>7}  {:>7}  {:>12.3e}  {}",
                g.name,
                g.numel,
                g.checked,
                g.max_rel_error,
                if g.passed { "ok" } else { "FAIL" }
            )?;
        }
        let mode = match self.precision {
            Precision::F32 => "f32 max-norm",
            Precision::F64 => "f64 per-element",
        };
        write!(
            f,
            "{} groups, {mode} tolerance {:e}, worst {:.3e}: {}",
            self.groups.len(),
            self.tolerance,
            self.worst().map_or(0.0, |g| g.max_rel_error),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Deterministic input batch and a binary target with thin stripe "vessels".
pub fn probe_batch<T: Scalar>(batch: usize, channels: usize, size: usize, seed: u64) -> (Tensor<T>, Tensor<T>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[batch, channels, size, size], |_| T::of(rng.random::<f64>()));
    let phase: Vec<f64> = (0..batch).map(|_| rng.random::<f64>() * 6.0).collect();
    let y = Tensor::from_fn(&[batch, 1, size, size], |i| {
        let n = i / (size * size);
        let (r, c) = ((i / size) % size, i % size);
        let v = ((r as f64 * 0.7 + c as f64 * 0.3 + phase[n]) * 0.9).sin();
        T::of(if v > 0.6 { 1.0 } else { 0.0 })
    });
    (x, y)
}

fn loss_value<T: Scalar>(
    net: &RgaNet<T>,
    x: &Tensor<T>,
    y: &Tensor<T>,
    kind: LossKind,
    pattern: Option<&ActivationPattern>,
) -> Result<f64> {
    let mut tape = match pattern {
        Some(p) => Tape::with_pattern(p.clone()),
        None => Tape::new(),
    };
    let xv = tape.input(x.clone());
    let (vars, _) = net.forward(&mut tape, xv, Mode::Train)?;
    net.loss_value(&tape, &vars, y, kind)
}

fn check_precision<T: Scalar>(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut net = RgaNet::<T>::new(cfg.model.clone(), cfg.seed)?;
    let (x, y) = probe_batch::<T>(cfg.batch, cfg.model.in_channels, cfg.size, cfg.seed ^ 0x5eed);

    let mut tape = Tape::new();
    if cfg.corrupt_backward {
        tape.inject_relu_fault();
    }
    let xv = tape.input(x.clone());
    let (vars, _) = net.forward(&mut tape, xv, Mode::Train)?;
    let l = net.record_loss(&mut tape, &vars, &y, cfg.loss)?;
    let loss = tape.value(l).data()[0].as_f64();
    let pattern = cfg.freeze_pattern.then(|| tape.activation_pattern());
    net.params_mut().zero_grads();
    tape.backward_scalar(net.params_mut())?;
    let analytic: Vec<Vec<f64>> = net
        .params()
        .params()
        .iter()
        .map(|p| p.grad.data().iter().map(|g| g.as_f64()).collect())
        .collect();

    let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_add(17));
    let mut groups = Vec::new();
    for (gi, grads) in analytic.iter().enumerate() {
        let numel = grads.len();
        let indices: Vec<usize> = match cfg.samples_per_group {
            Some(k) if k < numel => rand::seq::index::sample(&mut rng, numel, k).into_vec(),
            _ => (0..numel).collect(),
        };
        let mut pairs = Vec::with_capacity(indices.len());
        for &i in &indices {
            let original = net.params().params()[gi].value.data()[i];
            let central = |net: &mut RgaNet<T>, h: f64| -> Result<f64> {
                let mut at = |v: f64| {
                    net.params_mut().params_mut()[gi].value.data_mut()[i] = T::of(v);
                    loss_value(net, &x, &y, cfg.loss, pattern.as_ref())
                };
                let plus = at(original.as_f64() + h)?;
                let minus = at(original.as_f64() - h)?;
                net.params_mut().params_mut()[gi].value.data_mut()[i] = original;
                Ok((plus - minus) / (2.0 * h))
            };
            let numeric = if cfg.richardson {
                (4.0 * central(&mut net, cfg.step)? - central(&mut net, 2.0 * cfg.step)?) / 3.0
            } else {
                central(&mut net, cfg.step)?
            };
            pairs.push((grads[i], numeric));
        }
        let max_rel_error = match cfg.precision {
            Precision::F64 => pairs
                .iter()
                .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(cfg.floor))
                .fold(0.0, f64::max),
            Precision::F32 => {
                let diff = pairs.iter().map(|&(a, n)| (a - n).abs()).fold(0.0, f64::max);
                let scale = pairs.iter().map(|&(a, n)| a.abs().max(n.abs())).fold(0.0, f64::max);
                if scale > 0.0 {
                    diff / scale
                } else {
                    0.0
                }
            }
        };
        groups.push(GroupResult {
            name: net.params().params()[gi].name.clone(),
            numel,
            checked: pairs.len(),
            max_rel_error,
            passed: !pairs.is_empty() && max_rel_error.is_finite() && max_rel_error < cfg.tolerance,
        });
    }
    Ok(GradCheckReport {
        precision: cfg.precision,
        tolerance: cfg.tolerance,
        loss,
        groups,
    })
}

/// Runs the check in the configured precision.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    match cfg.precision {
        Precision::F32 => check_precision::<f32>(cfg),
        Precision::F64 => check_precision::<f64>(cfg),
    }
}
