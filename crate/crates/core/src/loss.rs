//! Training objectives over probability maps: Dice, weighted Dice, binary
//! cross-entropy, IoU and the Dice + BCE combination.
//!
//! Each term exposes its value and its gradient with respect to the
//! prediction so the tape can record it as a single node.

use std::fmt;
use std::str::FromStr;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Smoothing constant of the Dice and IoU ratios.
pub const DEFAULT_EPS: f64 = 1.0;
/// Probability clamp for the cross-entropy logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// One differentiable scalar objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTerm {
    Dice { eps: f64 },
    WeightedDice { w_fg: f64, w_bg: f64, eps: f64 },
    Bce,
    Iou { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossTermKind {
    Dice,
    WeightedDice,
    Bce,
    Iou,
}

impl LossTerm {
    pub fn kind(&self) -> LossTermKind {
        match self {
            LossTerm::Dice { .. } => LossTermKind::Dice,
            LossTerm::WeightedDice { .. } => LossTermKind::WeightedDice,
            LossTerm::Bce => LossTermKind::Bce,
            LossTerm::Iou { .. } => LossTermKind::Iou,
        }
    }

    /// Loss value and d(loss)/d(pred).
    pub fn value_and_grad<T: Scalar>(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        pred.expect_same_shape(target)?;
        match *self {
            LossTerm::Dice { eps } => {
                require_binary(target)?;
                Ok(weighted_dice(pred, target, 1.0, 1.0, eps))
            }
            LossTerm::WeightedDice { w_fg, w_bg, eps } => {
                if !(w_fg > 0.0 && w_bg > 0.0) {
                    return Err(Error::invalid(format!(
                        "weighted dice needs positive weights, got w_fg={w_fg}, w_bg={w_bg}"
                    )));
                }
                require_binary(target)?;
                Ok(weighted_dice(pred, target, w_fg, w_bg, eps))
            }
            LossTerm::Bce => Ok(bce(pred, target)),
            LossTerm::Iou { eps } => {
                require_binary(target)?;
                Ok(iou(pred, target, eps))
            }
        }
    }
}

fn require_binary<T: Scalar>(target: &Tensor<T>) -> Result<()> {
    if target.data().iter().all(|&g| g == T::zero() || g == T::one()) {
        Ok(())
    } else {
        Err(Error::invalid("target mask must contain only 0 and 1"))
    }
}

fn weighted_dice<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, w_fg: f64, w_bg: f64, eps: f64) -> (f64, Tensor<T>) {
    let weight = |g: f64| if g > 0.5 { w_fg } else { w_bg };
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        let w = weight(g);
        inter += w * p * g;
        sum_p += w * p;
        sum_g += w * g;
    }
    let num = 2.0 * inter + eps;
    let den = sum_p + sum_g + eps;
    let value = 1.0 - num / den;
    let grad = pred
        .zip_map(target, |_, g| {
            let g = g.as_f64();
            let w = weight(g);
            T::of(-(2.0 * w * g * den - num * w) / (den * den))
        })
        .expect("same shape");
    (value, grad)
}

fn bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    let count = pred.numel() as f64;
    let mut total = 0.0;
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let p = p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let g = g.as_f64();
        total -= g * p.ln() + (1.0 - g) * (1.0 - p).ln();
    }
    let grad = pred
        .zip_map(target, |p, g| {
            let (p, g) = (p.as_f64(), g.as_f64());
            if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) {
                return T::zero();
            }
            T::of((-g / p + (1.0 - g) / (1.0 - p)) / count)
        })
        .expect("same shape");
    (total / count, grad)
}

fn iou<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> (f64, Tensor<T>) {
    let (mut inter, mut sum_p, mut sum_g) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(target.data()) {
        let (p, g) = (p.as_f64(), g.as_f64());
        inter += p * g;
        sum_p += p;
        sum_g += g;
    }
    let num = inter + eps;
    let den = sum_p + sum_g - inter + eps;
    let grad = pred
        .zip_map(target, |_, g| {
            let g = g.as_f64();
            T::of(-(g * den - num * (1.0 - g)) / (den * den))
        })
        .expect("same shape");
    (1.0 - num / den, grad)
}

pub fn dice_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    Ok(LossTerm::Dice { eps }.value_and_grad(pred, target)?.0)
}

pub fn weighted_dice_loss<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    w_fg: f64,
    w_bg: f64,
    eps: f64,
) -> Result<f64> {
    Ok(LossTerm::WeightedDice { w_fg, w_bg, eps }
        .value_and_grad(pred, target)?
        .0)
}

pub fn bce_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    Ok(LossTerm::Bce.value_and_grad(pred, target)?.0)
}

pub fn iou_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<f64> {
    Ok(LossTerm::Iou { eps }.value_and_grad(pred, target)?.0)
}

pub fn combo_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, lambda_dice: f64, lambda_bce: f64) -> Result<f64> {
    check_lambdas(lambda_dice, lambda_bce)?;
    Ok(lambda_dice * dice_loss(pred, target, DEFAULT_EPS)? + lambda_bce * bce_loss(pred, target)?)
}

fn check_lambdas(lambda_dice: f64, lambda_bce: f64) -> Result<()> {
    if lambda_dice < 0.0 || lambda_bce < 0.0 || !lambda_dice.is_finite() || !lambda_bce.is_finite() {
        return Err(Error::invalid(format!(
            "loss weights must be non-negative, got dice={lambda_dice}, bce={lambda_bce}"
        )));
    }
    Ok(())
}

/// Default weighted-Dice weights: background 1, foreground the
/// background/foreground pixel ratio of `target` (1 when either is empty).
pub fn balanced_weights<T: Scalar>(target: &Tensor<T>) -> (f64, f64) {
    let fg = target.data().iter().filter(|&&g| g > T::of(0.5)).count();
    let bg = target.numel() - fg;
    if fg == 0 || bg == 0 {
        (1.0, 1.0)
    } else {
        (bg as f64 / fg as f64, 1.0)
    }
}

/// Training objective selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LossKind {
    Dice,
    WeightedDice,
    Bce,
    Iou,
    #[default]
    DiceBce,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Dice,
        LossKind::WeightedDice,
        LossKind::Bce,
        LossKind::Iou,
        LossKind::DiceBce,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::WeightedDice => "wdice",
            LossKind::Bce => "bce",
            LossKind::Iou => "iou",
            LossKind::DiceBce => "dice+bce",
        }
    }

    /// Evaluates the objective without recording it.
    pub fn evaluate<T: Scalar>(&self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        self.terms(target)
            .into_iter()
            .map(|(term, w)| Ok(w * term.value_and_grad(pred, target)?.0))
            .sum()
    }

    /// Records the objective on `tape` and returns the scalar loss node.
    pub fn record<T: Scalar>(&self, tape: &mut Tape<T>, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let mut total: Option<Var> = None;
        for (term, w) in self.terms(target) {
            let mut v = tape.loss(pred, target, term)?;
            if w != 1.0 {
                v = tape.scale(v, T::of(w));
            }
            total = Some(match total {
                Some(acc) => tape.add(acc, v)?,
                None => v,
            });
        }
        Ok(total.expect("every loss kind has at least one term"))
    }

    fn terms<T: Scalar>(&self, target: &Tensor<T>) -> Vec<(LossTerm, f64)> {
        match self {
            LossKind::Dice => vec![(LossTerm::Dice { eps: DEFAULT_EPS }, 1.0)],
            LossKind::WeightedDice => {
                let (w_fg, w_bg) = balanced_weights(target);
                vec![(LossTerm::WeightedDice { w_fg, w_bg, eps: DEFAULT_EPS }, 1.0)]
            }
            LossKind::Bce => vec![(LossTerm::Bce, 1.0)],
            LossKind::Iou => vec![(LossTerm::Iou { eps: DEFAULT_EPS }, 1.0)],
            LossKind::DiceBce => vec![
                (LossTerm::Dice { eps: DEFAULT_EPS }, 1.0),
                (LossTerm::Bce, 1.0),
            ],
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown loss kind `{s}` (expected one of dice, wdice, bce, iou, dice+bce)"
                ))
            })
    }
}
