//! Attack losses on the score vector.

use crate::error::{Error, Result};
use crate::model::cross_entropy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `c (f_s - max_{s' != s} f_s' + kappa)^+`
    CwMargin,
    /// `c * -log softmax(f)_s`
    CrossEntropy,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cw" => Ok(LossKind::CwMargin),
            "xent" => Ok(LossKind::CrossEntropy),
            other => Err(Error::config(format!("unknown loss {other:?} (expected cw or xent)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossParams {
    c: f64,
    kappa: f64,
    kind: LossKind,
}

impl MarginLossParams {
    pub fn new(c: f64, kappa: f64, kind: LossKind) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::config(format!("loss scale c must be positive, got {c}")));
        }
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::config(format!("margin kappa must be non-negative, got {kappa}")));
        }
        Ok(Self { c, kappa, kind })
    }

    /// CW margin loss with the given scale and margin.
    pub fn cw(c: f64, kappa: f64) -> Result<Self> {
        Self::new(c, kappa, LossKind::CwMargin)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }
}

/// Highest-scoring class other than `label`, lowest index on ties.
pub fn runner_up(scores: &[f64], label: usize) -> (usize, f64) {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if i != label && best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.expect("at least two classes")
}

/// `f_s - max_{s' != s} f_s'`.
pub fn score_margin(scores: &[f64], label: usize) -> f64 {
    scores[label] - runner_up(scores, label).1
}

pub fn margin_loss(scores: &[f64], label: usize, p: &MarginLossParams) -> Result<f64> {
    Ok(margin_loss_grad(scores, label, p)?.0)
}

/// Loss value and its gradient with respect to the scores. The max over
/// other classes passes gradient only to the attaining class.
pub fn margin_loss_grad(scores: &[f64], label: usize, p: &MarginLossParams) -> Result<(f64, Vec<f64>)> {
    validate(scores, label)?;
    let mut grad = vec![0.0; scores.len()];
    match p.kind {
        LossKind::CwMargin => {
            let (other, other_score) = runner_up(scores, label);
            let active = scores[label] - other_score + p.kappa;
            if active > 0.0 {
                grad[label] = p.c;
                grad[other] = -p.c;
                Ok((p.c * active, grad))
            } else {
                Ok((0.0, grad))
            }
        }
        LossKind::CrossEntropy => {
            let (v, g) = cross_entropy(scores, label);
            Ok((p.c * v, g.into_iter().map(|x| p.c * x).collect()))
        }
    }
}

/// Objective that untargeted PGD ascends: cross-entropy, or for the CW kind
/// the unclipped `max_{s' != s} f_s' - f_s`.
pub fn ascent_objective(scores: &[f64], label: usize, kind: LossKind) -> Result<(f64, Vec<f64>)> {
    validate(scores, label)?;
    match kind {
        LossKind::CrossEntropy => Ok(cross_entropy(scores, label)),
        LossKind::CwMargin => {
            let (other, other_score) = runner_up(scores, label);
            let mut grad = vec![0.0; scores.len()];
            grad[label] = -1.0;
            grad[other] = 1.0;
            Ok((other_score - scores[label], grad))
        }
    }
}

fn validate(scores: &[f64], label: usize) -> Result<()> {
    if scores.len() < 2 {
        return Err(Error::config("need at least two class scores"));
    }
    if label >= scores.len() {
        return Err(Error::InvalidLabel { label, classes: scores.len() });
    }
    Ok(())
}
