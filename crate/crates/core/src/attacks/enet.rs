//! Elastic-net attack.
//!
//! Minimizes `l(x, δ) + β|δ|_1 + |δ|_2^2` over `x + δ ∈ [0,1]^n` with
//! proximal gradient steps: a gradient step on the smooth part
//! `l + |δ|_2^2`, soft-thresholding by `β·lr` for the `L1` term, then
//! projection onto the pixel box. The learning rate at iteration `t` is
//! `lr0 / √t`. The scale `c` inside `l` is chosen by [`binary_search_c`].

use super::loss::{margin_loss_grad, MarginLossParams};
use super::outcome::AttackOutcome;
use super::search::{binary_search_c, Candidate};
use crate::error::{check_len, Error, Result};
use crate::image::{project_to_box, Image};
use crate::model::{argmax, input_gradient, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnetConfig {
    /// Weight of the `L1` penalty.
    pub beta: f64,
    /// Iterations per search round.
    pub iterations: usize,
    /// Initial learning rate `lr0`.
    pub learning_rate: f64,
    pub search_steps: usize,
    /// Required margin in the loss.
    pub kappa: f64,
}

impl Default for EnetConfig {
    fn default() -> Self {
        Self { beta: 0.01, iterations: 1000, learning_rate: 0.01, search_steps: 9, kappa: 0.0 }
    }
}

impl EnetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::config(format!("ENet beta must be positive, got {}", self.beta)));
        }
        if self.iterations == 0 || self.search_steps == 0 {
            return Err(Error::config("ENet needs at least one iteration and one search step"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("ENet learning rate must be positive"));
        }
        Ok(())
    }
}

/// Learning rate at 1-based iteration `t`.
pub fn decayed_rate(lr0: f64, t: usize) -> f64 {
    lr0 / (t as f64).sqrt()
}

/// `sign(z) max(|z| - threshold, 0)`.
pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

/// Elastic-net penalty `β|δ|_1 + |δ|_2^2`.
pub fn elastic_penalty(delta: &[f64], beta: f64) -> f64 {
    delta.iter().map(|d| beta * d.abs() + d * d).sum()
}

/// One proximal step from `delta` given `loss_grad = ∇_δ l`.
pub fn enet_step(x: &[f64], delta: &[f64], loss_grad: &[f64], beta: f64, lr: f64) -> Vec<f64> {
    let mut next: Vec<f64> = delta
        .iter()
        .zip(loss_grad)
        .map(|(&d, &g)| soft_threshold(d - lr * (g + 2.0 * d), beta * lr))
        .collect();
    project_to_box(x, &mut next);
    next
}

/// Outcome of one fixed-`c` optimization.
#[derive(Debug, Clone)]
pub struct EnetRun {
    /// Best successful perturbation seen, or the final one.
    pub delta: Vec<f64>,
    pub success: bool,
    /// `-(β|δ|_1 + |δ|_2^2)` of `delta`.
    pub quality: f64,
    pub steps: usize,
}

impl Candidate for EnetRun {
    fn is_success(&self) -> bool {
        self.success
    }

    fn quality(&self) -> f64 {
        self.quality
    }
}

/// Optimizes the elastic-net objective at a fixed `c`, starting from `δ = 0`.
pub fn enet_run<M: ScoreModel + ?Sized>(model: &M, x: &Image, label: usize, c: f64, cfg: &EnetConfig) -> Result<EnetRun> {
    check_len(model.input_shape().len(), x.len())?;
    let params = MarginLossParams::cw(c, cfg.kappa)?;
    let xs = x.as_slice();
    let mut delta = vec![0.0; xs.len()];
    let mut y = xs.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |delta: &[f64], scores: &[f64]| {
        if argmax(scores) != label {
            let q = -elastic_penalty(delta, cfg.beta);
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, delta.to_vec()));
            }
        }
    };
    for t in 1..=cfg.iterations {
        for ((yi, &xi), &d) in y.iter_mut().zip(xs).zip(&delta) {
            *yi = xi + d;
        }
        let eval = input_gradient(model, &y, &|s: &[f64]| margin_loss_grad(s, label, &params).expect("valid label"))?;
        consider(&delta, &eval.scores);
        delta = enet_step(xs, &delta, &eval.gradient, cfg.beta, decayed_rate(cfg.learning_rate, t));
    }
    let final_y: Vec<f64> = xs.iter().zip(&delta).map(|(a, b)| a + b).collect();
    consider(&delta, &model.scores(&final_y)?);
    Ok(match best {
        Some((quality, delta)) => EnetRun { delta, success: true, quality, steps: cfg.iterations },
        None => EnetRun { quality: -elastic_penalty(&delta, cfg.beta), delta, success: false, steps: cfg.iterations },
    })
}

/// Elastic-net attack with the search over `c`.
pub fn enet_attack<M: ScoreModel + ?Sized>(model: &M, x: &Image, label: usize, cfg: &EnetConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    if label >= model.num_classes() {
        return Err(Error::InvalidLabel { label, classes: model.num_classes() });
    }
    let search = binary_search_c(cfg.search_steps, |c| enet_run(model, x, label, c, cfg))?;
    let total: usize = search.rounds.len() * cfg.iterations;
    let (run, c) = search.into_chosen();
    let adv: Vec<f64> = x.as_slice().iter().zip(&run.delta).map(|(a, b)| a + b).collect();
    AttackOutcome::measure(model, x, Image::clipped(x.shape(), adv)?, label, Some(c), total)
}
