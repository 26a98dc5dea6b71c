//! `L∞` projected gradient attack, optionally SSIM-filtered.

use rand::Rng;

use super::loss::{ascent_objective, LossKind};
use super::outcome::AttackOutcome;
use crate::error::{check_len, Error, Result};
use crate::image::Image;
use crate::metrics::{ssim_raw, SsimParams};
use crate::model::{argmax, input_gradient, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub loss: LossKind,
    /// Start from a uniform point in the ε-ball instead of the clean image.
    pub random_start: bool,
}

impl PgdConfig {
    /// Cross-entropy PGD with step size `ε/4`.
    pub fn new(epsilon: f64, steps: usize) -> Self {
        Self { epsilon, steps, step_size: epsilon / 4.0, loss: LossKind::CrossEntropy, random_start: false }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config(format!("PGD epsilon must be non-negative, got {}", self.epsilon)));
        }
        if self.steps == 0 {
            return Err(Error::config("PGD needs at least one step"));
        }
        // A zero budget makes every step a no-op, so any step size will do.
        if !(self.step_size > 0.0 || self.epsilon == 0.0) {
            return Err(Error::config(format!("PGD step size must be positive, got {}", self.step_size)));
        }
        Ok(())
    }
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self::new(0.3, 10)
    }
}

/// One signed-gradient ascent step, projected onto the ε-ball around
/// `origin` and the pixel box.
pub fn pgd_step(origin: &[f64], current: &[f64], gradient: &[f64], cfg: &PgdConfig) -> Vec<f64> {
    current
        .iter()
        .zip(gradient)
        .zip(origin)
        .map(|((&x, &g), &o)| {
            let moved = x + cfg.step_size * sign(g);
            moved.clamp(o - cfg.epsilon, o + cfg.epsilon).clamp(0.0, 1.0)
        })
        .collect()
}

/// Every PGD iterate `x_1..x_T`; the starting point is not included.
pub fn pgd_iterates<M, R>(model: &M, x: &Image, label: usize, cfg: &PgdConfig, rng: Option<&mut R>) -> Result<Vec<Vec<f64>>>
where
    M: ScoreModel + ?Sized,
    R: Rng + ?Sized,
{
    cfg.validate()?;
    check_len(model.input_shape().len(), x.len())?;
    if label >= model.num_classes() {
        return Err(Error::InvalidLabel { label, classes: model.num_classes() });
    }
    let origin = x.as_slice();
    let mut current = origin.to_vec();
    if let (true, Some(rng)) = (cfg.random_start, rng) {
        for (v, &o) in current.iter_mut().zip(origin) {
            if cfg.epsilon > 0.0 {
                *v = (o + rng.gen_range(-cfg.epsilon..=cfg.epsilon)).clamp(0.0, 1.0);
            }
        }
    }
    let mut iterates = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let eval = input_gradient(model, &current, &|s: &[f64]| {
            ascent_objective(s, label, cfg.loss).expect("label validated above")
        })?;
        current = pgd_step(origin, &current, &eval.gradient, cfg);
        iterates.push(current.clone());
    }
    Ok(iterates)
}

/// Final PGD iterate, for adversarial training.
pub fn pgd_perturb<M: ScoreModel + ?Sized>(model: &M, x: &Image, label: usize, cfg: &PgdConfig) -> Result<Image> {
    let mut iterates = pgd_iterates::<M, rand::rngs::ThreadRng>(model, x, label, cfg, None)?;
    let last = iterates.pop().expect("steps >= 1");
    Image::clipped(x.shape(), last)
}

/// Runs PGD. Without filtering the final iterate is returned; with
/// `filter_ssim` the successful iterate of highest SSIM is returned, falling
/// back to the final iterate when none succeeded.
pub fn pgd_attack<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    cfg: &PgdConfig,
    filter_ssim: bool,
) -> Result<AttackOutcome> {
    pgd_attack_seeded::<M, rand::rngs::ThreadRng>(model, x, label, cfg, filter_ssim, None)
}

/// [`pgd_attack`] with an explicit RNG for the random start.
pub fn pgd_attack_seeded<M, R>(
    model: &M,
    x: &Image,
    label: usize,
    cfg: &PgdConfig,
    filter_ssim: bool,
    rng: Option<&mut R>,
) -> Result<AttackOutcome>
where
    M: ScoreModel + ?Sized,
    R: Rng + ?Sized,
{
    let iterates = pgd_iterates(model, x, label, cfg, rng)?;
    let steps = iterates.len();
    let mut chosen = iterates.last().expect("steps >= 1").clone();
    if filter_ssim {
        let params = SsimParams::default();
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for it in &iterates {
            if argmax(&model.scores(it)?) == label {
                continue;
            }
            let q = ssim_raw(x.shape(), x.as_slice(), it, &params);
            if best.is_none_or(|(b, _)| q > b) {
                best = Some((q, it));
            }
        }
        if let Some((_, it)) = best {
            chosen = it.clone();
        }
    }
    AttackOutcome::measure(model, x, Image::clipped(x.shape(), chosen)?, label, None, steps)
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}
