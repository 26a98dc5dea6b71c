//! SSIM-constrained attack via primal-dual optimization of the Lagrangian
//!
//! ```text
//! L(δ, λ) = l(x, δ) + Σ_i λ_i g_i(x + δ, x)
//! ```
//!
//! where `g1..g4` are the SSIM constraints from [`crate::metrics`]. Each
//! step takes a gradient-descent step in `δ` (learning rate `η0/√t`),
//! projects `x + δ` onto the pixel box, and takes an Adam ascent step in
//! `λ` on the constraint values at the pre-update `δ`, clamped at zero.

use super::enet::{decayed_rate, enet_attack, EnetConfig};
use super::loss::{margin_loss_grad, MarginLossParams};
use super::outcome::AttackOutcome;
use super::search::{binary_search_c, Candidate, C_INIT};
use crate::error::{check_len, Error, Result};
use crate::image::{project_to_box, Image};
use crate::metrics::{add_weighted_constraint_gradient, constraints_raw, ssim_raw, ConstraintThresholds, SsimParams};
use crate::model::{argmax, input_gradient, ScoreModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, learning_rate: 0.01 }
    }
}

/// Bias-corrected Adam over the four multipliers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualAdam {
    m: [f64; 4],
    v: [f64; 4],
    t: i32,
}

impl DualAdam {
    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: [f64; 4], grad: [f64; 4], cfg: &AdamConfig) -> [f64; 4] {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        std::array::from_fn(|i| {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// `δ = 0`, with the search over `c`.
    Zero,
    /// Start from the elastic-net perturbation and reuse its `c`.
    Enet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimAttackConfig {
    pub thresholds: ConstraintThresholds,
    /// Steps per run.
    pub iterations: usize,
    /// Initial primal step size `η0`.
    pub step_size: f64,
    pub dual: AdamConfig,
    pub init: InitMode,
    pub search_steps: usize,
    pub kappa: f64,
    /// Return the highest-SSIM successful iterate. When false, the final
    /// iterate is returned as-is.
    pub track_best: bool,
    /// Used to produce the starting point in [`InitMode::Enet`].
    pub enet: EnetConfig,
}

impl Default for SsimAttackConfig {
    fn default() -> Self {
        Self {
            thresholds: ConstraintThresholds::default(),
            iterations: 1000,
            step_size: 0.01,
            dual: AdamConfig::default(),
            init: InitMode::Zero,
            search_steps: 9,
            kappa: 0.0,
            track_best: true,
            enet: EnetConfig::default(),
        }
    }
}

impl SsimAttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.search_steps == 0 {
            return Err(Error::config("SSIM attack needs at least one iteration and one search step"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::config("SSIM attack step size must be positive"));
        }
        if !(self.dual.learning_rate > 0.0) {
            return Err(Error::config("dual learning rate must be positive"));
        }
        self.enet.validate()
    }
}

/// Primal-dual iterate. `t` is the 1-based index of the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangianState {
    pub delta: Vec<f64>,
    pub lambda: [f64; 4],
    pub adam: DualAdam,
    pub t: usize,
}

impl LagrangianState {
    /// `λ = 0` at the given starting perturbation.
    pub fn new(delta: Vec<f64>) -> Self {
        Self { delta, lambda: [0.0; 4], adam: DualAdam::default(), t: 1 }
    }
}

/// Quantities evaluated at the pre-update iterate of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub scores: Vec<f64>,
    /// `g1..g4`, which is also `∇_λ L`.
    pub constraints: [f64; 4],
    pub loss: f64,
    pub lagrangian: f64,
}

/// `L(δ, λ)`.
pub fn lagrangian<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    delta: &[f64],
    lambda: &[f64; 4],
    loss: &MarginLossParams,
    thresholds: &ConstraintThresholds,
) -> Result<f64> {
    check_len(x.len(), delta.len())?;
    let y: Vec<f64> = x.as_slice().iter().zip(delta).map(|(a, b)| a + b).collect();
    let (l, _) = margin_loss_grad(&model.scores(&y)?, label, loss)?;
    let g = constraints_raw(x.shape(), &y, x.as_slice(), &SsimParams::default(), thresholds);
    Ok(l + lambda.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>())
}

/// `∇_δ L(δ, λ)` together with the quantities computed on the way.
pub fn lagrangian_gradient<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    delta: &[f64],
    lambda: &[f64; 4],
    loss: &MarginLossParams,
    thresholds: &ConstraintThresholds,
) -> Result<(Vec<f64>, StepReport)> {
    check_len(x.len(), delta.len())?;
    check_len(model.input_shape().len(), x.len())?;
    if label >= model.num_classes() {
        return Err(Error::InvalidLabel { label, classes: model.num_classes() });
    }
    let xs = x.as_slice();
    let y: Vec<f64> = xs.iter().zip(delta).map(|(a, b)| a + b).collect();
    let eval = input_gradient(model, &y, &|s: &[f64]| margin_loss_grad(s, label, loss).expect("label validated"))?;
    let params = SsimParams::default();
    let g = constraints_raw(x.shape(), &y, xs, &params, thresholds);
    let mut grad = eval.gradient;
    add_weighted_constraint_gradient(x.shape(), &y, xs, &params, lambda, &mut grad);
    let lagrangian = eval.value + lambda.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
    Ok((grad, StepReport { scores: eval.scores, constraints: g, loss: eval.value, lagrangian }))
}

/// One primal-dual step.
pub fn ssim_lagrangian_step<M: ScoreModel + ?Sized>(
    state: LagrangianState,
    x: &Image,
    model: &M,
    label: usize,
    loss: &MarginLossParams,
    cfg: &SsimAttackConfig,
) -> Result<(LagrangianState, StepReport)> {
    let LagrangianState { delta, lambda, mut adam, t } = state;
    let (grad, report) = lagrangian_gradient(model, x, label, &delta, &lambda, loss, &cfg.thresholds)?;

    let eta = decayed_rate(cfg.step_size, t);
    let mut next: Vec<f64> = delta.iter().zip(&grad).map(|(d, g)| d - eta * g).collect();
    project_to_box(x.as_slice(), &mut next);

    // Ascent in λ is descent along -∇_λ L = -g.
    let neg_g = report.constraints.map(|g| -g);
    let lambda = adam.step(lambda, neg_g, &cfg.dual).map(|l| l.max(0.0));

    Ok((LagrangianState { delta: next, lambda, adam, t: t + 1 }, report))
}

/// Outcome of one fixed-`c` run.
#[derive(Debug, Clone)]
pub struct SsimRun {
    pub delta: Vec<f64>,
    pub success: bool,
    pub ssim: f64,
    pub lambda: [f64; 4],
    pub steps: usize,
}

impl Candidate for SsimRun {
    fn is_success(&self) -> bool {
        self.success
    }

    fn quality(&self) -> f64 {
        self.ssim
    }
}

/// Runs `cfg.iterations` primal-dual steps from `start` at a fixed `c`.
/// Every iterate, including the start and the last, is a candidate.
pub fn ssim_run<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    c: f64,
    start: Vec<f64>,
    cfg: &SsimAttackConfig,
) -> Result<SsimRun> {
    check_len(x.len(), start.len())?;
    let loss = MarginLossParams::cw(c, cfg.kappa)?;
    let params = SsimParams::default();
    let xs = x.as_slice();
    let shape = x.shape();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |delta: &[f64], scores: &[f64]| {
        if cfg.track_best && argmax(scores) != label {
            let y: Vec<f64> = xs.iter().zip(delta).map(|(a, b)| a + b).collect();
            let q = ssim_raw(shape, xs, &y, &params);
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, delta.to_vec()));
            }
        }
    };

    let mut state = LagrangianState::new(start);
    for _ in 0..cfg.iterations {
        let before = state.delta.clone();
        let (next, report) = ssim_lagrangian_step(state, x, model, label, &loss, cfg)?;
        consider(&before, &report.scores);
        state = next;
    }
    let y_final: Vec<f64> = xs.iter().zip(&state.delta).map(|(a, b)| a + b).collect();
    let final_scores = model.scores(&y_final)?;
    consider(&state.delta, &final_scores);

    let steps = cfg.iterations;
    Ok(match best {
        Some((ssim, delta)) => SsimRun { delta, success: true, ssim, lambda: state.lambda, steps },
        None => SsimRun {
            success: argmax(&final_scores) != label,
            ssim: ssim_raw(shape, xs, &y_final, &params),
            delta: state.delta,
            lambda: state.lambda,
            steps,
        },
    })
}

/// SSIM attack. In [`InitMode::Zero`] the run is wrapped in the search over
/// `c`; in [`InitMode::Enet`] the elastic-net attack is run first and its
/// perturbation and `c` seed a single run.
pub fn ssim_attack<M: ScoreModel + ?Sized>(model: &M, x: &Image, label: usize, cfg: &SsimAttackConfig) -> Result<AttackOutcome> {
    cfg.validate()?;
    match cfg.init {
        InitMode::Zero => {
            if label >= model.num_classes() {
                return Err(Error::InvalidLabel { label, classes: model.num_classes() });
            }
            let search = binary_search_c(cfg.search_steps, |c| ssim_run(model, x, label, c, vec![0.0; x.len()], cfg))?;
            let total = search.rounds.len() * cfg.iterations;
            let (run, c) = search.into_chosen();
            finish(model, x, label, &run.delta, c, total)
        }
        InitMode::Enet => {
            let start = enet_attack(model, x, label, &cfg.enet)?;
            ssim_attack_from(model, x, label, cfg, &start)
        }
    }
}

/// Single run seeded by an existing outcome (normally the elastic-net
/// attack's): starts at its perturbation with its `c`.
pub fn ssim_attack_from<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    cfg: &SsimAttackConfig,
    start: &AttackOutcome,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    let c = start.c.unwrap_or(C_INIT);
    let delta0 = start.adversarial.difference(x)?.as_slice().to_vec();
    let run = ssim_run(model, x, label, c, delta0, cfg)?;
    finish(model, x, label, &run.delta, c, start.iterations + run.steps)
}

fn finish<M: ScoreModel + ?Sized>(model: &M, x: &Image, label: usize, delta: &[f64], c: f64, iterations: usize) -> Result<AttackOutcome> {
    let adv: Vec<f64> = x.as_slice().iter().zip(delta).map(|(a, b)| a + b).collect();
    AttackOutcome::measure(model, x, Image::clipped(x.shape(), adv)?, label, Some(c), iterations)
}
