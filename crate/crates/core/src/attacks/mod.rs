//! Adversarial attacks: PGD (plain and SSIM-filtered), the elastic-net
//! attack, and the SSIM-constrained Lagrangian attack in its zero- and
//! ENet-initialized forms.

mod enet;
mod lagrangian;
mod loss;
mod outcome;
mod pgd;
mod search;

pub use enet::{decayed_rate, elastic_penalty, enet_attack, enet_run, enet_step, soft_threshold, EnetConfig, EnetRun};
pub use lagrangian::{
    lagrangian, lagrangian_gradient, ssim_attack, ssim_attack_from, ssim_lagrangian_step, ssim_run, AdamConfig, DualAdam,
    InitMode, LagrangianState, SsimAttackConfig, SsimRun, StepReport,
};
pub use loss::{ascent_objective, margin_loss, margin_loss_grad, runner_up, score_margin, LossKind, MarginLossParams};
pub use outcome::AttackOutcome;
pub use pgd::{pgd_attack, pgd_attack_seeded, pgd_iterates, pgd_perturb, pgd_step, PgdConfig};
pub use search::{binary_search_c, Candidate, SearchResult, SearchRound, C_INIT, UPPER_ACTIVE, UPPER_INIT};
