//! SSIM-constrained adversarial attacks and an evaluation harness for
//! robust image classifiers.
//!
//! The crate is organized as:
//!
//! * [`metrics`]: global SSIM, NMSE, the SSIM constraint functions and their
//!   gradients, `Lp` distortions.
//! * [`model`]: a small convolutional classifier with input gradients,
//!   clean and adversarial training, and a checkpoint format.
//! * [`attacks`]: PGD, SSIM-filtered PGD, the elastic-net attack, the SSIM
//!   Lagrangian attack (zero- and ENet-initialized) and the search over the
//!   loss scale.
//! * [`data`], [`campaign`], [`report`]: dataset ingestion, running attacks
//!   over a test set, aggregation and CSV/PGM output.

pub mod attacks;
pub mod campaign;
pub mod data;
mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod report;
pub mod selftest;

pub use attacks::{AttackOutcome, EnetConfig, InitMode, LossKind, MarginLossParams, PgdConfig, SsimAttackConfig};
pub use campaign::{run_campaign, AttackKind, Campaign, CampaignConfig, OutcomeRecord};
pub use report::EvalReport;
pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use image::{Image, Perturbation, Shape};
pub use metrics::{ConstraintThresholds, SsimParams};
pub use model::{Network, ScoreModel, TrainConfig};
