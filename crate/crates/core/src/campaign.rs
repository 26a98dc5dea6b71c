//! Running a set of attacks over a labeled test set.
//!
//! Only images the model classifies correctly are attacked; the others are
//! recorded with the `skipped` marker and excluded from success rates.
//! Images fan out across the rayon pool and records come back ordered by
//! image id, then by the requested attack order, so output is independent
//! of scheduling.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::attacks::{
    enet_attack, pgd_attack_seeded, ssim_attack, ssim_attack_from, AttackOutcome, EnetConfig, InitMode, PgdConfig,
    SsimAttackConfig,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::ScoreModel;
use crate::report::{summarize, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    Pgd,
    /// PGD returning its highest-SSIM successful iterate.
    PgdSsim,
    Enet,
    /// SSIM attack from `δ = 0`.
    Ssim,
    /// SSIM attack from the elastic-net perturbation.
    SsimE,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [AttackKind::Pgd, AttackKind::PgdSsim, AttackKind::Enet, AttackKind::Ssim, AttackKind::SsimE];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Pgd => "pgd",
            AttackKind::PgdSsim => "pgd-ssim",
            AttackKind::Enet => "enet",
            AttackKind::Ssim => "ssim",
            AttackKind::SsimE => "ssim-e",
        }
    }

    /// Parses a comma-separated list such as `pgd,enet,ssim-e`.
    pub fn parse_list(s: &str) -> Result<Vec<AttackKind>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let kind: AttackKind = part.parse()?;
            if !out.contains(&kind) {
                out.push(kind);
            }
        }
        if out.is_empty() {
            return Err(Error::config("no attacks selected"));
        }
        Ok(out)
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown attack {s:?} (expected one of pgd, pgd-ssim, enet, ssim, ssim-e)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub attacks: Vec<AttackKind>,
    pub pgd: PgdConfig,
    pub enet: EnetConfig,
    /// Shared by `ssim` and `ssim-e`; the init mode is set per attack.
    pub ssim: SsimAttackConfig,
    /// Attack only the first `limit` correctly classified images.
    pub limit: Option<usize>,
    pub seed: u64,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            attacks: AttackKind::ALL.to_vec(),
            pgd: PgdConfig::default(),
            enet: EnetConfig::default(),
            ssim: SsimAttackConfig::default(),
            limit: None,
            seed: 0,
        }
    }
}

/// Row label: an attack, or `skipped` for a misclassified clean image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordKind {
    Attack(AttackKind),
    Skipped,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordKind::Attack(k) => k.fmt(f),
            RecordKind::Skipped => f.write_str("skipped"),
        }
    }
}

impl FromStr for RecordKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "skipped" {
            Ok(RecordKind::Skipped)
        } else {
            s.parse().map(RecordKind::Attack)
        }
    }
}

/// One row of `outcomes.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeRecord {
    pub image_id: usize,
    pub attack: RecordKind,
    pub true_label: usize,
    pub adv_label: usize,
    pub success: bool,
    pub ssim: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub c_final: Option<f64>,
    pub iterations: usize,
    /// The returned image; not persisted in the CSV.
    pub adversarial: Option<Image>,
}

impl OutcomeRecord {
    fn from_outcome(image_id: usize, kind: AttackKind, o: AttackOutcome) -> Self {
        Self {
            image_id,
            attack: RecordKind::Attack(kind),
            true_label: o.original_label,
            adv_label: o.adversarial_label,
            success: o.success,
            ssim: o.ssim,
            l1: o.l1,
            l2: o.l2,
            linf: o.linf,
            c_final: o.c,
            iterations: o.iterations,
            adversarial: Some(o.adversarial),
        }
    }

    fn skipped(image_id: usize, true_label: usize, predicted: usize) -> Self {
        Self {
            image_id,
            attack: RecordKind::Skipped,
            true_label,
            adv_label: predicted,
            success: false,
            ssim: 1.0,
            l1: 0.0,
            l2: 0.0,
            linf: 0.0,
            c_final: None,
            iterations: 0,
            adversarial: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Campaign {
    pub records: Vec<OutcomeRecord>,
    pub report: EvalReport,
}

/// Runs every configured attack on each correctly classified image.
pub fn run_campaign<M: ScoreModel + ?Sized>(model: &M, data: &Dataset, cfg: &CampaignConfig) -> Result<Campaign> {
    if let Some(shape) = data.shape() {
        if shape != model.input_shape() {
            return Err(Error::Dimension { expected: model.input_shape().len(), actual: shape.len() });
        }
    }
    if data.classes() > model.num_classes() {
        return Err(Error::config(format!(
            "dataset has {} classes but the model scores {}",
            data.classes(),
            model.num_classes()
        )));
    }
    if cfg.attacks.is_empty() {
        return Err(Error::config("no attacks selected"));
    }
    cfg.pgd.validate()?;
    cfg.enet.validate()?;
    cfg.ssim.validate()?;

    let mut skipped = Vec::new();
    let mut eligible = Vec::new();
    for (id, (img, &label)) in data.images().iter().zip(data.labels()).enumerate() {
        if cfg.limit.is_some_and(|n| eligible.len() >= n) {
            break;
        }
        let predicted = model.predict(img.as_slice())?;
        if predicted == label {
            eligible.push(id);
        } else {
            skipped.push(OutcomeRecord::skipped(id, label, predicted));
        }
    }

    let attacked: Vec<Vec<OutcomeRecord>> = eligible
        .par_iter()
        .map(|&id| attack_image(model, id, &data.images()[id], data.labels()[id], cfg))
        .collect();

    let mut records: Vec<OutcomeRecord> = skipped.into_iter().chain(attacked.into_iter().flatten()).collect();
    // Stable: keeps attack order within an image.
    records.sort_by_key(|r| r.image_id);
    let report = summarize(&records, &cfg.attacks);
    Ok(Campaign { records, report })
}

fn attack_image<M: ScoreModel + ?Sized>(model: &M, id: usize, x: &Image, label: usize, cfg: &CampaignConfig) -> Vec<OutcomeRecord> {
    let mut enet: Option<AttackOutcome> = None;
    let mut out = Vec::with_capacity(cfg.attacks.len());
    for &kind in &cfg.attacks {
        let result = match kind {
            AttackKind::Pgd | AttackKind::PgdSsim => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                pgd_attack_seeded(model, x, label, &cfg.pgd, kind == AttackKind::PgdSsim, Some(&mut rng))
            }
            AttackKind::Enet => enet_for(model, x, label, cfg, &mut enet),
            AttackKind::Ssim => ssim_attack(model, x, label, &SsimAttackConfig { init: InitMode::Zero, ..cfg.ssim }),
            AttackKind::SsimE => enet_for(model, x, label, cfg, &mut enet).and_then(|start| {
                let scfg = SsimAttackConfig { init: InitMode::Enet, enet: cfg.enet, ..cfg.ssim };
                ssim_attack_from(model, x, label, &scfg, &start)
            }),
        };
        let outcome = result.or_else(|e| {
            log::warn!("image {id}: {kind} failed: {e}");
            AttackOutcome::measure(model, x, x.clone(), label, None, 0)
        });
        match outcome {
            Ok(o) => out.push(OutcomeRecord::from_outcome(id, kind, o)),
            Err(e) => log::error!("image {id}: could not record {kind}: {e}"),
        }
    }
    out
}

/// The elastic-net outcome for this image, computed at most once.
fn enet_for<M: ScoreModel + ?Sized>(
    model: &M,
    x: &Image,
    label: usize,
    cfg: &CampaignConfig,
    cache: &mut Option<AttackOutcome>,
) -> Result<AttackOutcome> {
    if let Some(o) = cache {
        return Ok(o.clone());
    }
    let o = enet_attack(model, x, label, &cfg.enet)?;
    *cache = Some(o.clone());
    Ok(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attack_names_round_trip() {
        for k in AttackKind::ALL {
            assert_eq!(k.name().parse::<AttackKind>().unwrap(), k);
        }
        assert_eq!(AttackKind::parse_list("ssim, pgd,ssim").unwrap(), vec![AttackKind::Ssim, AttackKind::Pgd]);
        assert!(AttackKind::parse_list("pgd,fgsm").is_err());
        assert!(AttackKind::parse_list("").is_err());
        assert_eq!("skipped".parse::<RecordKind>().unwrap(), RecordKind::Skipped);
    }
}
