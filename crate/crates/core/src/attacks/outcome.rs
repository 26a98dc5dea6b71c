use crate::error::Result;
use crate::image::Image;
use crate::metrics::{lp_distortion, ssim, Norm, SsimParams};
use crate::model::ScoreModel;

/// Result of attacking one image.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    /// `adversarial_label != original_label`.
    pub success: bool,
    pub adversarial: Image,
    pub ssim: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub original_label: usize,
    pub adversarial_label: usize,
    /// Loss scale of the returned candidate, for attacks that have one.
    pub c: Option<f64>,
    /// Gradient steps taken, summed over every search round.
    pub iterations: usize,
}

impl AttackOutcome {
    /// Measures `adversarial` against `original` and re-classifies it.
    pub fn measure<M: ScoreModel + ?Sized>(
        model: &M,
        original: &Image,
        adversarial: Image,
        label: usize,
        c: Option<f64>,
        iterations: usize,
    ) -> Result<Self> {
        let delta = adversarial.difference(original)?;
        let adversarial_label = model.predict(adversarial.as_slice())?;
        Ok(Self {
            success: adversarial_label != label,
            ssim: ssim(original, &adversarial, &SsimParams::default())?,
            l1: lp_distortion(delta.as_slice(), Norm::L1),
            l2: lp_distortion(delta.as_slice(), Norm::L2),
            linf: lp_distortion(delta.as_slice(), Norm::LInf),
            adversarial,
            original_label: label,
            adversarial_label,
            c,
            iterations,
        })
    }
}
