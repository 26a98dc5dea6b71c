//! Minibatch SGD with momentum on softmax cross-entropy, optionally mixing
//! each batch 1:1 with PGD adversarial versions of its images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{argmax, Layer, LayerGrad, Network, ScoreModel};
use crate::attacks::{pgd_perturb, PgdConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Augment every batch with PGD adversarial examples.
    pub adversarial: bool,
    pub pgd_steps: usize,
    pub pgd_epsilon: f64,
    /// Epochs at the start that train on clean images only.
    pub warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            adversarial: true,
            pgd_steps: 10,
            pgd_epsilon: 0.3,
            warmup_epochs: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.pgd_epsilon) {
            return Err(Error::config(format!("training epsilon must lie in [0, 1], got {}", self.pgd_epsilon)));
        }
        if self.adversarial && self.pgd_steps == 0 {
            return Err(Error::config("adversarial training needs at least one PGD step"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("learning rate must be positive and momentum in [0, 1)"));
        }
        Ok(())
    }

    fn pgd(&self) -> PgdConfig {
        PgdConfig::new(self.pgd_epsilon, self.pgd_steps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy on the clean images seen this epoch, measured before each
    /// update.
    pub clean_accuracy: f64,
}

/// Numerically stable `-log softmax(scores)[label]` and its gradient.
pub fn cross_entropy(scores: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (scores[label] - max);
    let mut grad: Vec<f64> = exps.iter().map(|e| e / sum).collect();
    grad[label] -= 1.0;
    (loss, grad)
}

/// The images a training step sees for one batch: the clean images, then
/// (when adversarial mixing is on) their PGD versions against `model`.
pub fn training_batch(model: &Network, data: &Dataset, indices: &[usize], cfg: &TrainConfig, adversarial: bool) -> Result<Vec<(Image, usize)>> {
    let mut batch: Vec<(Image, usize)> = indices
        .iter()
        .map(|&i| (data.images()[i].clone(), data.labels()[i]))
        .collect();
    if adversarial {
        let pgd = cfg.pgd();
        let adv = batch
            .iter()
            .map(|(img, label)| Ok((pgd_perturb(model, img, *label, &pgd)?, *label)))
            .collect::<Result<Vec<_>>>()?;
        batch.extend(adv);
    }
    Ok(batch)
}

pub fn train(model: Network, data: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    train_with_log(model, data, cfg, |_| {})
}

/// [`train`], reporting statistics after every epoch.
pub fn train_with_log(mut model: Network, data: &Dataset, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<Network> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Empty);
    }
    if data.shape() != Some(model.input_shape()) {
        return Err(Error::Dimension {
            expected: model.input_shape().len(),
            actual: data.shape().map_or(0, |s| s.len()),
        });
    }
    if let Some(&label) = data.labels().iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::InvalidLabel { label, classes: model.num_classes() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut velocity = model.zero_grads();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let adversarial = cfg.adversarial && epoch >= cfg.warmup_epochs;
        let (mut loss_sum, mut seen, mut correct, mut clean) = (0.0, 0usize, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = training_batch(&model, data, chunk, cfg, adversarial)?;
            let mut grads = model.zero_grads();
            for (k, (img, label)) in batch.iter().enumerate() {
                let trace = model.forward_trace(img.as_slice())?;
                let scores = &trace[trace.len() - 1];
                if k < chunk.len() {
                    clean += 1;
                    correct += usize::from(argmax(scores) == *label);
                }
                let (loss, d_scores) = cross_entropy(scores, *label);
                loss_sum += loss;
                seen += 1;
                model.backward(&trace, &d_scores, Some(&mut grads))?;
            }
            let scale = 1.0 / batch.len() as f64;
            sgd_update(&mut model, &grads, &mut velocity, scale, cfg);
        }
        on_epoch(&EpochStats {
            epoch: epoch + 1,
            mean_loss: loss_sum / seen as f64,
            clean_accuracy: correct as f64 / clean as f64,
        });
    }
    Ok(model)
}

fn sgd_update(model: &mut Network, grads: &[LayerGrad], velocity: &mut [LayerGrad], scale: f64, cfg: &TrainConfig) {
    for ((layer, g), v) in model.layers_mut().iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let (w, b) = match layer {
            Layer::Conv2d(c) => (&mut c.weight, &mut c.bias),
            Layer::Dense(d) => (&mut d.weight, &mut d.bias),
            Layer::Relu => continue,
        };
        for (p, (gv, vv)) in w.iter_mut().zip(g.weight.iter().zip(v.weight.iter_mut())) {
            *vv = cfg.momentum * *vv + gv * scale;
            *p -= cfg.learning_rate * *vv;
        }
        for (p, (gv, vv)) in b.iter_mut().zip(g.bias.iter().zip(v.bias.iter_mut())) {
            *vv = cfg.momentum * *vv + gv * scale;
            *p -= cfg.learning_rate * *vv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::image::Shape;
    use crate::model::LayerSpec;
    use rand::Rng;

    /// Two Gaussian-ish blobs in a 4-pixel image, separable by the sign of
    /// (mean of first half) - (mean of second half).
    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(1, 2, 2);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let label = i % 2;
            let (hi, lo) = if label == 0 { (0.75, 0.25) } else { (0.25, 0.75) };
            let px = vec![
                hi + rng.gen_range(-0.15..0.15),
                hi + rng.gen_range(-0.15..0.15),
                lo + rng.gen_range(-0.15..0.15),
                lo + rng.gen_range(-0.15..0.15),
            ];
            images.push(Image::new(shape, px).unwrap());
            labels.push(label);
        }
        Dataset::new(images, labels, 2, Split::Train).unwrap()
    }

    fn mlp(seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Network::random(Shape::new(1, 2, 2), &[LayerSpec::Dense { units: 8 }], 2, &mut rng).unwrap()
    }

    fn accuracy(model: &Network, data: &Dataset) -> f64 {
        let ok = data
            .images()
            .iter()
            .zip(data.labels())
            .filter(|(img, l)| model.predict(img.as_slice()).unwrap() == **l)
            .count();
        ok as f64 / data.len() as f64
    }

    #[test]
    fn separates_blobs() {
        let data = blobs(200, 1);
        let cfg = TrainConfig { epochs: 20, adversarial: false, ..TrainConfig::default() };
        let model = train(mlp(2), &data, &cfg).unwrap();
        assert!(accuracy(&model, &data) >= 0.95);
    }

    #[test]
    fn zero_epsilon_mix_duplicates_clean_images() {
        let data = blobs(8, 3);
        let cfg = TrainConfig { pgd_epsilon: 0.0, ..TrainConfig::default() };
        let batch = training_batch(&mlp(0), &data, &[0, 1, 2, 3], &cfg, true).unwrap();
        assert_eq!(batch.len(), 8);
        for k in 0..4 {
            assert_eq!(batch[k], batch[k + 4]);
        }
    }

    #[test]
    fn replay_is_bitwise_deterministic() {
        let data = blobs(64, 4);
        let cfg = TrainConfig { epochs: 2, pgd_steps: 3, pgd_epsilon: 0.1, seed: 17, ..TrainConfig::default() };
        let a = train(mlp(5), &data, &cfg).unwrap();
        let b = train(mlp(5), &data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = blobs(4, 0);
        let cfg = TrainConfig::default();
        assert!(train(mlp(0), &data, &TrainConfig { epochs: 0, ..cfg }).is_err());
        let empty = Dataset::new(vec![], vec![], 2, Split::Train).unwrap();
        assert!(matches!(train(mlp(0), &empty, &cfg), Err(Error::Empty)));
        let wide = Dataset::new(data.images().to_vec(), vec![0, 1, 2, 0], 3, Split::Train).unwrap();
        assert!(matches!(train(mlp(0), &wide, &cfg), Err(Error::InvalidLabel { .. })));
    }
}
