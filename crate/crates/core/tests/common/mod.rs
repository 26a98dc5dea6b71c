#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssimadv::model::{Dense, Layer, LayerSpec};
use ssimadv::{Image, Network, Shape};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_image<R: Rng>(rng: &mut R, shape: Shape) -> Image {
    Image::new(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Small conv net over `shape` with `classes` outputs.
pub fn small_net(shape: Shape, classes: usize, seed: u64) -> Network {
    Network::random(
        shape,
        &[LayerSpec::Conv { filters: 4, kernel: 3, stride: 2 }, LayerSpec::Dense { units: 12 }],
        classes,
        &mut rng(seed),
    )
    .unwrap()
}

/// Linear classifier `f = W x + b` with the given rows.
pub fn linear(shape: Shape, rows: Vec<Vec<f64>>, bias: Vec<f64>) -> Network {
    let outputs = rows.len();
    let dense = Dense { inputs: shape.len(), outputs, weight: rows.concat(), bias };
    Network::from_layers(shape, vec![Layer::Dense(dense)]).unwrap()
}

/// Two-class linear model on a single-channel image: class 0 when the mean
/// pixel is below 0.5, class 1 above.
pub fn brightness_classifier(shape: Shape) -> Network {
    let n = shape.len();
    let w = 10.0 / n as f64;
    linear(shape, vec![vec![-w; n], vec![w; n]], vec![5.0, -5.0])
}

/// Uniform image of the given intensity.
pub fn flat(shape: Shape, v: f64) -> Image {
    Image::new(shape, vec![v; shape.len()]).unwrap()
}
