#![allow(dead_code)]

use protofaith_core::desk::{random_images, random_model, DeskConfig};
use protofaith_core::{Activation, Classifier, Layer, ModelSpec, PrototypeSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..len).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Random desk model and image with the given input extent.
pub fn desk_instance(input: [usize; 3], seed: u64) -> (ModelSpec, Tensor) {
    let mut cfg = DeskConfig::reference();
    cfg.input = input;
    let model = random_model(&cfg, seed).unwrap();
    let image = random_images(input, 1, seed + 1000).remove(0);
    (model, image)
}

pub fn pointwise(cin: usize, cout: usize, weights: Vec<f64>, activation: Activation) -> Layer {
    Layer::conv2d(
        Tensor::new(vec![1, 1, cin, cout], weights).unwrap(),
        vec![0.0; cout],
        1,
        0,
        activation,
    )
}

/// Single 1x1 extractor pair of identities on `channels` channels, ending in `last`.
pub fn identity_extractor(channels: usize, first: Activation, last: Activation) -> Vec<Layer> {
    let mut eye = vec![0.0; channels * channels];
    for c in 0..channels {
        eye[c * channels + c] = 1.0;
    }
    vec![
        pointwise(channels, channels, eye.clone(), first),
        pointwise(channels, channels, eye, last),
    ]
}

pub fn single_classifier(count: usize, weight: f64) -> Classifier {
    Classifier {
        weights: Tensor::new(vec![1, count], vec![weight; count]).unwrap(),
        bias: None,
    }
}

/// Model with no backbone whose latent is the image itself passed through the extractor.
pub fn passthrough_model(
    input: [usize; 3],
    prototype: Vec<f64>,
    first: Activation,
    last: Activation,
) -> ModelSpec {
    let l = input[2];
    let protos = PrototypeSet::new(1, 1, l, prototype).unwrap();
    ModelSpec::new(
        input,
        vec![],
        identity_extractor(l, first, last),
        protos,
        single_classifier(1, -1.0),
    )
    .unwrap()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}
