use alloc::vec;

use crate::model::{Activation, Classifier, Layer, ModelSpec, PrototypeSet, Provenance};
use crate::tensor::Tensor;

/// Latent cell activated by [`counterexample_fixture`].
pub const COUNTEREXAMPLE_ACTIVATION: (usize, usize) = (1, 1);

fn top_left_kernel() -> Tensor {
    let mut data = vec![0.0; 9];
    data[0] = 1.0;
    Tensor::new(vec![3, 3, 1, 1], data).expect("static kernel shape")
}

fn identity_pointwise(activation: Activation) -> Layer {
    Layer::conv2d(
        Tensor::new(vec![1, 1, 1, 1], vec![1.0]).expect("static kernel shape"),
        vec![0.0],
        1,
        0,
        activation,
    )
}

/// Two-layer network whose receptive-field geometry moves the only activation
/// away from the only pixel that causes it.
///
/// Both backbone layers are 3×3 convolutions whose kernel is one at the top
/// left and zero elsewhere (strides 1 then 2, padding 1). A single 1 at input
/// `(0, 0)` reaches output `(1, 1)` of the 2×2 latent and nothing else. The one
/// prototype equals that activated latent vector.
pub fn counterexample_fixture() -> (ModelSpec, Tensor, (usize, usize)) {
    let backbone = vec![
        Layer::conv2d(top_left_kernel(), vec![0.0], 1, 1, Activation::None),
        Layer::conv2d(top_left_kernel(), vec![0.0], 2, 1, Activation::None),
    ];
    let extractor = vec![
        identity_pointwise(Activation::Relu),
        identity_pointwise(Activation::Relu1),
    ];
    let (row, col) = COUNTEREXAMPLE_ACTIVATION;
    let prototypes = PrototypeSet::new(1, 1, 1, vec![1.0])
        .and_then(|p| {
            p.with_provenance(vec![Some(Provenance {
                class: 0,
                index: 0,
                image: 0,
                row,
                col,
            })])
        })
        .expect("static prototype block");
    let classifier = Classifier {
        weights: Tensor::new(vec![1, 1], vec![-1.0]).expect("static classifier"),
        bias: None,
    };
    let model = ModelSpec::new([3, 3, 1], backbone, extractor, prototypes, classifier)
        .expect("static fixture is valid");
    let mut input = vec![0.0; 9];
    input[0] = 1.0;
    let image = Tensor::image(3, 3, 1, input).expect("static input");
    (model, image, COUNTEREXAMPLE_ACTIVATION)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protopnet;

    #[test]
    fn activation_lands_bottom_right() {
        let (model, image, (r, c)) = counterexample_fixture();
        let z = protopnet::latent(&model, &image).unwrap();
        assert_eq!(z.shape(), &[2, 2, 1]);
        for i in 0..2 {
            for j in 0..2 {
                let expected = if (i, j) == (r, c) { 1.0 } else { 0.0 };
                assert_eq!(z.at3(i, j, 0), expected);
            }
        }
        let out = protopnet::forward(&model, &image).unwrap();
        assert_eq!(out.distances.values, vec![0.0]);
    }
}
