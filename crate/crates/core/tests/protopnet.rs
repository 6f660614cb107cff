mod common;

use proptest::prelude::*;
use protofaith_core::desk::{projected_model, random_images, DeskConfig};
use protofaith_core::protopnet::{
    cluster_loss, contribution_scores, distances, forward, latent, legacy_activation,
    project_prototypes, separation_loss, total_loss, LabeledImage, LossConfig, LEGACY_EPSILON,
};
use protofaith_core::{Activation, Classifier, Error, LayerKind, ModelSpec, PrototypeSet, Tensor};

fn naive_layer(
    x: &[f64],
    shape: [usize; 3],
    layer: &protofaith_core::Layer,
) -> (Vec<f64>, [usize; 3]) {
    let LayerKind::Conv2d {
        kernel,
        stride,
        padding,
    } = &layer.kind
    else {
        panic!("conv only")
    };
    let [h, w, cin] = shape;
    let k = kernel.shape()[0];
    let cout = kernel.shape()[3];
    let (s, p) = (*stride as isize, *padding as isize);
    let oh = ((h as isize + 2 * p - k as isize) / s + 1) as usize;
    let ow = ((w as isize + 2 * p - k as isize) / s + 1) as usize;
    let mut out = vec![0.0; oh * ow * cout];
    for oi in 0..oh {
        for oj in 0..ow {
            for co in 0..cout {
                let mut acc = layer.bias[co];
                for ki in 0..k {
                    for kj in 0..k {
                        let r = oi as isize * s + ki as isize - p;
                        let c = oj as isize * s + kj as isize - p;
                        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x[(r as usize * w + c as usize) * cin + ci]
                                * kernel.data()[((ki * k + kj) * cin + ci) * cout + co];
                        }
                    }
                }
                out[(oi * ow + oj) * cout + co] = match layer.activation {
                    Activation::None => acc,
                    Activation::Relu => acc.max(0.0),
                    Activation::Relu1 => acc.clamp(0.0, 1.0),
                };
            }
        }
    }
    (out, [oh, ow, cout])
}

#[test]
fn two_class_desk_forward_matches_independent_chain() {
    let (model, image) = common::desk_instance([5, 4, 1], 7);
    let out = forward(&model, &image).unwrap();
    let mut x = image.data().to_vec();
    let mut shape = model.input_shape();
    for layer in model.backbone().iter().chain(model.extractor()) {
        (x, shape) = naive_layer(&x, shape, layer);
    }
    for (a, b) in out.latent.data().iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
    let protos = model.prototypes();
    let l = shape[2];
    let mut dist = vec![f64::INFINITY; protos.len()];
    for p in 0..protos.len() {
        for site in 0..shape[0] * shape[1] {
            let d: f64 = (0..l)
                .map(|c| (x[site * l + c] - protos.value(p)[c]).powi(2))
                .sum();
            dist[p] = dist[p].min(d);
        }
    }
    let classes = model.classes();
    let logits: Vec<f64> = (0..classes)
        .map(|c| {
            (0..protos.len())
                .map(|p| model.classifier().weight(c, p) * dist[p])
                .sum()
        })
        .collect();
    let z: f64 = logits.iter().map(|v| v.exp()).sum();
    for c in 0..classes {
        assert!((out.logits[c] - logits[c]).abs() < 1e-12);
        assert!((out.probabilities[c] - logits[c].exp() / z).abs() < 1e-12);
    }
    for (a, b) in out.distances.values.iter().zip(&dist) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn constant_latent_equal_to_prototypes_gives_zero_distances() {
    // relu1 of the bias alone: every latent cell is 0.25
    let mut model =
        common::passthrough_model([2, 3, 1], vec![0.25], Activation::Relu, Activation::Relu1);
    let mut ext = model.extractor().to_vec();
    ext[0] = common::pointwise(1, 1, vec![0.0], Activation::Relu);
    ext[0].bias = vec![0.25];
    model = ModelSpec::new(
        [2, 3, 1],
        vec![],
        ext,
        model.prototypes().clone(),
        model.classifier().clone(),
    )
    .unwrap();
    let out = forward(
        &model,
        &common::tensor(&[2, 3, 1], &mut common::rng(1), 0.0, 1.0),
    )
    .unwrap();
    assert_eq!(out.distances.values, vec![0.0]);
    assert_eq!(out.probabilities, vec![1.0]);
}

#[test]
fn distance_examples() {
    let latent = Tensor::new(vec![2, 2, 4], vec![0.0; 16]).unwrap();
    let protos = PrototypeSet::new(1, 1, 4, vec![1.0; 4]).unwrap();
    assert_eq!(distances(&latent, &protos).unwrap().values, vec![4.0]);

    let mut rng = common::rng(4);
    let z = common::tensor(&[3, 3, 2], &mut rng, 0.0, 1.0);
    let p = vec![z.at3(2, 1, 0), z.at3(2, 1, 1)];
    let protos = PrototypeSet::new(1, 1, 2, p).unwrap();
    let dv = distances(&z, &protos).unwrap();
    assert_eq!(dv.values, vec![0.0]);
    assert_eq!(dv.argmin, vec![(2, 1)]);

    let bad = PrototypeSet::new(1, 1, 3, vec![0.0; 3]).unwrap();
    assert!(distances(&z, &bad).is_err());
}

#[test]
fn distance_ties_take_first_position() {
    let z = Tensor::new(vec![2, 2, 1], vec![0.5, 0.0, 0.0, 0.5]).unwrap();
    let protos = PrototypeSet::new(1, 1, 1, vec![0.5]).unwrap();
    assert_eq!(distances(&z, &protos).unwrap().argmin, vec![(0, 0)]);
}

#[test]
fn legacy_activation_examples() {
    let v = legacy_activation(0.0, LEGACY_EPSILON).unwrap();
    assert!((v - 1e4f64.ln()).abs() < 1e-12);
    assert!((v - 9.2103).abs() < 1e-4);
    let far = legacy_activation(1e12, LEGACY_EPSILON).unwrap();
    assert!(far > 0.0 && far < 1e-11);
    for s in [0.0, 0.3, 7.0] {
        assert_eq!(legacy_activation(s, 1.0).unwrap(), 0.0);
    }
    assert!(legacy_activation(1.0, 0.0).is_err());
    assert!(legacy_activation(1.0, -1.0).is_err());
    let mut prev = f64::INFINITY;
    for i in 0..50 {
        let v = legacy_activation(i as f64 * 0.2, LEGACY_EPSILON).unwrap();
        assert!(v < prev);
        prev = v;
    }
}

#[test]
fn contribution_examples() {
    // single class: log P = 0
    let model =
        common::passthrough_model([2, 2, 1], vec![0.3], Activation::Relu, Activation::Relu1);
    let out = forward(&model, &Tensor::full(vec![2, 2, 1], 0.9)).unwrap();
    let scores = contribution_scores(&model, &out.distances, 0).unwrap();
    assert!(scores.psi.iter().sum::<f64>().abs() < 1e-15);
    assert_eq!(scores.log_probability, 0.0);
    assert!(matches!(
        contribution_scores(&model, &out.distances, 1),
        Err(Error::ClassOutOfRange {
            class: 1,
            classes: 1
        })
    ));

    // symmetric: equal distances, equal weights everywhere
    let (c, k) = (3, 2);
    let protos = PrototypeSet::new(k, c, 1, vec![0.5; c * k]).unwrap();
    let classifier = Classifier {
        weights: Tensor::full(vec![c, c * k], -0.7),
        bias: None,
    };
    let model = ModelSpec::new(
        [2, 2, 1],
        vec![],
        common::identity_extractor(1, Activation::Relu, Activation::Relu1),
        protos,
        classifier,
    )
    .unwrap();
    let out = forward(&model, &Tensor::full(vec![2, 2, 1], 0.2)).unwrap();
    for class in 0..c {
        let s = contribution_scores(&model, &out.distances, class).unwrap();
        assert!((s.log_probability + (c as f64).ln()).abs() < 1e-12);
        for psi in &s.psi {
            assert!((psi + (c as f64).ln() / k as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn own_class_only_classifier_matches_printed_decomposition() {
    // with only own-class weights, Ψ_k = a'_{c,k} s_k - log R / K, R = Σ_ĉ exp(logit_ĉ)
    let (c, k) = (2, 2);
    let mut w = vec![0.0; c * c * k];
    for class in 0..c {
        for idx in 0..k {
            w[class * c * k + class * k + idx] = -1.3 - 0.1 * idx as f64;
        }
    }
    let mut rng = common::rng(5);
    let protos = PrototypeSet::new(
        k,
        c,
        2,
        common::tensor(&[c * k * 2], &mut rng, 0.0, 1.0).into_data(),
    )
    .unwrap();
    let model = ModelSpec::new(
        [3, 3, 2],
        vec![],
        common::identity_extractor(2, Activation::Relu, Activation::Relu1),
        protos,
        Classifier {
            weights: Tensor::new(vec![c, c * k], w).unwrap(),
            bias: None,
        },
    )
    .unwrap();
    let image = common::tensor(&[3, 3, 2], &mut rng, 0.0, 1.0);
    let out = forward(&model, &image).unwrap();
    let r: f64 = out.logits.iter().map(|v| v.exp()).sum();
    for class in 0..c {
        let s = contribution_scores(&model, &out.distances, class).unwrap();
        for (idx, psi) in s.psi.iter().enumerate() {
            let p = class * k + idx;
            let expected =
                model.classifier().weight(class, p) * out.distances.values[p] - r.ln() / k as f64;
            assert!((psi - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn losses_match_brute_force() {
    let mut rng = common::rng(21);
    let z = common::tensor(&[3, 4, 3], &mut rng, 0.0, 1.0);
    let (c, k) = (3, 2);
    let values = common::tensor(&[c * k * 3], &mut rng, 0.0, 1.0).into_data();
    let protos = PrototypeSet::new(k, c, 3, values.clone()).unwrap();
    for label in 0..c {
        let mut own = f64::INFINITY;
        let mut other = f64::INFINITY;
        for p in 0..c * k {
            for site in 0..12 {
                let d: f64 = (0..3)
                    .map(|l| (z.data()[site * 3 + l] - values[p * 3 + l]).powi(2))
                    .sum();
                if p / k == label {
                    own = own.min(d);
                } else {
                    other = other.min(d);
                }
            }
        }
        assert_eq!(cluster_loss(&z, &protos, label).unwrap(), own);
        assert_eq!(separation_loss(&z, &protos, label).unwrap(), other);
    }
    assert!(cluster_loss(&z, &protos, 3).is_err());

    let single = PrototypeSet::new(
        1,
        1,
        3,
        vec![z.at3(1, 1, 0), z.at3(1, 1, 1), z.at3(1, 1, 2)],
    )
    .unwrap();
    assert_eq!(cluster_loss(&z, &single, 0).unwrap(), 0.0);
    let err = separation_loss(&z, &single, 0).unwrap_err();
    assert_eq!(err, Error::NoOtherClassPrototypes);
    assert_eq!(err.to_string(), "no other-class prototypes");
}

#[test]
fn total_loss_combines_terms() {
    let (model, image) = common::desk_instance([4, 4, 1], 3);
    let out = forward(&model, &image).unwrap();
    let ce = -out.probabilities[1].ln();
    let z = latent(&model, &image).unwrap();
    let clst = cluster_loss(&z, model.prototypes(), 1).unwrap();
    let sep = separation_loss(&z, model.prototypes(), 1).unwrap();
    let got = total_loss(&model, &image, 1, LossConfig::default()).unwrap();
    assert!((got - (ce + 0.5 * clst + 0.5 * sep)).abs() < 1e-12);
    assert!(LossConfig::new(-0.1, 0.5).is_err());
    assert!(LossConfig::new(0.1, f64::NAN).is_err());
}

#[test]
fn projection_matches_exhaustive_search() {
    let cfg = DeskConfig::reference();
    let (model, training) = projected_model(&cfg, 3, 12).unwrap();
    let protos = model.prototypes();
    // re-run the search from the pre-projection prototypes
    let original = protofaith_core::desk::random_model(&cfg, 12).unwrap();
    for p in 0..protos.len() {
        let class = protos.class_of(p);
        let target = original.prototypes().value(p);
        let mut best = (f64::INFINITY, 0, 0, 0);
        for (idx, item) in training
            .iter()
            .enumerate()
            .filter(|(_, it)| it.label == class)
        {
            let z = latent(&model, &item.image).unwrap();
            let (h, w, _) = z.hwc().unwrap();
            for i in 0..h {
                for j in 0..w {
                    let d: f64 = z
                        .pixel(i, j)
                        .iter()
                        .zip(target)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    if d < best.0 {
                        best = (d, idx, i, j);
                    }
                }
            }
        }
        let prov = protos.provenance(p).unwrap();
        assert_eq!((prov.image, prov.row, prov.col), (best.1, best.2, best.3));
        assert_eq!((prov.class, prov.index), (class, p % protos.per_class()));
        let src = forward(&model, &training[prov.image].image).unwrap();
        assert!(src.distances.values[p].abs() < 1e-12);
        assert!(protos.value(p).iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn projection_edge_cases() {
    // one image per class, K = 1, prototype already equal to a latent vector
    let model =
        common::passthrough_model([2, 2, 1], vec![0.4], Activation::Relu, Activation::Relu1);
    let image = Tensor::new(vec![2, 2, 1], vec![0.9, 0.4, 0.1, 0.7]).unwrap();
    let projected = project_prototypes(
        &model,
        &[LabeledImage {
            image: image.clone(),
            label: 0,
        }],
    )
    .unwrap();
    assert_eq!(projected.values(), &[0.4]);
    let prov = projected.provenance(0).unwrap();
    assert_eq!((prov.row, prov.col), (0, 1));

    let two = PrototypeSet::new(1, 2, 1, vec![0.1, 0.2]).unwrap();
    let model2 = ModelSpec::new(
        [2, 2, 1],
        vec![],
        common::identity_extractor(1, Activation::Relu, Activation::Relu1),
        two,
        Classifier {
            weights: Tensor::new(vec![2, 2], vec![-1.0, 0.5, 0.5, -1.0]).unwrap(),
            bias: None,
        },
    )
    .unwrap();
    let err = project_prototypes(&model2, &[LabeledImage { image, label: 0 }]).unwrap_err();
    assert_eq!(err, Error::ClassWithoutImages { class: 1 });
}

#[test]
fn projection_is_idempotent() {
    let cfg = DeskConfig::reference();
    let (model, training) = projected_model(&cfg, 2, 5).unwrap();
    let again = project_prototypes(&model, &training).unwrap();
    assert_eq!(&again, model.prototypes());
}

#[test]
fn forward_reports_shape_and_non_finite_errors() {
    let (model, _) = common::desk_instance([4, 4, 1], 1);
    assert!(matches!(
        forward(&model, &Tensor::zeros(vec![4, 5, 1])),
        Err(Error::ShapeMismatch { .. })
    ));
    let mut layers = model.backbone().to_vec();
    if let LayerKind::Conv2d { kernel, .. } = &mut layers[0].kind {
        kernel.data_mut().fill(f64::MAX);
    }
    let huge = ModelSpec::new(
        model.input_shape(),
        layers,
        model.extractor().to_vec(),
        model.prototypes().clone(),
        model.classifier().clone(),
    )
    .unwrap();
    let images = random_images([4, 4, 1], 1, 0);
    let err = forward(&huge, &images[0]).unwrap_err();
    assert_eq!(
        err,
        Error::NonFiniteLayer {
            stage: "backbone",
            layer: 0
        }
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn contribution_scores_are_complete(seed in any::<u64>(), class_pick in 0usize..3) {
        let (model, image) = common::desk_instance([4, 3, 1], seed);
        let out = forward(&model, &image).unwrap();
        let class = class_pick % model.classes();
        let s = contribution_scores(&model, &out.distances, class).unwrap();
        let logp = out.probabilities[class].ln();
        prop_assert!((s.psi.iter().sum::<f64>() - s.log_probability).abs() < 1e-9);
        prop_assert!((s.log_probability - logp).abs() < 1e-9);
    }

    #[test]
    fn argmin_reproduces_distance(seed in any::<u64>()) {
        let (model, image) = common::desk_instance([5, 5, 1], seed);
        let out = forward(&model, &image).unwrap();
        let l = model.prototypes().channels() as f64;
        for (p, &(i, j)) in out.distances.argmin.iter().enumerate() {
            let d: f64 = out.latent.pixel(i, j).iter().zip(model.prototypes().value(p)).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((d - out.distances.values[p]).abs() < 1e-12);
            prop_assert!(out.distances.values[p] >= 0.0 && out.distances.values[p] <= l);
        }
    }

    #[test]
    fn classifier_is_affine_in_distances(seed in any::<u64>(), alpha in 0.0f64..1.0) {
        let (model, _) = common::desk_instance([3, 3, 1], seed);
        let n = model.prototypes().len();
        let mut rng = common::rng(seed);
        let s1 = common::tensor(&[n], &mut rng, 0.0, 4.0).into_data();
        let s2 = common::tensor(&[n], &mut rng, 0.0, 4.0).into_data();
        let mix: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| alpha * a + (1.0 - alpha) * b).collect();
        let f = |s: &[f64]| protofaith_core::protopnet::classify(&model, s).unwrap();
        let (l, a, b) = (f(&mix), f(&s1), f(&s2));
        for c in 0..l.len() {
            prop_assert!((l[c] - (alpha * a[c] + (1.0 - alpha) * b[c])).abs() < 1e-12);
        }
    }
}
