mod common;

use protofaith_core::desk::{projected_model, DeskConfig};
use protofaith_core::evaluation::{
    aopc, counterexample_fixture, default_steps, method_curves, perturbation_curve, spearman,
    validate_moments, AopcReport, MomentCase, MomentKind, Normalization, MIN_SAMPLES,
};
use protofaith_core::explain::{explain, ExplainOptions};
use protofaith_core::gauss::Gaussian;
use protofaith_core::legacy::{legacy_as_attribution, legacy_map};
use protofaith_core::protopnet::{self, LabeledImage};
use protofaith_core::shapley::{exact_shapley, Method, SetFunctionSpec, Target};
use protofaith_core::{Error, Tensor};

fn counterexample_training() -> (protofaith_core::ModelSpec, Tensor, Vec<LabeledImage>) {
    let (model, image, _) = counterexample_fixture();
    let training = vec![LabeledImage {
        image: image.clone(),
        label: 0,
    }];
    (model, image, training)
}

#[test]
fn zero_steps_give_an_empty_curve() {
    let (model, image, _) = counterexample_training();
    let map = legacy_as_attribution(&legacy_map(&model, &image, 0).unwrap());
    let curve = perturbation_curve(&model, 0, &image, &map, 0).unwrap();
    assert!(curve.terms.is_empty() && curve.removed.is_empty());
    assert_eq!(curve.distances.len(), 1);
    assert_eq!(
        aopc(&[curve], Normalization::PaperLiteral).unwrap().score,
        0.0
    );
    assert!(perturbation_curve(&model, 0, &image, &map, 10).is_err());
}

#[test]
fn legacy_removes_a_dead_pixel_first() {
    let (model, image, _) = counterexample_training();
    let map = legacy_as_attribution(&legacy_map(&model, &image, 0).unwrap());
    let curve = perturbation_curve(&model, 0, &image, &map, 1).unwrap();
    assert_ne!(curve.removed[0], 0);
    assert_eq!(curve.distances, vec![0.0, 0.0]);
    assert_eq!(curve.terms, vec![0.0]);
}

#[test]
fn oracle_removes_the_causal_pixel_first() {
    let (model, image, _) = counterexample_training();
    let map =
        exact_shapley(&SetFunctionSpec::new(&model, Target::Distance(0), &image).unwrap()).unwrap();
    let curve = perturbation_curve(&model, 0, &image, &map, 1).unwrap();
    assert_eq!(curve.removed, vec![0]);
    assert!(curve.distances[1] > 0.0);
    assert!(curve.terms[0] < 0.0);
}

#[test]
fn counterexample_invariants() {
    let (model, image, (r, c)) = counterexample_fixture();
    let target = Target::Latent {
        row: r,
        col: c,
        channel: 0,
    };
    let exact = exact_shapley(&SetFunctionSpec::new(&model, target, &image).unwrap()).unwrap();
    assert!((exact.values[0] - 1.0).abs() < 1e-12);
    assert!(exact.values[1..].iter().all(|&v| v == 0.0));
    let legacy = legacy_as_attribution(&legacy_map(&model, &image, 0).unwrap());
    let best = legacy.ranking()[0];
    assert_ne!(best, 0);
    assert!(legacy.values[best] > legacy.values[0]);
}

#[test]
fn curves_are_deterministic_and_nonpositive_for_projected_prototypes() {
    let mut cfg = DeskConfig::reference();
    cfg.input = [5, 5, 1];
    let (model, training) = projected_model(&cfg, 3, 31).unwrap();
    let options = ExplainOptions::default();
    for method in [Method::Dasp, Method::Legacy] {
        let a = method_curves(&model, &training, method, &options, None).unwrap();
        assert_eq!(
            a,
            method_curves(&model, &training, method, &options, None).unwrap()
        );
        assert_eq!(a.len(), model.prototypes().len());
        for curve in &a {
            assert!(curve.distances[0].abs() < 1e-12);
            assert_eq!(curve.steps(), default_steps(25));
            assert!(curve.terms.iter().all(|&t| t <= 1e-9));
        }
        let p = aopc(&a, Normalization::PaperLiteral).unwrap();
        let t = aopc(&a, Normalization::PerTerm).unwrap();
        assert!(p.score <= 1e-9 && t.score <= 1e-9);
        assert_eq!(
            (p.classes, p.per_class),
            (model.classes(), model.prototypes().per_class())
        );
        let lhs = t.score * (p.classes * p.per_class * p.steps) as f64;
        let rhs = p.score * (p.classes + p.per_class + p.steps - 1) as f64;
        assert!((lhs - rhs).abs() < 1e-9);
    }
    let report = AopcReport::evaluate(&model, &training, &options, Some(4)).unwrap();
    assert_eq!(report.prototypes(), 4);
    assert!(report.faith_better <= 4);
}

#[test]
fn curves_need_source_images() {
    let (model, _, _) = counterexample_training();
    let err = method_curves(
        &model,
        &[],
        Method::Legacy,
        &ExplainOptions::default(),
        None,
    )
    .unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)));
}

#[test]
fn explain_dispatch() {
    let (model, image) = common::desk_instance([3, 3, 1], 40);
    let t = Target::Distance(1);
    let mut options = ExplainOptions::default();
    assert!(explain(&model, &image, t, Method::Sampler, &options).is_err());
    options.seed = Some(3);
    options.budget = Some(16);
    let sampled = explain(&model, &image, t, Method::Sampler, &options).unwrap();
    assert_eq!(sampled.method, Method::Sampler);
    assert_eq!(
        explain(&model, &image, t, Method::Oracle, &options)
            .unwrap()
            .method,
        Method::Oracle
    );
    assert_eq!(
        explain(&model, &image, t, Method::Dasp, &options)
            .unwrap()
            .method,
        Method::Dasp
    );
    assert!(explain(&model, &image, Target::Logit(0), Method::Legacy, &options).is_err());
    options.budget = Some(0);
    assert!(explain(&model, &image, t, Method::Dasp, &options).is_err());
}

#[test]
fn moment_validation_reports() {
    let cases = vec![
        MomentCase::Relu1(Gaussian::new(0.0, 1.0)),
        MomentCase::Relu(Gaussian::new(-0.5, 2.0)),
        MomentCase::QuadraticForm {
            mean: vec![1.0, 0.0],
            var: vec![0.5, 0.5],
        },
        MomentCase::MinPool(vec![Gaussian::new(1.0, 0.2), Gaussian::new(1.3, 0.5)]),
        MomentCase::Relu1(Gaussian::point(0.4)),
    ];
    let report = validate_moments(&cases, MIN_SAMPLES, 1).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.checks.len(), 5);
    assert_eq!(report.checks[4].z_mean, 0.0);
    assert_eq!(report, validate_moments(&cases, MIN_SAMPLES, 1).unwrap());
    assert!(validate_moments(&cases, MIN_SAMPLES - 1, 1).is_err());
}

#[test]
fn wrong_closed_form_is_caught() {
    // a mean shifted by 0.1 is about 20 standard errors away at 10^5 samples
    let report =
        validate_moments(&[MomentCase::Relu1(Gaussian::new(0.1, 1.0))], 100_000, 2).unwrap();
    let shifted = report.checks[0].mc_mean - 0.1;
    assert!((report.checks[0].closed.mean - shifted).abs() / report.checks[0].se_mean > 4.0);
}

#[test]
fn default_grids_have_the_stated_size() {
    assert_eq!(MomentKind::Relu1.default_grid(0).len(), 104);
    assert_eq!(MomentKind::QuadraticForm.default_grid(0).len(), 50);
    assert_eq!(MomentKind::MinPool.default_grid(0).len(), 12);
    assert!(MomentKind::from_name("softmax").is_err());
    for k in [
        MomentKind::Relu,
        MomentKind::Relu1,
        MomentKind::QuadraticForm,
        MomentKind::MinPool,
    ] {
        assert_eq!(MomentKind::from_name(k.name()).unwrap(), k);
    }
}

#[test]
fn spearman_examples() {
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
    assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
}

#[test]
fn projected_prototypes_sit_at_zero_distance() {
    let (model, training) = projected_model(&DeskConfig::reference(), 2, 5).unwrap();
    for p in 0..model.prototypes().len() {
        let prov = model.prototypes().provenance(p).unwrap();
        let d = protopnet::forward(&model, &training[prov.image].image).unwrap();
        assert!(d.distances.values[p].abs() < 1e-12);
    }
}

#[test]
fn null_fourth_moment_matches_sampling() {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let cases = [
        (MomentCase::Relu1(Gaussian::new(0.0, 1.0)), 0.0, 1.0),
        (MomentCase::Relu1(Gaussian::new(0.8, 0.3)), 0.0, 1.0),
        (
            MomentCase::Relu(Gaussian::new(-0.5, 2.0)),
            0.0,
            f64::INFINITY,
        ),
    ];
    let mut rng = common::rng(50);
    for (case, lo, hi) in cases {
        let closed = case.closed_form().unwrap();
        let m4 = case.null_fourth_moment(closed).unwrap();
        let g = match case {
            MomentCase::Relu1(g) | MomentCase::Relu(g) => g,
            _ => unreachable!(),
        };
        let n = 2_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let y = (g.mean + g.std() * rng.sample::<f64, _>(StandardNormal)).clamp(lo, hi);
            acc += (y - closed.mean).powi(4);
        }
        let sampled = acc / n as f64;
        assert!(
            (sampled - m4).abs() < 0.01 * m4,
            "{case:?}: {sampled} vs {m4}"
        );
    }
}
