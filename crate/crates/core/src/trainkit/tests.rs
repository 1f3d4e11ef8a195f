use std::sync::Mutex;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::cohort::{generate_cohort, Cohort, GenerationConfig, RenderConfig};
use crate::error::Error;
use crate::model::{mlp_weight, Mode, ModelParams, Widths, META_MEAN, META_SD};

const EIGHT: [&str; 8] = ["BMI", "TG", "HPT", "HLP", "HDL", "WEIGHT", "DRINK", "MALE"];

fn eight() -> Vec<String> {
    EIGHT.iter().map(|s| s.to_string()).collect()
}

fn tiny_widths() -> Widths {
    Widths { conv_channels: vec![4, 4, 6, 6, 6], face_dim: 10, mlp1_hidden: vec![16, 8], mlp2_hidden: vec![8] }
}

fn image_cohort(n: usize, side: usize, seed: u64) -> Cohort {
    let images = RenderConfig { height: side, width: side, ..RenderConfig::default() };
    generate_cohort(&GenerationConfig { n, images: Some(images), ..GenerationConfig::default() }, seed).unwrap()
}

fn meta_hyper(epochs: usize) -> Hyperparams {
    Hyperparams { mode: Mode::Metadata, epochs, widths: tiny_widths(), ..Hyperparams::default() }
}

/// Pairs (positive, negative) with the positive scored higher count 1, ties 1/2.
fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                num += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    num / pairs
}

#[test]
fn confusion_examples() {
    let c = |s: &[f64], l: &[u8]| confusion(s, l, 0.5).unwrap();
    assert_eq!(c(&[0.9, 0.1], &[1, 0]), Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 });
    assert_eq!(c(&[0.9, 0.1], &[0, 1]), Confusion { tp: 0, fp: 1, tn: 0, fn_: 1 });
    assert_eq!(c(&[0.5], &[1]), Confusion { tp: 1, fp: 0, tn: 0, fn_: 0 });
    assert!(matches!(confusion(&[0.5], &[1, 0], 0.5), Err(Error::Dimension(_))));
    assert!(confusion(&[], &[], 0.5).is_err());
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
    let (s, l) = ([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]);
    assert_eq!(auc(&s, &l).unwrap(), 0.75);
    assert_eq!(pair_auc(&s, &l), 0.75);
    assert!(matches!(auc(&[0.2, 0.3], &[1, 1]), Err(Error::UndefinedMetric(_))));
}

#[test]
fn auc_matches_pair_counting_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(2..60);
        // a coarse grid forces ties
        let grid = rng.random_range(2..12) as f64;
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * grid).floor() / grid).collect();
        assert!((auc(&scores, &labels).unwrap() - pair_auc(&scores, &labels)).abs() < 1e-12);
    }
}

#[test]
fn roc_area_equals_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(2..40);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 6.0).floor()).collect();
        let roc = roc_curve(&scores, &labels).unwrap();
        let area: f64 = roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
        assert!((area - auc(&scores, &labels).unwrap()).abs() < 1e-12);
        assert_eq!((roc.last().unwrap().fpr, roc.last().unwrap().tpr), (1.0, 1.0));
    }
}

proptest! {
    #[test]
    fn auc_invariant_under_increasing_transforms(
        raw in prop::collection::vec((-3.0f64..3.0, 0u8..2), 2..50)
    ) {
        let mut labels: Vec<u8> = raw.iter().map(|r| r.1).collect();
        labels[0] = 0;
        labels[1] = 1;
        let scores: Vec<f64> = raw.iter().map(|r| r.0).collect();
        let base = auc(&scores, &labels).unwrap();
        let cube: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
        let sig: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp())).collect();
        prop_assert_eq!(auc(&cube, &labels).unwrap(), base);
        prop_assert_eq!(auc(&sig, &labels).unwrap(), base);
    }
}

#[test]
fn metrics_from_counts_example() {
    let r = MetricsReport::from_counts(Confusion { tp: 3, fp: 1, tn: 4, fn_: 2 }, None, 0.5);
    assert_eq!(r.acc, Some(0.7));
    assert_eq!(r.ss, Some(0.6));
    assert_eq!(r.sp, Some(0.8));
    assert_eq!(r.ppv, Some(0.75));
    assert!((r.npv.unwrap() - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn metrics_match_formulas_on_random_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (tp, fp, tn, fn_) = (rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..30), rng.random_range(0..30));
        let r = MetricsReport::from_counts(Confusion { tp, fp, tn, fn_ }, None, 0.5);
        let f = |a: usize, b: usize| if b == 0 { None } else { Some(a as f64 / b as f64) };
        assert_eq!(r.counts.total(), tp + fp + tn + fn_);
        assert_eq!(r.acc, f(tp + tn, tp + fp + tn + fn_));
        assert_eq!(r.ss, f(tp, tp + fn_));
        assert_eq!(r.sp, f(tn, tn + fp));
        assert_eq!(r.ppv, f(tp, tp + fp));
        assert_eq!(r.npv, f(tn, tn + fn_));
    }
}

#[test]
fn perfect_and_degenerate_reports() {
    let r = MetricsReport::from_scores(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0], 0.5).unwrap();
    for name in METRIC_NAMES {
        assert_eq!(r.metric(name), Some(1.0), "{name}");
    }
    let none = MetricsReport::from_scores(&[0.2, 0.1, 0.3], &[1, 0, 0], 0.5).unwrap();
    assert_eq!(none.ppv, None);
    assert_eq!(none.ss, Some(0.0));
    let single = MetricsReport::from_scores(&[0.2, 0.7], &[1, 1], 0.5).unwrap();
    assert_eq!(single.auc, None);
    let json = serde_json::to_string(&none).unwrap();
    assert!(json.contains("\"ppv\":null") && json.contains("\"fn\":1"));
}

#[test]
fn hyperparams_validation() {
    let ok = Hyperparams::default();
    ok.validate().unwrap();
    assert_eq!(ok.optimizer, Optimizer::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
    for bad in [
        Hyperparams { optimizer: Optimizer::adam(0.0), ..ok.clone() },
        Hyperparams { alpha: 1.5, ..ok.clone() },
        Hyperparams { batch_size: 0, ..ok.clone() },
        Hyperparams { optimizer: Optimizer::Sgd { lr: 0.1, momentum: 1.0 }, ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
    let cohort = generate_cohort(&GenerationConfig::metadata_only(40), 0).unwrap();
    let big = Hyperparams { batch_size: 64, ..meta_hyper(1) };
    let idx: Vec<usize> = (0..40).collect();
    assert!(matches!(train::<f64>(&cohort, &idx, &eight(), &big), Err(Error::Config(_))));
    let image = Hyperparams { mode: Mode::Image, ..meta_hyper(1) };
    assert!(matches!(train::<f64>(&cohort, &idx, &eight(), &image), Err(Error::Data(_))));
}

#[test]
fn multimodal_overfits_sixteen_samples() {
    // capacity check: dropout off so the training loss can reach zero
    let cohort = image_cohort(16, 32, 4);
    let idx: Vec<usize> = (0..16).collect();
    let hyper = Hyperparams { mode: Mode::Multimodal, epochs: 200, batch_size: 16, dropout: 0.0, ..Hyperparams::desk() };
    let trained = train::<f64>(&cohort, &idx, &eight(), &hyper).unwrap();
    assert_eq!(trained.history.len(), 200);
    let last = trained.history.last().unwrap().loss;
    assert!(last < 0.05, "final loss {last}");
}

#[test]
fn alpha_one_leaves_aux_head_untouched() {
    let cohort = image_cohort(24, 16, 1);
    let idx: Vec<usize> = (0..24).collect();
    for optimizer in [Optimizer::default(), Optimizer::Sgd { lr: 0.05, momentum: 0.9 }] {
        let hyper = Hyperparams { mode: Mode::Image, alpha: 1.0, epochs: 3, batch_size: 8, optimizer, widths: tiny_widths(), ..Hyperparams::default() };
        let init = ModelParams::<f64>::init(&hyper.model_config(&cohort, &[]).unwrap(), hyper.seed).unwrap();
        let trained = train::<f64>(&cohort, &idx, &[], &hyper).unwrap().params;
        for i in 0..2 {
            let name = mlp_weight(2, i);
            assert_eq!(trained.get(&name), init.get(&name), "{name}");
        }
        assert_ne!(trained.get(&mlp_weight(1, 0)), init.get(&mlp_weight(1, 0)));
    }
}

#[test]
fn frozen_statistics_are_not_trained() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(60), 2).unwrap();
    let idx: Vec<usize> = (0..60).collect();
    let hyper = meta_hyper(5);
    let trained = train::<f64>(&cohort, &idx, &eight(), &hyper).unwrap().params;
    let mut fitted = ModelParams::<f64>::init(trained.config(), 0).unwrap();
    fitted.fit_standardization(&cohort, &idx).unwrap();
    assert_eq!(trained.get(META_MEAN), fitted.get(META_MEAN));
    assert_eq!(trained.get(META_SD), fitted.get(META_SD));
}

#[test]
fn training_is_bit_reproducible() {
    let cohort = image_cohort(32, 16, 6);
    let idx: Vec<usize> = (0..32).collect();
    let hyper = Hyperparams { mode: Mode::Multimodal, epochs: 2, batch_size: 8, widths: tiny_widths(), seed: 9, ..Hyperparams::default() };
    let a = train::<f64>(&cohort, &idx, &eight(), &hyper).unwrap();
    let b = train::<f64>(&cohort, &idx, &eight(), &hyper).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.history, b.history);
    let c = train::<f64>(&cohort, &idx, &eight(), &Hyperparams { seed: 10, ..hyper }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn diverging_training_aborts_with_location() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(64), 0).unwrap();
    let idx: Vec<usize> = (0..64).collect();
    let hyper = Hyperparams { optimizer: Optimizer::Sgd { lr: 1e200, momentum: 0.0 }, ..meta_hyper(5) };
    match train::<f64>(&cohort, &idx, &eight(), &hyper) {
        Err(Error::Numerical { epoch, batch, detail }) => {
            assert!(epoch < 5 && batch < 4);
            assert!(!detail.is_empty());
        }
        other => panic!("expected a numerical abort, got {:?}", other.map(|t| t.history)),
    }
}

#[test]
fn training_lowers_the_loss() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(300), 1).unwrap();
    let idx: Vec<usize> = (0..300).collect();
    let t = train::<f64>(&cohort, &idx, &eight(), &meta_hyper(15)).unwrap();
    assert!(t.history.last().unwrap().loss < t.history[0].loss - 0.05);
}

#[test]
fn crossval_fold_sizes_and_aggregation() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(676), 0).unwrap();
    let r = crossval(&cohort, &eight(), &meta_hyper(1), &CrossValConfig::default()).unwrap();
    assert_eq!(r.folds.len(), 7);
    for f in &r.folds {
        assert!(f.test_ids.len() == 96 || f.test_ids.len() == 97);
        assert_eq!(f.train_size + f.test_ids.len(), 676);
    }
    for name in METRIC_NAMES {
        let hand: f64 = r.folds.iter().map(|f| f.report.metric(name).unwrap()).sum::<f64>() / 7.0;
        let mean = match name {
            "acc" => r.mean.acc,
            "ss" => r.mean.ss,
            "sp" => r.mean.sp,
            "ppv" => r.mean.ppv,
            "npv" => r.mean.npv,
            _ => r.mean.auc,
        };
        assert!((mean.unwrap() - hand).abs() < 1e-12, "{name}");
    }
    assert!(r.warnings.is_empty());
    assert!(matches!(
        crossval(&cohort, &eight(), &meta_hyper(1), &CrossValConfig { k: 1, ..Default::default() }),
        Err(Error::Config(_))
    ));
}

#[test]
fn crossval_is_deterministic_and_thread_independent() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(200), 3).unwrap();
    let cv = CrossValConfig { k: 4, ..Default::default() };
    let a = crossval(&cohort, &eight(), &meta_hyper(2), &cv).unwrap();
    let b = crossval(&cohort, &eight(), &meta_hyper(2), &cv).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = crossval(&cohort, &eight(), &meta_hyper(2), &CrossValConfig { jobs: 3, ..cv.clone() }).unwrap();
    assert_eq!(a.folds, c.folds);
    let r = crossval(&cohort, &eight(), &meta_hyper(2), &CrossValConfig { repeats: 2, ..cv }).unwrap();
    assert_eq!(r.folds.len(), 8);
    assert_ne!(r.folds[0].test_ids, r.folds[4].test_ids);
}

#[test]
fn standardization_never_sees_the_held_out_fold() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(140), 5).unwrap();
    let seen = Mutex::new(Vec::new());
    let hook = |e: FitEvent<'_>| {
        assert!(e.fitted_on.iter().all(|i| !e.held_out.contains(i)));
        assert_eq!(e.fitted_on.len() + e.held_out.len(), 140);
        seen.lock().unwrap().push((e.repeat, e.fold));
    };
    let cv = CrossValConfig { k: 7, ..Default::default() };
    crossval_observed(&cohort, &eight(), &meta_hyper(1), &cv, &hook).unwrap();
    let mut seen = seen.into_inner().unwrap();
    seen.sort();
    assert_eq!(seen, (0..7).map(|f| (0, f)).collect::<Vec<_>>());
}

#[test]
fn full_cohort_statistics_change_fold_results() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(140), 5).unwrap();
    let fold = &crate::cohort::split_kfold(&cohort, 7, 0).unwrap()[0];
    let hyper = meta_hyper(3);
    let honest = train::<f64>(&cohort, &fold.train, &eight(), &hyper).unwrap().params;
    let all: Vec<usize> = (0..140).collect();
    let mut leaky = ModelParams::<f64>::init(honest.config(), hyper.seed).unwrap();
    leaky.fit_standardization(&cohort, &all).unwrap();
    fit_params(&mut leaky, &cohort, &fold.train, &hyper).unwrap();
    let a = predict_scores(&honest, &cohort, &fold.test).unwrap();
    let b = predict_scores(&leaky, &cohort, &fold.test).unwrap();
    assert_ne!(a, b);
}

#[test]
fn single_class_fold_auc_is_excluded_with_warning() {
    // fewer positives than folds leaves some folds without a positive
    let cohort = generate_cohort(&GenerationConfig { prevalence: 0.03, ..GenerationConfig::metadata_only(120) }, 1).unwrap();
    let positives = cohort.labels().iter().filter(|&&l| l == 1).count();
    assert!((1..10).contains(&positives), "{positives} positives");
    let hyper = Hyperparams { batch_size: 8, ..meta_hyper(1) };
    let r = crossval(&cohort, &eight(), &hyper, &CrossValConfig { k: 10, ..Default::default() }).unwrap();
    let undefined = r.folds.iter().filter(|f| f.report.auc.is_none()).count();
    assert!(undefined > 0);
    assert!(r.warnings.iter().any(|w| w.starts_with("auc undefined")));
    let defined: Vec<f64> = r.folds.iter().filter_map(|f| f.report.auc).collect();
    if !defined.is_empty() {
        let m = defined.iter().sum::<f64>() / defined.len() as f64;
        assert!((r.mean.auc.unwrap() - m).abs() < 1e-12);
    }
}

#[test]
fn migration_to_the_same_cohort_equals_evaluation() {
    let cohort = generate_cohort(&GenerationConfig::metadata_only(120), 8).unwrap();
    let idx: Vec<usize> = (0..120).collect();
    let model = train::<f64>(&cohort, &idx, &eight(), &meta_hyper(2)).unwrap().params;
    assert_eq!(migrate_eval(&model, &cohort, 0.5).unwrap(), evaluate(&model, &cohort, &idx, 0.5).unwrap());
    let mut config = GenerationConfig::metadata_only(30);
    config.indicators.retain(|s| s.name != "TG");
    let other = generate_cohort(&config, 0).unwrap();
    assert!(matches!(migrate_eval(&model, &other, 0.5), Err(Error::Data(_))));
}

fn image_model(cohort: &Cohort, epochs: usize) -> ModelParams<f64> {
    let idx: Vec<usize> = (0..cohort.len()).collect();
    let hyper = Hyperparams { mode: Mode::Image, epochs, widths: tiny_widths(), ..Hyperparams::default() };
    train::<f64>(cohort, &idx, &[], &hyper).unwrap().params
}

#[test]
fn saliency_boundaries_and_determinism() {
    let cohort = image_cohort(20, 16, 2);
    let model = image_model(&cohort, 1);
    let img = cohort.participant(0).image().unwrap();
    let whole = occlusion_saliency(&model, img, None, 16, 1).unwrap();
    assert_eq!((whole.rows, whole.cols), (1, 1));
    let a = occlusion_saliency(&model, img, None, 4, 2).unwrap();
    let b = occlusion_saliency(&model, img, None, 4, 2).unwrap();
    assert_eq!((a.rows, a.cols), (7, 7));
    assert_eq!(a, b);
    assert!(occlusion_saliency(&model, img, None, 17, 1).is_err());
    assert!(occlusion_saliency(&model, img, None, 4, 0).is_err());
    let gray = a.to_image().unwrap();
    assert!(gray.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn saliency_concentrates_on_the_face() {
    let cohort = image_cohort(300, 32, 7);
    let model = image_model(&cohort, 8);
    // most severe participant
    let i = (0..cohort.len())
        .max_by(|&a, &b| {
            let s = |k: usize| cohort.participant(k).latent_severity().unwrap();
            s(a).total_cmp(&s(b))
        })
        .unwrap();
    let p = cohort.participant(i);
    let map = occlusion_saliency(&model, p.image().unwrap(), None, 4, 4).unwrap();
    let corners = [map.get(0, 0), map.get(0, map.cols - 1), map.get(map.rows - 1, 0), map.get(map.rows - 1, map.cols - 1)];
    let (cy, cx) = (map.rows / 2, map.cols / 2);
    let mut face: Vec<f64> = [(cy - 1, cx - 1), (cy - 1, cx), (cy, cx - 1), (cy, cx)].iter().map(|&(r, c)| map.get(r, c).abs()).collect();
    face.sort_by(f64::total_cmp);
    let median = (face[1] + face[2]) / 2.0;
    for c in corners {
        assert!(c.abs() < median, "corner {c} vs face median {median}");
    }
}
