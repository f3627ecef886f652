use gtm_autodiff::Tensor;
use gtm_core::dataset::{generate_synthetic, SynthConfig};
use gtm_core::model::{GtmModel, ModelConfig, ProviderSpec};
use gtm_core::training::{train, Adafactor, AdafactorConfig, TrainConfig};
use gtm_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scalar AdaFactor written straight from the published update rule:
/// unfactored second moment, relative step, parameter scaling, clipping.
fn reference_trajectory(p0: f64, grads: &[f64], c: &AdafactorConfig) -> Vec<f64> {
    let mut p = p0;
    let mut v = 0.0;
    let mut out = Vec::new();
    for (i, &g) in grads.iter().enumerate() {
        let t = (i + 1) as f64;
        let rho = if c.relative_step {
            let base = if c.warmup_init { 1e-6 * t } else { 1e-2 };
            if base < 1.0 / t.sqrt() {
                base
            } else {
                1.0 / t.sqrt()
            }
        } else {
            c.lr.unwrap()
        };
        let alpha = if c.scale_parameter {
            rho * if p.abs() > c.eps2 { p.abs() } else { c.eps2 }
        } else {
            rho
        };
        let beta = 1.0 - t.powf(c.decay_rate);
        v = beta * v + (1.0 - beta) * (g * g + c.eps1);
        let u = g / v.sqrt();
        let clip = if u.abs() / c.clip_threshold > 1.0 {
            u.abs() / c.clip_threshold
        } else {
            1.0
        };
        p -= alpha * (u / clip);
        out.push(p);
    }
    out
}

fn run_scalar(p0: f64, grads: &[f64], c: &AdafactorConfig) -> Vec<f64> {
    let mut opt = Adafactor::new(c.clone()).unwrap();
    let mut p = Tensor::vector(vec![p0]).unwrap();
    grads
        .iter()
        .map(|&g| {
            opt.update("x", &mut p, &[g]).unwrap();
            p.data()[0]
        })
        .collect()
}

#[test]
fn scalar_trajectory_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let configs = [
        AdafactorConfig::default(),
        AdafactorConfig {
            warmup_init: true,
            ..Default::default()
        },
        AdafactorConfig {
            lr: Some(0.05),
            relative_step: false,
            scale_parameter: false,
            clip_threshold: 0.7,
            ..Default::default()
        },
    ];
    for c in &configs {
        for _ in 0..10 {
            let grads: Vec<f64> = (0..200).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p0 = rng.random_range(-2.0..2.0);
            let ours = run_scalar(p0, &grads, c);
            let theirs = reference_trajectory(p0, &grads, c);
            for (a, b) in ours.iter().zip(&theirs) {
                assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "{c:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn update_is_invariant_to_gradient_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let grads: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
    let scaled: Vec<f64> = grads.iter().map(|g| g * 1000.0).collect();
    let c = AdafactorConfig::default();
    let a = run_scalar(0.8, &grads, &c);
    let b = run_scalar(0.8, &scaled, &c);
    let mut prev = 0.8;
    for (x, y) in a.iter().zip(&b) {
        let (sx, sy) = (x - prev, y - prev);
        assert!((sx - sy).abs() <= 1e-6 * sx.abs().max(1e-12), "{sx} vs {sy}");
        prev = *x;
    }
}

#[test]
fn zero_gradient_leaves_parameters() {
    let c = AdafactorConfig {
        decay_rate: 0.0,
        ..Default::default()
    };
    let mut opt = Adafactor::new(c).unwrap();
    let mut w = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 / 3.0).collect()).unwrap();
    let mut b = Tensor::vector(vec![0.5, -0.5]).unwrap();
    let (w0, b0) = (w.clone(), b.clone());
    for _ in 0..5 {
        opt.update("w", &mut w, &[0.0; 12]).unwrap();
        opt.update("b", &mut b, &[0.0; 2]).unwrap();
    }
    assert_eq!(w, w0);
    assert_eq!(b, b0);
}

fn small_model(seed: u64) -> GtmModel {
    let config = ModelConfig {
        d_model: 16,
        d_embed: 16,
        ffn_dim: 32,
        fusion_hidden: 32,
        year_min: 2017,
        year_max: 2019,
        ..Default::default()
    };
    GtmModel::new(config, seed, ProviderSpec::Product, ProviderSpec::Hash { seed: 5 }).unwrap()
}

fn synthetic(n: usize, seed: u64) -> Vec<gtm_core::dataset::Product> {
    generate_synthetic(&SynthConfig {
        n_products: n,
        seed,
        ..Default::default()
    })
    .unwrap()
    .dataset
    .products
}

#[test]
fn one_epoch_on_one_product() {
    let products = synthetic(1, 0);
    let mut model = small_model(0);
    let report = train(
        &mut model,
        &products,
        &TrainConfig {
            epochs: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(report.loss_curve.len(), 1);
    assert_eq!(report.steps, 1);
    assert!(report.loss_curve[0].is_finite());
}

#[test]
fn empty_dataset_is_a_contract_error() {
    let mut model = small_model(0);
    let err = train(&mut model, &[], &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn loss_halves_on_fifty_products() {
    for seed in 0..3 {
        let products = synthetic(50, seed);
        let mut model = small_model(seed);
        let report = train(
            &mut model,
            &products,
            &TrainConfig {
                epochs: 50,
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let (first, last) = (report.loss_curve[0], report.loss_curve[49]);
        assert!(report.loss_curve.iter().all(|l| l.is_finite()));
        assert!(last <= 0.5 * first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn training_is_deterministic() {
    let products = synthetic(20, 3);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..Default::default()
    };
    let run = || {
        let mut model = small_model(4);
        let report = train(&mut model, &products, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let bytes = std::fs::read(dir.path().join(gtm_core::model::PARAMS_FILE)).unwrap();
        (bytes, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}
