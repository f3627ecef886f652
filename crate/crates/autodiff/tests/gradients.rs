use gtm_autodiff::gradcheck::{op_catalog, GradCheck};
use gtm_autodiff::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn every_op_matches_finite_differences() {
    let check = GradCheck::default();
    for case in op_catalog() {
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let inputs: Vec<Tensor> = case
                .input_shapes
                .iter()
                .map(|s| random_tensor(&mut rng, s))
                .collect();
            let report = check.run(&inputs, case.build).unwrap();
            assert!(
                report.max_relative_error < 1e-4,
                "{} trial {trial}: {report:?}",
                case.name
            );
        }
    }
}

#[test]
fn matmul_sum_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    let report = GradCheck::default()
        .run(&[a, b], |g, v| {
            let c = g.matmul(v[0], v[1])?;
            Ok(g.sum(c))
        })
        .unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs: Vec<Tensor> = [[3usize, 4], [4, 2]]
        .iter()
        .map(|s| random_tensor(&mut rng, s))
        .collect();
    let run = || {
        let mut g = Graph::new();
        let a = g.constant(inputs[0].clone());
        let b = g.constant(inputs[1].clone());
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c, 1).unwrap();
        g.data(s).to_vec()
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-1e4f64..1e4, 2..40)) {
        let n = values.len();
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, n], values).unwrap());
        let y = g.softmax(x, 1).unwrap();
        let s: f64 = g.data(y).iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-9);
        prop_assert!(g.data(y).iter().all(|&p| p >= 0.0 && p.is_finite()));
    }

    #[test]
    fn layer_norm_zero_mean_unit_variance(values in prop::collection::vec(-50f64..50.0, 4..32)) {
        let n = values.len();
        let mean0 = values.iter().sum::<f64>() / n as f64;
        let var0 = values.iter().map(|v| (v - mean0).powi(2)).sum::<f64>() / n as f64;
        prop_assume!(var0 > 1e-2);
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![n], values).unwrap());
        let y = g.layer_norm(x);
        let out = g.data(y);
        let mean = out.iter().sum::<f64>() / n as f64;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-6);
        // the 1e-5 epsilon biases variance down by at most eps / var0
        prop_assert!((var - 1.0).abs() < 1e-6 + 1e-5 / var0);
    }
}
