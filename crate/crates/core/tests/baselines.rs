use gtm_core::baselines::{
    previous_season_products, sixty_percent_policy, Featurizer, KnnMode, NeighborIndex, PolicyMatch,
    Weighting, DEFAULT_K,
};
use gtm_core::dataset::{generate_synthetic, Product, SynthConfig, Vocabulary};
use gtm_core::model::ProviderSpec;
use gtm_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn products(n: usize, seed: u64) -> Vec<Product> {
    generate_synthetic(&SynthConfig {
        n_products: n,
        seed,
        image_dim: 8,
        ..Default::default()
    })
    .unwrap()
    .dataset
    .products
}

fn featurizer(mode: KnnMode, ps: &[Product]) -> Featurizer {
    Featurizer {
        mode,
        vocabulary: Vocabulary::from_products(ps),
        image_provider: ProviderSpec::Product,
        image_dim: 8,
    }
}

#[test]
fn zero_distance_returns_neighbor_sales() {
    let ps = products(40, 1);
    for mode in [KnnMode::Image, KnnMode::AttributeImage] {
        let index = NeighborIndex::build(&ps, featurizer(mode, &ps)).unwrap();
        for p in &ps {
            let f = index.forecast(p, 1, Weighting::Similarity).unwrap();
            assert_eq!(f.forecast, p.sales.to_vec());
            assert_eq!(f.neighbors[0].id, p.id);
        }
    }
}

#[test]
fn identical_neighbor_sales_give_that_series() {
    let mut ps = products(15, 2);
    for p in &mut ps {
        p.sales = [3.0, 7.0, 1.0, 0.0, 2.5, 9.0, 4.0, 4.0, 1.0, 1.0, 0.5, 0.25];
    }
    let index = NeighborIndex::build(&ps, featurizer(KnnMode::Image, &ps)).unwrap();
    for w in [Weighting::Similarity, Weighting::Distance] {
        let f = index.forecast(&ps[0], DEFAULT_K, w).unwrap();
        assert_eq!(f.forecast, ps[0].sales.to_vec());
    }
}

/// Every pairwise cosine distance written out by hand, then the k smallest.
#[test]
fn five_product_brute_force() {
    let keys: [[f64; 3]; 5] = [
        [1.0, 0.0, 0.0],
        [0.9, 0.1, 0.0],
        [0.0, 1.0, 0.0],
        [0.5, 0.5, 0.5],
        [-1.0, 0.2, 0.0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sales: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..12).map(|_| rng.random_range(0.0..50.0)).collect())
        .collect();
    let ps = products(5, 3);
    let index = NeighborIndex {
        format: gtm_core::baselines::INDEX_FORMAT.into(),
        version: gtm_core::baselines::INDEX_VERSION,
        featurizer: featurizer(KnnMode::Image, &ps),
        ids: (0..5).map(|i| format!("n{i}")).collect(),
        keys: keys.iter().map(|k| k.to_vec()).collect(),
        values: sales.clone(),
    };
    index.validate().unwrap();
    let query = [0.8, 0.3, 0.1];
    let dist = |k: &[f64; 3]| {
        let dot = query[0] * k[0] + query[1] * k[1] + query[2] * k[2];
        let nq = (query[0] * query[0] + query[1] * query[1] + query[2] * query[2]).sqrt();
        let nk = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
        1.0 - dot / (nq * nk)
    };
    let mut all: Vec<(f64, usize)> = keys.iter().enumerate().map(|(i, k)| (dist(k), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let top = &all[..3];
    for w in [Weighting::Similarity, Weighting::Distance] {
        let raw: Vec<f64> = top
            .iter()
            .map(|(d, _)| match w {
                Weighting::Similarity => 1.0 - d,
                Weighting::Distance => *d,
            })
            .collect();
        let s: f64 = raw.iter().sum();
        let expected: Vec<f64> = (0..12)
            .map(|t| top.iter().zip(&raw).map(|((_, i), r)| r / s * sales[*i][t]).sum())
            .collect();
        let got = index.query_features(&query, 3, w).unwrap();
        let ids: Vec<&str> = got.neighbors.iter().map(|n| n.id.as_str()).collect();
        let want: Vec<String> = top.iter().map(|(_, i)| format!("n{i}")).collect();
        assert_eq!(ids, want);
        for (a, b) in got.forecast.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn zero_norm_query_rejected() {
    let ps = products(5, 4);
    let index = NeighborIndex::build(&ps, featurizer(KnnMode::Image, &ps)).unwrap();
    let err = index.query_features(&[0.0; 8], 1, Weighting::Similarity).unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    let mut q = ps[0].clone();
    q.image_features = Some(vec![0.0; 8]);
    assert!(matches!(
        index.forecast(&q, 1, Weighting::Similarity),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        index.query_features(&[1.0; 8], 6, Weighting::Similarity),
        Err(Error::Contract(_))
    ));
}

#[test]
fn attribute_mode_ignores_images() {
    let ps = products(30, 5);
    let index = NeighborIndex::build(&ps, featurizer(KnnMode::Attribute, &ps)).unwrap();
    let mut q = products(31, 6).pop().unwrap();
    let a = index.forecast(&q, DEFAULT_K, Weighting::Similarity).unwrap();
    q.image_features = Some(vec![9.0; 8]);
    let b = index.forecast(&q, DEFAULT_K, Weighting::Similarity).unwrap();
    assert_eq!(a, b);
}

#[test]
fn index_json_round_trip() {
    let ps = products(12, 7);
    let index = NeighborIndex::build(&ps, featurizer(KnnMode::AttributeImage, &ps)).unwrap();
    let mut buf = Vec::new();
    index.write_json(&mut buf).unwrap();
    let back = NeighborIndex::read_json(buf.as_slice()).unwrap();
    assert_eq!(back, index);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn forecast_within_neighbor_envelope(seed in any::<u64>(), k in 1usize..12, w in prop::bool::ANY) {
        let ps = products(25, seed % 7);
        let index = NeighborIndex::build(&ps, featurizer(KnnMode::AttributeImage, &ps)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..index.keys[0].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weighting = if w { Weighting::Similarity } else { Weighting::Distance };
        let f = index.query_features(&q, k, weighting).unwrap();
        prop_assert_eq!(f.neighbors.len(), k);
        for t in 0..12 {
            let vals: Vec<f64> = f.neighbors.iter()
                .map(|n| index.values[index.ids.iter().position(|i| *i == n.id).unwrap()][t])
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(f.forecast[t] >= lo && f.forecast[t] <= hi);
        }
    }

    #[test]
    fn duplicated_permuted_index_is_equivalent(seed in any::<u64>(), k in 1usize..10) {
        let ps = products(10, seed % 5);
        let f = featurizer(KnnMode::Image, &ps);
        let mut doubled: Vec<Product> = ps.iter().chain(ps.iter()).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::seq::SliceRandom;
        doubled.shuffle(&mut rng);
        let mut sorted = doubled.clone();
        sorted.sort_by(|a, b| a.id.cmp(&b.id));
        let a = NeighborIndex::build(&doubled, f.clone()).unwrap();
        let b = NeighborIndex::build(&sorted, f).unwrap();
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        prop_assert_eq!(
            a.query_features(&q, 2 * k, Weighting::Similarity).unwrap(),
            b.query_features(&q, 2 * k, Weighting::Similarity).unwrap()
        );
    }
}

#[test]
fn policy_matches_brute_force_on_two_seasons() {
    let ps = products(300, 8);
    for q in ps.iter().take(60) {
        let history = previous_season_products(&ps, &q.season);
        if history.is_empty() {
            continue;
        }
        let order = sixty_percent_policy(q, &history).unwrap();
        let same = |p: &&Product| p.category == q.category && p.color == q.color && p.fabric == q.fabric;
        let pool: Vec<&&Product> = if history.iter().any(|p| same(p)) {
            history.iter().filter(|p| same(p)).collect()
        } else if history.iter().any(|p| p.category == q.category) {
            history.iter().filter(|p| p.category == q.category).collect()
        } else {
            history.iter().collect()
        };
        let mut total = 0.0;
        for p in &pool {
            total += p.sales[..6].iter().sum::<f64>();
        }
        assert_eq!(order.n_matches, pool.len());
        assert_eq!(order.quantity, 1.6 * (total / pool.len() as f64));
        if order.matched == PolicyMatch::Exact {
            assert!(pool.iter().all(|p| same(p)));
        }
    }
}
