//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Run with `cargo test -p gtm-core --test acceptance`.

use std::panic::catch_unwind;
use std::time::Instant;

use gtm_autodiff::gradcheck::{op_catalog, GradCheck};
use gtm_autodiff::{Graph, Tensor};
use gtm_core::baselines::{
    previous_season_products, sixty_percent_policy, Featurizer, KnnMode, NeighborIndex, Weighting,
    INDEX_FORMAT, INDEX_VERSION,
};
use gtm_core::dataset::{generate_synthetic, Attribute, Dataset, Product, SynthConfig, TemporalFeatures, Vocabulary};
use gtm_core::first_order::{first_order_error, method_report, OrderCase};
use gtm_core::metrics::{erp, mae, tracking_signal, wape, ErpOptions};
use gtm_core::model::{
    check_gradients, forward, init_params, Dropout, GtmModel, ModelConfig, ModelInput, ProviderSpec, PARAMS_FILE,
};
use gtm_core::stats::{attention_lag_report, kpss_test, sliding_correlation, spearman, strongest};
use gtm_core::training::{train, AdafactorConfig, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn tune_allocator() {
    // same thresholds as the CLI: keeps the graph's buffers off mmap
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn tune_allocator() {}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

fn small_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        d_embed: 6,
        num_heads: 2,
        ffn_dim: 10,
        fusion_hidden: 7,
        image_dim: 5,
        text_dim: 4,
        trend_len: 28,
        ..Default::default()
    }
}

fn random_input(c: &ModelConfig, rng: &mut ChaCha8Rng) -> ModelInput {
    let mut v = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>();
    ModelInput {
        trends: [v(c.trend_len, 0.0, 1.0), v(c.trend_len, 0.0, 1.0), v(c.trend_len, 0.0, 1.0)],
        image: v(c.image_dim, -1.0, 1.0),
        text: [v(c.text_dim, -1.0, 1.0), v(c.text_dim, -1.0, 1.0), v(c.text_dim, -1.0, 1.0)],
        temporal: TemporalFeatures::from_date("2018-05-17".parse().unwrap()),
    }
}

fn gradient_correctness() -> Check {
    let t0 = Instant::now();
    let check = GradCheck::default();
    let catalog = op_catalog();
    let mut worst: f64 = 0.0;
    for case in &catalog {
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(5000 + trial);
            let inputs: Vec<Tensor> = case.input_shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
            let r = check.run(&inputs, case.build).map_err(|e| format!("{}: {e}", case.name))?;
            ensure!(r.max_relative_error < 1e-4, "{} trial {trial}: {r:?}", case.name);
            worst = worst.max(r.max_relative_error);
        }
    }
    let full = GradCheck {
        max_elements: Some(4),
        ..Default::default()
    };
    let configs = [
        small_config(),
        ModelConfig {
            decoder_residual_norm: false,
            ..small_config()
        },
        ModelConfig {
            use_encoder: false,
            ..small_config()
        },
    ];
    let mut trials = 0;
    for trial in 0..21u64 {
        let c = &configs[trial as usize % configs.len()];
        let mut params = init_params(c, 700 + trial).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(800 + trial);
        // zero biases can kill every fusion unit, leaving the decoder's ReLUs
        // exactly at their kink; probe a generic point instead
        for (_, t) in params.iter_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.1..0.1);
            }
        }
        let xs: Vec<ModelInput> = (0..2).map(|_| random_input(c, &mut rng)).collect();
        let targets: Vec<f64> = (0..2 * c.horizon).map(|_| rng.random_range(0.0..1.0)).collect();
        let batch: Vec<&ModelInput> = xs.iter().collect();
        let r = check_gradients(c, &params, &batch, &targets, &full).map_err(|e| e.to_string())?;
        ensure!(r.max_relative_error < 1e-4, "full model trial {trial}: {r:?}");
        worst = worst.max(r.max_relative_error);
        trials += 1;
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1}s");
    Ok(format!(
        "{} ops x 20 trials + {trials} full-model trials, max rel err {worst:.2e}, {secs:.1}s",
        catalog.len()
    ))
}

// naive references: explicit loops over products and weeks
fn naive_wape(y: &[Vec<f64>], p: &[Vec<f64>], h: usize) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..y.len() {
        for t in 0..h {
            num += (y[i][t] - p[i][t]).abs();
            den += y[i][t];
        }
    }
    num / den
}

fn naive_mae(y: &[Vec<f64>], p: &[Vec<f64>], h: usize) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for i in 0..y.len() {
        for t in 0..h {
            s += (y[i][t] - p[i][t]).abs();
            n += 1;
        }
    }
    s / n as f64
}

fn naive_ts(y: &[Vec<f64>], p: &[Vec<f64>], h: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        for t in 0..h {
            s += y[i][t] - p[i][t];
        }
    }
    s / naive_mae(y, p, h)
}

fn naive_erp(y: &[Vec<f64>], p: &[Vec<f64>], h: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..y.len() {
        let mut mean = 0.0;
        for t in 0..h {
            mean += y[i][t];
        }
        let eps = 0.5 * mean / h as f64;
        let mut misses = 0.0;
        for t in 0..h {
            if (y[i][t] - p[i][t]).abs() >= eps {
                misses += 1.0;
            }
        }
        total += misses / h as f64;
    }
    total / y.len() as f64
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn metric_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let opts = ErpOptions::default();
    for pair in 0..100 {
        let h = rng.random_range(1..=12);
        let y = vec![(0..12).map(|_| rng.random_range(0.0..100.0)).collect::<Vec<f64>>()];
        let p = vec![(0..12).map(|_| rng.random_range(-10.0..120.0)).collect::<Vec<f64>>()];
        let checks = [
            ("WAPE", wape(&y, &p, h), naive_wape(&y, &p, h)),
            ("MAE", mae(&y, &p, h), naive_mae(&y, &p, h)),
            ("TS", tracking_signal(&y, &p, h), naive_ts(&y, &p, h)),
            ("ERP", erp(&y, &p, h, &opts), naive_erp(&y, &p, h)),
        ];
        for (name, got, want) in checks {
            let got = got.map_err(|e| format!("pair {pair} {name}: {e}"))?;
            ensure!(close(got, want, 1e-12), "pair {pair} {name}: {got} vs {want}");
        }
        // WAPE = MAE · (N·h) / Σy
        let w = wape(&y, &p, h).unwrap();
        let m = mae(&y, &p, h).unwrap();
        let total: f64 = y[0][..h].iter().sum();
        ensure!(close(w, m * h as f64 / total, 1e-12), "pair {pair}: identity {w} vs {}", m * h as f64 / total);
    }
    Ok("100 random pairs, WAPE/MAE/TS/ERP and WAPE-MAE identity within 1e-12".into())
}

fn non_autoregressive() -> Check {
    let c = ModelConfig {
        use_encoder: false,
        ..small_config()
    };
    let params = init_params(&c, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base: Vec<ModelInput> = (0..3).map(|_| random_input(&c, &mut rng)).collect();
    let run = |xs: &[ModelInput]| {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let batch: Vec<&ModelInput> = xs.iter().collect();
        let fv = forward(&c, &mut g, &|n| bound.var(n), &batch, &mut Dropout::off()).unwrap();
        (g.shape(fv.predictions).to_vec(), g.data(fv.predictions).to_vec())
    };
    let (shape, reference) = run(&base);
    ensure!(shape == vec![3, c.horizon], "one call gave shape {shape:?}");
    for trial in 0..10 {
        let mut xs = base.clone();
        for x in &mut xs {
            for t in &mut x.trends {
                t.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            }
        }
        let (_, out) = run(&xs);
        let same = out.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
        ensure!(same, "trend replacement {trial} changed the encoder-less output");
    }
    Ok(format!("one forward call emits [3, {}]; 10 trend replacements bit-equal", c.horizon))
}

/// Settings for the synthetic benefit/attention runs.
const BENEFIT_EPOCHS: usize = 150;
const BENEFIT_TEST: usize = 100;

fn benefit_config(use_encoder: bool) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        d_embed: 16,
        use_encoder,
        ..Default::default()
    }
}

fn benefit_train(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: BENEFIT_EPOCHS,
        batch_size: 16,
        seed,
        optimizer: AdafactorConfig {
            lr: Some(0.003),
            relative_step: false,
            scale_parameter: false,
            ..Default::default()
        },
    }
}

struct SeedRun {
    full_wape: f64,
    ablated_wape: f64,
    modal: Option<String>,
}

fn synthetic_run(seed: u64) -> Result<SeedRun, String> {
    let data = generate_synthetic(&SynthConfig {
        seed,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let (train_set, test_set) = data.dataset.split(BENEFIT_TEST).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = test_set.products.iter().map(|p| p.id.as_str()).collect();
    let actual: Vec<Vec<f64>> = test_set.products.iter().map(|p| p.sales.to_vec()).collect();
    let mut wapes = [0.0; 2];
    let mut modal = None;
    for (slot, enc) in [(0, true), (1, false)] {
        let mut c = benefit_config(enc);
        c.fit_years(&data.dataset);
        let mut model = GtmModel::new(c, seed, ProviderSpec::Product, ProviderSpec::Hash { seed })
            .map_err(|e| e.to_string())?;
        let mut trainer = Trainer::new(&mut model, &train_set.products, &benefit_train(seed)).map_err(|e| e.to_string())?;
        for _ in 0..BENEFIT_EPOCHS {
            trainer.run_epoch(&mut model).map_err(|e| e.to_string())?;
        }
        let inputs = model.input_builder().unwrap().build_all(&test_set.products).unwrap();
        let out = model.predict(&ids, &inputs, 64).map_err(|e| e.to_string())?;
        let pred: Vec<Vec<f64>> = out.iter().map(|o| o.clamped()).collect();
        wapes[slot] = wape(&actual, &pred, 12).map_err(|e| e.to_string())?;
        if enc {
            let maps: Vec<Vec<f64>> = out
                .iter()
                .map(|o| o.cross_attention.as_ref().expect("encoder attention").weights.clone())
                .collect();
            modal = attention_lag_report(&maps, 52).map_err(|e| e.to_string())?.modal_bucket;
        }
    }
    Ok(SeedRun {
        full_wape: wapes[0],
        ablated_wape: wapes[1],
        modal,
    })
}

fn synthetic_runs() -> Result<(Vec<SeedRun>, f64), String> {
    let t0 = Instant::now();
    let runs = (0..3).map(synthetic_run).collect::<Result<Vec<_>, _>>()?;
    Ok((runs, t0.elapsed().as_secs_f64()))
}

fn exogenous_benefit(runs: &[SeedRun], secs: f64) -> Check {
    let full = runs.iter().map(|r| r.full_wape).sum::<f64>() / runs.len() as f64;
    let ablated = runs.iter().map(|r| r.ablated_wape).sum::<f64>() / runs.len() as f64;
    let per: Vec<String> = runs
        .iter()
        .map(|r| format!("{:.3}/{:.3}", r.full_wape, r.ablated_wape))
        .collect();
    let detail = format!(
        "mean test WAPE full {full:.3} vs encoder-ablated {ablated:.3} (per seed {}), {secs:.0}s",
        per.join(", ")
    );
    ensure!(full < ablated, "{detail}");
    ensure!(secs < 900.0, "{detail}: over 15 minutes");
    Ok(detail)
}

fn attention_modal(runs: &[SeedRun]) -> Check {
    let modal: Vec<String> = runs.iter().map(|r| format!("{:?}", r.modal)).collect();
    let hits = runs.iter().filter(|r| r.modal.as_deref() == Some("[-42,-32)")).count();
    let detail = format!("modal buckets {}", modal.join(", "));
    ensure!(hits >= 2, "{detail}");
    Ok(format!("{detail}: {hits}/3 at [-42,-32)"))
}

fn correlation_pipeline() -> Check {
    let data = generate_synthetic(&SynthConfig {
        n_products: 200,
        seed: 11,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (p, &lag) in data.dataset.products.iter().zip(&data.planted_lags) {
        // recovered: the strongest window over all three trends starts within 2 weeks of the plant
        let mut recs = Vec::new();
        for a in Attribute::ALL {
            recs.extend(sliding_correlation(&p.id, a, &p.sales, p.trend(a).values()).map_err(|e| e.to_string())?);
        }
        hits += usize::from(strongest(&recs).is_some_and(|b| (b.start_lag - lag).abs() <= 2));
    }
    let n = data.dataset.len();
    ensure!(hits * 10 >= n * 8, "planted lag recovered for {hits}/{n}");

    let (mut white_ok, mut walk_flagged) = (0, 0);
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(90_000 + seed);
        let noise: Vec<f64> = (0..52).map(|_| StandardNormal.sample(&mut rng)).collect();
        white_ok += usize::from(kpss_test(&noise).map_err(|e| e.to_string())?.stationary);
        let walk: Vec<f64> = noise
            .iter()
            .scan(0.0, |s, v| {
                *s += v;
                Some(*s)
            })
            .collect();
        walk_flagged += usize::from(!kpss_test(&walk).map_err(|e| e.to_string())?.stationary);
    }
    ensure!(white_ok >= 180, "white noise stationary in {white_ok}/200");
    ensure!(walk_flagged >= 140, "random walk flagged in {walk_flagged}/200");

    // scipy.stats.spearmanr on tied data
    let x = [1., 2., 2., 3., 4., 4., 4., 5., 6., 7., 7., 8.];
    let y = [2., 1., 3., 3., 5., 4., 6., 6., 8., 7., 9., 9.];
    let c = spearman(&x, &y).map_err(|e| e.to_string())?;
    ensure!((c.rho - 0.9556085934876797).abs() < 1e-10, "rho {}", c.rho);
    ensure!((c.p_value - 1.2599089155461555e-06).abs() < 1e-10, "p {}", c.p_value);
    Ok(format!(
        "planted lag {hits}/{n}; KPSS white {white_ok}/200 stationary, walk {walk_flagged}/200 flagged; Spearman with ties within 1e-10"
    ))
}

fn products(n: usize, seed: u64, image_dim: usize) -> Vec<Product> {
    generate_synthetic(&SynthConfig {
        n_products: n,
        seed,
        image_dim,
        ..Default::default()
    })
    .unwrap()
    .dataset
    .products
}

fn knn_baselines() -> Check {
    let ps = products(40, 1, 8);
    let featurizer = |mode| Featurizer {
        mode,
        vocabulary: Vocabulary::from_products(&ps),
        image_provider: ProviderSpec::Product,
        image_dim: 8,
    };
    let index = NeighborIndex::build(&ps, featurizer(KnnMode::Image)).map_err(|e| e.to_string())?;
    for p in &ps {
        let f = index.forecast(p, 1, Weighting::Similarity).map_err(|e| e.to_string())?;
        ensure!(f.forecast == p.sales.to_vec(), "zero-distance query {} differs", p.id);
    }

    let keys = [
        [1.0, 0.0, 0.0],
        [0.9, 0.1, 0.0],
        [0.0, 1.0, 0.0],
        [0.5, 0.5, 0.5],
        [-1.0, 0.2, 0.0],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sales: Vec<Vec<f64>> = (0..5).map(|_| (0..12).map(|_| rng.random_range(0.0..50.0)).collect()).collect();
    let small = NeighborIndex {
        format: INDEX_FORMAT.into(),
        version: INDEX_VERSION,
        featurizer: featurizer(KnnMode::Image),
        ids: (0..5).map(|i| format!("n{i}")).collect(),
        keys: keys.iter().map(|k| k.to_vec()).collect(),
        values: sales.clone(),
    };
    let q = [0.8, 0.3, 0.1];
    let cos = |k: &[f64; 3]| {
        let dot = q[0] * k[0] + q[1] * k[1] + q[2] * k[2];
        1.0 - dot / ((q[0] * q[0] + q[1] * q[1] + q[2] * q[2]).sqrt() * (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt())
    };
    let mut ranked: Vec<(f64, usize)> = keys.iter().enumerate().map(|(i, k)| (cos(k), i)).collect();
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let top = &ranked[..3];
    let wsum: f64 = top.iter().map(|(d, _)| 1.0 - d).sum();
    let got = small.query_features(&q, 3, Weighting::Similarity).map_err(|e| e.to_string())?;
    for t in 0..12 {
        let want: f64 = top.iter().map(|(d, i)| (1.0 - d) / wsum * sales[*i][t]).sum();
        ensure!(close(got.forecast[t], want, 1e-12), "brute force week {t}: {} vs {want}", got.forecast[t]);
    }

    let big = NeighborIndex::build(&ps, featurizer(KnnMode::AttributeImage)).map_err(|e| e.to_string())?;
    for trial in 0..100 {
        let query: Vec<f64> = (0..big.keys[0].len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = 1 + trial % 11;
        let f = big.query_features(&query, k, Weighting::Similarity).map_err(|e| e.to_string())?;
        for t in 0..12 {
            let vals: Vec<f64> = f
                .neighbors
                .iter()
                .map(|n| big.values[big.ids.iter().position(|i| *i == n.id).unwrap()][t])
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            ensure!(f.forecast[t] >= lo && f.forecast[t] <= hi, "query {trial} week {t} outside envelope");
        }
    }
    Ok("zero-distance exact; 5-product brute force within 1e-12; envelope on 100 queries".into())
}

fn with_sales(mut p: Product, first_six: [f64; 6], season: &str) -> Product {
    p.sales = [0.0; 12];
    p.sales[..6].copy_from_slice(&first_six);
    p.season = season.into();
    p
}

fn first_order_sim() -> Check {
    let actual = [20.0, 20.0, 20.0, 20.0, 10.0, 10.0, 5.0, 5.0, 0.0, 0.0, 0.0, 0.0];
    let forecast = [15.0, 15.0, 15.0, 15.0, 15.0, 15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let r = first_order_error("toy", &["a"], &[forecast.to_vec()], &[actual.to_vec()], 6, 25.0)
        .map_err(|e| e.to_string())?;
    ensure!(r.mean_abs_error == 10.0 && r.dollar_discrepancy == 250.0, "toy gave {r:?}");

    let base = products(3, 2, 4);
    let q = with_sales(base[0].clone(), [0.0; 6], "SS19");
    let one = with_sales(q.clone(), [10.0, 20.0, 30.0, 20.0, 10.0, 10.0], "SS18");
    let two = with_sales(q.clone(), [50.0, 50.0, 50.0, 20.0, 20.0, 10.0], "SS18");
    let o = sixty_percent_policy(&q, &[&one]).map_err(|e| e.to_string())?;
    ensure!(o.quantity == 160.0, "one match gave {}", o.quantity);
    let o = sixty_percent_policy(&q, &[&one, &two]).map_err(|e| e.to_string())?;
    ensure!(o.quantity == 240.0, "two matches gave {}", o.quantity);

    let ps = products(300, 8, 4);
    let mut checked = 0;
    for q in ps.iter().take(80) {
        let history = previous_season_products(&ps, &q.season);
        let exact: Vec<&&Product> = history
            .iter()
            .filter(|p| p.category == q.category && p.color == q.color && p.fabric == q.fabric)
            .collect();
        if exact.is_empty() {
            continue;
        }
        let mean = exact.iter().map(|p| p.sales[..6].iter().sum::<f64>()).sum::<f64>() / exact.len() as f64;
        let o = sixty_percent_policy(q, &history).map_err(|e| e.to_string())?;
        ensure!(o.quantity == 1.6 * mean, "{}: {} vs {}", q.id, o.quantity, 1.6 * mean);
        checked += 1;
    }
    ensure!(checked > 0, "no exact policy match in the synthetic data");

    // scaling law: exact for power-of-two factors, and for integer data and costs
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let acts: Vec<Vec<f64>> = (0..10).map(|_| (0..12).map(|_| rng.random_range(0..60) as f64).collect()).collect();
    let ids: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let id_refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    let real: Vec<OrderCase> = (0..10)
        .map(|i| OrderCase {
            product_id: id_refs[i],
            ordered: rng.random_range(0.0..400.0),
            actual: &acts[i],
        })
        .collect();
    let whole: Vec<OrderCase> = real
        .iter()
        .map(|c| OrderCase {
            ordered: c.ordered.round(),
            ..c.clone()
        })
        .collect();
    for (cases, factors, cost) in [(&real, &[0.5, 2.0, 4.0, 1024.0][..], 25.0), (&whole, &[3.0, 7.0, 10.0][..], 25.0)] {
        let base = method_report("m", cases, 6, cost).map_err(|e| e.to_string())?;
        for &c in factors {
            let scaled = method_report("m", cases, 6, c * cost).map_err(|e| e.to_string())?;
            ensure!(
                scaled.dollar_discrepancy == c * base.dollar_discrepancy,
                "factor {c}: {} vs {}",
                scaled.dollar_discrepancy,
                c * base.dollar_discrepancy
            );
        }
    }
    Ok(format!("toy 10 units/$250; policy 160 and 240; {checked} brute-force policy matches; scaling law exact"))
}

fn determinism() -> Check {
    let data = generate_synthetic(&SynthConfig {
        n_products: 30,
        seed: 5,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let dataset: &Dataset = &data.dataset;
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        seed: 9,
        ..Default::default()
    };
    let run = || -> Result<(Vec<u8>, Vec<u8>), String> {
        let mut c = ModelConfig {
            d_model: 16,
            d_embed: 16,
            ..Default::default()
        };
        c.fit_years(dataset);
        let mut model = GtmModel::new(c, 4, ProviderSpec::Product, ProviderSpec::Hash { seed: 1 }).map_err(|e| e.to_string())?;
        let report = train(&mut model, &dataset.products, &config).map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        model.save(dir.path()).map_err(|e| e.to_string())?;
        let ckpt = std::fs::read(dir.path().join(PARAMS_FILE)).map_err(|e| e.to_string())?;
        Ok((ckpt, serde_json::to_vec(&report).unwrap()))
    };
    let (a, ra) = run()?;
    let (b, rb) = run()?;
    ensure!(a == b, "checkpoints differ");
    ensure!(ra == rb, "reports differ");
    Ok(format!("two seeded runs: {}-byte checkpoints and reports bit-identical", a.len()))
}

fn main() {
    tune_allocator();
    let mut failed = 0;
    let mut report = |name: &str, outcome: std::thread::Result<Check>| {
        let line = match outcome {
            Ok(Ok(detail)) => format!("PASS {name}: {detail}"),
            Ok(Err(detail)) => {
                failed += 1;
                format!("FAIL {name}: {detail}")
            }
            Err(_) => {
                failed += 1;
                format!("FAIL {name}: panicked")
            }
        };
        println!("{line}");
    };
    let fast: [(&str, fn() -> Check); 7] = [
        ("gradient correctness", gradient_correctness),
        ("metric oracle equivalence", metric_oracle),
        ("non-autoregressive contract", non_autoregressive),
        ("correlation pipeline", correlation_pipeline),
        ("kNN baselines", knn_baselines),
        ("first-order simulator", first_order_sim),
        ("determinism", determinism),
    ];
    for (name, f) in fast {
        report(name, catch_unwind(f));
    }
    match catch_unwind(synthetic_runs) {
        Ok(Ok((runs, secs))) => {
            report("exogenous-signal benefit", Ok(exogenous_benefit(&runs, secs)));
            report("attention interpretability", Ok(attention_modal(&runs)));
        }
        Ok(Err(e)) => {
            report("exogenous-signal benefit", Ok(Err(e.clone())));
            report("attention interpretability", Ok(Err(e)));
        }
        Err(p) => {
            report("exogenous-signal benefit", Err(p));
            report("attention interpretability", Ok(Err("synthetic runs panicked".into())));
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
