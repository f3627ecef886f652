//! Seeded generator of VISUELLE-shaped products whose trends echo their own
//! sales at a planted lag.
//!
//! Sales follow `level · popularity · (t+1)·exp(−(t+1)/τ)` with multiplicative
//! log-normal noise, where the level and τ depend on category, color and
//! fabric. Popularity is hidden from the image features and the attributes,
//! so only the trends reveal it: each trend is an AR(1) background plus
//! `amplitude · g(sales / ref)` over a 12-week window starting at the planted
//! lag, with `g(x) = x / (1 + x)`.

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Attribute, Dataset, Product, TrendSeries, SALES_WEEKS, TREND_WEEKS};
use crate::error::{Error, Result};

pub const CATEGORIES: [&str; 8] = [
    "long sleeve",
    "culottes",
    "miniskirt",
    "short sleeves",
    "printed shirt",
    "short cardigan",
    "solid color top",
    "trapeze dress",
];
pub const COLORS: [&str; 10] = [
    "yellow", "brown", "blue", "grey", "green", "black", "red", "white", "orange", "violet",
];
pub const FABRICS: [&str; 12] = [
    "acrylic",
    "scuba crepe",
    "tulle",
    "angora",
    "faux leather",
    "georgette",
    "lurex",
    "crepe",
    "satin cotton",
    "velvet",
    "lace",
    "jacquard",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_products: usize,
    pub seed: u64,
    /// Inclusive range of the echo window's start lag (weeks, negative).
    pub planted_lag_range: (i32, i32),
    pub image_dim: usize,
    pub popularity_sigma: f64,
    pub sales_noise: f64,
    pub trend_amplitude: f64,
    pub trend_noise: f64,
    /// Mean of the AR(1) trend background.
    pub background_level: f64,
    /// Per-series background means are drawn from level ± spread.
    pub background_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_products: 500,
            seed: 0,
            planted_lag_range: (-42, -32),
            image_dim: 64,
            popularity_sigma: 0.5,
            sales_noise: 0.15,
            trend_amplitude: 0.5,
            trend_noise: 0.01,
            background_level: 0.2,
            background_spread: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Echo window start lag per product, in dataset order.
    pub planted_lags: Vec<i32>,
    pub popularity: Vec<f64>,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        validate(self)
    }
}

fn validate(cfg: &SynthConfig) -> Result<()> {
    let (lo, hi) = cfg.planted_lag_range;
    let max_start = -(SALES_WEEKS as i32);
    if lo > hi || lo < -(TREND_WEEKS as i32) || hi > max_start {
        return Err(Error::Config(format!(
            "planted_lag_range [{lo}, {hi}] must lie within [-{TREND_WEEKS}, {max_start}]"
        )));
    }
    if cfg.n_products == 0 {
        return Err(Error::Config("n_products must be at least 1".into()));
    }
    if cfg.image_dim == 0 {
        return Err(Error::Config("image_dim must be positive".into()));
    }
    for (name, v) in [
        ("popularity_sigma", cfg.popularity_sigma),
        ("sales_noise", cfg.sales_noise),
        ("trend_amplitude", cfg.trend_amplitude),
        ("trend_noise", cfg.trend_noise),
        ("background_level", cfg.background_level),
        ("background_spread", cfg.background_spread),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Config(format!("{name} must be finite and nonnegative")));
        }
    }
    Ok(())
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticData> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let cat_level = uniform_vec(&mut rng, CATEGORIES.len(), 20.0, 80.0);
    let cat_tau = uniform_vec(&mut rng, CATEGORIES.len(), 2.0, 3.0);
    let color_factor = uniform_vec(&mut rng, COLORS.len(), 0.8, 1.2);
    let fabric_factor = uniform_vec(&mut rng, FABRICS.len(), 0.9, 1.1);
    let cat_proto: Vec<Vec<f64>> = (0..CATEGORIES.len())
        .map(|_| uniform_vec(&mut rng, cfg.image_dim, -1.0, 1.0))
        .collect();
    let color_proto: Vec<Vec<f64>> = (0..COLORS.len())
        .map(|_| uniform_vec(&mut rng, cfg.image_dim, -0.5, 0.5))
        .collect();

    let start = NaiveDate::from_ymd_opt(2017, 1, 2).expect("valid date");
    let span_days = 3 * 365;
    let pop_dist = Normal::new(0.0, cfg.popularity_sigma).expect("finite sigma");

    struct Draft {
        cat: usize,
        color: usize,
        fabric: usize,
        date: NaiveDate,
        sales: [f64; SALES_WEEKS],
        popularity: f64,
        lag: i32,
        image: Vec<f64>,
    }

    let mut drafts = Vec::with_capacity(cfg.n_products);
    for _ in 0..cfg.n_products {
        let cat = rng.random_range(0..CATEGORIES.len());
        let color = rng.random_range(0..COLORS.len());
        let fabric = rng.random_range(0..FABRICS.len());
        let date = start + Duration::days(rng.random_range(0..span_days));
        let popularity = pop_dist.sample(&mut rng).exp();
        let level = cat_level[cat] * color_factor[color] * fabric_factor[fabric] * popularity;
        let tau = cat_tau[cat];
        let mut sales = [0.0; SALES_WEEKS];
        for (t, s) in sales.iter_mut().enumerate() {
            let x = (t + 1) as f64;
            let eps: f64 = StandardNormal.sample(&mut rng);
            // whole units keep the emitted CSV short and exact
            *s = (level * x * (-x / tau).exp() * (cfg.sales_noise * eps).exp()).round();
        }
        let lag = rng.random_range(cfg.planted_lag_range.0..=cfg.planted_lag_range.1);
        let image = (0..cfg.image_dim)
            .map(|k| {
                let eps: f64 = StandardNormal.sample(&mut rng);
                let v = cat_proto[cat][k] + color_proto[color][k] + 0.1 * eps;
                f64::from(v as f32)
            })
            .collect();
        drafts.push(Draft {
            cat,
            color,
            fabric,
            date,
            sales,
            popularity,
            lag,
            image,
        });
    }

    // reference scale: mean weekly peak
    let reference = drafts
        .iter()
        .map(|d| d.sales.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / drafts.len() as f64;
    let reference = reference.max(1.0);

    let mut products = Vec::with_capacity(drafts.len());
    let mut planted_lags = Vec::with_capacity(drafts.len());
    let mut popularity = Vec::with_capacity(drafts.len());
    for (i, d) in drafts.into_iter().enumerate() {
        let window_start = (TREND_WEEKS as i32 + d.lag) as usize;
        let mut trends = Vec::with_capacity(3);
        for attr in Attribute::ALL {
            let mu = cfg.background_level + cfg.background_spread * rng.random_range(-1.0..1.0);
            let phi = 0.6;
            let mut x = mu;
            let mut values = Vec::with_capacity(TREND_WEEKS);
            for w in 0..TREND_WEEKS {
                let eps: f64 = StandardNormal.sample(&mut rng);
                x = mu + phi * (x - mu) + cfg.trend_noise * eps;
                let mut v = x;
                if (window_start..window_start + SALES_WEEKS).contains(&w) {
                    let r = d.sales[w - window_start] / reference;
                    v += cfg.trend_amplitude * r / (1.0 + r);
                }
                // two decimals on the 0..100 scale, rescaled as ingestion does
                let v = (v.clamp(0.0, 1.0) * 10_000.0).round() / 100.0 / 100.0;
                values.push(v);
            }
            trends.push(TrendSeries::new(attr, values, 1)?);
        }
        let season = format!(
            "{}{:02}",
            if d.date.month() <= 6 { "SS" } else { "AW" },
            d.date.year() % 100
        );
        products.push(Product {
            id: format!("p{i:05}"),
            category: CATEGORIES[d.cat].to_string(),
            color: COLORS[d.color].to_string(),
            fabric: FABRICS[d.fabric].to_string(),
            release_date: d.date,
            season,
            sales: d.sales,
            trends: trends.try_into().expect("three attributes"),
            image_features: Some(d.image),
        });
        planted_lags.push(d.lag);
        popularity.push(d.popularity);
    }

    Ok(SyntheticData {
        dataset: Dataset::new(products),
        planted_lags,
        popularity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticData {
        generate_synthetic(&SynthConfig {
            n_products: 40,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn same_seed_same_data() {
        let a = small(3);
        let b = small(3);
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.planted_lags, b.planted_lags);
        assert_ne!(a.dataset, small(4).dataset);
    }

    #[test]
    fn invariants_hold() {
        let d = small(1);
        for (p, &lag) in d.dataset.products.iter().zip(&d.planted_lags) {
            assert!(p.sales.iter().all(|s| s.is_finite() && *s >= 0.0));
            for t in &p.trends {
                assert_eq!(t.values().len(), TREND_WEEKS);
                assert!(t.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert!((-42..=-32).contains(&lag));
            assert!(p.temporal().validate().is_ok());
            assert_eq!(p.image_features.as_ref().unwrap().len(), 64);
        }
    }

    #[test]
    fn sales_peak_early() {
        let d = small(2);
        let mut early = 0;
        for p in &d.dataset.products {
            let peak = (0..SALES_WEEKS)
                .max_by(|&a, &b| p.sales[a].total_cmp(&p.sales[b]))
                .unwrap();
            if peak <= 3 {
                early += 1;
            }
        }
        assert!(early * 10 >= d.dataset.len() * 9, "{early}");
    }

    #[test]
    fn rejects_bad_lag_range() {
        let cfg = SynthConfig {
            planted_lag_range: (-20, -5),
            ..Default::default()
        };
        assert!(generate_synthetic(&cfg).is_err());
    }
}
