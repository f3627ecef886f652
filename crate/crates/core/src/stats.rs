//! Stationarity testing, rank correlation against lagged trend windows, and
//! bucketing of where attention peaks in the trend history.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::{Attribute, Dataset, SALES_WEEKS};
use crate::error::{Error, Result};

/// 5% critical value of the KPSS level-stationarity statistic
/// (Kwiatkowski et al., 1992, Table 1).
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;
pub const KPSS_MIN_LEN: usize = 12;
pub const WINDOW: usize = SALES_WEEKS;
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpssResult {
    pub statistic: f64,
    pub lags: usize,
    pub stationary: bool,
}

/// Newey-West truncation lag for the long-run variance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KpssBandwidth {
    /// floor(4·(n/100)^¼)
    #[default]
    Short,
    /// floor(12·(n/100)^¼)
    Long,
    Fixed(usize),
}

impl KpssBandwidth {
    /// Capped at n − 1.
    pub fn lags(self, n: usize) -> usize {
        let scaled = |c: f64| (c * (n as f64 / 100.0).powf(0.25)).floor() as usize;
        let l = match self {
            KpssBandwidth::Short => scaled(4.0),
            KpssBandwidth::Long => scaled(12.0),
            KpssBandwidth::Fixed(l) => l,
        };
        l.min(n.saturating_sub(1))
    }
}

/// KPSS level-stationarity test with the default bandwidth.
pub fn kpss_test(series: &[f64]) -> Result<KpssResult> {
    kpss_test_with(series, KpssBandwidth::default())
}

/// KPSS test for level stationarity with a Bartlett-kernel long-run variance.
pub fn kpss_test_with(series: &[f64], bandwidth: KpssBandwidth) -> Result<KpssResult> {
    let n = series.len();
    if n < KPSS_MIN_LEN {
        return Err(Error::Validation(format!(
            "KPSS needs at least {KPSS_MIN_LEN} observations, got {n}"
        )));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("KPSS on non-finite series".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let lags = bandwidth.lags(n);
    let mut s2 = e.iter().map(|v| v * v).sum::<f64>();
    for l in 1..=lags {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let gamma: f64 = (l..n).map(|t| e[t] * e[t - l]).sum();
        s2 += 2.0 * w * gamma;
    }
    let s2 = s2 / n as f64;
    if !(s2 > 0.0) {
        return Err(Error::DegenerateVariance(
            "KPSS long-run variance is not positive (constant series?)".into(),
        ));
    }
    let mut partial = 0.0;
    let mut eta = 0.0;
    for v in &e {
        partial += v;
        eta += partial * partial;
    }
    let statistic = eta / (n as f64 * n as f64) / s2;
    Ok(KpssResult {
        statistic,
        lags,
        stationary: statistic < KPSS_CRITICAL_5PCT,
    })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub rho: f64,
    /// Two-sided, from the t approximation with n − 2 degrees of freedom.
    pub p_value: f64,
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            what: "spearman second series".into(),
            expected: x.len(),
            actual: y.len(),
        });
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::Validation(format!(
            "spearman needs at least 3 pairs, got {n}"
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Validation("spearman on non-finite values".into()));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let mean = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series has zero rank variance".into(),
        ));
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n as f64 - 2.0;
    let p_value = if rho.abs() == 1.0 {
        0.0
    } else {
        let t = rho * (df / ((1.0 - rho) * (1.0 + rho))).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { rho, p_value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRecord {
    pub product_id: String,
    pub attribute: Attribute,
    /// Weeks before release of the window's first point.
    pub start_lag: i32,
    /// `None` when the window has no rank variance.
    pub rho: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Spearman correlation of `sales` against every `sales.len()`-week window of
/// `trend`, stride one. Index `i` of `trend` is lag `i − trend.len()`.
pub fn sliding_correlation(
    product_id: &str,
    attribute: Attribute,
    sales: &[f64],
    trend: &[f64],
) -> Result<Vec<CorrelationRecord>> {
    let w = sales.len();
    if w < 3 || trend.len() < w {
        return Err(Error::Validation(format!(
            "cannot slide a {w}-week window over a {}-week trend",
            trend.len()
        )));
    }
    let len = trend.len() as i32;
    let mut out = Vec::with_capacity(trend.len() - w + 1);
    for start in 0..=trend.len() - w {
        let (rho, p_value) = match spearman(sales, &trend[start..start + w]) {
            Ok(c) => (Some(c.rho), Some(c.p_value)),
            Err(Error::UndefinedCorrelation(_)) => (None, None),
            Err(e) => return Err(e),
        };
        out.push(CorrelationRecord {
            product_id: product_id.to_string(),
            attribute,
            start_lag: start as i32 - len,
            rho,
            p_value,
            significant: p_value.is_some_and(|p| p < SIGNIFICANCE),
        });
    }
    Ok(out)
}

/// The record with the largest |rho| (earliest on ties).
pub fn strongest(records: &[CorrelationRecord]) -> Option<&CorrelationRecord> {
    let mut best: Option<&CorrelationRecord> = None;
    for r in records {
        if let Some(rho) = r.rho {
            if best.is_none_or(|b| rho.abs() > b.rho.map_or(-1.0, f64::abs)) {
                best = Some(r);
            }
        }
    }
    best
}

pub fn write_records_csv<W: Write>(records: &[CorrelationRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "product_id",
        "attribute",
        "start_lag",
        "rho",
        "p_value",
        "significant",
    ])?;
    for r in records {
        out.write_record([
            r.product_id.clone(),
            r.attribute.to_string(),
            r.start_lag.to_string(),
            r.rho.map(|v| v.to_string()).unwrap_or_default(),
            r.p_value.map(|v| v.to_string()).unwrap_or_default(),
            r.significant.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_products: usize,
    pub n_stationary: usize,
    /// Products excluded because their sales fail the KPSS test (or are constant).
    pub fraction_non_stationary: f64,
    pub n_records: usize,
    pub n_defined: usize,
    pub fraction_significant: f64,
    /// Fraction of defined coefficients with |rho| in [0.75, 1].
    pub fraction_strong: f64,
    /// Counts of the strongest window's start lag per (product, attribute).
    pub strongest_lag_buckets: LagBucketReport,
}

#[derive(Debug, Clone)]
pub struct CorrelationAnalysis {
    pub records: Vec<CorrelationRecord>,
    pub summary: CorrelationSummary,
}

/// Runs the sliding-window protocol on every product whose sales pass the
/// KPSS test, over trends of `trend_len` weeks (a suffix of the stored 52).
pub fn analyze_correlations(dataset: &Dataset, trend_len: usize) -> Result<CorrelationAnalysis> {
    let mut records = Vec::new();
    let mut n_stationary = 0;
    let mut strongest_lags = Vec::new();
    for p in &dataset.products {
        let stationary = match kpss_test(&p.sales) {
            Ok(k) => k.stationary,
            Err(Error::DegenerateVariance(_)) => false,
            Err(e) => return Err(e),
        };
        if !stationary {
            continue;
        }
        n_stationary += 1;
        for a in Attribute::ALL {
            let recs = sliding_correlation(&p.id, a, &p.sales, p.trend(a).view(trend_len))?;
            if let Some(best) = strongest(&recs) {
                strongest_lags.push(best.start_lag);
            }
            records.extend(recs);
        }
    }
    let defined: Vec<f64> = records.iter().filter_map(|r| r.rho).collect();
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let n_products = dataset.len();
    let summary = CorrelationSummary {
        n_products,
        n_stationary,
        fraction_non_stationary: frac(n_products - n_stationary, n_products),
        n_records: records.len(),
        n_defined: defined.len(),
        fraction_significant: frac(
            records.iter().filter(|r| r.significant).count(),
            defined.len(),
        ),
        fraction_strong: frac(
            defined.iter().filter(|r| r.abs() >= 0.75).count(),
            defined.len(),
        ),
        strongest_lag_buckets: LagBucketReport::from_lags(&strongest_lags),
    };
    Ok(CorrelationAnalysis { records, summary })
}

/// Lag ranges as (label, lower, upper, upper inclusive).
pub const LAG_BUCKETS: [(&str, i32, i32, bool); 5] = [
    ("[-52,-42)", -52, -42, false),
    ("[-42,-32)", -42, -32, false),
    ("[-32,-22)", -32, -22, false),
    ("[-22,-12)", -22, -12, false),
    ("[-12,0]", -12, 0, true),
];

pub fn lag_bucket(lag: i32) -> Option<usize> {
    LAG_BUCKETS
        .iter()
        .position(|&(_, lo, hi, incl)| lag >= lo && (lag < hi || (incl && lag == hi)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagBucket {
    pub label: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagBucketReport {
    /// In `LAG_BUCKETS` order.
    pub buckets: Vec<LagBucket>,
    pub total: usize,
    /// Label of the most populated bucket (earliest on ties).
    pub modal_bucket: Option<String>,
}

impl LagBucketReport {
    /// Lags outside every bucket are not expected; they are counted in the
    /// nearest end bucket.
    pub fn from_lags(lags: &[i32]) -> Self {
        let mut counts = [0usize; LAG_BUCKETS.len()];
        for &lag in lags {
            let b = lag_bucket(lag).unwrap_or(if lag < -52 { 0 } else { LAG_BUCKETS.len() - 1 });
            counts[b] += 1;
        }
        let mut modal = None;
        let mut best = 0;
        for (i, &c) in counts.iter().enumerate() {
            if c > best {
                best = c;
                modal = Some(LAG_BUCKETS[i].0.to_string());
            }
        }
        LagBucketReport {
            buckets: counts
                .iter()
                .zip(LAG_BUCKETS)
                .map(|(&count, (label, ..))| LagBucket {
                    label: label.to_string(),
                    count,
                })
                .collect(),
            total: lags.len(),
            modal_bucket: modal,
        }
    }

    pub fn count(&self, label: &str) -> usize {
        self.buckets
            .iter()
            .find(|b| b.label == label)
            .map_or(0, |b| b.count)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["bucket", "count"])?;
        for b in &self.buckets {
            out.write_record([b.label.clone(), b.count.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Time index of the largest weight. `weights` is laid out with time as the
/// fastest axis (`[.., trend_len]`); the maximum is taken over all other axes
/// and ties go to the earliest index.
pub fn argmax_time(weights: &[f64], trend_len: usize) -> Result<usize> {
    if trend_len == 0 || weights.is_empty() || weights.len() % trend_len != 0 {
        return Err(Error::DimMismatch {
            what: "attention weights length (multiple of trend length)".into(),
            expected: trend_len,
            actual: weights.len(),
        });
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for t in 0..trend_len {
        let m = weights
            .iter()
            .skip(t)
            .step_by(trend_len)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if m > best.0 {
            best = (m, t);
        }
    }
    Ok(best.1)
}

/// Buckets the lag of each product's highest attention weight.
pub fn attention_lag_report<W: AsRef<[f64]>>(
    weights: &[W],
    trend_len: usize,
) -> Result<LagBucketReport> {
    let lags = weights
        .iter()
        .map(|w| argmax_time(w.as_ref(), trend_len).map(|t| t as i32 - trend_len as i32))
        .collect::<Result<Vec<_>>>()?;
    Ok(LagBucketReport::from_lags(&lags))
}
