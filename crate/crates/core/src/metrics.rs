//! Pooled forecast error metrics over the first `horizon` weeks.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// |TS| at or above this marks a consistently biased forecast.
pub const TRACKING_SIGNAL_LIMIT: f64 = 3.75;

fn check<A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &[A],
    predicted: &[P],
    horizon: usize,
) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::DimMismatch {
            what: "predicted series count".into(),
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::Validation("horizon must be at least 1".into()));
    }
    for (y, p) in actual.iter().zip(predicted) {
        for (what, s) in [("actual", y.as_ref()), ("predicted", p.as_ref())] {
            if s.len() < horizon {
                return Err(Error::DimMismatch {
                    what: format!("{what} series length"),
                    expected: horizon,
                    actual: s.len(),
                });
            }
            if s[..horizon].iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite {what} value")));
            }
        }
    }
    Ok(())
}

fn pairs<'a, A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &'a [A],
    predicted: &'a [P],
    horizon: usize,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    actual.iter().zip(predicted).flat_map(move |(y, p)| {
        y.as_ref()[..horizon]
            .iter()
            .copied()
            .zip(p.as_ref()[..horizon].iter().copied())
    })
}

/// Σ|y − ŷ| / Σy.
pub fn wape<A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &[A],
    predicted: &[P],
    horizon: usize,
) -> Result<f64> {
    check(actual, predicted, horizon)?;
    let (mut num, mut den) = (0.0, 0.0);
    for (y, p) in pairs(actual, predicted, horizon) {
        num += (y - p).abs();
        den += y;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(
            "WAPE with zero total actual sales".into(),
        ));
    }
    Ok(num / den)
}

/// Mean of |y − ŷ| over products × weeks.
pub fn mae<A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &[A],
    predicted: &[P],
    horizon: usize,
) -> Result<f64> {
    check(actual, predicted, horizon)?;
    if actual.is_empty() {
        return Err(Error::UndefinedMetric("MAE of no series".into()));
    }
    let sum: f64 = pairs(actual, predicted, horizon)
        .map(|(y, p)| (y - p).abs())
        .sum();
    Ok(sum / (actual.len() * horizon) as f64)
}

/// Σ(y − ŷ) / MAE; positive means underestimation. Zero when MAE is zero.
pub fn tracking_signal<A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &[A],
    predicted: &[P],
    horizon: usize,
) -> Result<f64> {
    let m = mae(actual, predicted, horizon)?;
    if m == 0.0 {
        return Ok(0.0);
    }
    let signed: f64 = pairs(actual, predicted, horizon).map(|(y, p)| y - p).sum();
    Ok(signed / m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Epsilon {
    /// Fixed threshold in units.
    Absolute(f64),
    /// Fraction of each product's mean actual sales over the horizon.
    RelativeToMean(f64),
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::RelativeToMean(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErpOptions {
    pub epsilon: Epsilon,
    /// Divide each product's count by the horizon.
    pub per_timestep: bool,
}

impl Default for ErpOptions {
    fn default() -> Self {
        ErpOptions {
            epsilon: Epsilon::default(),
            per_timestep: true,
        }
    }
}

/// Fraction of weeks where the forecast misses by at least ε, averaged over
/// products. A zero threshold counts any nonzero miss.
pub fn erp<A: AsRef<[f64]>, P: AsRef<[f64]>>(
    actual: &[A],
    predicted: &[P],
    horizon: usize,
    opts: &ErpOptions,
) -> Result<f64> {
    check(actual, predicted, horizon)?;
    let (Epsilon::Absolute(e) | Epsilon::RelativeToMean(e)) = opts.epsilon;
    if e.is_nan() || e < 0.0 {
        return Err(Error::Validation(format!("ERP epsilon {e} must be nonnegative")));
    }
    if matches!(opts.epsilon, Epsilon::Absolute(_)) && e == 0.0 {
        return Err(Error::Validation("absolute ERP epsilon must be positive".into()));
    }
    if actual.is_empty() {
        return Err(Error::UndefinedMetric("ERP of no series".into()));
    }
    let mut total = 0.0;
    for (y, p) in actual.iter().zip(predicted) {
        let (y, p) = (&y.as_ref()[..horizon], &p.as_ref()[..horizon]);
        let eps = match opts.epsilon {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMean(f) => f * y.iter().sum::<f64>() / horizon as f64,
        };
        let misses = y
            .iter()
            .zip(p)
            .filter(|(a, b)| {
                let d = (*a - *b).abs();
                if eps > 0.0 {
                    d >= eps
                } else {
                    d > 0.0
                }
            })
            .count() as f64;
        total += if opts.per_timestep {
            misses / horizon as f64
        } else {
            misses
        };
    }
    Ok(total / actual.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricValues {
    pub n_products: usize,
    /// `None` when the actual total is zero.
    pub wape: Option<f64>,
    pub mae: f64,
    pub ts: f64,
    pub biased: bool,
    pub erp: f64,
}

impl MetricValues {
    pub fn compute<A: AsRef<[f64]>, P: AsRef<[f64]>>(
        actual: &[A],
        predicted: &[P],
        horizon: usize,
        erp_opts: &ErpOptions,
    ) -> Result<Self> {
        let wape = match wape(actual, predicted, horizon) {
            Ok(w) => Some(w),
            Err(Error::UndefinedMetric(_)) => None,
            Err(e) => return Err(e),
        };
        let ts = tracking_signal(actual, predicted, horizon)?;
        Ok(MetricValues {
            n_products: actual.len(),
            wape,
            mae: mae(actual, predicted, horizon)?,
            ts,
            biased: ts.abs() >= TRACKING_SIGNAL_LIMIT,
            erp: erp(actual, predicted, horizon, erp_opts)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon: usize,
    #[serde(flatten)]
    pub overall: MetricValues,
    pub per_category: BTreeMap<String, MetricValues>,
}

impl MetricsReport {
    /// `categories[i]` labels series `i`.
    pub fn compute<A: AsRef<[f64]>, P: AsRef<[f64]>>(
        actual: &[A],
        predicted: &[P],
        categories: &[&str],
        horizon: usize,
        erp_opts: &ErpOptions,
    ) -> Result<Self> {
        if categories.len() != actual.len() {
            return Err(Error::DimMismatch {
                what: "category labels".into(),
                expected: actual.len(),
                actual: categories.len(),
            });
        }
        let overall = MetricValues::compute(actual, predicted, horizon, erp_opts)?;
        let mut groups: BTreeMap<&str, (Vec<&[f64]>, Vec<&[f64]>)> = BTreeMap::new();
        for ((y, p), c) in actual.iter().zip(predicted).zip(categories) {
            let g = groups.entry(c).or_default();
            g.0.push(y.as_ref());
            g.1.push(p.as_ref());
        }
        let per_category = groups
            .into_iter()
            .map(|(c, (ys, ps))| {
                MetricValues::compute(&ys, &ps, horizon, erp_opts).map(|m| (c.to_string(), m))
            })
            .collect::<Result<_>>()?;
        Ok(MetricsReport {
            horizon,
            overall,
            per_category,
        })
    }

    /// One row for the pooled figures (`scope = all`) and one per category.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["horizon", "scope", "n_products", "wape", "mae", "ts", "biased", "erp"])?;
        let rows = std::iter::once(("all", &self.overall))
            .chain(self.per_category.iter().map(|(c, m)| (c.as_str(), m)));
        for (scope, m) in rows {
            out.write_record([
                self.horizon.to_string(),
                scope.to_string(),
                m.n_products.to_string(),
                m.wape.map(|w| w.to_string()).unwrap_or_default(),
                m.mae.to_string(),
                m.ts.to_string(),
                m.biased.to_string(),
                m.erp.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
