//! First-order simulation: how far each method's six-week order is from
//! realized demand, in units and dollars.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sales indices 0..6 form the first order.
pub const FIRST_ORDER_WEEKS: usize = 6;
pub const DEFAULT_UNIT_COST: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductError {
    pub product_id: String,
    pub ordered: f64,
    pub realized: f64,
    /// |ordered − realized|.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    pub n_products: usize,
    pub mean_abs_error: f64,
    pub total_abs_error: f64,
    /// Σ|error| × unit_cost.
    pub dollar_discrepancy: f64,
    /// mean |error| × unit_cost.
    pub mean_dollar_discrepancy: f64,
    /// Sorted by product id.
    pub products: Vec<ProductError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderReport {
    pub weeks: usize,
    pub unit_cost: f64,
    pub methods: Vec<MethodReport>,
}

/// One product's ordered quantity against its realized weekly demand.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderCase<'a> {
    pub product_id: &'a str,
    pub ordered: f64,
    pub actual: &'a [f64],
}

/// Sum of the first `weeks` values.
pub fn first_weeks_total(series: &[f64], weeks: usize) -> Result<f64> {
    if series.len() < weeks {
        return Err(Error::DimMismatch {
            what: "series length for the first order".into(),
            expected: weeks,
            actual: series.len(),
        });
    }
    Ok(series[..weeks].iter().sum())
}

/// Rows are sorted by id before aggregation so the report does not depend
/// on input order.
pub fn method_report(method: &str, cases: &[OrderCase], weeks: usize, unit_cost: f64) -> Result<MethodReport> {
    if !(unit_cost.is_finite() && unit_cost >= 0.0) {
        return Err(Error::Config(format!("unit_cost must be nonnegative, got {unit_cost}")));
    }
    let mut seen = BTreeSet::new();
    let mut products = Vec::with_capacity(cases.len());
    for c in cases {
        if !seen.insert(c.product_id) {
            return Err(Error::Validation(format!(
                "{method}: product {:?} appears twice",
                c.product_id
            )));
        }
        let realized = first_weeks_total(c.actual, weeks)?;
        if !c.ordered.is_finite() {
            return Err(Error::Numerical(format!(
                "{method}: non-finite order for {:?}",
                c.product_id
            )));
        }
        products.push(ProductError {
            product_id: c.product_id.to_string(),
            ordered: c.ordered,
            realized,
            error: (c.ordered - realized).abs(),
        });
    }
    products.sort_by(|a, b| a.product_id.cmp(&b.product_id));
    let total: f64 = products.iter().map(|p| p.error).sum();
    let n = products.len();
    let mean = if n == 0 { 0.0 } else { total / n as f64 };
    Ok(MethodReport {
        method: method.to_string(),
        n_products: n,
        mean_abs_error: mean,
        total_abs_error: total,
        dollar_discrepancy: total * unit_cost,
        mean_dollar_discrepancy: mean * unit_cost,
        products,
    })
}

/// Report for a forecasting method: the order is the forecast's first-weeks total.
pub fn first_order_error(
    method: &str,
    ids: &[&str],
    forecasts: &[Vec<f64>],
    actuals: &[Vec<f64>],
    weeks: usize,
    unit_cost: f64,
) -> Result<MethodReport> {
    if ids.len() != forecasts.len() || ids.len() != actuals.len() {
        return Err(Error::DimMismatch {
            what: "forecasts and actuals per product".into(),
            expected: ids.len(),
            actual: forecasts.len().min(actuals.len()),
        });
    }
    let cases = ids
        .iter()
        .zip(forecasts)
        .zip(actuals)
        .map(|((id, f), a)| {
            Ok(OrderCase {
                product_id: id,
                ordered: first_weeks_total(f, weeks)?,
                actual: a,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    method_report(method, &cases, weeks, unit_cost)
}

impl FirstOrderReport {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// One summary row per method.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "n_products",
            "mean_abs_error",
            "total_abs_error",
            "dollar_discrepancy",
            "mean_dollar_discrepancy",
        ])?;
        for m in &self.methods {
            out.write_record([
                m.method.clone(),
                m.n_products.to_string(),
                m.mean_abs_error.to_string(),
                m.total_abs_error.to_string(),
                m.dollar_discrepancy.to_string(),
                m.mean_dollar_discrepancy.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Per-product rows for every method.
    pub fn write_products_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "product_id", "ordered", "realized", "error"])?;
        for m in &self.methods {
            for p in &m.products {
                out.write_record([
                    m.method.clone(),
                    p.product_id.clone(),
                    p.ordered.to_string(),
                    p.realized.to_string(),
                    p.error.to_string(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
