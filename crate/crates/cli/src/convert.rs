//! VISUELLE release layout to the dataset tables.
//!
//! Expects `train.csv` and/or `test.csv` with (at least) the columns
//! `external_code, season, category, color, fabric, release_date, 0..11`,
//! plus `gtrends.csv` with a `date` column and one weekly column per
//! attribute value on the 0..100 scale. Each product's trend is the last 52
//! rows dated within the 52 weeks up to and including its release date.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use gtm_core::dataset::{Attribute, Dataset, Product, TrendSeries, SALES_WEEKS, TREND_WEEKS};

use crate::error::{CliError, CliResult};

pub const PRODUCT_FILES: [&str; 2] = ["train.csv", "test.csv"];
pub const TRENDS_FILE: &str = "gtrends.csv";

#[derive(Debug, Default)]
pub struct Converted {
    pub dataset: Dataset,
    /// `(file:line, reason)` for every skipped product.
    pub skipped: Vec<(String, String)>,
}

/// Accepts `YYYY-MM-DD` optionally followed by a time.
fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.get(..10)?, "%Y-%m-%d").ok()
}

struct Trends {
    dates: Vec<NaiveDate>,
    columns: BTreeMap<String, Vec<f64>>,
}

impl Trends {
    fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let headers = r.headers()?.clone();
        let date_col = headers
            .iter()
            .position(|h| h == "date")
            .ok_or_else(|| CliError::data(format!("{}: no `date` column", path.display())))?;
        let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let date = parse_date(&rec[date_col]).ok_or_else(|| {
                CliError::data(format!("{}:{line}: bad date {:?}", path.display(), &rec[date_col]))
            })?;
            let vals = rec
                .iter()
                .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
                .collect();
            rows.push((date, vals));
        }
        rows.sort_by_key(|r| r.0);
        let mut columns = BTreeMap::new();
        for (j, h) in headers.iter().enumerate() {
            if j != date_col {
                columns.insert(h.to_string(), rows.iter().map(|r| r.1[j]).collect());
            }
        }
        Ok(Trends {
            dates: rows.into_iter().map(|r| r.0).collect(),
            columns,
        })
    }

    fn window(&self, column: &str, release: NaiveDate) -> Result<Vec<f64>, String> {
        let col = self
            .columns
            .get(column)
            .ok_or_else(|| format!("no trend column {column:?}"))?;
        let start = release - Duration::weeks(TREND_WEEKS as i64);
        let idx: Vec<usize> = (0..self.dates.len())
            .filter(|&i| self.dates[i] >= start && self.dates[i] <= release)
            .collect();
        if idx.len() < TREND_WEEKS {
            return Err(format!(
                "only {} trend weeks for {column:?} before {release}",
                idx.len()
            ));
        }
        let vals: Vec<f64> = idx[idx.len() - TREND_WEEKS..].iter().map(|&i| col[i]).collect();
        if let Some(v) = vals.iter().find(|v| !(0.0..=100.0).contains(*v)) {
            return Err(format!("trend value {v} for {column:?} outside 0..100"));
        }
        Ok(vals.iter().map(|v| v / 100.0).collect())
    }
}

pub fn convert_visuelle(dir: &Path, sales_scale: f64) -> CliResult<Converted> {
    if !(sales_scale.is_finite() && sales_scale > 0.0) {
        return Err(CliError::usage(format!("sales scale must be positive, got {sales_scale}")));
    }
    let trends = Trends::read(&dir.join(TRENDS_FILE))?;
    let mut out = Converted::default();
    let mut products = Vec::new();
    let mut seen = BTreeSet::new();
    let mut any = false;
    for name in PRODUCT_FILES {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        any = true;
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
        let headers = r.headers()?.clone();
        let col = |h: &str| {
            headers
                .iter()
                .position(|x| x == h)
                .ok_or_else(|| CliError::data(format!("{}: missing column {h:?}", path.display())))
        };
        let id_c = col("external_code")?;
        let season_c = col("season")?;
        let date_c = col("release_date")?;
        let attr_c = [col("category")?, col("color")?, col("fabric")?];
        let week_c = (0..SALES_WEEKS)
            .map(|w| col(&w.to_string()))
            .collect::<CliResult<Vec<_>>>()?;
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let at = format!("{name}:{}", i + 2);
            let id = rec[id_c].to_string();
            let result = (|| -> Result<Product, String> {
                if !seen.insert(id.clone()) {
                    return Err(format!("duplicate product {id:?}"));
                }
                let release = parse_date(&rec[date_c]).ok_or_else(|| format!("bad release_date {:?}", &rec[date_c]))?;
                let mut sales = [0.0; SALES_WEEKS];
                for (w, &c) in week_c.iter().enumerate() {
                    let v: f64 = rec[c].parse().map_err(|_| format!("bad sales value {:?}", &rec[c]))?;
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(format!("sales value {v} must be nonnegative"));
                    }
                    sales[w] = v * sales_scale;
                }
                let attrs: Vec<String> = attr_c.iter().map(|&c| rec[c].to_string()).collect();
                let mut series = Vec::with_capacity(3);
                for (a, value) in Attribute::ALL.iter().zip(&attrs) {
                    let w = trends.window(value, release)?;
                    series.push(TrendSeries::new(*a, w, 1).map_err(|e| e.to_string())?);
                }
                Ok(Product {
                    id: id.clone(),
                    category: attrs[0].clone(),
                    color: attrs[1].clone(),
                    fabric: attrs[2].clone(),
                    release_date: release,
                    season: rec[season_c].to_string(),
                    sales,
                    trends: series.try_into().expect("three attributes"),
                    image_features: None,
                })
            })();
            match result {
                Ok(p) => products.push(p),
                Err(reason) => out.skipped.push((at, reason)),
            }
        }
    }
    if !any {
        return Err(CliError::usage(format!(
            "{} contains neither {}",
            dir.display(),
            PRODUCT_FILES.join(" nor ")
        )));
    }
    out.dataset = Dataset::new(products);
    Ok(out)
}
