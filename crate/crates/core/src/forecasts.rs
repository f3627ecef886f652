//! Forecast files: `product_id,week_index,prediction`, one row per week.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::Deserialize;

use crate::error::{Error, Result};

pub const FORECAST_HEADER: [&str; 3] = ["product_id", "week_index", "prediction"];

/// Forecast series keyed by product id; every series has the same length.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastTable {
    pub series: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct Row {
    product_id: String,
    week_index: usize,
    prediction: f64,
}

impl ForecastTable {
    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f64>) {
        self.series.insert(id.into(), values);
    }

    pub fn horizon(&self) -> Option<usize> {
        self.series.values().next().map(Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.series.get(id).map(Vec::as_slice)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(FORECAST_HEADER)?;
        for (id, values) in &self.series {
            for (t, v) in values.iter().enumerate() {
                out.write_record([id.clone(), t.to_string(), v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Rows may come in any order; weeks must cover 0..h exactly once per
    /// product with the same h everywhere.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != FORECAST_HEADER {
            return Err(Error::Schema(format!(
                "forecast header must be {}, got {}",
                FORECAST_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut weeks: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Schema(format!("forecast line {line}: {e}")))?;
            if row.product_id.is_empty() {
                return Err(Error::Schema(format!("forecast line {line}: empty product_id")));
            }
            if !row.prediction.is_finite() {
                return Err(Error::Schema(format!(
                    "forecast line {line}: non-finite prediction"
                )));
            }
            let entry = weeks.entry(row.product_id.clone()).or_default();
            if entry.insert(row.week_index, row.prediction).is_some() {
                return Err(Error::Schema(format!(
                    "forecast line {line}: duplicate week {} for {:?}",
                    row.week_index, row.product_id
                )));
            }
        }
        let mut table = ForecastTable::default();
        let mut horizon = None;
        for (id, w) in weeks {
            let h = w.len();
            if w.keys().copied().ne(0..h) {
                return Err(Error::Schema(format!(
                    "forecast weeks for {id:?} are not contiguous from 0"
                )));
            }
            match horizon {
                None => horizon = Some(h),
                Some(prev) if prev != h => {
                    return Err(Error::DimMismatch {
                        what: format!("forecast horizon of {id:?}"),
                        expected: prev,
                        actual: h,
                    })
                }
                _ => {}
            }
            table.series.insert(id, w.into_values().collect());
        }
        Ok(table)
    }
}
