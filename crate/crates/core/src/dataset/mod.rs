//! Product data model, trend preprocessing, and train/test splitting.

mod csv_io;
mod features;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{
    decode_features, emit, emit_to_dir, ingest, ingest_dir, read_feature_file, write_feature_file, IngestOptions,
    Ingested, Rejection, PRODUCTS_FILE, SALES_FILE, TRENDS_FILE,
};
pub use features::{FeatureProvider, HashProvider, TableProvider};
pub use synthetic::{generate_synthetic, SynthConfig, SyntheticData};

/// Weekly sales observations per product.
pub const SALES_WEEKS: usize = 12;
/// Weekly trend observations before release.
pub const TREND_WEEKS: usize = 52;
/// Trend length of the earlier first-order setup.
pub const SHORT_TREND_WEEKS: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Category,
    Color,
    Fabric,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Category, Attribute::Color, Attribute::Fabric];

    pub fn as_str(self) -> &'static str {
        match self {
            Attribute::Category => "category",
            Attribute::Color => "color",
            Attribute::Fabric => "fabric",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "category" => Some(Attribute::Category),
            "color" => Some(Attribute::Color),
            "fabric" => Some(Attribute::Fabric),
            _ => None,
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 52 weekly popularity values in [0, 1] for one attribute, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub attribute: Attribute,
    values: Vec<f64>,
    pub source_samples: u32,
}

impl TrendSeries {
    pub fn new(attribute: Attribute, values: Vec<f64>, source_samples: u32) -> Result<Self> {
        if values.len() != TREND_WEEKS {
            return Err(Error::Schema(format!(
                "{attribute} trend has {} weeks, expected {TREND_WEEKS}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Schema(format!(
                "{attribute} trend value {v} outside [0, 1]"
            )));
        }
        Ok(TrendSeries {
            attribute,
            values,
            source_samples,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// The most recent `len` weeks (a suffix of the stored 52).
    pub fn view(&self, len: usize) -> &[f64] {
        &self.values[TREND_WEEKS - len..]
    }
}

/// Averages repeated downloads of one trend (each 52 values on the 0..100
/// scale) and rescales to [0, 1].
pub fn average_trend_samples(attribute: Attribute, samples: &[Vec<f64>]) -> Result<TrendSeries> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Schema("no trend samples".into()))?;
    if let Some(bad) = samples.iter().find(|s| s.len() != first.len()) {
        return Err(Error::Schema(format!(
            "trend samples differ in length ({} vs {})",
            first.len(),
            bad.len()
        )));
    }
    let n = samples.len() as f64;
    let values = (0..first.len())
        .map(|t| samples.iter().map(|s| s[t]).sum::<f64>() / n / 100.0)
        .collect();
    TrendSeries::new(attribute, values, samples.len() as u32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub category: String,
    pub color: String,
    pub fabric: String,
    pub release_date: NaiveDate,
    pub season: String,
    pub sales: [f64; SALES_WEEKS],
    /// Ordered category, color, fabric.
    pub trends: [TrendSeries; 3],
    pub image_features: Option<Vec<f64>>,
}

impl Product {
    pub fn attribute(&self, a: Attribute) -> &str {
        match a {
            Attribute::Category => &self.category,
            Attribute::Color => &self.color,
            Attribute::Fabric => &self.fabric,
        }
    }

    pub fn trend(&self, a: Attribute) -> &TrendSeries {
        &self.trends[a.index()]
    }

    pub fn temporal(&self) -> TemporalFeatures {
        TemporalFeatures::from_date(self.release_date)
    }
}

/// Calendar features of a release date.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalFeatures {
    /// 0 = Monday.
    pub day_of_week: u32,
    /// ISO week, 1..=53.
    pub week_of_year: u32,
    pub month: u32,
    pub year: i32,
}

impl TemporalFeatures {
    pub fn from_date(d: NaiveDate) -> Self {
        TemporalFeatures {
            day_of_week: d.weekday().num_days_from_monday(),
            week_of_year: d.iso_week().week(),
            month: d.month(),
            year: d.year(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.day_of_week > 6 {
            return Err(Error::Validation(format!(
                "day_of_week {} outside 0..=6",
                self.day_of_week
            )));
        }
        if !(1..=53).contains(&self.week_of_year) {
            return Err(Error::Validation(format!(
                "week_of_year {} outside 1..=53",
                self.week_of_year
            )));
        }
        if !(1..=12).contains(&self.month) {
            return Err(Error::Validation(format!(
                "month {} outside 1..=12",
                self.month
            )));
        }
        Ok(())
    }
}

/// Allowed attribute values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub categories: BTreeSet<String>,
    pub colors: BTreeSet<String>,
    pub fabrics: BTreeSet<String>,
}

impl Vocabulary {
    pub fn values(&self, a: Attribute) -> &BTreeSet<String> {
        match a {
            Attribute::Category => &self.categories,
            Attribute::Color => &self.colors,
            Attribute::Fabric => &self.fabrics,
        }
    }

    fn values_mut(&mut self, a: Attribute) -> &mut BTreeSet<String> {
        match a {
            Attribute::Category => &mut self.categories,
            Attribute::Color => &mut self.colors,
            Attribute::Fabric => &mut self.fabrics,
        }
    }

    pub fn from_products<'a>(products: impl IntoIterator<Item = &'a Product>) -> Self {
        let mut v = Vocabulary::default();
        for p in products {
            for a in Attribute::ALL {
                v.values_mut(a).insert(p.attribute(a).to_string());
            }
        }
        v
    }

    pub fn insert(&mut self, a: Attribute, value: &str) {
        self.values_mut(a).insert(value.to_string());
    }

    /// Closest known value by edit distance, for diagnostics.
    pub fn nearest(&self, a: Attribute, value: &str) -> Option<&str> {
        self.values(a)
            .iter()
            .min_by_key(|cand| strsim::levenshtein(cand, value))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub products: Vec<Product>,
    pub vocabulary: Vocabulary,
}

impl Dataset {
    pub fn new(products: Vec<Product>) -> Self {
        let vocabulary = Vocabulary::from_products(&products);
        Dataset {
            products,
            vocabulary,
        }
    }

    pub fn len(&self) -> usize {
        self.products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.products.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Product> {
        self.products.iter().find(|p| p.id == id)
    }

    /// Moves the `test_size` most recent products (by release date, then id)
    /// into the test partition.
    pub fn split(&self, test_size: usize) -> Result<(Dataset, Dataset)> {
        if test_size > 0 && test_size >= self.products.len() {
            return Err(Error::Contract(format!(
                "test_size {test_size} must be smaller than the dataset ({})",
                self.products.len()
            )));
        }
        let mut order: Vec<&Product> = self.products.iter().collect();
        order.sort_by(|a, b| {
            a.release_date
                .cmp(&b.release_date)
                .then_with(|| a.id.cmp(&b.id))
        });
        let cut = order.len() - test_size;
        let part = |ps: &[&Product]| Dataset {
            products: ps.iter().map(|&p| p.clone()).collect(),
            vocabulary: self.vocabulary.clone(),
        };
        Ok((part(&order[..cut]), part(&order[cut..])))
    }
}

/// The corresponding season one year earlier: "SS19" → "SS18".
pub fn previous_season(season: &str) -> Option<String> {
    let split = season.find(|c: char| c.is_ascii_digit())?;
    let (kind, year) = season.split_at(split);
    let y: u32 = year.parse().ok()?;
    let prev = y.checked_sub(1)?;
    Some(format!("{kind}{prev:0width$}", width = year.len()))
}
