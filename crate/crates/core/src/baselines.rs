//! Nearest-neighbour forecasts and the 60% first-order policy.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dataset::{Attribute, FeatureProvider, Product, Vocabulary, SALES_WEEKS};
use crate::error::{Error, Result};
use crate::model::ProviderSpec;

pub const DEFAULT_K: usize = 11;
pub const INDEX_FORMAT: &str = "gtm-knn-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnMode {
    Attribute,
    Image,
    #[serde(rename = "attribute+image", alias = "attribute_image")]
    AttributeImage,
}

impl std::str::FromStr for KnnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "attribute" => Ok(KnnMode::Attribute),
            "image" => Ok(KnnMode::Image),
            "attribute+image" | "attribute_image" => Ok(KnnMode::AttributeImage),
            _ => Err(Error::Config(format!(
                "unknown kNN mode {s:?} (attribute, image, attribute+image)"
            ))),
        }
    }
}

impl KnnMode {
    pub const ALL: [KnnMode; 3] = [KnnMode::Attribute, KnnMode::Image, KnnMode::AttributeImage];

    pub fn as_str(self) -> &'static str {
        match self {
            KnnMode::Attribute => "attribute",
            KnnMode::Image => "image",
            KnnMode::AttributeImage => "attribute+image",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// w ∝ max(0, 1 − distance).
    #[default]
    Similarity,
    /// w ∝ distance, as the weighted-average formula is literally written.
    Distance,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    1.0 - dot / (norm(a) * norm(b))
}

/// Builds kNN feature vectors from products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Featurizer {
    pub mode: KnnMode,
    pub vocabulary: Vocabulary,
    pub image_provider: ProviderSpec,
    pub image_dim: usize,
}

impl Featurizer {
    fn one_hot(&self, p: &Product) -> Vec<f64> {
        let mut out = Vec::new();
        for a in Attribute::ALL {
            let values = self.vocabulary.values(a);
            let value = p.attribute(a);
            out.extend(values.iter().map(|v| if v == value { 1.0 } else { 0.0 }));
        }
        out
    }

    fn image(&self, p: &Product, provider: Option<&dyn FeatureProvider>) -> Result<Vec<f64>> {
        let v = match provider {
            Some(pr) => pr.features(p.id.as_bytes())?,
            None => p.image_features.clone().ok_or_else(|| {
                Error::Validation(format!("product {:?} has no image features", p.id))
            })?,
        };
        if v.len() != self.image_dim {
            return Err(Error::DimMismatch {
                what: format!("image features of {:?}", p.id),
                expected: self.image_dim,
                actual: v.len(),
            });
        }
        Ok(v)
    }

    fn provider(&self) -> Result<Option<Box<dyn FeatureProvider>>> {
        if self.mode == KnnMode::Attribute {
            return Ok(None);
        }
        self.image_provider.provider("image", self.image_dim)
    }

    fn features_with(&self, p: &Product, provider: Option<&dyn FeatureProvider>) -> Result<Vec<f64>> {
        let v = match self.mode {
            KnnMode::Attribute => self.one_hot(p),
            KnnMode::Image => self.image(p, provider)?,
            KnnMode::AttributeImage => {
                // Each block is scaled to unit length so neither dominates.
                let mut a = self.one_hot(p);
                let mut i = self.image(p, provider)?;
                for block in [&mut a, &mut i] {
                    let n = norm(block);
                    if n > 0.0 {
                        block.iter_mut().for_each(|v| *v /= n);
                    }
                }
                a.extend(i);
                a
            }
        };
        if norm(&v) == 0.0 || !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation(format!(
                "product {:?} has a zero-norm or non-finite {} feature vector",
                p.id,
                self.mode.as_str()
            )));
        }
        Ok(v)
    }

    pub fn features(&self, p: &Product) -> Result<Vec<f64>> {
        let provider = self.provider()?;
        self.features_with(p, provider.as_deref())
    }
}

/// Immutable store of feature vectors and their sales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborIndex {
    pub format: String,
    pub version: u32,
    pub featurizer: Featurizer,
    pub ids: Vec<String>,
    pub keys: Vec<Vec<f64>>,
    pub values: Vec<Vec<f64>>,
}

/// One selected neighbour.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnForecast {
    pub forecast: Vec<f64>,
    pub neighbors: Vec<Neighbor>,
}

impl NeighborIndex {
    pub fn build(products: &[Product], featurizer: Featurizer) -> Result<Self> {
        let provider = featurizer.provider()?;
        let keys = products
            .iter()
            .map(|p| featurizer.features_with(p, provider.as_deref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(NeighborIndex {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            featurizer,
            ids: products.iter().map(|p| p.id.clone()).collect(),
            keys,
            values: products.iter().map(|p| p.sales.to_vec()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != INDEX_FORMAT || self.version != INDEX_VERSION {
            return Err(Error::Schema(format!(
                "unsupported index {:?} v{}",
                self.format, self.version
            )));
        }
        if self.keys.len() != self.ids.len() || self.values.len() != self.ids.len() {
            return Err(Error::Schema("index ids, keys and values differ in length".into()));
        }
        let dim = self.keys.first().map_or(0, Vec::len);
        for (i, (k, v)) in self.keys.iter().zip(&self.values).enumerate() {
            if k.len() != dim {
                return Err(Error::DimMismatch {
                    what: format!("index key {:?}", self.ids[i]),
                    expected: dim,
                    actual: k.len(),
                });
            }
            if v.len() != SALES_WEEKS {
                return Err(Error::DimMismatch {
                    what: format!("index sales of {:?}", self.ids[i]),
                    expected: SALES_WEEKS,
                    actual: v.len(),
                });
            }
            if norm(k) == 0.0 || !k.iter().chain(v).all(|x| x.is_finite()) {
                return Err(Error::Validation(format!(
                    "index entry {:?} is zero-norm or non-finite",
                    self.ids[i]
                )));
            }
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let index: NeighborIndex = serde_json::from_reader(r)?;
        index.validate()?;
        Ok(index)
    }

    /// Forecast for a raw feature vector.
    pub fn query_features(&self, query: &[f64], k: usize, weighting: Weighting) -> Result<KnnForecast> {
        if self.is_empty() {
            return Err(Error::Contract("empty neighbour index".into()));
        }
        if k == 0 || k > self.len() {
            return Err(Error::Contract(format!(
                "k = {k} must be in 1..={}",
                self.len()
            )));
        }
        let dim = self.keys[0].len();
        if query.len() != dim {
            return Err(Error::DimMismatch {
                what: "kNN query features".into(),
                expected: dim,
                actual: query.len(),
            });
        }
        if norm(query) == 0.0 || !query.iter().all(|x| x.is_finite()) {
            return Err(Error::Validation("zero-norm or non-finite kNN query".into()));
        }
        let mut ranked: Vec<(f64, usize)> = self
            .keys
            .iter()
            .enumerate()
            .map(|(i, key)| (cosine_distance(query, key), i))
            .collect();
        ranked.sort_by(|a, b| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        });
        ranked.truncate(k);

        let raw: Vec<f64> = ranked
            .iter()
            .map(|&(d, _)| match weighting {
                Weighting::Similarity => (1.0 - d).max(0.0),
                Weighting::Distance => d.max(0.0),
            })
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = if total > 0.0 {
            raw.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / k as f64; k]
        };
        let mut forecast = vec![0.0; SALES_WEEKS];
        for (&(_, i), w) in ranked.iter().zip(&weights) {
            for (f, s) in forecast.iter_mut().zip(&self.values[i]) {
                *f += w * s;
            }
        }
        // Rounding can push a convex combination an ulp past its envelope.
        for (t, f) in forecast.iter_mut().enumerate() {
            let (lo, hi) = ranked.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, i)| {
                (lo.min(self.values[i][t]), hi.max(self.values[i][t]))
            });
            *f = f.clamp(lo, hi);
        }
        Ok(KnnForecast {
            forecast,
            neighbors: ranked
                .iter()
                .zip(weights)
                .map(|(&(distance, i), weight)| Neighbor {
                    id: self.ids[i].clone(),
                    distance,
                    weight,
                })
                .collect(),
        })
    }

    pub fn forecast(&self, query: &Product, k: usize, weighting: Weighting) -> Result<KnnForecast> {
        let features = self.featurizer.features(query)?;
        self.query_features(&features, k, weighting)
    }

    pub fn forecast_all(&self, queries: &[Product], k: usize, weighting: Weighting) -> Result<Vec<KnnForecast>> {
        let provider = self.featurizer.provider()?;
        queries
            .iter()
            .map(|q| {
                let f = self.featurizer.features_with(q, provider.as_deref())?;
                self.query_features(&f, k, weighting)
            })
            .collect()
    }
}

/// Weeks summed by the first-order policy.
pub const POLICY_WEEKS: usize = 6;
/// Orders are the matching mean raised by 60%.
pub const POLICY_FACTOR: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMatch {
    /// Same category, color and fabric.
    Exact,
    CategoryOnly,
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyOrder {
    pub quantity: f64,
    pub matched: PolicyMatch,
    pub n_matches: usize,
}

/// Products released in the season before `season`.
pub fn previous_season_products<'a>(products: &'a [Product], season: &str) -> Vec<&'a Product> {
    match crate::dataset::previous_season(season) {
        Some(prev) => products.iter().filter(|p| p.season == prev).collect(),
        None => Vec::new(),
    }
}

/// 1.6 × the mean first-six-week total over matching `history` products,
/// falling back to category-only and then to all of `history`.
pub fn sixty_percent_policy(query: &Product, history: &[&Product]) -> Result<PolicyOrder> {
    if history.is_empty() {
        return Err(Error::Contract(format!(
            "no previous-season history for {:?}",
            query.id
        )));
    }
    let exact: Vec<&Product> = history
        .iter()
        .copied()
        .filter(|p| p.category == query.category && p.color == query.color && p.fabric == query.fabric)
        .collect();
    let (matched, pool) = if !exact.is_empty() {
        (PolicyMatch::Exact, exact)
    } else {
        let cat: Vec<&Product> = history
            .iter()
            .copied()
            .filter(|p| p.category == query.category)
            .collect();
        if !cat.is_empty() {
            log::info!("{}: no exact attribute match, using category {:?}", query.id, query.category);
            (PolicyMatch::CategoryOnly, cat)
        } else {
            log::info!("{}: no category match, using the global mean", query.id);
            (PolicyMatch::Global, history.to_vec())
        }
    };
    let total: f64 = pool
        .iter()
        .map(|p| p.sales[..POLICY_WEEKS].iter().sum::<f64>())
        .sum();
    let mean = total / pool.len() as f64;
    Ok(PolicyOrder {
        quantity: POLICY_FACTOR * mean,
        matched,
        n_matches: pool.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_product;

    fn product(id: &str, cat: &str, color: &str, fabric: &str, first: f64) -> Product {
        let mut p = toy_product(id, "2019-03-04");
        p.category = cat.into();
        p.color = color.into();
        p.fabric = fabric.into();
        p.sales = [0.0; SALES_WEEKS];
        p.sales[0] = first;
        p
    }

    #[test]
    fn policy_examples() {
        let q = product("q", "a", "b", "c", 0.0);
        let one = product("1", "a", "b", "c", 100.0);
        let two = product("2", "a", "b", "c", 200.0);
        let other = product("3", "a", "x", "c", 1000.0);
        let far = product("4", "z", "x", "c", 7.0);
        assert_eq!(sixty_percent_policy(&q, &[&one]).unwrap().quantity, 160.0);
        let o = sixty_percent_policy(&q, &[&one, &two, &other]).unwrap();
        assert_eq!((o.quantity, o.matched, o.n_matches), (240.0, PolicyMatch::Exact, 2));
        let o = sixty_percent_policy(&q, &[&other, &far]).unwrap();
        assert_eq!((o.quantity, o.matched), (1600.0, PolicyMatch::CategoryOnly));
        let o = sixty_percent_policy(&q, &[&far]).unwrap();
        assert_eq!(o.matched, PolicyMatch::Global);
        assert!(sixty_percent_policy(&q, &[]).is_err());
    }

    #[test]
    fn modes_parse() {
        for m in KnnMode::ALL {
            assert_eq!(m.as_str().parse::<KnnMode>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<KnnMode>(&json).unwrap(), m);
        }
        assert!("pixels".parse::<KnnMode>().is_err());
    }
}
