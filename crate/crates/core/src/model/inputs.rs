//! Turning products into model inputs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::dataset::{Attribute, FeatureProvider, HashProvider, Product, TableProvider, TemporalFeatures};
use crate::error::{Error, Result};

/// Everything the forecaster sees for one product. Sales are deliberately
/// absent: forecasts cannot depend on them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// Category, color, fabric; each `trend_len` values in [0, 1].
    pub trends: [Vec<f64>; 3],
    pub image: Vec<f64>,
    /// Per-attribute text features, category, color, fabric.
    pub text: [Vec<f64>; 3],
    pub temporal: TemporalFeatures,
}

/// Where a modality's raw feature vectors come from. Stored with a
/// checkpoint so inference rebuilds identical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderSpec {
    /// The product's own `image_features`.
    Product,
    /// Seeded hash of the product id (image) or attribute value (text).
    Hash { seed: u64 },
    /// `<dir>/<key>.bin` files.
    Table { dir: PathBuf },
}

impl ProviderSpec {
    pub(crate) fn provider(&self, name: &str, dim: usize) -> Result<Option<Box<dyn FeatureProvider>>> {
        Ok(match self {
            ProviderSpec::Product => None,
            ProviderSpec::Hash { seed } => Some(Box::new(HashProvider::new(name, dim, *seed)?)),
            ProviderSpec::Table { dir } => Some(Box::new(TableProvider::load_dir(name, dir)?)),
        })
    }
}

pub struct InputBuilder {
    trend_len: usize,
    image_dim: usize,
    text_dim: usize,
    image: Option<Box<dyn FeatureProvider>>,
    text: Box<dyn FeatureProvider>,
}

impl InputBuilder {
    pub fn new(config: &ModelConfig, image: &ProviderSpec, text: &ProviderSpec) -> Result<Self> {
        let image = image.provider("image", config.image_dim)?;
        let text = text
            .provider("text", config.text_dim)?
            .ok_or_else(|| Error::Config("text features cannot come from the product".into()))?;
        for (what, p, dim) in [
            ("image", image.as_deref(), config.image_dim),
            ("text", Some(text.as_ref()), config.text_dim),
        ] {
            if let Some(p) = p {
                if p.dim() != dim {
                    return Err(Error::DimMismatch {
                        what: format!("{what} provider {:?} (model {what}_dim)", p.name()),
                        expected: dim,
                        actual: p.dim(),
                    });
                }
            }
        }
        Ok(InputBuilder {
            trend_len: config.trend_len,
            image_dim: config.image_dim,
            text_dim: config.text_dim,
            image,
            text,
        })
    }

    pub fn build(&self, product: &Product) -> Result<ModelInput> {
        let image = match &self.image {
            Some(p) => p.features(product.id.as_bytes())?,
            None => product.image_features.clone().ok_or_else(|| {
                Error::Validation(format!("product {:?} has no image features", product.id))
            })?,
        };
        if image.len() != self.image_dim {
            return Err(Error::DimMismatch {
                what: format!("image features of {:?} (model image_dim)", product.id),
                expected: self.image_dim,
                actual: image.len(),
            });
        }
        let text = Attribute::ALL
            .map(|a| self.text.features(product.attribute(a).as_bytes()));
        let [c, o, f] = text;
        let text = [c?, o?, f?];
        if let Some(t) = text.iter().find(|t| t.len() != self.text_dim) {
            return Err(Error::DimMismatch {
                what: "text features (model text_dim)".into(),
                expected: self.text_dim,
                actual: t.len(),
            });
        }
        Ok(ModelInput {
            trends: Attribute::ALL.map(|a| product.trend(a).view(self.trend_len).to_vec()),
            image,
            text,
            temporal: product.temporal(),
        })
    }

    pub fn build_all(&self, products: &[Product]) -> Result<Vec<ModelInput>> {
        products.iter().map(|p| self.build(p)).collect()
    }
}
