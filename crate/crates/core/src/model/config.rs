use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SALES_WEEKS, SHORT_TREND_WEEKS, TREND_WEEKS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Width of the trend encoder and decoder (D).
    pub d_model: usize,
    /// Width of each modality embedding (E).
    pub d_embed: usize,
    pub num_heads: usize,
    pub horizon: usize,
    /// 52, or 28 for the shorter history (a suffix of the stored series).
    pub trend_len: usize,
    /// Encoder self-attention reaches |i − j| ≤ this many weeks.
    pub attention_window: usize,
    pub encoder_layers: usize,
    pub ffn_dim: usize,
    pub fusion_hidden: usize,
    /// Training-time dropout inside the encoder and decoder blocks.
    pub dropout: f64,
    /// Training-time dropout on the fusion network's input and hidden layer.
    pub fusion_dropout: f64,
    pub use_encoder: bool,
    pub use_image: bool,
    pub use_text: bool,
    pub use_temporal: bool,
    /// Residual connections and layer norm around the decoder blocks.
    pub decoder_residual_norm: bool,
    pub image_dim: usize,
    pub text_dim: usize,
    pub year_min: i32,
    pub year_max: i32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 32,
            d_embed: 32,
            num_heads: 4,
            horizon: SALES_WEEKS,
            trend_len: TREND_WEEKS,
            attention_window: 4,
            encoder_layers: 1,
            ffn_dim: 64,
            fusion_hidden: 64,
            dropout: 0.1,
            fusion_dropout: 0.5,
            use_encoder: true,
            use_image: true,
            use_text: true,
            use_temporal: true,
            decoder_residual_norm: true,
            image_dim: 64,
            text_dim: 32,
            year_min: 2016,
            year_max: 2020,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("d_embed", self.d_embed),
            ("num_heads", self.num_heads),
            ("horizon", self.horizon),
            ("encoder_layers", self.encoder_layers),
            ("ffn_dim", self.ffn_dim),
            ("fusion_hidden", self.fusion_hidden),
            ("image_dim", self.image_dim),
            ("text_dim", self.text_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        for (name, rate) in [("dropout", self.dropout), ("fusion_dropout", self.fusion_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {rate}")));
            }
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.trend_len != TREND_WEEKS && self.trend_len != SHORT_TREND_WEEKS {
            return Err(Error::Config(format!(
                "trend_len must be {TREND_WEEKS} or {SHORT_TREND_WEEKS}, got {}",
                self.trend_len
            )));
        }
        if self.horizon > SALES_WEEKS {
            return Err(Error::Config(format!(
                "horizon {} exceeds the {SALES_WEEKS} observed sales weeks",
                self.horizon
            )));
        }
        if self.year_min > self.year_max {
            return Err(Error::Config(format!(
                "year_min {} is after year_max {}",
                self.year_min, self.year_max
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn num_years(&self) -> usize {
        (self.year_max - self.year_min + 1) as usize
    }

    /// Sets the learned year range to the release years seen in `dataset`.
    pub fn fit_years(&mut self, dataset: &Dataset) {
        let years = dataset.products.iter().map(|p| p.release_date.year());
        if let (Some(lo), Some(hi)) = (years.clone().min(), years.max()) {
            self.year_min = lo;
            self.year_max = hi;
        }
    }
}
