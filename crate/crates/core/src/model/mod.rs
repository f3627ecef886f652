//! The cross-attention forecaster.
//!
//! Three trend series are projected to width D, given sinusoidal positions and
//! a learned per-series embedding, and self-attended inside a local band.
//! Image, text and release-date embeddings are fused into one D-vector that
//! queries the encoded trends; the attended context passes a feed-forward
//! block and a linear head emits the whole horizon at once.

mod config;
mod inputs;

use std::path::Path;

use gtm_autodiff::gradcheck::{GradCheck, GradCheckReport};
use gtm_autodiff::{Graph, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TemporalFeatures;
use crate::error::{Error, Result};

pub use config::ModelConfig;
pub use inputs::{InputBuilder, ModelInput, ProviderSpec};

pub const PARAMS_FILE: &str = "params.json";
pub const META_FILE: &str = "model.json";
pub const META_FORMAT: &str = "gtm-model";
pub const META_VERSION: u32 = 1;

/// Parameter lookup used by the forward pass.
pub type Params<'a> = &'a dyn Fn(&str) -> Var;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Glorot { fan_in: usize, fan_out: usize },
}

/// Name, shape and initializer of every parameter `config` uses.
pub fn param_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let mut dense = |name: &str, i: usize, o: usize| {
        out.push((
            format!("{name}.w"),
            vec![i, o],
            Init::Glorot {
                fan_in: i,
                fan_out: o,
            },
        ));
        out.push((format!("{name}.b"), vec![o], Init::Zeros));
    };
    let (d, e) = (c.d_model, c.d_embed);
    if c.use_encoder {
        dense("enc.in", 1, d);
        for l in 0..c.encoder_layers {
            for part in ["q", "k", "v", "o"] {
                dense(&format!("enc.{l}.{part}"), d, d);
            }
            dense(&format!("enc.{l}.ff1"), d, c.ffn_dim);
            dense(&format!("enc.{l}.ff2"), c.ffn_dim, d);
        }
        for part in ["q", "k", "v", "o"] {
            dense(&format!("dec.{part}"), d, d);
        }
    }
    if c.use_image {
        dense("img", c.image_dim, e);
    }
    if c.use_text {
        dense("txt", c.text_dim, e);
    }
    if c.use_temporal {
        dense("tmp", 4 * e, e);
    }
    dense("fus.1", 3 * e, c.fusion_hidden);
    dense("fus.2", c.fusion_hidden, d);
    dense("dec.ff1", d, c.ffn_dim);
    dense("dec.ff2", c.ffn_dim, d);
    dense("head", d, c.horizon);
    let table = |rows: usize| Init::Glorot {
        fan_in: rows,
        fan_out: e,
    };
    if c.use_encoder {
        out.push((
            "enc.source".into(),
            vec![3, d],
            Init::Glorot {
                fan_in: 3,
                fan_out: d,
            },
        ));
    }
    if c.use_temporal {
        out.push(("tmp.dow".into(), vec![7, e], table(7)));
        out.push(("tmp.week".into(), vec![53, e], table(53)));
        out.push(("tmp.month".into(), vec![12, e], table(12)));
        let y = c.num_years();
        out.push(("tmp.year".into(), vec![y, e], table(y)));
    }
    out
}

/// Seeded initialization of every parameter in `param_specs` order.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape, init) in param_specs(config) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Glorot { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..=a)).collect()
            }
        };
        store.insert(name, Tensor::new(shape, data)?);
    }
    Ok(store)
}

/// Sinusoidal encoding, `[len, d]`, position = week index within a series.
pub fn positional_encoding(len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let rate = 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            pe[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Row-major `[len, len]` mask admitting |i − j| ≤ `window`.
pub fn band_mask(len: usize, window: usize) -> Vec<bool> {
    (0..len * len)
        .map(|k| (k / len).abs_diff(k % len) <= window)
        .collect()
}

/// Training-time dropout: zeroes each element with probability `rate` and
/// rescales survivors by 1 / (1 − rate). `Dropout::off()` is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn off() -> Self {
        Dropout { rng: None }
    }

    pub fn seeded(seed: u64) -> Self {
        Dropout {
            rng: Some(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_active(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = g.shape(x).to_vec();
        let n: usize = shape.iter().product();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(x, m)?)
    }
}

fn dense(g: &mut Graph, p: Params, x: Var, name: &str) -> Result<Var> {
    let y = g.matmul(x, p(&format!("{name}.w")))?;
    Ok(g.add_broadcast(y, p(&format!("{name}.b")))?)
}

fn feed_forward(g: &mut Graph, p: Params, x: Var, prefix: &str, drop: &mut Dropout, rate: f64) -> Result<Var> {
    let h = dense(g, p, x, &format!("{prefix}.ff1"))?;
    let h = g.relu(h);
    let h = drop.apply(g, h, rate)?;
    let y = dense(g, p, h, &format!("{prefix}.ff2"))?;
    drop.apply(g, y, rate)
}

/// Splits `[rows, D]` into heads: `[outer, len, D]` → `[outer·H, len, dh]`.
fn split_heads(g: &mut Graph, x: Var, outer: usize, len: usize, h: usize, dh: usize) -> Result<Var> {
    let x = g.reshape(x, &[outer, len, h, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, &[outer * h, len, dh])?)
}

fn merge_heads(g: &mut Graph, x: Var, outer: usize, len: usize, h: usize, dh: usize) -> Result<Var> {
    let x = g.reshape(x, &[outer, h, len, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, &[outer * len, h * dh])?)
}

/// Graph handles produced by one forward pass over a batch of B products.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `[B, horizon]`, on the normalized target scale.
    pub predictions: Var,
    /// `[B, 3·trend_len, D]` when the encoder is enabled.
    pub encoded: Option<Var>,
    /// Per layer, `[B, 3, H, L, L]` self-attention weights.
    pub encoder_attention: Vec<Var>,
    /// `[B, H, 3, L]` decoder cross-attention weights.
    pub cross_attention: Option<Var>,
    /// `[B, D]`.
    pub fused: Var,
}

fn check_batch(c: &ModelConfig, batch: &[&ModelInput]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    for x in batch {
        if let Some(t) = x.trends.iter().find(|t| t.len() != c.trend_len) {
            return Err(Error::Schema(format!(
                "trend of {} weeks, model expects {}",
                t.len(),
                c.trend_len
            )));
        }
        if x.image.len() != c.image_dim {
            return Err(Error::DimMismatch {
                what: "image features".into(),
                expected: c.image_dim,
                actual: x.image.len(),
            });
        }
        if let Some(t) = x.text.iter().find(|t| t.len() != c.text_dim) {
            return Err(Error::DimMismatch {
                what: "text features".into(),
                expected: c.text_dim,
                actual: t.len(),
            });
        }
        x.temporal.validate()?;
    }
    Ok(())
}

/// Trend encoder: `[B, 3·L, D]` output and per-layer attention weights.
pub fn encode_trends(
    c: &ModelConfig,
    g: &mut Graph,
    p: Params,
    batch: &[&ModelInput],
    drop: &mut Dropout,
) -> Result<(Var, Vec<Var>)> {
    let (b, l, d, h) = (batch.len(), c.trend_len, c.d_model, c.num_heads);
    let dh = c.head_dim();
    let rows = b * 3 * l;
    let raw: Vec<f64> = batch
        .iter()
        .flat_map(|x| x.trends.iter().flatten().copied())
        .collect();
    let x = g.constant(Tensor::new(vec![rows, 1], raw)?);
    let x = dense(g, p, x, "enc.in")?;
    let pe = positional_encoding(l, d);
    let pe_all: Vec<f64> = (0..b * 3).flat_map(|_| pe.iter().copied()).collect();
    let pe_all = g.constant(Tensor::new(vec![rows, d], pe_all)?);
    let sources: Vec<usize> = (0..rows).map(|r| (r / l) % 3).collect();
    let src = g.gather_rows(p("enc.source"), &sources)?;
    let x = g.add(x, pe_all)?;
    let x = g.add(x, src)?;
    let mut x = drop.apply(g, x, c.dropout)?;

    let mask = band_mask(l, c.attention_window);
    let scale = 1.0 / (dh as f64).sqrt();
    let mut attention = Vec::with_capacity(c.encoder_layers);
    for layer in 0..c.encoder_layers {
        let name = |part: &str| format!("enc.{layer}.{part}");
        let q = dense(g, p, x, &name("q"))?;
        let k = dense(g, p, x, &name("k"))?;
        let v = dense(g, p, x, &name("v"))?;
        let q = split_heads(g, q, b * 3, l, h, dh)?;
        let k = split_heads(g, k, b * 3, l, h, dh)?;
        let v = split_heads(g, v, b * 3, l, h, dh)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, scale);
        let a = g.softmax_masked(scores, &mask)?;
        attention.push(g.reshape(a, &[b, 3, h, l, l])?);
        let ctx = g.bmm(a, v, false)?;
        let ctx = merge_heads(g, ctx, b * 3, l, h, dh)?;
        let ctx = dense(g, p, ctx, &name("o"))?;
        let ctx = drop.apply(g, ctx, c.dropout)?;
        let y = g.add(x, ctx)?;
        let y = g.layer_norm(y);
        let f = feed_forward(g, p, y, &format!("enc.{layer}"), drop, c.dropout)?;
        let y2 = g.add(y, f)?;
        x = g.layer_norm(y2);
    }
    Ok((g.reshape(x, &[b, 3 * l, d])?, attention))
}

/// φ_i: `[B, E]`.
pub fn embed_image(c: &ModelConfig, g: &mut Graph, p: Params, batch: &[&ModelInput]) -> Result<Var> {
    let data: Vec<f64> = batch.iter().flat_map(|x| x.image.iter().copied()).collect();
    let x = g.constant(Tensor::new(vec![batch.len(), c.image_dim], data)?);
    dense(g, p, x, "img")
}

/// φ_t: Dense of the mean attribute vector, `[B, E]`.
pub fn embed_text(c: &ModelConfig, g: &mut Graph, p: Params, batch: &[&ModelInput]) -> Result<Var> {
    let data: Vec<f64> = batch
        .iter()
        .flat_map(|x| x.text.iter().flatten().copied())
        .collect();
    let x = g.constant(Tensor::new(vec![batch.len(), 3, c.text_dim], data)?);
    let mean = g.mean_axis(x, 1)?;
    dense(g, p, mean, "txt")
}

fn year_index(c: &ModelConfig, year: i32) -> usize {
    if year < c.year_min || year > c.year_max {
        log::warn!(
            "release year {year} outside trained range {}..={}; using nearest",
            c.year_min,
            c.year_max
        );
    }
    (year.clamp(c.year_min, c.year_max) - c.year_min) as usize
}

/// φ_temp: Dense of the concatenated day/week/month/year embeddings, `[B, E]`.
pub fn embed_temporal(
    c: &ModelConfig,
    g: &mut Graph,
    p: Params,
    temporal: &[TemporalFeatures],
) -> Result<Var> {
    for t in temporal {
        t.validate()?;
    }
    let idx = |f: &dyn Fn(&TemporalFeatures) -> usize| temporal.iter().map(f).collect::<Vec<_>>();
    let dow = g.gather_rows(p("tmp.dow"), &idx(&|t| t.day_of_week as usize))?;
    let week = g.gather_rows(p("tmp.week"), &idx(&|t| t.week_of_year as usize - 1))?;
    let month = g.gather_rows(p("tmp.month"), &idx(&|t| t.month as usize - 1))?;
    let year = g.gather_rows(p("tmp.year"), &idx(&|t| year_index(c, t.year)))?;
    let cat = g.concat(&[dow, week, month, year], 1)?;
    dense(g, p, cat, "tmp")
}

/// ψ_f = W2·ReLU(W1·[φ_i; φ_t; φ_temp] + B1) + B2, `[B, D]`.
pub fn fuse(
    c: &ModelConfig,
    g: &mut Graph,
    p: Params,
    [image, text, temporal]: [Var; 3],
    drop: &mut Dropout,
) -> Result<Var> {
    let x = g.concat(&[image, text, temporal], 1)?;
    let x = drop.apply(g, x, c.fusion_dropout)?;
    let h = dense(g, p, x, "fus.1")?;
    let h = g.relu(h);
    let h = drop.apply(g, h, c.fusion_dropout)?;
    dense(g, p, h, "fus.2")
}

/// Cross-attention decoder and horizon head. Returns predictions `[B,
/// horizon]` and, with an encoder, the `[B, H, 3, L]` attention weights
/// (softmax over time separately for each head and trend series).
pub fn decode(
    c: &ModelConfig,
    g: &mut Graph,
    p: Params,
    fused: Var,
    encoded: Option<Var>,
    drop: &mut Dropout,
) -> Result<(Var, Option<Var>)> {
    let b = g.shape(fused)[0];
    let (l, h, dh) = (c.trend_len, c.num_heads, c.head_dim());
    let (x, attention) = match (c.use_encoder, encoded) {
        (true, None) => {
            return Err(Error::Contract(
                "decoder needs the encoder output when use_encoder is set".into(),
            ))
        }
        (true, Some(enc)) => {
            let enc = g.reshape(enc, &[b * 3 * l, c.d_model])?;
            let q = dense(g, p, fused, "dec.q")?;
            let q = g.reshape(q, &[b * h, 1, dh])?;
            let to_heads = |g: &mut Graph, v: Var| -> Result<Var> {
                let v = g.reshape(v, &[b, 3, l, h, dh])?;
                Ok(g.permute(v, &[0, 3, 1, 2, 4])?)
            };
            let k = dense(g, p, enc, "dec.k")?;
            let k = to_heads(g, k)?;
            let k = g.reshape(k, &[b * h, 3 * l, dh])?;
            let v = dense(g, p, enc, "dec.v")?;
            let v = to_heads(g, v)?;
            let v = g.reshape(v, &[b * h * 3, l, dh])?;
            let scores = g.bmm(q, k, true)?;
            let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
            let scores = g.reshape(scores, &[b, h, 3, l])?;
            let a = g.softmax(scores, 3)?;
            let a_rows = g.reshape(a, &[b * h * 3, 1, l])?;
            let ctx = g.bmm(a_rows, v, false)?;
            let ctx = g.reshape(ctx, &[b * h, 3, dh])?;
            let ctx = g.mean_axis(ctx, 1)?;
            let ctx = g.reshape(ctx, &[b, c.d_model])?;
            let ctx = dense(g, p, ctx, "dec.o")?;
            let ctx = drop.apply(g, ctx, c.dropout)?;
            let x = if c.decoder_residual_norm {
                let y = g.add(fused, ctx)?;
                g.layer_norm(y)
            } else {
                ctx
            };
            (x, Some(a))
        }
        (false, _) => (fused, None),
    };
    let f = feed_forward(g, p, x, "dec", drop, c.dropout)?;
    let x = if c.decoder_residual_norm {
        let y = g.add(x, f)?;
        g.layer_norm(y)
    } else {
        f
    };
    Ok((dense(g, p, x, "head")?, attention))
}

/// Full forward pass for a batch.
pub fn forward(
    c: &ModelConfig,
    g: &mut Graph,
    p: Params,
    batch: &[&ModelInput],
    drop: &mut Dropout,
) -> Result<ForwardVars> {
    check_batch(c, batch)?;
    let b = batch.len();
    let e = c.d_embed;
    let zeros = |g: &mut Graph| g.constant(Tensor::zeros(&[b, e]));
    let image = if c.use_image {
        embed_image(c, g, p, batch)?
    } else {
        zeros(g)
    };
    let text = if c.use_text {
        embed_text(c, g, p, batch)?
    } else {
        zeros(g)
    };
    let temporal = if c.use_temporal {
        let t: Vec<TemporalFeatures> = batch.iter().map(|x| x.temporal).collect();
        embed_temporal(c, g, p, &t)?
    } else {
        zeros(g)
    };
    let fused = fuse(c, g, p, [image, text, temporal], drop)?;
    let (encoded, encoder_attention) = if c.use_encoder {
        let (enc, att) = encode_trends(c, g, p, batch, drop)?;
        (Some(enc), att)
    } else {
        (None, Vec::new())
    };
    let (predictions, cross_attention) = decode(c, g, p, fused, encoded, drop)?;
    Ok(ForwardVars {
        predictions,
        encoded,
        encoder_attention,
        cross_attention,
        fused,
    })
}

/// Mean squared error over all elements.
pub fn mse_loss(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq))
}

/// Finite-difference check of the MSE loss of a full forward pass with
/// respect to every parameter in `params`.
pub fn check_gradients(
    c: &ModelConfig,
    params: &ParamStore,
    batch: &[&ModelInput],
    targets: &[f64],
    check: &GradCheck,
) -> Result<GradCheckReport> {
    let names: Vec<&String> = params.iter().map(|(n, _)| n).collect();
    let tensors: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let target = Tensor::new(vec![batch.len(), c.horizon], targets.to_vec())?;
    let report = check.run(&tensors, |g, vars| {
        let lookup = |n: &str| vars[names.iter().position(|m| *m == n).expect("known parameter")];
        let fv = forward(c, g, &lookup, batch, &mut Dropout::off())
            .map_err(|e| gtm_autodiff::TensorError::Contract(e.to_string()))?;
        let t = g.constant(target.clone());
        let d = g.sub(fv.predictions, t)?;
        let sq = g.mul(d, d)?;
        Ok(g.mean(sq))
    })?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub heads: usize,
    pub sources: usize,
    pub trend_len: usize,
    /// Row-major `[heads, sources, trend_len]`.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub product_id: String,
    /// Units per week, `horizon` values; may be negative (clamp for reporting).
    pub predictions: Vec<f64>,
    pub cross_attention: Option<AttentionMap>,
}

impl ForecastResult {
    pub fn clamped(&self) -> Vec<f64> {
        self.predictions.iter().map(|v| v.max(0.0)).collect()
    }
}

/// Sidecar stored next to the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    /// Targets are divided by this before training.
    pub target_scale: f64,
    pub image_provider: ProviderSpec,
    pub text_provider: ProviderSpec,
}

impl ModelMeta {
    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let meta: ModelMeta = serde_json::from_slice(bytes)?;
        if meta.format != META_FORMAT || meta.version != META_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model sidecar {:?} v{}",
                meta.format, meta.version
            )));
        }
        if !(meta.target_scale.is_finite() && meta.target_scale > 0.0) {
            return Err(Error::Schema(format!(
                "target_scale {} must be finite and positive",
                meta.target_scale
            )));
        }
        meta.config.validate()?;
        Ok(meta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtmModel {
    pub meta: ModelMeta,
    pub params: ParamStore,
}

impl GtmModel {
    pub fn new(
        config: ModelConfig,
        seed: u64,
        image_provider: ProviderSpec,
        text_provider: ProviderSpec,
    ) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(GtmModel {
            meta: ModelMeta {
                format: META_FORMAT.into(),
                version: META_VERSION,
                config,
                target_scale: 1.0,
                image_provider,
                text_provider,
            },
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.meta.config
    }

    pub fn input_builder(&self) -> Result<InputBuilder> {
        InputBuilder::new(
            &self.meta.config,
            &self.meta.image_provider,
            &self.meta.text_provider,
        )
    }

    /// Checks that the stored parameters match what the config requires.
    pub fn check_params(&self) -> Result<()> {
        let specs = param_specs(&self.meta.config);
        if specs.len() != self.params.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} parameters, config needs {}",
                self.params.len(),
                specs.len()
            )));
        }
        for (name, shape, _) in specs {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| Error::Schema(format!("checkpoint lacks parameter {name:?}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter {name:?} has shape {:?}, config needs {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numerical(format!("parameter {name:?} is not finite")));
            }
        }
        Ok(())
    }

    /// Forecasts in chunks of `batch_size`, denormalized to units.
    pub fn predict(
        &self,
        ids: &[&str],
        inputs: &[ModelInput],
        batch_size: usize,
    ) -> Result<Vec<ForecastResult>> {
        if ids.len() != inputs.len() {
            return Err(Error::DimMismatch {
                what: "product ids".into(),
                expected: inputs.len(),
                actual: ids.len(),
            });
        }
        let c = &self.meta.config;
        let mut out = Vec::with_capacity(inputs.len());
        for (chunk_ids, chunk) in ids.chunks(batch_size.max(1)).zip(inputs.chunks(batch_size.max(1))) {
            let batch: Vec<&ModelInput> = chunk.iter().collect();
            let mut g = Graph::new();
            let bound = self.params.bind(&mut g);
            let fv = forward(c, &mut g, &|n| bound.var(n), &batch, &mut Dropout::off())?;
            let preds = g.data(fv.predictions);
            let att = fv.cross_attention.map(|a| g.data(a).to_vec());
            let per = c.num_heads * 3 * c.trend_len;
            for (i, id) in chunk_ids.iter().enumerate() {
                let predictions: Vec<f64> = preds[i * c.horizon..(i + 1) * c.horizon]
                    .iter()
                    .map(|v| v * self.meta.target_scale)
                    .collect();
                if predictions.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!("non-finite forecast for {id:?}")));
                }
                out.push(ForecastResult {
                    product_id: id.to_string(),
                    predictions,
                    cross_attention: att.as_ref().map(|a| AttentionMap {
                        heads: c.num_heads,
                        sources: 3,
                        trend_len: c.trend_len,
                        weights: a[i * per..(i + 1) * per].to_vec(),
                    }),
                });
            }
        }
        Ok(out)
    }

    /// Writes `params.json` and the `model.json` sidecar into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.params.save(&dir.join(PARAMS_FILE))?;
        let meta = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(dir.join(META_FILE), meta)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = ModelMeta::from_json_slice(&std::fs::read(dir.join(META_FILE))?)?;
        let params = ParamStore::load(&dir.join(PARAMS_FILE))?;
        let model = GtmModel { meta, params };
        model.check_params()?;
        Ok(model)
    }
}
