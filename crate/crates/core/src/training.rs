//! MSE training with the AdaFactor optimizer.

use std::collections::BTreeMap;
use std::io::Write;

use gtm_autodiff::{Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Product;
use crate::error::{Error, Result};
use crate::model::{forward, mse_loss, Dropout, GtmModel, ModelInput};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdafactorConfig {
    /// Fixed learning rate, used only when `relative_step` is off.
    pub lr: Option<f64>,
    /// Added to squared gradients.
    pub eps1: f64,
    /// Lower bound on the parameter scale.
    pub eps2: f64,
    pub clip_threshold: f64,
    /// Second-moment decay exponent: β₂(t) = 1 − t^decay_rate.
    pub decay_rate: f64,
    pub relative_step: bool,
    pub scale_parameter: bool,
    pub warmup_init: bool,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        AdafactorConfig {
            lr: None,
            eps1: 1e-30,
            eps2: 1e-3,
            clip_threshold: 1.0,
            decay_rate: -0.8,
            relative_step: true,
            scale_parameter: true,
            warmup_init: false,
        }
    }
}

impl AdafactorConfig {
    pub fn validate(&self) -> Result<()> {
        match (self.relative_step, self.lr) {
            (false, None) => {
                return Err(Error::Config("optimizer needs lr when relative_step is off".into()))
            }
            (true, Some(_)) => {
                return Err(Error::Config("lr and relative_step are mutually exclusive".into()))
            }
            (false, Some(lr)) if !(lr.is_finite() && lr > 0.0) => {
                return Err(Error::Config(format!("lr must be positive, got {lr}")))
            }
            _ => {}
        }
        if self.warmup_init && !self.relative_step {
            return Err(Error::Config("warmup_init requires relative_step".into()));
        }
        if !(self.clip_threshold > 0.0) || !(self.eps1 >= 0.0) || !(self.eps2 >= 0.0) {
            return Err(Error::Config(
                "clip_threshold must be positive and eps1, eps2 non-negative".into(),
            ));
        }
        if !(self.decay_rate <= 0.0) {
            return Err(Error::Config(format!(
                "decay_rate must be <= 0, got {}",
                self.decay_rate
            )));
        }
        Ok(())
    }
}

/// Second-moment estimate for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum Moment {
    /// Rank ≥ 2, viewed as `[rows, cols]` with `cols` the last axis:
    /// per-row and per-column means of the squared gradient.
    Factored { row: Vec<f64>, col: Vec<f64> },
    Full(Vec<f64>),
}

impl Moment {
    pub fn len(&self) -> usize {
        match self {
            Moment::Factored { row, col } => row.len() + col.len(),
            Moment::Full(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub step: u64,
    pub moment: Moment,
}

#[derive(Debug, Clone, Default)]
pub struct Adafactor {
    pub config: AdafactorConfig,
    pub state: BTreeMap<String, ParamState>,
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

impl Adafactor {
    pub fn new(config: AdafactorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adafactor {
            config,
            state: BTreeMap::new(),
        })
    }

    fn step_size(&self, step: u64, param: &[f64]) -> f64 {
        let c = &self.config;
        let mut lr = c.lr.unwrap_or(0.0);
        if c.relative_step {
            let t = step as f64;
            let min_step = if c.warmup_init { 1e-6 * t } else { 1e-2 };
            lr = min_step.min(1.0 / t.sqrt());
        }
        if c.scale_parameter {
            lr *= c.eps2.max(rms(param));
        }
        lr
    }

    /// One update of `param` from `grad`. A non-finite gradient is rejected
    /// before any state changes.
    pub fn update(&mut self, name: &str, param: &mut Tensor, grad: &[f64]) -> Result<()> {
        if grad.len() != param.numel() {
            return Err(Error::DimMismatch {
                what: format!("gradient of {name:?}"),
                expected: param.numel(),
                actual: grad.len(),
            });
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} at element {i} of parameter {name:?}",
                grad[i]
            )));
        }
        let shape = param.shape().to_vec();
        let cols = *shape.last().unwrap_or(&1);
        let rows = if cols == 0 { 0 } else { grad.len() / cols };
        let factored = shape.len() >= 2;
        let state = self.state.entry(name.to_string()).or_insert_with(|| ParamState {
            step: 0,
            moment: if factored {
                Moment::Factored {
                    row: vec![0.0; rows],
                    col: vec![0.0; cols],
                }
            } else {
                Moment::Full(vec![0.0; grad.len()])
            },
        });
        state.step += 1;
        let step = state.step;
        let c = &self.config;
        let beta2 = 1.0 - (step as f64).powf(c.decay_rate);
        let sq: Vec<f64> = grad.iter().map(|g| g * g + c.eps1).collect();

        let mut update: Vec<f64> = match &mut state.moment {
            Moment::Factored { row, col } => {
                for (r, v) in row.iter_mut().enumerate() {
                    let m = sq[r * cols..(r + 1) * cols].iter().sum::<f64>() / cols as f64;
                    *v = beta2 * *v + (1.0 - beta2) * m;
                }
                for (k, v) in col.iter_mut().enumerate() {
                    let m = (0..rows).map(|r| sq[r * cols + k]).sum::<f64>() / rows as f64;
                    *v = beta2 * *v + (1.0 - beta2) * m;
                }
                let row_mean = row.iter().sum::<f64>() / rows as f64;
                let r_factor: Vec<f64> = row.iter().map(|r| (r / row_mean).sqrt().recip()).collect();
                let c_factor: Vec<f64> = col.iter().map(|c| c.sqrt().recip()).collect();
                grad.iter()
                    .enumerate()
                    .map(|(i, g)| r_factor[i / cols] * c_factor[i % cols] * g)
                    .collect()
            }
            Moment::Full(v) => v
                .iter_mut()
                .zip(&sq)
                .zip(grad)
                .map(|((v, s), g)| {
                    *v = beta2 * *v + (1.0 - beta2) * s;
                    v.sqrt().recip() * g
                })
                .collect(),
        };
        let denom = (rms(&update) / c.clip_threshold).max(1.0);
        let lr = self.step_size(step, param.data());
        for u in &mut update {
            *u = *u / denom * lr;
        }
        if let Some(i) = update.iter().position(|u| !u.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite update at element {i} of parameter {name:?}"
            )));
        }
        for (p, u) in param.data_mut().iter_mut().zip(&update) {
            *p -= u;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub optimizer: AdafactorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            optimizer: AdafactorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss per epoch, on the normalized scale.
    pub loss_curve: Vec<f64>,
    pub target_scale: f64,
    pub steps: u64,
}

impl TrainReport {
    pub fn write_loss_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "mean_loss"])?;
        for (i, l) in self.loss_curve.iter().enumerate() {
            out.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Largest weekly sale within the horizon; 1 when every sale is zero.
pub fn target_scale(products: &[Product], horizon: usize) -> f64 {
    let m = products
        .iter()
        .flat_map(|p| p.sales[..horizon].iter().copied())
        .fold(0.0, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

const DROPOUT_STREAM: u64 = 0x5eed_d50f;

/// Epoch-at-a-time training state over a fixed product set.
pub struct Trainer {
    config: TrainConfig,
    inputs: Vec<ModelInput>,
    targets: Vec<Vec<f64>>,
    optimizer: Adafactor,
    rng: ChaCha8Rng,
    dropout: Dropout,
    order: Vec<usize>,
    curve: Vec<f64>,
    steps: u64,
}

impl Trainer {
    /// Builds inputs and sets the model's target scale.
    pub fn new(model: &mut GtmModel, products: &[Product], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if products.is_empty() {
            return Err(Error::Contract("cannot train on an empty dataset".into()));
        }
        let inputs = model.input_builder()?.build_all(products)?;
        let horizon = model.config().horizon;
        let scale = target_scale(products, horizon);
        model.meta.target_scale = scale;
        let targets = products
            .iter()
            .map(|p| p.sales[..horizon].iter().map(|s| s / scale).collect())
            .collect();
        Ok(Trainer {
            config: config.clone(),
            inputs,
            targets,
            optimizer: Adafactor::new(config.optimizer.clone())?,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            // a separate stream so dropout never shifts the batch order
            dropout: Dropout::seeded(config.seed ^ DROPOUT_STREAM),
            order: (0..products.len()).collect(),
            curve: Vec::with_capacity(config.epochs),
            steps: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.curve.len()
    }

    /// One shuffled pass; returns the mean loss.
    pub fn run_epoch(&mut self, model: &mut GtmModel) -> Result<f64> {
        let c = model.config().clone();
        self.order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for chunk in self.order.chunks(self.config.batch_size) {
            let batch: Vec<&ModelInput> = chunk.iter().map(|&i| &self.inputs[i]).collect();
            let target: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| self.targets[i].iter().copied())
                .collect();
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g);
            let fv = forward(&c, &mut g, &|n| bound.var(n), &batch, &mut self.dropout)?;
            let t = g.constant(Tensor::new(vec![chunk.len(), c.horizon], target)?);
            let loss = mse_loss(&mut g, fv.predictions, t)?;
            let value = g.data(loss)[0];
            if !value.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss became {value} in epoch {}",
                    self.curve.len() + 1
                )));
            }
            total += value * chunk.len() as f64;
            g.backward(loss)?;
            apply(&mut self.optimizer, &mut model.params, &g, &bound)?;
            self.steps += 1;
        }
        let mean = total / self.order.len() as f64;
        log::debug!("epoch {} loss {mean:.6}", self.curve.len() + 1);
        self.curve.push(mean);
        Ok(mean)
    }

    pub fn report(&self, model: &GtmModel) -> TrainReport {
        TrainReport {
            loss_curve: self.curve.clone(),
            target_scale: model.meta.target_scale,
            steps: self.steps,
        }
    }
}

/// Trains `model` in place on `products` for `config.epochs` epochs.
pub fn train(model: &mut GtmModel, products: &[Product], config: &TrainConfig) -> Result<TrainReport> {
    let mut trainer = Trainer::new(model, products, config)?;
    for _ in 0..config.epochs {
        trainer.run_epoch(model)?;
    }
    Ok(trainer.report(model))
}

fn apply(
    opt: &mut Adafactor,
    params: &mut ParamStore,
    g: &Graph,
    bound: &gtm_autodiff::BoundParams,
) -> Result<()> {
    for (name, tensor) in params.iter_mut() {
        let var = bound.var(name);
        let grad = g
            .grad(var)
            .ok_or_else(|| Error::Contract(format!("no gradient for {name:?}")))?;
        opt.update(name, tensor, grad)?;
    }
    Ok(())
}
