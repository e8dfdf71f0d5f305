//! Multi-scale supervised training: configuration, schedule, batch
//! sampling and the optimization loop.

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Record;
use crate::error::{Error, Result};
use crate::model::{InrModel, ModelConfig, Normalization, Prepared, Workspace};
use crate::nn::Adam;
use crate::real::Real;
use crate::sampling::make_equispaced_mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Training configuration; serialized as a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub scales: Vec<usize>,
    pub acs_fraction: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub betas: [f64; 2],
    pub seed: u64,
    pub positional_encoding: bool,
    pub scale_embedding: bool,
    pub phase_prediction: bool,
    pub normalization: Normalization,
    pub precision: Precision,
    pub encoder_channels: usize,
    pub encoder_blocks: usize,
    pub kernel: usize,
    pub groups: usize,
    pub feature_dim: usize,
    pub pe_features: usize,
    pub pe_sigma: f64,
    pub hidden: usize,
    /// Iterations between progress log lines; 0 disables them.
    pub log_every: usize,
}

impl Default for TrainConfig {
    /// Reduced-width network sized for CPU runs on 64×64 images.
    fn default() -> Self {
        TrainConfig {
            scales: vec![4, 5, 6],
            acs_fraction: 0.08,
            iterations: 3000,
            batch_size: 2,
            // 3k iterations at 1e-3 underfits the narrow network.
            lr0: 3e-3,
            betas: [0.9, 0.99],
            seed: 0,
            positional_encoding: true,
            scale_embedding: true,
            phase_prediction: true,
            normalization: Normalization::ZeroFilledMax,
            precision: Precision::F32,
            encoder_channels: 16,
            encoder_blocks: 5,
            kernel: 5,
            groups: 8,
            feature_dim: 32,
            pe_features: 32,
            pe_sigma: 1.0,
            hidden: 64,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    /// Network widths and iteration count of the full-size setup.
    pub fn full_size() -> Self {
        let m = ModelConfig::full_size(1);
        TrainConfig {
            iterations: 100_000,
            lr0: 1e-3,
            encoder_channels: m.encoder_channels,
            encoder_blocks: m.encoder_blocks,
            kernel: m.kernel,
            groups: m.groups,
            feature_dim: m.feature_dim,
            pe_features: m.pe_features,
            pe_sigma: m.pe_sigma,
            hidden: m.hidden,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::validation("scales", "must not be empty"));
        }
        if self.scales.contains(&0) {
            return Err(Error::validation("scales", "every scale must be at least 1"));
        }
        if !(self.acs_fraction > 0.0 && self.acs_fraction < 1.0) {
            return Err(Error::validation("acs_fraction", "must lie in (0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size", "must be positive"));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::validation("lr0", "must be positive"));
        }
        if self.betas.iter().any(|b| !(0.0..1.0).contains(b)) {
            return Err(Error::validation("betas", "must lie in [0, 1)"));
        }
        self.model_config(1).validate()
    }

    pub fn model_config(&self, coils: usize) -> ModelConfig {
        ModelConfig {
            coils,
            encoder_channels: self.encoder_channels,
            encoder_blocks: self.encoder_blocks,
            kernel: self.kernel,
            groups: self.groups,
            feature_dim: self.feature_dim,
            pe_features: self.pe_features,
            pe_sigma: self.pe_sigma,
            hidden: self.hidden,
            positional_encoding: self.positional_encoding,
            scale_embedding: self.scale_embedding,
            phase_prediction: self.phase_prediction,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::format("config", e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `(key, value)` pairs in declaration order, values in TOML syntax.
    pub fn entries(&self) -> Vec<(String, String)> {
        let table: toml::Table = toml::from_str(&self.to_toml()).expect("round trip");
        let order = [
            "scales",
            "acs_fraction",
            "iterations",
            "batch_size",
            "lr0",
            "betas",
            "seed",
            "positional_encoding",
            "scale_embedding",
            "phase_prediction",
            "normalization",
            "precision",
            "encoder_channels",
            "encoder_blocks",
            "kernel",
            "groups",
            "feature_dim",
            "pe_features",
            "pe_sigma",
            "hidden",
            "log_every",
        ];
        order
            .iter()
            .filter_map(|k| table.get(*k).map(|v| (k.to_string(), v.to_string())))
            .collect()
    }
}

/// Cosine annealing `0.5·lr0·(1 + cos(π·t/T))`.
pub fn lr_schedule(iter: usize, config: &TrainConfig) -> Result<f64> {
    let total = config.iterations;
    if iter > total {
        return Err(Error::validation(
            "iter",
            format!("{iter} exceeds the {total} configured iterations"),
        ));
    }
    if total == 0 {
        return Ok(config.lr0);
    }
    let t = iter as f64 / total as f64;
    Ok((0.5 * config.lr0 * (1.0 + (std::f64::consts::PI * t).cos())).max(0.0))
}

/// One batch entry: record index and scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub record: usize,
    pub scale: usize,
}

/// Uniform draws of `(record, scale)` pairs from a dedicated seeded stream.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    rng: ChaCha8Rng,
    records: usize,
    scales: Vec<usize>,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(records: usize, scales: &[usize], batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        BatchSampler {
            rng,
            records,
            scales: scales.to_vec(),
            batch_size,
        }
    }

    pub fn next_batch(&mut self) -> Vec<BatchItem> {
        (0..self.batch_size)
            .map(|_| BatchItem {
                record: self.rng.gen_range(0..self.records),
                scale: self.scales[self.rng.gen_range(0..self.scales.len())],
            })
            .collect()
    }
}

/// Optimization state for one model.
pub struct Trainer<T: Real> {
    pub model: InrModel<T>,
    pub config: TrainConfig,
    adam: Adam<T>,
    sampler: BatchSampler,
    items: Vec<Vec<Prepared<T>>>,
    ws: Workspace<T>,
    grads: Vec<T>,
    iteration: usize,
}

fn shared_shape(records: &[Record]) -> Result<(usize, usize, usize)> {
    let first = records
        .first()
        .ok_or_else(|| Error::validation("dataset", "training set is empty"))?
        .dim();
    if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.dim() != first) {
        return Err(Error::validation(
            "dataset",
            format!("record {i} has shape {:?}, expected {first:?}", r.dim()),
        ));
    }
    Ok(first)
}

impl<T: Real> Trainer<T> {
    /// Initializes the model from `config.seed` and prepares every
    /// `(record, scale)` item.
    pub fn new(records: &[Record], config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let (c, h, w) = shared_shape(records)?;
        let model = InrModel::<T>::new(config.model_config(c), config.seed)?;
        let masks = config
            .scales
            .iter()
            .map(|&s| make_equispaced_mask(w, s, config.acs_fraction))
            .collect::<Result<Vec<_>>>()?;
        let items = records
            .iter()
            .map(|r| {
                masks
                    .iter()
                    .map(|m| Prepared::new(&r.kspace, m, config.normalization))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let ws = model.workspace(h, w)?;
        let n = model.param_count();
        Ok(Trainer {
            adam: Adam::new(n, config.betas[0], config.betas[1]),
            sampler: BatchSampler::new(records.len(), &config.scales, config.batch_size, config.seed),
            grads: vec![T::zero(); n],
            model,
            config: config.clone(),
            items,
            ws,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn scale_index(&self, scale: usize) -> usize {
        self.config
            .scales
            .iter()
            .position(|&s| s == scale)
            .expect("sampled scale is configured")
    }

    /// Mean loss over `batch` and one Adam update with learning rate `lr`.
    pub fn train_step(&mut self, batch: &[BatchItem], lr: f64) -> Result<f64> {
        self.grads.iter_mut().for_each(|g| *g = T::zero());
        let mut total = 0.0;
        for item in batch {
            let prepared = &self.items[item.record][self.scale_index(item.scale)];
            total += self
                .model
                .loss_and_grad(&self.model.params, &mut self.ws, prepared, &mut self.grads)?;
        }
        let loss = total / batch.len() as f64;
        let grads_finite = self.grads.iter().all(|g| g.is_finite());
        if !loss.is_finite() || !grads_finite {
            return Err(Error::NonFinite {
                iteration: self.iteration,
                scale: batch.first().map_or(0, |b| b.scale),
                records: batch.iter().map(|b| b.record).collect(),
            });
        }
        let inv = T::of(1.0 / batch.len() as f64);
        self.grads.iter_mut().for_each(|g| *g *= inv);
        self.adam.step(&mut self.model.params, &self.grads, lr);
        self.iteration += 1;
        Ok(loss)
    }

    /// Draws the next batch and applies one scheduled update.
    pub fn step(&mut self) -> Result<f64> {
        let lr = lr_schedule(self.iteration, &self.config)?;
        let batch = self.sampler.next_batch();
        let loss = self.train_step(&batch, lr)?;
        let every = self.config.log_every;
        if every > 0 && (self.iteration % every == 0 || self.iteration == self.config.iterations) {
            info!(
                "iteration {}/{}: loss {loss:.6e}, lr {lr:.3e}",
                self.iteration, self.config.iterations
            );
        } else {
            debug!("iteration {}: loss {loss:.6e}", self.iteration);
        }
        Ok(loss)
    }
}

/// Trained model and per-iteration mean batch losses.
pub struct FitOutput<T: Real> {
    pub model: InrModel<T>,
    pub loss_curve: Vec<f64>,
}

/// Trains one model jointly over all configured scales.
pub fn fit<T: Real>(records: &[Record], config: &TrainConfig) -> Result<FitOutput<T>> {
    let mut trainer = Trainer::<T>::new(records, config)?;
    info!(
        "training {} parameters on {} records, scales {:?}, {} iterations",
        trainer.model.param_count(),
        records.len(),
        config.scales,
        config.iterations
    );
    let mut loss_curve = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        loss_curve.push(trainer.step()?);
    }
    Ok(FitOutput {
        model: trainer.model,
        loss_curve,
    })
}

/// Trains at the configured precision and packages the result as a checkpoint.
pub fn fit_checkpoint(records: &[Record], config: &TrainConfig) -> Result<(Checkpoint, Vec<f64>)> {
    match config.precision {
        Precision::F32 => {
            let out = fit::<f32>(records, config)?;
            Ok((Checkpoint::from_model(&out.model, config), out.loss_curve))
        }
        Precision::F64 => {
            let out = fit::<f64>(records, config)?;
            Ok((Checkpoint::from_model(&out.model, config), out.loss_curve))
        }
    }
}
