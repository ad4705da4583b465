//! Fitting an energy with the denoising objective.
//!
//! Each optimizer step draws fresh noisy replicas `Y = X + sigma * Z` for the
//! batch, so over epochs every clean sample is paired with an unbounded stream
//! of noise draws.

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::parse_value;
use crate::diff::{loss_and_param_gradient, pair_loss, Trainable};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, EnergyModel};
use crate::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sigma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 0.5,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::arg(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::arg(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::arg("adam_eps must be positive"));
        }
        Ok(())
    }

    /// Sets one field from its key. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "sigma" => self.sigma = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" | "batch" => self.batch_size = parse_value(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = parse_value(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse_value(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse_value(key, value)?,
            "adam_eps" => self.adam_eps = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (k, v) in crate::config::parse_kv(text)? {
            if !config.set(&k, &v)? {
                return Err(Error::arg(format!("unknown training key {k:?}")));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("sigma", self.sigma.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_kv() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub losses: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, config: &TrainConfig) -> Self {
        Adam {
            lr: config.learning_rate,
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `x + sigma * z` with `z` standard normal per coordinate.
pub fn sample_noisy<R: Rng + ?Sized>(x: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            v + sigma * z
        })
        .collect()
}

pub fn noisy_batch<R: Rng + ?Sized>(x: ArrayView2<f64>, sigma: f64, rng: &mut R) -> Array2<f64> {
    let mut y = x.to_owned();
    for v in y.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    y
}

/// Denoising loss with one fresh noise draw per clean row.
pub fn deen_loss<E, R>(energy: &E, x: ArrayView2<f64>, sigma: f64, rng: &mut R) -> Result<f64>
where
    E: crate::diff::Energy + ?Sized,
    R: Rng + ?Sized,
{
    if !(sigma > 0.0) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    let y = noisy_batch(x, sigma, rng);
    pair_loss(energy, x, y.view(), sigma)
}

/// Runs `config.epochs` passes of Adam on `model`. `on_epoch` sees each
/// epoch index and its mean loss.
pub fn fit<M: Trainable + ?Sized>(
    model: &mut M,
    data: ArrayView2<f64>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainHistory> {
    config.validate()?;
    if data.nrows() == 0 {
        return Err(Error::arg("empty dataset"));
    }
    if data.ncols() != model.dim() {
        return Err(Error::arg(format!(
            "data has {} columns, model expects {}",
            data.ncols(),
            model.dim()
        )));
    }
    let mut rng = stream_rng(config.seed, Stream::Training);
    let mut adam = Adam::new(model.params().len(), config);
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    let mut history = TrainHistory::default();

    for epoch in 0..config.epochs {
        let clock = Clock::start();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.select(Axis(0), chunk);
            let y = noisy_batch(x.view(), config.sigma, &mut rng);
            let (loss, grad) = loss_and_param_gradient(&*model, x.view(), y.view(), config.sigma)
                .map_err(|e| match e {
                Error::Numeric { context } => {
                    Error::numeric(format!("{context} at epoch {epoch}, batch {batch_idx}"))
                }
                other => other,
            })?;
            adam.step(model.params_mut().values_mut(), grad.values());
            total += loss * chunk.len() as f64;
        }
        let mean = total / data.nrows() as f64;
        history.losses.push(mean);
        history.epoch_seconds.push(clock.elapsed());
        on_epoch(epoch, mean);
    }
    Ok(history)
}

/// Initializes an MLP from `config.seed` and fits it.
pub fn train(
    data: ArrayView2<f64>,
    arch: ArchSpec,
    config: &TrainConfig,
) -> Result<(EnergyModel, TrainHistory)> {
    if arch.input_dim != data.ncols() {
        return Err(Error::arg(format!(
            "architecture input {} does not match data dimension {}",
            arch.input_dim,
            data.ncols()
        )));
    }
    let mut model = EnergyModel::init(arch, config.seed)?;
    let history = fit(&mut model, data, config, |_, _| {})?;
    model.set_sigma_train(config.sigma);
    Ok((model, history))
}

// wasm32-unknown-unknown has no monotonic clock in std.
struct Clock {
    #[cfg(not(target_arch = "wasm32"))]
    start: std::time::Instant,
}

impl Clock {
    fn start() -> Self {
        Clock {
            #[cfg(not(target_arch = "wasm32"))]
            start: std::time::Instant::now(),
        }
    }

    fn elapsed(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        {
            self.start.elapsed().as_secs_f64()
        }
        #[cfg(target_arch = "wasm32")]
        {
            0.0
        }
    }
}
