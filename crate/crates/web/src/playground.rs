//! Everything the page does, in plain Rust so it runs under `cargo test`.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use neb_core::dynamics::{memory_flow, walk_jump, FlowConfig, InitMode, SamplerConfig};
use neb_core::train::{noisy_batch, Adam};
use neb_core::{
    data::make_gaussian_mixture, nebls_jump, stream_rng, ArchSpec, Energy, EnergyModel, Error,
    KdeModel, Result, Stream, TrainConfig, Trainable,
};

pub const POINTS: usize = 512;
pub const SPREAD: f64 = 0.1;
const BATCH: usize = 64;

/// Mixture centers for a named layout.
pub fn layout_centers(name: &str) -> Result<Array2<f64>> {
    let rows: Vec<[f64; 2]> = match name {
        "pair" => vec![[-2.0, 0.0], [2.0, 0.0]],
        "ring" => (0..8)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 8.0;
                [2.0 * a.cos(), 2.0 * a.sin()]
            })
            .collect(),
        "grid" => (0..9)
            .map(|k| [1.5 * (k % 3) as f64 - 1.5, 1.5 * (k / 3) as f64 - 1.5])
            .collect(),
        other => return Err(Error::Argument(format!("unknown layout {other:?}"))),
    };
    Ok(Array2::from_shape_fn((rows.len(), 2), |(i, j)| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// Exact kernel density of the training points.
    Kde,
    /// The network being trained.
    Learned,
}

impl std::str::FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kde" => Ok(Source::Kde),
            "learned" | "mlp" => Ok(Source::Learned),
            other => Err(Error::Argument(format!("unknown energy source {other:?}"))),
        }
    }
}

/// Plotting window `[x0, x1] x [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Window {
    pub fn square(half: f64) -> Self {
        Window {
            x0: -half,
            x1: half,
            y0: -half,
            y1: half,
        }
    }
}

pub struct Playground {
    data: Array2<f64>,
    sigma: f64,
    kde: KdeModel,
    model: EnergyModel,
    adam: Adam,
    config: TrainConfig,
    rng: ChaCha8Rng,
    epochs: usize,
}

impl Playground {
    pub fn new(layout: &str, sigma: f64, hidden: &[usize], seed: u64) -> Result<Self> {
        let centers = layout_centers(layout)?;
        let data = make_gaussian_mixture(centers.view(), SPREAD, POINTS, seed)?.samples;
        let config = TrainConfig {
            sigma,
            batch_size: BATCH,
            seed,
            ..TrainConfig::default()
        };
        config.validate()?;
        let kde = KdeModel::new(data.clone(), sigma)?;
        let mut model = EnergyModel::init(ArchSpec::new(2, hidden.to_vec())?, seed)?;
        model.set_sigma_train(sigma);
        let adam = Adam::new(model.params().len(), &config);
        Ok(Playground {
            data,
            sigma,
            kde,
            model,
            adam,
            config,
            rng: stream_rng(seed, Stream::Training),
            epochs: 0,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn epochs(&self) -> usize {
        self.epochs
    }

    /// Training points as `x0, y0, x1, y1, ...`.
    pub fn points(&self) -> Vec<f64> {
        self.data.iter().copied().collect()
    }

    /// `n` more epochs of Adam on fresh noise; returns the mean loss of the last one.
    pub fn train(&mut self, n: usize) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.data.nrows()).collect();
        let mut last = f64::NAN;
        for _ in 0..n {
            order.shuffle(&mut self.rng);
            let mut total = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let x = self.data.select(Axis(0), chunk);
                let y = noisy_batch(x.view(), self.sigma, &mut self.rng);
                let (loss, grad) =
                    self.model
                        .loss_and_param_gradient(x.view(), y.view(), self.sigma);
                if !loss.is_finite() {
                    return Err(Error::Numeric {
                        context: format!("loss at epoch {}", self.epochs),
                    });
                }
                self.adam.step(self.model.params_mut().values_mut(), &grad);
                total += loss * chunk.len() as f64;
            }
            last = total / self.data.nrows() as f64;
            self.epochs += 1;
        }
        Ok(last)
    }

    /// Energy on an `nx` by `ny` lattice, row `j` at height `y0 + j * dy`.
    /// Each field is shifted so its minimum is zero.
    pub fn field(&self, source: Source, w: Window, nx: usize, ny: usize) -> Result<Vec<f64>> {
        if nx < 2 || ny < 2 {
            return Err(Error::Argument(
                "field lattice needs at least 2 x 2 nodes".into(),
            ));
        }
        let (dx, dy) = (
            (w.x1 - w.x0) / (nx - 1) as f64,
            (w.y1 - w.y0) / (ny - 1) as f64,
        );
        let ys = Array2::from_shape_fn((nx * ny, 2), |(k, c)| match c {
            0 => w.x0 + (k % nx) as f64 * dx,
            _ => w.y0 + (k / nx) as f64 * dy,
        });
        let e = match source {
            Source::Kde => self.kde.energy_rows(ys.view()),
            Source::Learned => self.model.energy_rows(ys.view()),
        };
        let floor = e.iter().copied().fold(f64::INFINITY, f64::min);
        if !floor.is_finite() {
            return Err(Error::Numeric {
                context: "energy field".into(),
            });
        }
        Ok(e.iter().map(|v| v - floor).collect())
    }

    /// One walk-jump chain started on a random training point. Returns the
    /// walk every `jump_period / 10` steps followed by the jumps, both flat.
    pub fn sample(
        &self,
        source: Source,
        jumps: usize,
        jump_period: usize,
        eps: f64,
        seed: u64,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut cfg = SamplerConfig::for_sigma(self.sigma);
        cfg.eps = eps;
        cfg.jump_period = jump_period;
        cfg.total_steps = jumps * jump_period;
        cfg.record_every = (jump_period / 10).max(1);
        cfg.init_mode = InitMode::DataPlusNoise;
        cfg.seed = seed;
        let trace = match source {
            Source::Kde => walk_jump(&self.kde, &cfg, Some(self.data.view())),
            Source::Learned => walk_jump(&self.model, &cfg, Some(self.data.view())),
        }?
        .remove(0);
        let flat = |v: Vec<(usize, Vec<f64>)>| v.into_iter().flat_map(|(_, p)| p).collect();
        Ok((flat(trace.y_states), flat(trace.x_jumps)))
    }

    /// Jump from `(x, y)` and the attractor reached by noise-free descent, as `[jx, jy, ax, ay]`.
    pub fn descend(&self, source: Source, x: f64, y: f64) -> Result<Vec<f64>> {
        let mut cfg = FlowConfig::for_sigma(self.sigma);
        cfg.max_iters = 5_000;
        let (jump, flow) = match source {
            Source::Kde => (
                nebls_jump(&self.kde, &[x, y], None)?,
                memory_flow(&self.kde, &[x, y], &cfg)?,
            ),
            Source::Learned => (
                nebls_jump(&self.model, &[x, y], None)?,
                memory_flow(&self.model, &[x, y], &cfg)?,
            ),
        };
        Ok(jump.into_iter().chain(flow.attractor).collect())
    }
}
