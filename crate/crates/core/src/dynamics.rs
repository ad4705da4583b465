//! Walk-jump sampling and attractor flow on a learned energy.
//!
//! The walk is an unadjusted Langevin chain in the smoothed space,
//! `y <- y - eps^2 grad E(y) + sqrt(2) eps z`. Every `T` steps the chain state
//! is jumped to clean space with `y - sigma^2 grad E(y)`; a jump only reads
//! the state. Attractor flow drops the noise and descends the energy until
//! the gradient vanishes.

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{eval_with_gradient, Energy};
use crate::error::{Error, Result};
use crate::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// A random data row plus `N(0, sigma^2 I)`.
    DataPlusNoise,
    /// Uniform in `[0, 1]^d`.
    UniformHypercube,
    /// Rows of the supplied matrix, cycled by chain index.
    Given,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "data_plus_noise" | "data" => Ok(InitMode::DataPlusNoise),
            "uniform_hypercube" | "uniform" => Ok(InitMode::UniformHypercube),
            "given" => Ok(InitMode::Given),
            other => Err(Error::arg(format!("unknown init mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub eps: f64,
    pub jump_period: usize,
    pub total_steps: usize,
    pub n_chains: usize,
    pub init_mode: InitMode,
    /// Unrecorded steps before `t = 0`.
    pub burn_in: usize,
    /// Record the walk state and energy every this many steps; 0 records nothing.
    pub record_every: usize,
    /// Emit jumps; the walk is identical either way.
    pub jumps: bool,
    /// Jump noise level; defaults to the energy's own sigma.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl SamplerConfig {
    /// `eps = sigma / 100`, `T = 10^4`.
    pub fn for_sigma(sigma: f64) -> Self {
        SamplerConfig {
            eps: sigma / 100.0,
            jump_period: 10_000,
            total_steps: 100_000,
            n_chains: 1,
            init_mode: InitMode::DataPlusNoise,
            burn_in: 0,
            record_every: 10_000,
            jumps: true,
            sigma: None,
            seed: 0,
        }
    }

    fn validate(&self, sigma: f64) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::arg(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if self.jump_period == 0 || self.total_steps == 0 || self.n_chains == 0 {
            return Err(Error::arg(
                "jump_period, total_steps and n_chains must be positive",
            ));
        }
        if self.jump_period > self.total_steps {
            return Err(Error::arg(format!(
                "jump period {} exceeds total steps {}",
                self.jump_period, self.total_steps
            )));
        }
        if self.eps > sigma / 10.0 {
            log::warn!(
                "Langevin step eps={} is not small against sigma={sigma}",
                self.eps
            );
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainTrace {
    pub chain: usize,
    pub y_states: Vec<(usize, Vec<f64>)>,
    pub x_jumps: Vec<(usize, Vec<f64>)>,
    pub energies: Vec<(usize, f64)>,
}

/// `y - eps^2 grad + sqrt(2) eps z`.
pub fn langevin_update(y: &[f64], grad: &[f64], eps: f64, z: &[f64]) -> Vec<f64> {
    let e2 = eps * eps;
    let noise = std::f64::consts::SQRT_2 * eps;
    y.iter()
        .zip(grad)
        .zip(z)
        .map(|((y, g), z)| y - e2 * g + noise * z)
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

/// One Langevin step.
pub fn langevin_step<E, R>(energy: &E, y: &[f64], eps: f64, rng: &mut R) -> Result<Vec<f64>>
where
    E: Energy + ?Sized,
    R: Rng + ?Sized,
{
    if !(eps > 0.0) {
        return Err(Error::arg(format!("eps must be positive, got {eps}")));
    }
    let g = crate::diff::input_gradient(energy, y)?;
    let z = standard_normal(y.len(), rng);
    Ok(langevin_update(y, &g, eps, &z))
}

fn initial_state<R: Rng + ?Sized>(
    mode: InitMode,
    d: usize,
    sigma: f64,
    chain: usize,
    data: Option<ArrayView2<f64>>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let rows = |what: &str| {
        data.filter(|m| m.nrows() > 0 && m.ncols() == d)
            .ok_or_else(|| {
                Error::arg(format!(
                    "init mode {what} needs a non-empty {d}-column matrix"
                ))
            })
    };
    match mode {
        InitMode::UniformHypercube => Ok((0..d).map(|_| rng.random::<f64>()).collect()),
        InitMode::Given => {
            let m = rows("given")?;
            Ok(m.row(chain % m.nrows()).to_vec())
        }
        InitMode::DataPlusNoise => {
            let m = rows("data_plus_noise")?;
            let i = rng.random_range(0..m.nrows());
            Ok(crate::train::sample_noisy(&m.row(i).to_vec(), sigma, rng))
        }
    }
}

fn run_chain<E: Energy + ?Sized>(
    energy: &E,
    config: &SamplerConfig,
    sigma: f64,
    chain: usize,
    data: Option<ArrayView2<f64>>,
) -> Result<ChainTrace> {
    let d = energy.dim();
    let mut rng = stream_rng(config.seed, Stream::Chain(chain as u64));
    let mut y = initial_state(config.init_mode, d, sigma, chain, data, &mut rng)?;
    let mut g = eval_with_gradient(energy, &y)?.1;
    let s2 = sigma * sigma;
    let mut trace = ChainTrace {
        chain,
        ..ChainTrace::default()
    };
    let step_error = |t: isize| Error::numeric(format!("chain {chain}, Langevin step {t}"));

    for step in 0..config.burn_in + config.total_steps {
        let t = step as isize - config.burn_in as isize + 1;
        let z = standard_normal(d, &mut rng);
        y = langevin_update(&y, &g, config.eps, &z);
        let (e, g_next) = eval_with_gradient(energy, &y).map_err(|_| step_error(t))?;
        g = g_next;
        if t <= 0 {
            continue;
        }
        let t = t as usize;
        if config.record_every > 0 && t % config.record_every == 0 {
            trace.y_states.push((t, y.clone()));
            trace.energies.push((t, e));
        }
        if config.jumps && t % config.jump_period == 0 {
            let x = y.iter().zip(&g).map(|(y, g)| y - s2 * g).collect();
            trace.x_jumps.push((t, x));
        }
    }
    Ok(trace)
}

/// Runs `n_chains` independent chains, each on its own random stream. `data`
/// supplies starting rows for the data and given init modes.
pub fn walk_jump<E: Energy + Sync + ?Sized>(
    energy: &E,
    config: &SamplerConfig,
    data: Option<ArrayView2<f64>>,
) -> Result<Vec<ChainTrace>> {
    let sigma = config
        .sigma
        .or_else(|| energy.sigma())
        .ok_or_else(|| Error::arg("jump sigma not given and the energy does not carry one"))?;
    config.validate(sigma)?;
    crate::map_indexed(config.n_chains, |c| {
        run_chain(energy, config, sigma, c, data)
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub step_size: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl FlowConfig {
    /// Step `sigma^2 / 10`, gradient tolerance `1e-4`, `10^5` iterations.
    pub fn for_sigma(sigma: f64) -> Self {
        FlowConfig {
            step_size: sigma * sigma / 10.0,
            grad_tol: 1e-4,
            max_iters: 100_000,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(Error::arg(
                "flow step, tolerance and iteration cap must be positive",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub attractor: Vec<f64>,
    /// Attempted steps, rejected ones included.
    pub iters: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    /// Energy at the start and after every accepted step.
    pub energies: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent from `y0` with step halving whenever the energy would rise.
pub fn memory_flow<E: Energy + ?Sized>(
    energy: &E,
    y0: &[f64],
    config: &FlowConfig,
) -> Result<FlowResult> {
    let start =
        ArrayView2::from_shape((1, y0.len()), y0).map_err(|_| Error::arg("bad starting point"))?;
    Ok(memory_flow_batch(energy, start, config)?.remove(0))
}

/// [`memory_flow`] for many starting rows at once; each row keeps its own step size.
pub fn memory_flow_batch<E: Energy + ?Sized>(
    energy: &E,
    starts: ArrayView2<f64>,
    config: &FlowConfig,
) -> Result<Vec<FlowResult>> {
    config.validate()?;
    if starts.ncols() != energy.dim() {
        return Err(Error::arg(format!(
            "starting points have {} columns, energy expects {}",
            starts.ncols(),
            energy.dim()
        )));
    }
    let n = starts.nrows();
    let mut y = starts.to_owned();
    let (e0, g0) = energy.energy_and_gradient_rows(y.view());
    let mut energy_now = e0.to_vec();
    let mut grad = g0;
    let mut steps = vec![config.step_size; n];
    let mut results: Vec<FlowResult> = (0..n)
        .map(|i| FlowResult {
            attractor: Vec::new(),
            iters: 0,
            final_grad_norm: norm(&grad.row(i).to_vec()),
            converged: false,
            energies: vec![energy_now[i]],
        })
        .collect();
    if energy_now.iter().any(|e| !e.is_finite()) || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("flow start"));
    }
    let mut active: Vec<usize> = Vec::with_capacity(n);
    for (i, r) in results.iter_mut().enumerate() {
        if r.final_grad_norm <= config.grad_tol {
            r.converged = true;
        } else {
            active.push(i);
        }
    }

    while !active.is_empty() {
        let mut trial = y.select(Axis(0), &active);
        for (k, &i) in active.iter().enumerate() {
            trial.row_mut(k).scaled_add(-steps[i], &grad.row(i));
        }
        let (e_new, g_new) = energy.energy_and_gradient_rows(trial.view());
        let mut still = Vec::with_capacity(active.len());
        for (k, &i) in active.iter().enumerate() {
            let r = &mut results[i];
            r.iters += 1;
            let e = e_new[k];
            if e.is_finite() && e <= energy_now[i] {
                y.row_mut(i).assign(&trial.row(k));
                grad.row_mut(i).assign(&g_new.row(k));
                energy_now[i] = e;
                r.energies.push(e);
                r.final_grad_norm = norm(&g_new.row(k).to_vec());
                steps[i] = (2.0 * steps[i]).min(config.step_size);
                if !r.final_grad_norm.is_finite() {
                    return Err(Error::numeric(format!(
                        "flow of row {i}, iteration {}",
                        r.iters
                    )));
                }
                if r.final_grad_norm <= config.grad_tol {
                    r.converged = true;
                    continue;
                }
            } else {
                steps[i] *= 0.5;
            }
            if r.iters < config.max_iters {
                still.push(i);
            }
        }
        active = still;
    }

    for (i, r) in results.iter_mut().enumerate() {
        r.attractor = y.row(i).to_vec();
    }
    Ok(results)
}

/// Flows from `n_seeds` uniform points in the unit hypercube.
pub fn creative_probe<E: Energy + ?Sized>(
    energy: &E,
    n_seeds: usize,
    config: &FlowConfig,
    seed: u64,
) -> Result<Vec<FlowResult>> {
    if n_seeds == 0 {
        return Ok(Vec::new());
    }
    let mut rng = stream_rng(seed, Stream::Probe);
    let starts = Array2::from_shape_fn((n_seeds, energy.dim()), |_| rng.random::<f64>());
    memory_flow_batch(energy, starts.view(), config)
}

/// Euclidean distance from each point to its nearest data row.
pub fn min_distances(points: &[Vec<f64>], data: ArrayView2<f64>) -> Vec<f64> {
    points
        .iter()
        .map(|p| {
            data.rows()
                .into_iter()
                .map(|r| r.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Equal-width histogram: `(lower edge, upper edge, count)` per bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<(f64, f64, usize)> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| (lo + b as f64 * width, lo + (b + 1) as f64 * width, c))
        .collect()
}
