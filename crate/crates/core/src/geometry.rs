//! Sphere-overlap geometry: the scaled pairwise distance matrix
//! `chi_ij = ||X_i - X_j|| / (2 sqrt(d))`, its summary statistics, and Monte
//! Carlo probes of Gaussian norm concentration.
//!
//! Noise of scale `sigma` puts the mass of each smoothed sample on a shell of
//! radius `sigma sqrt(d)`, so two shells start to overlap once `sigma`
//! exceeds `chi_ij`. The largest entry, `sigma_c`, is where every pair of
//! shells overlaps.

use std::fmt;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{stream_rng, Stream};

/// Memory allowed for holding every pairwise value at once in streaming mode.
pub const DEFAULT_MEMORY_BUDGET: usize = 512 << 20;

const HISTOGRAM_BINS: usize = 1 << 20;
const ROW_BLOCK: usize = 64;

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let t = x[k] - y[k];
            acc[k] += t * t;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_points(x: ArrayView2<f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::arg(format!(
            "need at least two points, got {}",
            x.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Err(Error::arg("points have zero dimension"));
    }
    Ok(())
}

/// Calls `visit(i, row)` for every `i` in order, where `row[k]` is
/// `chi(i, i + 1 + k)`. Distance blocks are computed in parallel; visits are sequential.
fn for_each_pair_row(x: ArrayView2<f64>, mut visit: impl FnMut(usize, &[f64])) {
    let x = x.as_standard_layout();
    let n = x.nrows();
    let d = x.ncols();
    let scale = 1.0 / (2.0 * (d as f64).sqrt());
    let data = x.as_slice().expect("standard layout");
    let row = |i: usize| &data[i * d..(i + 1) * d];
    for start in (0..n).step_by(ROW_BLOCK) {
        let end = (start + ROW_BLOCK).min(n);
        let block = crate::map_indexed(end - start, |k| {
            let i = start + k;
            let xi = row(i);
            ((i + 1)..n)
                .map(|j| squared_distance(xi, row(j)).sqrt() * scale)
                .collect::<Vec<f64>>()
        });
        for (k, values) in block.iter().enumerate() {
            visit(start + k, values);
        }
    }
}

/// Full symmetric matrix with a zero diagonal.
pub fn chi_matrix(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_points(x)?;
    let n = x.nrows();
    let mut chi = Array2::zeros((n, n));
    for_each_pair_row(x, |i, values| {
        for (k, &v) in values.iter().enumerate() {
            chi[[i, i + 1 + k]] = v;
            chi[[i + 1 + k, i]] = v;
        }
    });
    Ok(chi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiStats {
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
    /// Equal to `max`.
    pub sigma_c: f64,
    pub n_pairs: u64,
}

impl fmt::Display for ChiStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pairs={} min={:.4} median={:.4} mean={:.4} max={:.4} sigma_c={:.4}",
            self.n_pairs, self.min, self.median, self.mean, self.max, self.sigma_c
        )
    }
}

// Running min/max and a sum accumulated per row, then across rows in order,
// so every mode reduces in the same order.
#[derive(Debug, Clone, Copy)]
struct Moments {
    min: f64,
    max: f64,
    sum: f64,
    count: u64,
}

impl Moments {
    fn new() -> Self {
        Moments {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }

    fn add_row(&mut self, values: &[f64]) {
        let mut row_sum = 0.0;
        for &v in values {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
            row_sum += v;
        }
        self.sum += row_sum;
        self.count += values.len() as u64;
    }

    fn finish(self, median: f64) -> ChiStats {
        ChiStats {
            min: self.min,
            median,
            mean: self.sum / self.count as f64,
            max: self.max,
            sigma_c: self.max,
            n_pairs: self.count,
        }
    }
}

// Ranks of the one or two order statistics that define the median.
fn median_ranks(count: u64) -> (u64, u64) {
    if count % 2 == 1 {
        (count / 2, count / 2)
    } else {
        (count / 2 - 1, count / 2)
    }
}

fn median_in_place(values: &mut [f64]) -> f64 {
    let (lo, hi) = median_ranks(values.len() as u64);
    let (lo, hi) = (lo as usize, hi as usize);
    let (_, &mut a, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if lo == hi {
        a
    } else {
        let b = upper.iter().cloned().fold(f64::INFINITY, f64::min);
        0.5 * (a + b)
    }
}

/// Off-diagonal statistics, each unordered pair counted once.
///
/// With `streaming` the n x n matrix is never built: pair values are kept in
/// a flat buffer if it fits in [`DEFAULT_MEMORY_BUDGET`], otherwise the
/// median is found exactly with a histogram pass followed by a selection pass.
pub fn chi_stats(x: ArrayView2<f64>, streaming: bool) -> Result<ChiStats> {
    if streaming {
        chi_stats_with_budget(x, DEFAULT_MEMORY_BUDGET)
    } else {
        check_points(x)?;
        let chi = chi_matrix(x)?;
        let n = chi.nrows();
        let mut moments = Moments::new();
        let mut all = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            let row: Vec<f64> = ((i + 1)..n).map(|j| chi[[i, j]]).collect();
            moments.add_row(&row);
            all.extend_from_slice(&row);
        }
        Ok(moments.finish(median_in_place(&mut all)))
    }
}

pub fn chi_stats_with_budget(x: ArrayView2<f64>, memory_budget: usize) -> Result<ChiStats> {
    check_points(x)?;
    let n = x.nrows() as u64;
    let pairs = n * (n - 1) / 2;
    if pairs.saturating_mul(8) <= memory_budget as u64 {
        let mut moments = Moments::new();
        let mut all = Vec::with_capacity(pairs as usize);
        for_each_pair_row(x, |_, row| {
            moments.add_row(row);
            all.extend_from_slice(row);
        });
        return Ok(moments.finish(median_in_place(&mut all)));
    }
    two_pass(x)
}

fn two_pass(x: ArrayView2<f64>) -> Result<ChiStats> {
    // Every chi value is at most twice the largest chi to row 0.
    let d = x.ncols();
    let scale = 1.0 / (2.0 * (d as f64).sqrt());
    let x0 = x.row(0).to_vec();
    let radius = x
        .rows()
        .into_iter()
        .map(|r| squared_distance(&r.to_vec(), &x0).sqrt() * scale)
        .fold(0.0, f64::max);
    let upper = 2.0 * radius;
    let bin = |v: f64| -> usize {
        if upper <= 0.0 {
            0
        } else {
            ((v / upper * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1)
        }
    };

    let mut moments = Moments::new();
    let mut counts = vec![0u64; HISTOGRAM_BINS];
    for_each_pair_row(x, |_, row| {
        moments.add_row(row);
        for &v in row {
            counts[bin(v)] += 1;
        }
    });

    let (r_lo, r_hi) = median_ranks(moments.count);
    let locate = |rank: u64| -> (usize, u64) {
        let mut below = 0u64;
        for (b, &c) in counts.iter().enumerate() {
            if below + c > rank {
                return (b, below);
            }
            below += c;
        }
        unreachable!("rank within count")
    };
    let (b_lo, below_lo) = locate(r_lo);
    let (b_hi, _) = locate(r_hi);

    let mut window = Vec::new();
    for_each_pair_row(x, |_, row| {
        window.extend(row.iter().cloned().filter(|&v| {
            let b = bin(v);
            b >= b_lo && b <= b_hi
        }));
    });
    window.sort_unstable_by(f64::total_cmp);
    let a = window[(r_lo - below_lo) as usize];
    let b = window[(r_hi - below_lo) as usize];
    let median = if r_lo == r_hi { a } else { 0.5 * (a + b) };
    Ok(moments.finish(median))
}

/// Monte Carlo moments of `||X||^2` for `X ~ N(0, sigma^2 I_d)` next to the closed forms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub d: usize,
    pub sigma: f64,
    pub n_samples: usize,
    pub mean_sq: f64,
    pub var_sq: f64,
    pub mean_norm: f64,
    /// `sigma^2 d`
    pub target_mean_sq: f64,
    /// `2 sigma^4 d`
    pub target_var_sq: f64,
    /// `sigma sqrt(d)`
    pub target_norm: f64,
}

impl fmt::Display for NormReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "d={} sigma={} n={}", self.d, self.sigma, self.n_samples)?;
        writeln!(
            f,
            "mean ||X||^2 = {:.6}  (target {:.6})",
            self.mean_sq, self.target_mean_sq
        )?;
        writeln!(
            f,
            "var  ||X||^2 = {:.6}  (target {:.6})",
            self.var_sq, self.target_var_sq
        )?;
        write!(
            f,
            "mean ||X||   = {:.6}  (target {:.6})",
            self.mean_norm, self.target_norm
        )
    }
}

/// Sample mean and unbiased variance, plus the fourth central moment.
fn sample_moments(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in values {
        let c = v - mean;
        m2 += c * c;
        m4 += c * c * c * c;
    }
    (mean, m2 / (n - 1.0), m4 / n)
}

pub fn norm_concentration_probe(
    d: usize,
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<NormReport> {
    if d == 0 {
        return Err(Error::arg("dimension must be at least 1"));
    }
    if n_samples < 2 {
        return Err(Error::arg("need at least two samples"));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Probe);
    let sq: Vec<f64> = (0..n_samples)
        .map(|_| {
            (0..d)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let v = sigma * z;
                    v * v
                })
                .sum()
        })
        .collect();
    let (mean_sq, var_sq, _) = sample_moments(&sq);
    let mean_norm = sq.iter().map(|s| s.sqrt()).sum::<f64>() / n_samples as f64;
    let df = d as f64;
    Ok(NormReport {
        d,
        sigma,
        n_samples,
        mean_sq,
        var_sq,
        mean_norm,
        target_mean_sq: sigma * sigma * df,
        target_var_sq: 2.0 * sigma.powi(4) * df,
        target_norm: sigma * df.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisintegrationConfig {
    pub d: usize,
    /// Dimension of the unit-variance "manifold" block.
    pub d_sharp: usize,
    /// Standard deviation of the remaining `d - d_sharp` coordinates.
    pub eps_manifold: f64,
    pub sigma: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for DisintegrationConfig {
    fn default() -> Self {
        DisintegrationConfig {
            d: 10_000,
            d_sharp: 10,
            eps_manifold: 0.01,
            sigma: 0.5,
            n_samples: 10_000,
            seed: 0,
        }
    }
}

/// Closed-form `E||Y||^2` and `V||Y||^2` for `Y ~ N(0, Sigma_# + sigma^2 I)`.
pub fn disintegration_moments(d: usize, d_sharp: usize, eps: f64, sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let on = 1.0 + s2;
    let off = eps * eps + s2;
    let (ds, rest) = (d_sharp as f64, (d - d_sharp) as f64);
    (
        ds * on + rest * off,
        2.0 * ds * on * on + 2.0 * rest * off * off,
    )
}

/// How much larger `d / d_sharp - 1` must be than `max(Delta, Delta^2)` to
/// call the manifold terms negligible.
pub const REGIME_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DisintegrationReport {
    pub config: DisintegrationConfig,
    pub mean_sq: f64,
    pub var_sq: f64,
    pub analytic_mean_sq: f64,
    pub analytic_var_sq: f64,
    pub se_mean: f64,
    pub se_var: f64,
    /// `(1 + sigma^2) / (eps^2 + sigma^2)`
    pub delta: f64,
    /// `d / d_sharp - 1`, infinite when `d_sharp = 0`.
    pub dimension_ratio: f64,
    pub high_dim_regime: bool,
    /// `sqrt((eps^2 + sigma^2)(d - d_sharp))`, where the noisy norm concentrates.
    pub shell_radius: f64,
    pub mean_norm: f64,
}

impl DisintegrationReport {
    pub fn mean_z(&self) -> f64 {
        (self.mean_sq - self.analytic_mean_sq) / self.se_mean
    }

    pub fn var_z(&self) -> f64 {
        (self.var_sq - self.analytic_var_sq) / self.se_var
    }
}

impl fmt::Display for DisintegrationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        writeln!(
            f,
            "d={} d_sharp={} eps={} sigma={} n={}",
            c.d, c.d_sharp, c.eps_manifold, c.sigma, c.n_samples
        )?;
        writeln!(
            f,
            "E||Y||^2: empirical {:.4} analytic {:.4} (z = {:+.2})",
            self.mean_sq,
            self.analytic_mean_sq,
            self.mean_z()
        )?;
        writeln!(
            f,
            "V||Y||^2: empirical {:.4} analytic {:.4} (z = {:+.2})",
            self.var_sq,
            self.analytic_var_sq,
            self.var_z()
        )?;
        writeln!(
            f,
            "||Y||: mean {:.4}, shell radius {:.4}",
            self.mean_norm, self.shell_radius
        )?;
        write!(
            f,
            "delta={:.4} d/d_sharp-1={:.4} high-dimensional regime: {}",
            self.delta, self.dimension_ratio, self.high_dim_regime
        )
    }
}

/// Draws clean `X ~ N(0, Sigma_#)`, adds `N(0, sigma^2 I)` noise and compares
/// the moments of `||Y||^2` with the closed forms.
pub fn disintegration_experiment(config: &DisintegrationConfig) -> Result<DisintegrationReport> {
    let c = config;
    if c.d_sharp > c.d {
        return Err(Error::arg(format!(
            "manifold dimension {} exceeds ambient dimension {}",
            c.d_sharp, c.d
        )));
    }
    if c.d == 0 || c.n_samples < 2 {
        return Err(Error::arg("need d >= 1 and at least two samples"));
    }
    if !(c.eps_manifold >= 0.0 && c.sigma >= 0.0) {
        return Err(Error::arg("eps_manifold and sigma must be nonnegative"));
    }
    let mut rng = stream_rng(c.seed, Stream::Probe);
    let sq: Vec<f64> = (0..c.n_samples)
        .map(|_| {
            (0..c.d)
                .map(|k| {
                    let clean_sd = if k < c.d_sharp { 1.0 } else { c.eps_manifold };
                    let x: f64 = clean_sd * rng.sample::<f64, _>(StandardNormal);
                    let y = x + c.sigma * rng.sample::<f64, _>(StandardNormal);
                    y * y
                })
                .sum()
        })
        .collect();
    let (mean_sq, var_sq, m4) = sample_moments(&sq);
    let n = c.n_samples as f64;
    let (analytic_mean_sq, analytic_var_sq) =
        disintegration_moments(c.d, c.d_sharp, c.eps_manifold, c.sigma);
    let s2 = c.sigma * c.sigma;
    let delta = (1.0 + s2) / (c.eps_manifold * c.eps_manifold + s2);
    let dimension_ratio = if c.d_sharp == 0 {
        f64::INFINITY
    } else {
        c.d as f64 / c.d_sharp as f64 - 1.0
    };
    Ok(DisintegrationReport {
        config: c.clone(),
        mean_sq,
        var_sq,
        analytic_mean_sq,
        analytic_var_sq,
        se_mean: (var_sq / n).sqrt(),
        se_var: ((m4 - var_sq * var_sq).max(0.0) / n).sqrt(),
        delta,
        dimension_ratio,
        high_dim_regime: dimension_ratio >= REGIME_FACTOR * delta.max(delta * delta),
        shell_radius: ((c.eps_manifold * c.eps_manifold + s2) * (c.d - c.d_sharp) as f64).sqrt(),
        mean_norm: sq.iter().map(|s| s.sqrt()).sum::<f64>() / n,
    })
}
