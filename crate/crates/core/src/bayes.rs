//! Least-squares jumps from noisy to clean space, and the exact Gaussian
//! kernel density used as an oracle.

use ndarray::{s, Array2, ArrayView2};

use crate::diff::{input_gradient, Energy};
use crate::error::{Error, Result};

/// Gaussian kernel density: an equal-weight mixture of `N(X_i, sigma^2 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    centers: Array2<f64>,
    sigma: f64,
}

impl KdeModel {
    pub fn new(centers: Array2<f64>, sigma: f64) -> Result<Self> {
        if centers.nrows() == 0 || centers.ncols() == 0 {
            return Err(Error::arg("kernel density needs at least one center"));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("kernel centers"));
        }
        Ok(KdeModel { centers, sigma })
    }

    pub fn centers(&self) -> ArrayView2<'_, f64> {
        self.centers.view()
    }

    /// Mixture weights at `y` (a softmax over `-||y - X_i||^2 / (2 sigma^2)`)
    /// and the log-sum-exp of those logits.
    fn responsibilities(&self, y: &[f64]) -> (Vec<f64>, f64) {
        let inv = 1.0 / (2.0 * self.sigma * self.sigma);
        let logits: Vec<f64> = self
            .centers
            .rows()
            .into_iter()
            .map(|c| -inv * c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        (weights, max + total.ln())
    }

    fn normalizer(&self) -> f64 {
        let n = self.centers.nrows() as f64;
        let d = self.centers.ncols() as f64;
        n.ln() + 0.5 * d * (2.0 * std::f64::consts::PI * self.sigma * self.sigma).ln()
    }
}

impl Energy for KdeModel {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }

    fn energy(&self, y: &[f64]) -> f64 {
        let (_, lse) = self.responsibilities(y);
        self.normalizer() - lse
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.energy_and_gradient(y).1
    }

    fn energy_and_gradient(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let (weights, lse) = self.responsibilities(y);
        let s2 = self.sigma * self.sigma;
        let mut grad = y.to_vec();
        for (w, c) in weights.iter().zip(self.centers.rows()) {
            for (g, x) in grad.iter_mut().zip(c.iter()) {
                *g -= w * x;
            }
        }
        grad.iter_mut().for_each(|g| *g /= s2);
        (self.normalizer() - lse, grad)
    }

    fn sigma(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

/// Exact `-log` of the kernel density at `y`.
pub fn kde_energy(kde: &KdeModel, y: &[f64]) -> Result<f64> {
    crate::diff::eval_scalar(kde, y)
}

/// Exact score of the kernel density, a responsibility-weighted average of `(X_i - y) / sigma^2`.
pub fn kde_score(kde: &KdeModel, y: &[f64]) -> Result<Vec<f64>> {
    crate::diff::score(kde, y)
}

fn resolve_sigma(source: &(impl Energy + ?Sized), sigma: Option<f64>) -> Result<f64> {
    let sigma = sigma
        .or_else(|| source.sigma())
        .ok_or_else(|| Error::arg("no sigma given and the energy does not carry one"))?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    Ok(sigma)
}

/// Robbins jump `y - sigma^2 grad E(y)`. `sigma` defaults to the one the energy carries.
pub fn nebls_jump(
    source: &(impl Energy + ?Sized),
    y: &[f64],
    sigma: Option<f64>,
) -> Result<Vec<f64>> {
    let sigma = resolve_sigma(source, sigma)?;
    let s2 = sigma * sigma;
    let g = input_gradient(source, y)?;
    Ok(y.iter().zip(&g).map(|(v, g)| v - s2 * g).collect())
}

const DENOISE_CHUNK: usize = 256;

/// Row-wise jump over a matrix of noisy samples.
pub fn denoise_batch(
    source: &(impl Energy + Sync + ?Sized),
    ys: ArrayView2<f64>,
    sigma: Option<f64>,
) -> Result<Array2<f64>> {
    let sigma = resolve_sigma(source, sigma)?;
    if ys.ncols() != source.dim() {
        return Err(Error::arg(format!(
            "rows have length {}, model expects {}",
            ys.ncols(),
            source.dim()
        )));
    }
    let s2 = sigma * sigma;
    let chunks = ys.nrows().div_ceil(DENOISE_CHUNK);
    let parts = crate::map_indexed(chunks, |c| {
        let lo = c * DENOISE_CHUNK;
        let hi = (lo + DENOISE_CHUNK).min(ys.nrows());
        let block = ys.slice(s![lo..hi, ..]);
        let mut out = block.to_owned();
        out.scaled_add(-s2, &source.gradient_rows(block));
        out
    });
    let mut out = Array2::zeros(ys.raw_dim());
    for (c, part) in parts.into_iter().enumerate() {
        let lo = c * DENOISE_CHUNK;
        out.slice_mut(s![lo..lo + part.nrows(), ..]).assign(&part);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("denoised batch"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{grad_check_input, DEFAULT_FD_STEP};
    use crate::model::{Quadratic, ScaledQuadratic};
    use crate::{stream_rng, Stream};
    use ndarray::array;
    use rand::Rng;

    #[test]
    fn quadratic_jump_lands_on_center() {
        let q = Quadratic::new(vec![1.5, -0.25], 0.5);
        for y in [[0.0, 0.0], [3.0, 7.0], [-2.5, 0.125]] {
            assert_eq!(nebls_jump(&q, &y, None).unwrap(), vec![1.5, -0.25]);
        }
    }

    #[test]
    fn quadratic_jump_is_idempotent() {
        let q = Quadratic::new(vec![0.375, 0.875], 0.5);
        let once = nebls_jump(&q, &[2.0, -1.0], None).unwrap();
        let twice = nebls_jump(&q, &once, None).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn zero_score_jump_is_identity() {
        let zero = ScaledQuadratic::new(3, 0.0);
        let y = [0.2, 0.4, -1.0];
        assert_eq!(nebls_jump(&zero, &y, Some(0.3)).unwrap(), y.to_vec());
        let ys = array![[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]];
        assert_eq!(denoise_batch(&zero, ys.view(), Some(0.3)).unwrap(), ys);
    }

    #[test]
    fn gaussian_ideal_jump_shrinks() {
        // N(0, I) data smoothed by sigma: grad log f(y) = -y / (1 + sigma^2)
        let sigma: f64 = 0.5;
        let ideal = ScaledQuadratic::new(2, 1.0 / (1.0 + sigma * sigma));
        let y = [1.25, -2.5];
        let x = nebls_jump(&ideal, &y, Some(sigma)).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn jump_without_sigma_is_argument_error() {
        let zero = ScaledQuadratic::new(2, 0.0);
        assert!(nebls_jump(&zero, &[0.0, 0.0], None)
            .unwrap_err()
            .is_argument());
        assert!(nebls_jump(&zero, &[0.0, 0.0], Some(-1.0))
            .unwrap_err()
            .is_argument());
    }

    #[test]
    fn single_center_score_is_closed_form() {
        let kde = KdeModel::new(array![[0.4, -0.6]], 0.3).unwrap();
        let y = [1.0, 2.0];
        let s = kde_score(&kde, &y).unwrap();
        assert!((s[0] - (0.4 - 1.0) / 0.09).abs() < 1e-12);
        assert!((s[1] - (-0.6 - 2.0) / 0.09).abs() < 1e-12);
        let x = nebls_jump(&kde, &[5.0, -3.0], None).unwrap();
        assert!((x[0] - 0.4).abs() < 1e-14 && (x[1] + 0.6).abs() < 1e-14);
    }

    #[test]
    fn symmetric_centers_cancel_at_midpoint() {
        let kde = KdeModel::new(array![[-1.0, 0.5], [1.0, 0.5]], 0.4).unwrap();
        let s = kde_score(&kde, &[0.0, 2.0]).unwrap();
        assert!(s[0].abs() < 1e-15);
    }

    #[test]
    fn score_matches_finite_differences_of_energy() {
        let mut rng = stream_rng(42, Stream::Data);
        let centers = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>());
        let kde = KdeModel::new(centers, 0.3).unwrap();
        for _ in 0..10 {
            let y = [
                rng.random::<f64>() * 2.0 - 0.5,
                rng.random::<f64>() * 2.0 - 0.5,
            ];
            let r = grad_check_input(&kde, &y, DEFAULT_FD_STEP).unwrap();
            assert!(r.max_rel_err < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn far_points_do_not_underflow() {
        let kde = KdeModel::new(array![[0.0], [1.0]], 1e-3).unwrap();
        let e = kde_energy(&kde, &[500.0]).unwrap();
        assert!(e.is_finite() && e > 1e10);
        let s = kde_score(&kde, &[500.0]).unwrap();
        assert!((s[0] - (1.0 - 500.0) / 1e-6).abs() < 1e-3);
    }

    #[test]
    fn kde_rejects_bad_input() {
        assert!(KdeModel::new(Array2::zeros((0, 2)), 1.0).is_err());
        assert!(KdeModel::new(array![[0.0, 1.0]], 0.0).is_err());
    }
}
