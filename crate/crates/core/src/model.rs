//! Swish MLP energy `E(y, theta)` and its exact first and second-order passes.
//!
//! Parameters are stored flat, layer by layer: `w1 [h1, d]`, `b1 [h1]`, ...,
//! `w_out [1, hL]`, `b_out [1]`. Batched passes run the dense products through a
//! GEMM; single points take a plain loop path.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diff::{Energy, ParamVector, Segment, Trainable};
use crate::error::{Error, Result};

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x * logistic(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub fn swish_prime(x: f64) -> f64 {
    let s = logistic(x);
    s + x * s * (1.0 - s)
}

#[inline]
pub fn swish_second(x: f64) -> f64 {
    let s = logistic(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
}

impl ArchSpec {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>) -> Result<Self> {
        let arch = ArchSpec {
            input_dim,
            hidden_sizes,
        };
        arch.validate()?;
        Ok(arch)
    }

    /// Parses a comma-separated hidden layer list such as `"64,64"`.
    pub fn parse(input_dim: usize, hidden: &str) -> Result<Self> {
        let sizes = hidden
            .split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::arg(format!("bad hidden size {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ArchSpec::new(input_dim, sizes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::arg("input dimension must be positive"));
        }
        if self.hidden_sizes.is_empty() {
            return Err(Error::arg("at least one hidden layer is required"));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::arg("hidden sizes must be positive"));
        }
        Ok(())
    }

    pub fn nonlinearity(&self) -> &'static str {
        "swish"
    }

    pub fn layout(&self) -> Vec<Segment> {
        let mut layout = Vec::with_capacity(2 * self.hidden_sizes.len() + 2);
        let mut fan_in = self.input_dim;
        for (l, &h) in self.hidden_sizes.iter().enumerate() {
            layout.push(Segment::new(format!("w{}", l + 1), &[h, fan_in]));
            layout.push(Segment::new(format!("b{}", l + 1), &[h]));
            fan_in = h;
        }
        layout.push(Segment::new("w_out", &[1, fan_in]));
        layout.push(Segment::new("b_out", &[1]));
        layout
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(Segment::size).sum()
    }

    pub fn hidden_string(&self) -> String {
        self.hidden_sizes
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// The learned energy: architecture, parameters and the noise level it was fit at.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    arch: ArchSpec,
    params: ParamVector,
    sigma_train: Option<f64>,
}

struct Forward {
    /// Pre-activations per hidden layer.
    pre: Vec<Array2<f64>>,
    /// Activations per hidden layer (input not included).
    post: Vec<Array2<f64>>,
}

impl EnergyModel {
    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn init(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = ParamVector::zeros(layout.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        let values = params.values_mut();
        for seg in &layout {
            let size = seg.size();
            if seg.shape.len() == 2 {
                let (fan_out, fan_in) = (seg.shape[0], seg.shape[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for v in &mut values[offset..offset + size] {
                    *v = rng.random_range(-bound..bound);
                }
            }
            offset += size;
        }
        Ok(EnergyModel {
            arch,
            params,
            sigma_train: None,
        })
    }

    pub fn from_params(arch: ArchSpec, values: Vec<f64>, sigma_train: Option<f64>) -> Result<Self> {
        arch.validate()?;
        let params = ParamVector::from_values(arch.layout(), values)?;
        if let Some(s) = sigma_train {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg(format!("sigma_train must be positive, got {s}")));
            }
        }
        Ok(EnergyModel {
            arch,
            params,
            sigma_train,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn sigma_train(&self) -> Option<f64> {
        self.sigma_train
    }

    pub fn set_sigma_train(&mut self, sigma: f64) {
        self.sigma_train = Some(sigma);
    }

    fn hidden(&self) -> Vec<(ArrayView2<'_, f64>, ArrayView1<'_, f64>)> {
        let values = self.params.values();
        let mut out = Vec::with_capacity(self.arch.hidden_sizes.len());
        let mut offset = 0;
        let mut fan_in = self.arch.input_dim;
        for &h in &self.arch.hidden_sizes {
            let w = ArrayView2::from_shape((h, fan_in), &values[offset..offset + h * fan_in])
                .expect("layout");
            offset += h * fan_in;
            let b = ArrayView1::from(&values[offset..offset + h]);
            offset += h;
            out.push((w, b));
            fan_in = h;
        }
        out
    }

    fn readout(&self) -> (ArrayView1<'_, f64>, f64) {
        let values = self.params.values();
        let last = *self.arch.hidden_sizes.last().expect("validated");
        let n = values.len();
        (
            ArrayView1::from(&values[n - 1 - last..n - 1]),
            values[n - 1],
        )
    }

    fn forward(&self, ys: ArrayView2<f64>) -> Forward {
        let layers = self.hidden();
        let mut pre = Vec::with_capacity(layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(layers.len());
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = match l {
                0 => ys.dot(&w.t()),
                _ => post[l - 1].dot(&w.t()),
            };
            z += b;
            post.push(z.mapv(swish));
            pre.push(z);
        }
        Forward { pre, post }
    }

    fn energies(&self, fwd: &Forward) -> Array1<f64> {
        let (w_out, b_out) = self.readout();
        fwd.post.last().expect("hidden").dot(&w_out) + b_out
    }

    /// Backward pass for the input gradient. Returns the gradient and, per
    /// layer, `swish'(z)` and the pre-activation adjoint `delta`.
    fn input_backward(&self, fwd: &Forward) -> (Array2<f64>, Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let layers = self.hidden();
        let (w_out, _) = self.readout();
        let batch = fwd.pre[0].nrows();
        let depth = layers.len();
        let mut slopes = Vec::with_capacity(depth);
        let mut deltas = vec![Array2::zeros((0, 0)); depth];
        for z in &fwd.pre {
            slopes.push(z.mapv(swish_prime));
        }
        let mut adj = w_out
            .broadcast((batch, w_out.len()))
            .expect("broadcast")
            .to_owned();
        for l in (0..depth).rev() {
            let delta = &adj * &slopes[l];
            adj = delta.dot(&layers[l].0);
            deltas[l] = delta;
        }
        (adj, slopes, deltas)
    }

    /// Energy and input gradient of one point without the batch machinery;
    /// the sampler calls this once per Langevin step.
    fn single_row(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let values = self.params.values();
        let depth = self.arch.hidden_sizes.len();
        let mut slopes: Vec<Vec<f64>> = Vec::with_capacity(depth);
        let mut act = y.to_vec();
        let mut offset = 0;
        for &h in &self.arch.hidden_sizes {
            let fan_in = act.len();
            let w = &values[offset..offset + h * fan_in];
            let b = &values[offset + h * fan_in..offset + h * fan_in + h];
            offset += h * fan_in + h;
            let mut next = Vec::with_capacity(h);
            let mut slope = Vec::with_capacity(h);
            for (row, bias) in w.chunks_exact(fan_in).zip(b) {
                let z = bias + row.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
                let s = logistic(z);
                next.push(z * s);
                slope.push(s + z * s * (1.0 - s));
            }
            slopes.push(slope);
            act = next;
        }
        let last = act.len();
        let w_out = &values[offset..offset + last];
        let energy =
            values[offset + last] + w_out.iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();

        let mut adj = w_out.to_vec();
        for l in (0..depth).rev() {
            let h = self.arch.hidden_sizes[l];
            let fan_in = if l == 0 {
                y.len()
            } else {
                self.arch.hidden_sizes[l - 1]
            };
            offset -= h * fan_in + h;
            let w = &values[offset..offset + h * fan_in];
            let mut below = vec![0.0; fan_in];
            for ((row, a), s) in w.chunks_exact(fan_in).zip(&adj).zip(&slopes[l]) {
                let delta = a * s;
                for (g, wv) in below.iter_mut().zip(row) {
                    *g += delta * wv;
                }
            }
            adj = below;
        }
        (energy, adj)
    }

    fn second_order(&self, x: ArrayView2<f64>, y: ArrayView2<f64>, sigma: f64) -> (f64, Vec<f64>) {
        let layers = self.hidden();
        let (w_out, _) = self.readout();
        let depth = layers.len();
        let batch = y.nrows();
        let s2 = sigma * sigma;

        let fwd = self.forward(y);
        let (grad_y, slopes, deltas) = self.input_backward(&fwd);

        let mut resid = &x - &y;
        resid.scaled_add(s2, &grad_y);
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / batch as f64;
        // dL/d(grad_y), the direction along which the input gradient is pushed forward
        let dir = resid * (2.0 * s2 / batch as f64);

        // Tangent of the forward pass along `dir`.
        let mut tan_pre = Vec::with_capacity(depth);
        let mut tan_post: Vec<Array2<f64>> = Vec::with_capacity(depth);
        for l in 0..depth {
            let zt = match l {
                0 => dir.dot(&layers[0].0.t()),
                _ => tan_post[l - 1].dot(&layers[l].0.t()),
            };
            tan_post.push(&zt * &slopes[l]);
            tan_pre.push(zt);
        }

        let mut grad = vec![0.0; self.params.len()];
        let offsets = segment_offsets(&self.arch);
        let n = grad.len();
        let last = *self.arch.hidden_sizes.last().expect("validated");
        let w_out_grad = tan_post[depth - 1].sum_axis(Axis(0));
        grad[n - 1 - last..n - 1].copy_from_slice(w_out_grad.as_slice().expect("contiguous"));

        // Reverse through primal and tangent together. The tangent-activation
        // adjoint follows the same recursion as the input-gradient backward
        // pass, so `deltas` already holds the tangent pre-activation adjoints.
        let mut adj_post: Option<Array2<f64>> = None;
        let mut adj_tan_post = w_out
            .broadcast((batch, last))
            .expect("broadcast")
            .to_owned();
        for l in (0..depth).rev() {
            let z = &fwd.pre[l];
            let adj_tan_pre = &deltas[l];
            let mut adj_pre = Array2::zeros(z.raw_dim());
            Zip::from(&mut adj_pre)
                .and(z)
                .and(&adj_tan_post)
                .and(&tan_pre[l])
                .for_each(|a, &z, &atp, &zt| *a = atp * swish_second(z) * zt);
            if let Some(ap) = &adj_post {
                adj_pre += &(ap * &slopes[l]);
            }

            let (w_off, b_off) = offsets[l];
            let (rows, cols) = layers[l].0.dim();
            let mut gw = match l {
                0 => adj_pre.t().dot(&y),
                _ => adj_pre.t().dot(&fwd.post[l - 1]),
            };
            let tan_in = match l {
                0 => dir.view(),
                _ => tan_post[l - 1].view(),
            };
            gw += &adj_tan_pre.t().dot(&tan_in);
            let gw_slice = gw.as_standard_layout();
            grad[w_off..w_off + rows * cols]
                .copy_from_slice(gw_slice.as_slice().expect("contiguous"));
            let gb = adj_pre.sum_axis(Axis(0));
            grad[b_off..b_off + rows].copy_from_slice(gb.as_slice().expect("contiguous"));

            if l > 0 {
                adj_post = Some(adj_pre.dot(&layers[l].0));
                adj_tan_post = adj_tan_pre.dot(&layers[l].0);
            }
        }
        (loss, grad)
    }
}

// (weight offset, bias offset) for each hidden layer.
fn segment_offsets(arch: &ArchSpec) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(arch.hidden_sizes.len());
    let mut offset = 0;
    let mut fan_in = arch.input_dim;
    for &h in &arch.hidden_sizes {
        out.push((offset, offset + h * fan_in));
        offset += h * fan_in + h;
        fan_in = h;
    }
    out
}

fn row_view(y: &[f64]) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((1, y.len()), y).expect("row")
}

impl Energy for EnergyModel {
    fn dim(&self) -> usize {
        self.arch.input_dim
    }

    fn energy(&self, y: &[f64]) -> f64 {
        self.energy_rows(row_view(y))[0]
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        self.single_row(y).1
    }

    fn energy_and_gradient(&self, y: &[f64]) -> (f64, Vec<f64>) {
        self.single_row(y)
    }

    fn energy_rows(&self, ys: ArrayView2<f64>) -> Array1<f64> {
        let fwd = self.forward(ys);
        self.energies(&fwd)
    }

    fn energy_and_gradient_rows(&self, ys: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let fwd = self.forward(ys);
        let e = self.energies(&fwd);
        let (g, _, _) = self.input_backward(&fwd);
        (e, g)
    }

    fn gradient_rows(&self, ys: ArrayView2<f64>) -> Array2<f64> {
        let fwd = self.forward(ys);
        self.input_backward(&fwd).0
    }

    fn sigma(&self) -> Option<f64> {
        self.sigma_train
    }
}

impl Trainable for EnergyModel {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn loss_and_param_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        sigma: f64,
    ) -> (f64, Vec<f64>) {
        self.second_order(x, y, sigma)
    }
}

/// `||y - c||^2 / (2 s^2)`: the exact single-point solution, Gaussian around `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    center: Vec<f64>,
    scale: f64,
}

impl Quadratic {
    pub fn new(center: Vec<f64>, scale: f64) -> Self {
        assert!(scale > 0.0, "scale must be positive");
        Quadratic { center, scale }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

impl Energy for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn energy(&self, y: &[f64]) -> f64 {
        let sq: f64 = y
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        sq / (2.0 * self.scale * self.scale)
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let s2 = self.scale * self.scale;
        y.iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) / s2)
            .collect()
    }

    fn sigma(&self) -> Option<f64> {
        Some(self.scale)
    }
}

/// One-parameter energy `a ||y||^2 / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledQuadratic {
    dim: usize,
    params: ParamVector,
}

impl ScaledQuadratic {
    pub fn new(dim: usize, a: f64) -> Self {
        let params = ParamVector::from_values(vec![Segment::new("a", &[1])], vec![a])
            .expect("single finite parameter");
        ScaledQuadratic { dim, params }
    }

    pub fn a(&self) -> f64 {
        self.params.values()[0]
    }
}

impl Energy for ScaledQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, y: &[f64]) -> f64 {
        0.5 * self.a() * y.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let a = self.a();
        y.iter().map(|v| a * v).collect()
    }
}

impl Trainable for ScaledQuadratic {
    fn params(&self) -> &ParamVector {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn loss_and_param_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        sigma: f64,
    ) -> (f64, Vec<f64>) {
        let s2 = sigma * sigma;
        let a = self.a();
        let n = x.nrows() as f64;
        let mut loss = 0.0;
        let mut da = 0.0;
        for (xr, yr) in x.rows().into_iter().zip(y.rows()) {
            for (&xv, &yv) in xr.iter().zip(yr.iter()) {
                let r = xv - yv + s2 * a * yv;
                loss += r * r;
                da += 2.0 * r * s2 * yv;
            }
        }
        (loss / n, vec![da / n])
    }
}
