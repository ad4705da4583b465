//! Scalar energies with exact input gradients and the parameter gradient of the
//! denoising loss, which differentiates through an input gradient.
//!
//! The [`Energy`] trait covers anything with a value and an input gradient: the
//! MLP, the closed-form test energies and the kernel density oracle.
//! [`Trainable`] adds a flat parameter vector and the second-order pass
//! needed to fit it against `mean_i ||x_i - y_i + sigma^2 grad_y E(y_i)||^2`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{ensure_finite, Error, Result};

/// Central-difference step used when none is given.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Segment {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Flat parameter storage with a named segment layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<Segment>,
}

impl ParamVector {
    pub fn zeros(layout: Vec<Segment>) -> Self {
        let len = layout.iter().map(Segment::size).sum();
        ParamVector {
            values: vec![0.0; len],
            layout,
        }
    }

    pub fn from_values(layout: Vec<Segment>, values: Vec<f64>) -> Result<Self> {
        let len: usize = layout.iter().map(Segment::size).sum();
        if len != values.len() {
            return Err(Error::Shape(format!(
                "layout needs {len} values, got {}",
                values.len()
            )));
        }
        ensure_finite(&values, "parameter vector")?;
        Ok(ParamVector { values, layout })
    }

    /// Same layout, new values. Panics if the length differs.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len(), "parameter length");
        ParamVector {
            values,
            layout: self.layout.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values of the named segment.
    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        let mut offset = 0;
        for seg in &self.layout {
            let size = seg.size();
            if seg.name == name {
                return Some(&self.values[offset..offset + size]);
            }
            offset += size;
        }
        None
    }
}

pub trait Energy {
    fn dim(&self) -> usize;

    /// Unchecked energy at `y`; callers go through [`eval_scalar`].
    fn energy(&self, y: &[f64]) -> f64;

    /// Unchecked input gradient at `y`; callers go through [`input_gradient`].
    fn gradient(&self, y: &[f64]) -> Vec<f64>;

    fn energy_and_gradient(&self, y: &[f64]) -> (f64, Vec<f64>) {
        (self.energy(y), self.gradient(y))
    }

    /// Row-wise energies.
    fn energy_rows(&self, ys: ArrayView2<f64>) -> Array1<f64> {
        ys.rows()
            .into_iter()
            .map(|row| self.energy(&row.to_vec()))
            .collect()
    }

    /// Row-wise energies and input gradients.
    fn energy_and_gradient_rows(&self, ys: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
        let mut energies = Array1::zeros(ys.nrows());
        let mut grads = Array2::zeros(ys.raw_dim());
        for (i, row) in ys.rows().into_iter().enumerate() {
            let (e, g) = self.energy_and_gradient(&row.to_vec());
            energies[i] = e;
            grads.row_mut(i).assign(&Array1::from(g));
        }
        (energies, grads)
    }

    fn gradient_rows(&self, ys: ArrayView2<f64>) -> Array2<f64> {
        self.energy_and_gradient_rows(ys).1
    }

    /// The noise level this energy belongs to, if it carries one.
    fn sigma(&self) -> Option<f64> {
        None
    }
}

pub trait Trainable: Energy {
    fn params(&self) -> &ParamVector;
    fn params_mut(&mut self) -> &mut ParamVector;

    /// Loss `mean_i ||x_i - y_i + sigma^2 grad E(y_i)||^2` and its parameter
    /// gradient. Inputs are assumed validated.
    fn loss_and_param_gradient(
        &self,
        x: ArrayView2<f64>,
        y: ArrayView2<f64>,
        sigma: f64,
    ) -> (f64, Vec<f64>);
}

fn check_dim(energy: &(impl Energy + ?Sized), y: &[f64]) -> Result<()> {
    if y.len() != energy.dim() {
        return Err(Error::arg(format!(
            "input has length {}, model expects {}",
            y.len(),
            energy.dim()
        )));
    }
    ensure_finite(y, "input vector")
}

pub fn eval_scalar(energy: &(impl Energy + ?Sized), y: &[f64]) -> Result<f64> {
    check_dim(energy, y)?;
    let e = energy.energy(y);
    if !e.is_finite() {
        return Err(Error::numeric("energy evaluation"));
    }
    Ok(e)
}

pub fn input_gradient(energy: &(impl Energy + ?Sized), y: &[f64]) -> Result<Vec<f64>> {
    check_dim(energy, y)?;
    let g = energy.gradient(y);
    ensure_finite(&g, "input gradient")?;
    Ok(g)
}

/// Energy and gradient in one pass.
pub fn eval_with_gradient(energy: &(impl Energy + ?Sized), y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(energy, y)?;
    let (e, g) = energy.energy_and_gradient(y);
    if !e.is_finite() {
        return Err(Error::numeric("energy evaluation"));
    }
    ensure_finite(&g, "input gradient")?;
    Ok((e, g))
}

/// The probability flow field, `-grad_y E`.
pub fn score(energy: &(impl Energy + ?Sized), y: &[f64]) -> Result<Vec<f64>> {
    let mut g = input_gradient(energy, y)?;
    g.iter_mut().for_each(|v| *v = -*v);
    Ok(g)
}

fn check_batch(
    energy: &(impl Energy + ?Sized),
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sigma: f64,
) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::arg("empty batch"));
    }
    if x.dim() != y.dim() {
        return Err(Error::arg(format!(
            "clean batch {:?} and noisy batch {:?} differ in shape",
            x.dim(),
            y.dim()
        )));
    }
    if x.ncols() != energy.dim() {
        return Err(Error::arg(format!(
            "batch rows have length {}, model expects {}",
            x.ncols(),
            energy.dim()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

/// Denoising loss on fixed clean/noisy pairs.
pub fn pair_loss(
    energy: &(impl Energy + ?Sized),
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sigma: f64,
) -> Result<f64> {
    check_batch(energy, x, y, sigma)?;
    let grads = energy.gradient_rows(y);
    let s2 = sigma * sigma;
    let total: f64 = x
        .rows()
        .into_iter()
        .zip(y.rows())
        .zip(grads.rows())
        .map(|((xr, yr), gr)| {
            xr.iter()
                .zip(yr.iter())
                .zip(gr.iter())
                .map(|((a, b), g)| {
                    let r = a - b + s2 * g;
                    r * r
                })
                .sum::<f64>()
        })
        .sum();
    let loss = total / x.nrows() as f64;
    if !loss.is_finite() {
        return Err(Error::numeric("denoising loss"));
    }
    Ok(loss)
}

/// Loss value and its exact gradient with respect to the parameters.
pub fn loss_and_param_gradient<M: Trainable + ?Sized>(
    model: &M,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sigma: f64,
) -> Result<(f64, ParamVector)> {
    check_batch(model, x, y, sigma)?;
    let (loss, grad) = model.loss_and_param_gradient(x, y, sigma);
    if !loss.is_finite() {
        return Err(Error::numeric("denoising loss"));
    }
    ensure_finite(&grad, "parameter gradient")?;
    Ok((loss, model.params().with_values(grad)))
}

pub fn loss_param_gradient<M: Trainable + ?Sized>(
    model: &M,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sigma: f64,
) -> Result<ParamVector> {
    loss_and_param_gradient(model, x, y, sigma).map(|(_, g)| g)
}

/// Analytic derivative next to its central-difference estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Largest absolute discrepancy divided by the largest entry magnitude.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

impl GradReport {
    pub fn new(analytic: Vec<f64>, numeric: Vec<f64>) -> Self {
        assert_eq!(analytic.len(), numeric.len());
        let max_abs_err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let max_rel_err = if scale > 0.0 {
            max_abs_err / scale
        } else {
            0.0
        };
        GradReport {
            analytic,
            numeric,
            max_rel_err,
            max_abs_err,
        }
    }
}

impl std::fmt::Display for GradReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} entries, max abs err {:.3e}, max rel err {:.3e}",
            self.analytic.len(),
            self.max_abs_err,
            self.max_rel_err
        )
    }
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "finite-difference step must be positive, got {step}"
        )))
    }
}

/// Input gradient against central differences of the energy.
pub fn grad_check_input(
    energy: &(impl Energy + ?Sized),
    y: &[f64],
    step: f64,
) -> Result<GradReport> {
    check_step(step)?;
    let analytic = input_gradient(energy, y)?;
    let mut probe = y.to_vec();
    let mut numeric = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        probe[k] = y[k] + step;
        let up = eval_scalar(energy, &probe)?;
        probe[k] = y[k] - step;
        let down = eval_scalar(energy, &probe)?;
        probe[k] = y[k];
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(GradReport::new(analytic, numeric))
}

/// Parameter gradient of the pair loss against central differences over every parameter.
pub fn grad_check_loss<M: Trainable + Clone>(
    model: &M,
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    sigma: f64,
    step: f64,
) -> Result<GradReport> {
    check_step(step)?;
    let analytic = loss_param_gradient(model, x, y, sigma)?.into_values();
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let original = model.params().values()[k];
        probe.params_mut().values_mut()[k] = original + step;
        let up = pair_loss(&probe, x, y, sigma)?;
        probe.params_mut().values_mut()[k] = original - step;
        let down = pair_loss(&probe, x, y, sigma)?;
        probe.params_mut().values_mut()[k] = original;
        numeric.push((up - down) / (2.0 * step));
    }
    Ok(GradReport::new(analytic, numeric))
}
