//! Browser bindings: train a small energy on a planar mixture, compare its
//! field with the exact kernel density, and run walk-jump chains on either.

pub mod playground;

use wasm_bindgen::prelude::*;

use playground::{Playground, Source, Window};

fn js(e: neb_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn source(name: &str) -> Result<Source, JsError> {
    name.parse().map_err(js)
}

#[wasm_bindgen]
pub struct Demo {
    inner: Playground,
}

#[wasm_bindgen]
impl Demo {
    /// `layout` is one of `pair`, `ring`, `grid`; `hidden` like `"32,32"`.
    #[wasm_bindgen(constructor)]
    pub fn new(layout: &str, sigma: f64, hidden: &str, seed: u32) -> Result<Demo, JsError> {
        let arch = neb_core::ArchSpec::parse(2, hidden).map_err(js)?;
        let inner = Playground::new(layout, sigma, &arch.hidden_sizes, seed as u64).map_err(js)?;
        Ok(Demo { inner })
    }

    pub fn points(&self) -> Vec<f64> {
        self.inner.points()
    }

    pub fn epochs(&self) -> usize {
        self.inner.epochs()
    }

    pub fn sigma(&self) -> f64 {
        self.inner.sigma()
    }

    pub fn train(&mut self, epochs: usize) -> Result<f64, JsError> {
        self.inner.train(epochs).map_err(js)
    }

    /// Row-major energies over `[-half, half]^2`, minimum shifted to zero.
    pub fn field(&self, which: &str, half: f64, n: usize) -> Result<Vec<f64>, JsError> {
        self.inner
            .field(source(which)?, Window::square(half), n, n)
            .map_err(js)
    }

    /// Walk states (ten per jump period) followed by the jumps, flat `x, y` pairs.
    pub fn sample(
        &self,
        which: &str,
        jumps: usize,
        jump_period: usize,
        eps: f64,
        seed: u32,
    ) -> Result<Vec<f64>, JsError> {
        let (walk, hops) = self
            .inner
            .sample(source(which)?, jumps, jump_period, eps, seed as u64)
            .map_err(js)?;
        Ok(walk.into_iter().chain(hops).collect())
    }

    /// `[jump_x, jump_y, attractor_x, attractor_y]` from a clicked point.
    pub fn descend(&self, which: &str, x: f64, y: f64) -> Result<Vec<f64>, JsError> {
        self.inner.descend(source(which)?, x, y).map_err(js)
    }
}
