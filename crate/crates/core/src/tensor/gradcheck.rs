//! Analytic vs central-difference gradient comparison in f64.

use super::Tensor;
use crate::error::{shape_err, Result};
use crate::layers::Module;

/// Relative errors use `max(|analytic|, |numeric|, REL_FLOOR)` as the
/// denominator so entries whose true gradient is ~0 are judged absolutely.
pub const REL_FLOOR: f64 = 1e-3;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input or parameter position, element) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    fn merge(&mut self, input: usize, elem: usize, analytic: f64, numeric: f64) {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        self.checked += 1;
        if err > self.max_rel_err || err.is_nan() {
            self.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
            self.worst = (input, elem);
        }
    }
}

/// Fixed weights that turn any output into a scalar without symmetric
/// cancellation.
fn projection(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + ((i as f64) * 0.7548776662).fract()).collect()
}

fn scalarize(out: &Tensor<f64>) -> Result<Tensor<f64>> {
    if out.numel() == 1 {
        return Ok(out.clone());
    }
    let w = Tensor::from_vec(out.shape(), projection(out.numel()))?;
    out.mul(&w)?.sum().reshape(&[1])
}

/// Up to `limit` evenly spread element indices of `n`.
fn sample(n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => (0..k).map(|i| i * n / k + (n / k) / 2).collect(),
        _ => (0..n).collect(),
    }
}

/// Checks `f` with respect to every input. Inputs are re-created as
/// trainable leaves; `per_input` caps the elements probed per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, eps: f64, per_input: Option<usize>) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|t| t.detach().requires_grad(true)).collect();
    let loss = scalarize(&f(&leaves)?)?;
    loss.backward()?;
    let value = |xs: &[Tensor<f64>]| -> Result<f64> {
        let consts: Vec<Tensor<f64>> = xs.iter().map(|t| t.detach()).collect();
        Ok(scalarize(&f(&consts)?)?.item())
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in sample(leaf.numel(), per_input) {
            let mut probe: Vec<Tensor<f64>> = leaves.iter().map(|t| t.detach()).collect();
            let base = leaf.data()[j];
            let mut d = leaf.to_vec();
            d[j] = base + eps;
            probe[k] = Tensor::from_vec(leaf.shape(), d.clone())?;
            let up = value(&probe)?;
            d[j] = base - eps;
            probe[k] = Tensor::from_vec(leaf.shape(), d)?;
            let down = value(&probe)?;
            report.merge(k, j, analytic[j], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

/// Checks `f` with respect to the parameters of `module`.
pub fn check_module_gradients<M, F>(module: &mut M, f: F, eps: f64, per_param: Option<usize>) -> Result<GradCheckReport>
where
    M: Module<f64>,
    F: Fn(&M) -> Result<Tensor<f64>>,
{
    module.zero_grad();
    let loss = scalarize(&f(module)?)?;
    loss.backward()?;
    let mut params: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    module.visit("", &mut |_, t| {
        params.push((t.to_vec(), t.grad().unwrap_or_else(|| vec![0.0; t.numel()])));
    });
    if params.is_empty() {
        return Err(shape_err!("module has no parameters"));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let set = |module: &mut M, k: usize, data: Vec<f64>| -> Result<()> {
        let mut idx = 0;
        let mut data = Some(data);
        let mut out = Ok(());
        module.visit_mut("", &mut |_, t| {
            if idx == k {
                if let Some(d) = data.take() {
                    out = t.set_data(d);
                }
            }
            idx += 1;
        });
        out
    };
    for (k, (values, analytic)) in params.iter().enumerate() {
        for j in sample(values.len(), per_param) {
            let mut d = values.clone();
            d[j] = values[j] + eps;
            set(module, k, d.clone())?;
            let up = scalarize(&f(module)?)?.item();
            d[j] = values[j] - eps;
            set(module, k, d)?;
            let down = scalarize(&f(module)?)?.item();
            set(module, k, values.clone())?;
            report.merge(k, j, analytic[j], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}
