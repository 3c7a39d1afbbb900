//! Parameterized layers and parameter traversal.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Conv2dSpec, Element, Tensor};

/// Standard deviation of the zero-mean normal used for trainable weights.
pub const INIT_STD: f64 = 0.02;

/// Anything owning named parameters.
pub trait Module<E: Element> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>));

    fn named_parameters(&self) -> Vec<(String, Tensor<E>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    fn zero_grad(&self) {
        self.visit("", &mut |_, t| t.zero_grad());
    }

    /// Rebuilds every parameter as a leaf with the given gradient flag.
    /// Frozen modules build no autodiff graph.
    fn set_trainable(&mut self, flag: bool) {
        self.visit_mut("", &mut |_, t| *t = t.clone().requires_grad(flag));
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.numel());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn normal_init<E: Element, R: Rng>(rng: &mut R, shape: &[usize], std: f64) -> Tensor<E> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..n).map(|_| E::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::parameter(shape, data).expect("shape matches data")
}

#[derive(Debug, Clone)]
pub struct Linear<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Tensor<E>,
}

impl<E: Element> Linear<E> {
    pub fn new<R: Rng>(rng: &mut R, din: usize, dout: usize) -> Self {
        Linear {
            weight: normal_init(rng, &[dout, din], INIT_STD),
            bias: Tensor::zeros(&[dout]).requires_grad(true),
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.fully_connected(&self.weight, &self.bias)
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl<E: Element> Module<E> for Linear<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d<E: Element> {
    pub weight: Tensor<E>,
    pub bias: Option<Tensor<E>>,
    pub spec: Conv2dSpec,
}

impl<E: Element> Conv2d<E> {
    pub fn new<R: Rng>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: Conv2dSpec,
        with_bias: bool,
    ) -> Self {
        Conv2d {
            weight: normal_init(rng, &[cout, cin, kernel, kernel], INIT_STD),
            bias: with_bias.then(|| Tensor::zeros(&[cout]).requires_grad(true)),
            spec,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let y = x.conv2d(&self.weight, self.spec)?;
        match &self.bias {
            Some(b) => y.add_channel_bias(b),
            None => Ok(y),
        }
    }
}

impl<E: Element> Module<E> for Conv2d<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Convolution followed by instance normalization and leaky ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit<E: Element> {
    pub conv: Conv2d<E>,
    pub slope: f64,
}

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;

impl<E: Element> ConvUnit<E> {
    pub fn new<R: Rng>(rng: &mut R, cin: usize, cout: usize, kernel: usize, spec: Conv2dSpec) -> Self {
        ConvUnit {
            conv: Conv2d::new(rng, cin, cout, kernel, spec, false),
            slope: LEAKY_SLOPE,
        }
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        Ok(self
            .conv
            .forward(x)?
            .instance_norm(E::from_f64_lossy(NORM_EPS))?
            .leaky_relu(E::from_f64_lossy(self.slope)))
    }
}

impl<E: Element> Module<E> for ConvUnit<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        self.conv.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        self.conv.visit_mut(prefix, f);
    }
}
