//! Elementwise, reduction and shape ops.

use super::{strides, Element, Tensor};
use crate::error::{shape_err, Result};

impl<E: Element> Tensor<E> {
    /// Elementwise map with a derivative expressed in terms of input and output.
    pub fn map<F, G>(&self, f: F, df: G) -> Tensor<E>
    where
        F: Fn(E) -> E,
        G: Fn(E, E) -> E + Send + Sync + 'static,
    {
        let data: Vec<E> = self.data().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, parents, out| {
                let x = parents[0].data();
                vec![Some(
                    g.iter()
                        .zip(x)
                        .zip(out)
                        .map(|((&g, &x), &y)| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    fn zip_with<F, G>(&self, other: &Tensor<E>, name: &str, f: F, grads: G) -> Result<Tensor<E>>
    where
        F: Fn(E, E) -> E,
        G: Fn(E, E, E) -> (E, E) + Send + Sync + 'static,
    {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "{name}: shapes {:?} and {:?} differ",
                self.shape(),
                other.shape()
            ));
        }
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            Box::new(move |g, parents, _| {
                let (a, b) = (parents[0].data(), parents[1].data());
                let need_a = parents[0].tracks_grad();
                let need_b = parents[1].tracks_grad();
                let mut ga = need_a.then(|| Vec::with_capacity(g.len()));
                let mut gb = need_b.then(|| Vec::with_capacity(g.len()));
                for i in 0..g.len() {
                    let (da, db) = grads(a[i], b[i], g[i]);
                    if let Some(v) = ga.as_mut() {
                        v.push(da);
                    }
                    if let Some(v) = gb.as_mut() {
                        v.push(db);
                    }
                }
                vec![ga, gb]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    pub fn div(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip_with(
            other,
            "div",
            |a, b| a / b,
            |a, b, g| (g / b, -g * a / (b * b)),
        )
    }

    pub fn add_scalar(&self, c: E) -> Tensor<E> {
        self.map(|x| x + c, |_, _| E::one())
    }

    pub fn mul_scalar(&self, c: E) -> Tensor<E> {
        self.map(move |x| x * c, move |_, _| c)
    }

    pub fn neg(&self) -> Tensor<E> {
        self.mul_scalar(-E::one())
    }

    pub fn square(&self) -> Tensor<E> {
        let two = E::one() + E::one();
        self.map(|x| x * x, move |x, _| two * x)
    }

    /// |x|, with derivative sign(x) and 0 at the kink.
    pub fn abs(&self) -> Tensor<E> {
        self.map(
            |x| x.abs(),
            |x, _| {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn log(&self) -> Tensor<E> {
        self.map(|x| x.ln(), |x, _| E::one() / x)
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        self.map(
            |x| E::one() / (E::one() + (-x).exp()),
            |_, y| y * (E::one() - y),
        )
    }

    /// log(1 + eˣ), evaluated without overflow.
    pub fn softplus(&self) -> Tensor<E> {
        self.map(
            |x| x.max(E::zero()) + (-x.abs()).exp().ln_1p(),
            |x, _| E::one() / (E::one() + (-x).exp()),
        )
    }

    pub fn relu(&self) -> Tensor<E> {
        self.leaky_relu(E::zero())
    }

    /// max(x, slope·x) for slope in [0, 1). The kink takes the positive
    /// branch's derivative.
    pub fn leaky_relu(&self, slope: E) -> Tensor<E> {
        self.map(
            move |x| if x >= E::zero() { x } else { slope * x },
            move |x, _| if x >= E::zero() { E::one() } else { slope },
        )
    }

    pub fn sum(&self) -> Tensor<E> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<E> {
        let n = E::from_usize(self.numel().max(1)).unwrap();
        self.sum().mul_scalar(E::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            ));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Slice `len` entries starting at `start` along `dim`.
    pub fn narrow(&self, dim: usize, start: usize, len: usize) -> Result<Tensor<E>> {
        let shape = self.shape().to_vec();
        if dim >= shape.len() || start + len > shape[dim] {
            return Err(shape_err!(
                "narrow({dim}, {start}, {len}) out of range for {:?}",
                shape
            ));
        }
        let outer: usize = shape[..dim].iter().product();
        let inner: usize = shape[dim + 1..].iter().product();
        let full = shape[dim];
        let mut out_shape = shape.clone();
        out_shape[dim] = len;
        let mut data = Vec::with_capacity(outer * len * inner);
        let src = self.data();
        for o in 0..outer {
            let base = (o * full + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let numel = self.numel();
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![E::zero(); numel];
                for o in 0..outer {
                    let base = (o * full + start) * inner;
                    gx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenation along dimension 1 (channels for NCHW, features for N×D).
    pub fn concat_channels(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat of zero tensors"))?;
        let shape = first.shape();
        if shape.len() < 2 {
            return Err(shape_err!("concat needs rank >= 2, got {:?}", shape));
        }
        for p in parts {
            let s = p.shape();
            if s.len() != shape.len() || s[0] != shape[0] || s[2..] != shape[2..] {
                return Err(shape_err!(
                    "concat: {:?} does not align with {:?} outside dim 1",
                    s,
                    shape
                ));
            }
        }
        let n = shape[0];
        let inner: usize = shape[2..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
        let total: usize = widths.iter().sum();
        let mut out_shape = shape.to_vec();
        out_shape[1] = total;
        let mut data = Vec::with_capacity(n * total * inner);
        for b in 0..n {
            for (p, &c) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[b * c * inner..(b + 1) * c * inner]);
            }
        }
        Ok(Tensor::from_op(
            out_shape,
            data,
            parts.iter().map(|&p| p.clone()).collect(),
            Box::new(move |g, parents, _| {
                let mut grads: Vec<Vec<E>> = widths
                    .iter()
                    .map(|&c| Vec::with_capacity(n * c * inner))
                    .collect();
                let mut off = 0;
                for _ in 0..n {
                    for (gp, &c) in grads.iter_mut().zip(&widths) {
                        gp.extend_from_slice(&g[off..off + c * inner]);
                        off += c * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(parents)
                    .map(|(g, p)| p.tracks_grad().then_some(g))
                    .collect()
            }),
        ))
    }

    /// Mean over the spatial dims: [N,C,H,W] → [N,C].
    pub fn spatial_mean(&self) -> Result<Tensor<E>> {
        let [n, c, h, w] = self.dims4()?;
        let hw = h * w;
        let scale = E::one() / E::from_usize(hw).unwrap();
        let data = self
            .data()
            .chunks(hw)
            .map(|ch| ch.iter().copied().sum::<E>() * scale)
            .collect();
        Ok(Tensor::from_op(
            vec![n, c],
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                vec![Some(
                    g.iter()
                        .flat_map(|&gv| std::iter::repeat_n(gv * scale, hw))
                        .collect(),
                )]
            }),
        ))
    }

    /// Sorts every row of the trailing dimension ascending. The gradient is
    /// routed back through the sorting permutation.
    pub fn sort_last(&self) -> Result<Tensor<E>> {
        let shape = self.shape().to_vec();
        let len = *shape
            .last()
            .ok_or_else(|| shape_err!("sort of a rank-0 tensor"))?;
        let src = self.data();
        let mut perm: Vec<usize> = Vec::with_capacity(src.len());
        let mut data = Vec::with_capacity(src.len());
        for (r, row) in src.chunks(len.max(1)).enumerate() {
            let mut idx: Vec<usize> = (0..row.len()).collect();
            idx.sort_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap_or(std::cmp::Ordering::Equal));
            for &i in &idx {
                data.push(row[i]);
                perm.push(r * len + i);
            }
        }
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![E::zero(); g.len()];
                for (k, &src_idx) in perm.iter().enumerate() {
                    gx[src_idx] = g[k];
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Broadcast add of a per-channel bias `[C]` onto `[N,C,...]`.
    pub fn add_channel_bias(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = self.shape().to_vec();
        if shape.len() < 2 || bias.shape() != [shape[1]] {
            return Err(shape_err!(
                "bias {:?} does not match channels of {:?}",
                bias.shape(),
                shape
            ));
        }
        let c = shape[1];
        let inner = strides(&shape)[1];
        let b = bias.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + b[(i / inner) % c])
            .collect();
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents, _| {
                let gb = parents[1].tracks_grad().then(|| {
                    let mut gb = vec![E::zero(); c];
                    for (i, &gv) in g.iter().enumerate() {
                        gb[(i / inner) % c] = gb[(i / inner) % c] + gv;
                    }
                    gb
                });
                vec![parents[0].tracks_grad().then(|| g.to_vec()), gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn concat_shapes_and_grad_routing() {
        let a = Tensor::<f64>::parameter(&[1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::parameter(&[1, 3, 1, 2], vec![5.0; 6]).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 5, 1, 2]);
        assert_eq!(&c.data()[..4], &[1.0, 2.0, 3.0, 4.0]);
        c.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0; 4]);
        assert_eq!(b.grad().unwrap(), vec![1.0; 6]);
    }

    #[test]
    fn concat_with_empty_channels_is_identity() {
        let a = t(&[2, 2, 2, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let empty = Tensor::<f64>::zeros(&[2, 0, 2, 1]);
        let c = Tensor::concat_channels(&[&a, &empty]).unwrap();
        assert_eq!(c.shape(), a.shape());
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 1, 3, 2]);
        assert!(Tensor::concat_channels(&[&a, &b]).is_err());
    }

    #[test]
    fn narrow_picks_middle() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = x.narrow(1, 1, 2).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 5.0, 6.0]);
    }

    #[test]
    fn sort_routes_gradient_through_permutation() {
        let x = Tensor::<f64>::parameter(&[1, 3], vec![3.0, 1.0, 2.0]).unwrap();
        let s = x.sort_last().unwrap();
        assert_eq!(s.data(), &[1.0, 2.0, 3.0]);
        let w = t(&[1, 3], &[10.0, 20.0, 30.0]);
        s.mul(&w).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![30.0, 10.0, 20.0]);
    }

    #[test]
    fn softplus_is_stable() {
        let x = t(&[3], &[-800.0, 0.0, 800.0]);
        let y = x.softplus();
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(y.data()[2], 800.0);
    }

    #[test]
    fn leaky_relu_definition() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.leaky_relu(0.2).data(), &[-0.2, 0.0, 2.0]);
    }

    #[test]
    fn channel_bias_broadcasts() {
        let x = Tensor::<f64>::zeros(&[1, 2, 1, 2]);
        let b = Tensor::<f64>::parameter(&[2], vec![1.0, -1.0]).unwrap();
        let y = x.add_channel_bias(&b).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, -1.0, -1.0]);
        y.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0]);
    }
}
