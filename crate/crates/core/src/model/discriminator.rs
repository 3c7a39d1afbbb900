use rand::Rng;

use crate::error::{shape_err, Result};
use crate::layers::{join, Conv2d, ConvUnit, Module};
use crate::tensor::{Conv2dSpec, Element, Tensor};

/// Channel value standing in for segmentation id `id`. Background is 0;
/// other ids are spread over (0,1) by the golden-ratio sequence.
pub fn seg_channel_value(id: u8) -> f64 {
    if id == 0 {
        0.0
    } else {
        let g = 0.618_033_988_749_894_9 * id as f64;
        let v = g - g.floor();
        if v == 0.0 {
            1.0
        } else {
            v
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscOutput<E: Element> {
    /// Patch logits `[N,1,h,w]`.
    pub logits: Tensor<E>,
    /// Activations after each of the three units.
    pub features: Vec<Tensor<E>>,
}

/// Conditional patch discriminator at one scale. The candidate image is
/// stacked with both references and, optionally, the segmentation channel.
#[derive(Debug, Clone)]
pub struct Discriminator<E: Element> {
    pub units: [ConvUnit<E>; 3],
    pub head: Conv2d<E>,
    /// 1 for full resolution, 2 for inputs averaged down by two first.
    pub scale: usize,
    pub with_seg: bool,
}

impl<E: Element> Discriminator<E> {
    pub fn new<R: Rng>(rng: &mut R, widths: [usize; 3], scale: usize, with_seg: bool) -> Self {
        let down = Conv2dSpec { stride: 2, pad: 1 };
        let cin = 9 + usize::from(with_seg);
        Discriminator {
            units: [
                ConvUnit::new(rng, cin, widths[0], 4, down),
                ConvUnit::new(rng, widths[0], widths[1], 4, down),
                ConvUnit::new(rng, widths[1], widths[2], 4, down),
            ],
            head: Conv2d::new(rng, widths[2], 1, 3, Conv2dSpec { stride: 1, pad: 1 }, true),
            scale,
            with_seg,
        }
    }

    pub fn forward(
        &self,
        img: &Tensor<E>,
        left: &Tensor<E>,
        right: &Tensor<E>,
        seg: Option<&Tensor<E>>,
    ) -> Result<DiscOutput<E>> {
        let mut parts = vec![img, left, right];
        if self.with_seg {
            let seg = seg.ok_or_else(|| shape_err!("discriminator needs a segmentation channel"))?;
            parts.push(seg);
        }
        let mut x = Tensor::concat_channels(&parts)?;
        if self.scale == 2 {
            x = x.downsample_x2()?;
        }
        let mut features = Vec::with_capacity(3);
        for u in &self.units {
            x = u.forward(&x)?;
            features.push(x.clone());
        }
        Ok(DiscOutput {
            logits: self.head.forward(&x)?,
            features,
        })
    }
}

impl<E: Element> Module<E> for Discriminator<E> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<E>)) {
        for (i, u) in self.units.iter().enumerate() {
            u.visit(&join(prefix, &format!("unit{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<E>)) {
        for (i, u) in self.units.iter_mut().enumerate() {
            u.visit_mut(&join(prefix, &format!("unit{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
