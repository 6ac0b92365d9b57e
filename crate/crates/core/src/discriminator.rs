//! Patch discriminator conditioned on the noise level map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, NoiseLevelMap};
use crate::nn::{self, init, Graph, ParameterSet, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub image_channels: usize,
    pub layers: usize,
    pub base_channels: usize,
    pub kernel: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            layers: 4,
            base_channels: 64,
            kernel: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    cfg: DiscriminatorConfig,
}

/// Stride, padding and output channels of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub cin: usize,
    pub cout: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        if cfg.layers < 2 {
            return Err(Error::Config(
                "discriminator needs at least 2 layers".into(),
            ));
        }
        if cfg.base_channels == 0 || cfg.kernel < 2 {
            return Err(Error::Config(
                "discriminator base_channels/kernel too small".into(),
            ));
        }
        if cfg.image_channels != 1 && cfg.image_channels != 3 {
            return Err(Error::Config(
                "discriminator image_channels must be 1 or 3".into(),
            ));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    /// Layers stride 2 except the last two; widths double up to 8× base;
    /// the last layer emits one logit channel.
    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let n = self.cfg.layers;
        let mut cin = self.cfg.image_channels + 1;
        (0..n)
            .map(|i| {
                let cout = if i + 1 == n {
                    1
                } else {
                    self.cfg.base_channels << i.min(3)
                };
                let spec = LayerSpec {
                    cin,
                    cout,
                    stride: if i + 2 < n { 2 } else { 1 },
                    pad: 1,
                };
                cin = cout;
                spec
            })
            .collect()
    }

    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<ParameterSet<T>> {
        let mut p = ParameterSet::new();
        for (i, l) in self.layer_specs().iter().enumerate() {
            init::conv(
                &mut p,
                &format!("disc.conv{i}"),
                l.cin,
                l.cout,
                self.cfg.kernel,
                rng,
            )?;
        }
        Ok(p)
    }

    /// Logit map for `[m ‖ img]`; `m` is `[1, H, W]`, `img` is `[C, H, W]`.
    pub fn build<T: Scalar>(&self, g: &mut Graph<'_, T>, m: Var, img: Var) -> Result<Var> {
        let (c, h, w) = g.value(img).chw();
        if c != self.cfg.image_channels || g.value(m).shape() != [1, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "discriminator inputs {:?} and {:?} not aligned",
                g.value(m).shape(),
                g.value(img).shape()
            )));
        }
        let specs = self.layer_specs();
        let mut f = g.concat(m, img);
        for (i, l) in specs.iter().enumerate() {
            let (_, fh, fw) = g.value(f).chw();
            if fh + 2 * l.pad < self.cfg.kernel || fw + 2 * l.pad < self.cfg.kernel {
                return Err(Error::ShapeMismatch(format!(
                    "{h}x{w} input too small for {} discriminator layers",
                    self.cfg.layers
                )));
            }
            f = nn::conv(g, &format!("disc.conv{i}"), f, l.stride, l.pad)?;
            if i + 1 < specs.len() {
                f = g.leaky_relu(f, T::lit(LEAKY_SLOPE));
            }
        }
        Ok(f)
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        m: &NoiseLevelMap<T>,
        img: &Image<T>,
    ) -> Result<Tensor<T>> {
        if m.dims() != img.dims() {
            return Err(Error::ShapeMismatch("map and image not aligned".into()));
        }
        let mut g = Graph::frozen(params);
        let mv = g.constant(m.to_tensor());
        let iv = g.constant(img.to_tensor());
        let out = self.build(&mut g, mv, iv)?;
        Ok(g.value(out).clone())
    }
}
