//! Conditional generator: an image-encoding stream of noise transference
//! blocks (spatial attention → channel attention → residual blocks) and a
//! noise-level-encoding stream ending in a randomization block, fused by
//! channel concatenation into a correction that is added back to the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, NoiseLevelMap};
use crate::nn::{self, init, Graph, ParameterSet, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_channels: usize,
    pub num_ntb: usize,
    pub rb_per_ntb: usize,
    pub channels: usize,
    pub ca_bottleneck: usize,
    pub kernel_size: usize,
    pub noise_branch_pools: usize,
    /// Adds the input map to the noise-branch output.
    pub long_skip_noise_branch: bool,
    pub spatial_attention: bool,
    pub channel_attention: bool,
    /// Block-, stream- and global-level skips around the residual blocks.
    pub residual_on_residual: bool,
    pub noise_branch: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            num_ntb: 4,
            rb_per_ntb: 4,
            channels: 64,
            ca_bottleneck: 4,
            kernel_size: 3,
            noise_branch_pools: 2,
            long_skip_noise_branch: false,
            spatial_attention: true,
            channel_attention: true,
            residual_on_residual: true,
            noise_branch: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.image_channels != 1 && self.image_channels != 3 {
            return bad("image_channels must be 1 or 3");
        }
        if self.channels == 0
            || self.num_ntb == 0
            || self.rb_per_ntb == 0
            || self.ca_bottleneck == 0
        {
            return bad("channels, num_ntb, rb_per_ntb and ca_bottleneck must be positive");
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad("kernel_size must be odd");
        }
        Ok(())
    }
}

/// Whether the randomization block draws fresh Gaussian factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    cfg: GeneratorConfig,
}

// ---- building blocks -------------------------------------------------------

pub fn init_residual_block<T: Scalar, R: Rng>(
    set: &mut ParameterSet<T>,
    path: &str,
    channels: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    init::conv(set, &format!("{path}.conv0"), channels, channels, k, rng)?;
    init::prelu(set, &format!("{path}.act"), channels)?;
    init::conv(set, &format!("{path}.conv1"), channels, channels, k, rng)
}

/// `f + conv(prelu(conv(f)))`
pub fn residual_block<T: Scalar>(g: &mut Graph<'_, T>, path: &str, f: Var) -> Result<Var> {
    let pad = kernel_pad(g, &format!("{path}.conv0"))?;
    let h = nn::conv(g, &format!("{path}.conv0"), f, 1, pad)?;
    let h = nn::prelu(g, &format!("{path}.act"), h)?;
    let h = nn::conv(g, &format!("{path}.conv1"), h, 1, pad)?;
    Ok(g.add(f, h))
}

pub fn init_spatial_attention<T: Scalar, R: Rng>(
    set: &mut ParameterSet<T>,
    path: &str,
    rng: &mut R,
) -> Result<()> {
    init::conv(set, &format!("{path}.conv"), 2, 1, 1, rng)
}

/// Heat map `sigmoid(conv1x1([mean_c f, max_c f]))`, shape `[1, h, w]`.
pub fn spatial_heat<T: Scalar>(g: &mut Graph<'_, T>, path: &str, f: Var) -> Result<Var> {
    let avg = g.channel_mean(f);
    let max = g.channel_max(f);
    let both = g.concat(avg, max);
    let logits = nn::conv(g, &format!("{path}.conv"), both, 1, 0)?;
    Ok(g.sigmoid(logits))
}

pub fn spatial_attention<T: Scalar>(g: &mut Graph<'_, T>, path: &str, f: Var) -> Result<Var> {
    let heat = spatial_heat(g, path, f)?;
    Ok(g.scale_spatial(f, heat))
}

pub fn init_channel_attention<T: Scalar, R: Rng>(
    set: &mut ParameterSet<T>,
    path: &str,
    channels: usize,
    bottleneck: usize,
    rng: &mut R,
) -> Result<()> {
    init::conv(set, &format!("{path}.down"), channels, bottleneck, 1, rng)?;
    init::prelu(set, &format!("{path}.act"), bottleneck)?;
    init::conv(set, &format!("{path}.up"), bottleneck, channels, 1, rng)
}

/// Heat vector `sigmoid(up(prelu(down(gap(f)))))`, shape `[c, 1, 1]`.
pub fn channel_heat<T: Scalar>(g: &mut Graph<'_, T>, path: &str, f: Var) -> Result<Var> {
    let v = g.global_avg_pool(f);
    let v = nn::conv(g, &format!("{path}.down"), v, 1, 0)?;
    let v = nn::prelu(g, &format!("{path}.act"), v)?;
    let v = nn::conv(g, &format!("{path}.up"), v, 1, 0)?;
    Ok(g.sigmoid(v))
}

pub fn channel_attention<T: Scalar>(g: &mut Graph<'_, T>, path: &str, f: Var) -> Result<Var> {
    let heat = channel_heat(g, path, f)?;
    Ok(g.scale_channels(f, heat))
}

fn kernel_pad<T: Scalar>(g: &mut Graph<'_, T>, conv_path: &str) -> Result<usize> {
    let w = g.param(&format!("{conv_path}.weight"))?;
    Ok(g.value(w).shape()[2] / 2)
}

/// Factors `r ~ N(0, 1)` used by the randomization block.
pub fn randomization_factors<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    )
}

/// `f ⊙ r` in training, identity at inference.
pub fn randomization_block<T: Scalar>(g: &mut Graph<'_, T>, f: Var, mode: Mode) -> Var {
    match mode {
        Mode::Inference => f,
        Mode::Train { seed } => {
            let r = randomization_factors(g.value(f).shape(), seed);
            let r = g.constant(r);
            g.mul(f, r)
        }
    }
}

// ---- generator ---------------------------------------------------------------

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn config_mut(&mut self) -> &mut GeneratorConfig {
        &mut self.cfg
    }

    /// Fresh parameters: He-normal convolutions, zero biases, PReLU slopes of
    /// 0.25 and a zero final reconstruction layer, so an untrained generator
    /// is the identity map.
    pub fn init_params<T: Scalar, R: Rng>(&self, rng: &mut R) -> Result<ParameterSet<T>> {
        let c = &self.cfg;
        let (ch, k) = (c.channels, c.kernel_size);
        let mut p = ParameterSet::new();
        init::conv(&mut p, "image.head", c.image_channels, ch, k, rng)?;
        for i in 0..c.num_ntb {
            let base = format!("image.ntb{i}");
            if c.spatial_attention {
                init_spatial_attention(&mut p, &format!("{base}.sa"), rng)?;
            }
            if c.channel_attention {
                init_channel_attention(&mut p, &format!("{base}.ca"), ch, c.ca_bottleneck, rng)?;
            }
            for j in 0..c.rb_per_ntb {
                init_residual_block(&mut p, &format!("{base}.rb{j}"), ch, k, rng)?;
            }
        }
        init::conv(&mut p, "image.tail", ch, ch, k, rng)?;

        let mut fused = ch;
        if c.noise_branch {
            for s in 0..c.noise_branch_pools {
                let cin = if s == 0 { 1 } else { ch };
                init::conv(&mut p, &format!("noise.conv{s}"), cin, ch, k, rng)?;
                init::prelu(&mut p, &format!("noise.act{s}"), ch)?;
            }
            let cin = if c.noise_branch_pools == 0 { 1 } else { ch };
            init::conv(
                &mut p,
                &format!("noise.conv{}", c.noise_branch_pools),
                cin,
                ch,
                k,
                rng,
            )?;
            fused += ch;
        }
        init::conv(&mut p, "fuse.conv0", fused, ch, k, rng)?;
        init::prelu(&mut p, "fuse.act0", ch)?;
        init::zero_conv(&mut p, "fuse.conv1", ch, c.image_channels, k)?;
        Ok(p)
    }

    /// Paths of the reconstruction head (the layers after fusion).
    pub const HEAD_PREFIX: &'static str = "fuse.";

    pub fn ntb<T: Scalar>(&self, g: &mut Graph<'_, T>, index: usize, f: Var) -> Result<Var> {
        let base = format!("image.ntb{index}");
        let mut h = f;
        if self.cfg.spatial_attention {
            h = spatial_attention(g, &format!("{base}.sa"), h)?;
        }
        if self.cfg.channel_attention {
            h = channel_attention(g, &format!("{base}.ca"), h)?;
        }
        for j in 0..self.cfg.rb_per_ntb {
            h = residual_block(g, &format!("{base}.rb{j}"), h)?;
        }
        Ok(if self.cfg.residual_on_residual {
            g.add(f, h)
        } else {
            h
        })
    }

    pub fn image_stream<T: Scalar>(&self, g: &mut Graph<'_, T>, y: Var) -> Result<Var> {
        let pad = self.cfg.kernel_size / 2;
        let head = nn::conv(g, "image.head", y, 1, pad)?;
        let mut f = head;
        for i in 0..self.cfg.num_ntb {
            f = self.ntb(g, i, f)?;
        }
        let tail = nn::conv(g, "image.tail", f, 1, pad)?;
        Ok(if self.cfg.residual_on_residual {
            g.add(head, tail)
        } else {
            tail
        })
    }

    /// Conv/PReLU/avg-pool stages, a final conv, randomization, and
    /// nearest-neighbour upsampling back to the map's resolution.
    pub fn noise_level_encoder<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        m: Var,
        mode: Mode,
        long_skip: bool,
    ) -> Result<Var> {
        let pad = self.cfg.kernel_size / 2;
        let (_, h, w) = g.value(m).chw();
        let mut f = m;
        for s in 0..self.cfg.noise_branch_pools {
            f = nn::conv(g, &format!("noise.conv{s}"), f, 1, pad)?;
            f = nn::prelu(g, &format!("noise.act{s}"), f)?;
            f = g.avg_pool2(f);
        }
        f = nn::conv(
            g,
            &format!("noise.conv{}", self.cfg.noise_branch_pools),
            f,
            1,
            pad,
        )?;
        f = randomization_block(g, f, mode);
        if self.cfg.noise_branch_pools > 0 {
            f = g.upsample(f, 1 << self.cfg.noise_branch_pools, h, w);
        }
        if long_skip {
            f = g.add_plane(f, m);
        }
        Ok(f)
    }

    /// Builds `ẑ` for one sample into `g`. `y` is `[C, H, W]`, `m` is
    /// `[1, H, W]`; `m` is ignored when the noise branch is disabled.
    pub fn build<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        y: Var,
        m: Var,
        mode: Mode,
        long_skip: bool,
    ) -> Result<Var> {
        let (c, h, w) = g.value(y).chw();
        if c != self.cfg.image_channels {
            return Err(Error::ShapeMismatch(format!(
                "generator expects {} channels, got {c}",
                self.cfg.image_channels
            )));
        }
        if g.value(m).shape() != [1, h, w] {
            return Err(Error::ShapeMismatch(format!(
                "noise level map {:?} not aligned with image {h}x{w}",
                g.value(m).shape()
            )));
        }
        let pad = self.cfg.kernel_size / 2;
        let mut fused = self.image_stream(g, y)?;
        if self.cfg.noise_branch {
            let noise = self.noise_level_encoder(g, m, mode, long_skip)?;
            fused = g.concat(fused, noise);
        }
        let r = nn::conv(g, "fuse.conv0", fused, 1, pad)?;
        let r = nn::prelu(g, "fuse.act0", r)?;
        let r = nn::conv(g, "fuse.conv1", r, 1, pad)?;
        Ok(if self.cfg.residual_on_residual {
            g.add(y, r)
        } else {
            r
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParameterSet<T>,
        y: &Image<T>,
        m: &NoiseLevelMap<T>,
        mode: Mode,
    ) -> Result<Image<T>> {
        if y.dims() != m.dims() {
            return Err(Error::ShapeMismatch(format!(
                "image {:?} and map {:?} are not aligned",
                y.dims(),
                m.dims()
            )));
        }
        let mut g = Graph::frozen(params);
        let yv = g.constant(y.to_tensor());
        let mv = g.constant(m.to_tensor());
        let out = self.build(&mut g, yv, mv, mode, self.cfg.long_skip_noise_branch)?;
        Ok(Image::from_tensor(g.value(out)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> GeneratorConfig {
        GeneratorConfig {
            image_channels: 3,
            num_ntb: 2,
            rb_per_ntb: 2,
            channels: 8,
            ..GeneratorConfig::default()
        }
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    fn rand_image(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Image<f64> {
        Image::new(c, h, w, (0..c * h * w).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn residual_block_with_zero_weights_is_identity_and_preserves_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for hw in [8, 17, 64] {
            let mut p = ParameterSet::<f64>::new();
            init_residual_block(&mut p, "rb", 4, 3, &mut rng).unwrap();
            let x = rand_tensor(&[4, hw, hw], &mut rng);
            {
                let mut g = Graph::new(&p);
                let xv = g.constant(x.clone());
                let y = residual_block(&mut g, "rb", xv).unwrap();
                assert_eq!(g.value(y).shape(), x.shape());
            }
            p.zero_prefix("rb");
            let mut g = Graph::new(&p);
            let xv = g.constant(x.clone());
            let y = residual_block(&mut g, "rb", xv).unwrap();
            assert_eq!(g.value(y), &x);
        }
    }

    #[test]
    fn residual_block_stays_finite_for_bounded_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let mut p = ParameterSet::<f64>::new();
            init_residual_block(&mut p, "rb", 3, 3, &mut rng).unwrap();
            for (_, t) in p.iter_mut() {
                t.data_mut()
                    .iter_mut()
                    .for_each(|v| *v = rng.gen_range(-1.0..=1.0));
            }
            let mut g = Graph::new(&p);
            let xv = g.constant(rand_tensor(&[3, 6, 5], &mut rng));
            let y = residual_block(&mut g, "rb", xv).unwrap();
            assert!(g.value(y).is_finite());
        }
    }

    #[test]
    fn attention_heats_are_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParameterSet::<f64>::new();
        init_spatial_attention(&mut p, "sa", &mut rng).unwrap();
        init_channel_attention(&mut p, "ca", 6, 4, &mut rng).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(rand_tensor(&[6, 5, 7], &mut rng).map(|v| v * 5.0));
        let hs = spatial_heat(&mut g, "sa", x).unwrap();
        let hc = channel_heat(&mut g, "ca", x).unwrap();
        for v in g.value(hs).data().iter().chain(g.value(hc).data()) {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn spatial_attention_on_constant_input_scales_by_constant_heat() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParameterSet::<f64>::new();
        init_spatial_attention(&mut p, "sa", &mut rng).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::full(&[4, 3, 3], 0.7));
        let heat = spatial_heat(&mut g, "sa", x).unwrap();
        let out = spatial_attention(&mut g, "sa", x).unwrap();
        let h0 = g.value(heat).data()[0];
        assert!(g.value(heat).data().iter().all(|&h| h == h0));
        assert!(g.value(out).data().iter().all(|&v| v == 0.7 * h0));
    }

    #[test]
    fn channel_attention_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = ParameterSet::<f64>::new();
        init_channel_attention(&mut p, "ca", 8, 4, &mut rng).unwrap();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::zeros(&[8, 4, 4]));
        let out = channel_attention(&mut g, "ca", x).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ntb_preserves_odd_shapes() {
        let gen = Generator::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p: ParameterSet<f64> = gen.init_params(&mut rng).unwrap();
        for (h, w) in [(5, 7), (9, 11)] {
            let x = rand_tensor(&[8, h, w], &mut rng);
            let mut g = Graph::new(&p);
            let xv = g.constant(x.clone());
            let y = gen.ntb(&mut g, 0, xv).unwrap();
            assert_eq!(g.value(y).shape(), x.shape());
        }
    }

    #[test]
    fn ntb_with_zero_parameters_reduces_to_attention_scaling() {
        // Zero attention weights give heats of sigmoid(0) = 1/2 and zero
        // residual blocks are identities, so the block computes f + f/4.
        let gen = Generator::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p: ParameterSet<f64> = gen.init_params(&mut rng).unwrap();
        p.zero_prefix("image.ntb0");
        let x = rand_tensor(&[8, 6, 6], &mut rng);
        let mut g = Graph::new(&p);
        let xv = g.constant(x.clone());
        let y = gen.ntb(&mut g, 0, xv).unwrap();
        for (a, b) in g.value(y).data().iter().zip(x.data()) {
            assert_eq!(*a, b + b * 0.5 * 0.5);
        }

        // without attention units the zero body is exactly the identity
        let bare = Generator::new(GeneratorConfig {
            spatial_attention: false,
            channel_attention: false,
            ..tiny()
        })
        .unwrap();
        let mut q: ParameterSet<f64> = bare.init_params(&mut rng).unwrap();
        q.zero_prefix("image.ntb0");
        let mut g = Graph::new(&q);
        let xv = g.constant(x.clone());
        let y = bare.ntb(&mut g, 0, xv).unwrap();
        assert_eq!(g.value(y), &x.map(|v| v + v));
    }

    #[test]
    fn randomization_modes() {
        let p = ParameterSet::<f64>::new();
        let mut g = Graph::new(&p);
        let x = g.constant(Tensor::full(&[2, 3, 3], 1.5));
        let inf = randomization_block(&mut g, x, Mode::Inference);
        assert_eq!(inf, x);
        let a = randomization_block(&mut g, x, Mode::Train { seed: 4 });
        let b = randomization_block(&mut g, x, Mode::Train { seed: 4 });
        assert_eq!(g.value(a), g.value(b));
        assert_ne!(g.value(a), g.value(x));
    }

    #[test]
    fn zero_head_gives_identity_and_shapes_match() {
        let mut cfg = tiny();
        cfg.image_channels = 1;
        let gen = Generator::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p: ParameterSet<f64> = gen.init_params(&mut rng).unwrap();
        for (h, w) in [(64, 64), (100, 72), (9, 13)] {
            let y = rand_image(1, h, w, &mut rng);
            let m = NoiseLevelMap::constant(h, w, 0.1);
            let out = gen.forward(&p, &y, &m, Mode::Train { seed: 1 }).unwrap();
            assert_eq!(out, y);
        }
    }

    #[test]
    fn inference_is_deterministic_and_misalignment_rejected() {
        let gen = Generator::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p: ParameterSet<f64> = gen.init_params(&mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.gen_range(-0.05..0.05));
        }
        let y = rand_image(3, 12, 12, &mut rng);
        let m = NoiseLevelMap::constant(12, 12, 0.05);
        let a = gen.forward(&p, &y, &m, Mode::Inference).unwrap();
        let b = gen.forward(&p, &y, &m, Mode::Inference).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, y);
        let bad = NoiseLevelMap::constant(12, 10, 0.05);
        assert!(gen.forward(&p, &y, &bad, Mode::Inference).is_err());
        assert!(gen
            .forward(&p, &rand_image(1, 12, 12, &mut rng), &m, Mode::Inference)
            .is_err());
    }

    #[test]
    fn noise_encoder_zero_map_zero_bias_gives_zero_and_full_resolution() {
        let gen = Generator::new(tiny()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: ParameterSet<f64> = gen.init_params(&mut rng).unwrap();
        for (h, w) in [(16, 16), (17, 11)] {
            let mut g = Graph::new(&p);
            let m = g.constant(Tensor::zeros(&[1, h, w]));
            let f = gen
                .noise_level_encoder(&mut g, m, Mode::Train { seed: 3 }, true)
                .unwrap();
            assert_eq!(g.value(f).shape(), &[8, h, w]);
            assert!(g.value(f).data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn ablation_switches_remove_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let full: ParameterSet<f32> = Generator::new(tiny())
            .unwrap()
            .init_params(&mut rng)
            .unwrap();
        assert!(full.paths().any(|p| p.contains(".sa.")));
        let cfg = GeneratorConfig {
            spatial_attention: false,
            channel_attention: false,
            noise_branch: false,
            ..tiny()
        };
        let p: ParameterSet<f32> = Generator::new(cfg).unwrap().init_params(&mut rng).unwrap();
        assert!(!p
            .paths()
            .any(|p| p.contains(".sa.") || p.contains(".ca.") || p.starts_with("noise.")));
    }
}
