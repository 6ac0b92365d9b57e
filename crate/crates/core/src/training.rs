//! Adversarial training of the noise transference generator.
//!
//! Objective: `L = L_GAN + λ·L_rec` with a patch discriminator. Each step
//! makes one discriminator update followed by one generator update, both
//! with Adam.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{Pairing, TrainConfig};
use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::{Generator, Mode};
use crate::image::{Dihedral, Image, NoiseLevelMap};
use crate::nn::{graph::sigmoid, Adam, AdamState, Graph, ParameterSet, Var};
use crate::noise_model::{make_awgn_pair, make_training_pair, TrainingPair};
use crate::scalar::Scalar;
use crate::seed::{self, stream};
use crate::tensor::Tensor;

// ---- losses ------------------------------------------------------------------

/// `log(1 + e^x)` without overflow.
pub fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn total_len<T: Scalar>(ts: &[Tensor<T>]) -> usize {
    ts.iter().map(Tensor::len).sum()
}

/// Squared L2 norm of each residual `z_hat − z`, averaged over the batch,
/// with its gradient with respect to each `z_hat`.
pub fn reconstruction_loss_with_grad<T: Scalar>(
    z_hat: &[Tensor<T>],
    z: &[Tensor<T>],
) -> (T, Vec<Tensor<T>>) {
    assert_eq!(z_hat.len(), z.len(), "stacks differ in length");
    let n = T::lit(z.len().max(1) as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grads = z_hat
        .iter()
        .zip(z)
        .map(|(a, b)| {
            assert_eq!(a.shape(), b.shape(), "unaligned stacks");
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&p, &q)| {
                    let d = p - q;
                    loss = loss + d * d;
                    two * d / n
                })
                .collect();
            Tensor::from_vec(a.shape(), data)
        })
        .collect();
    (loss / n, grads)
}

pub fn reconstruction_loss<T: Scalar>(z_hat: &[Tensor<T>], z: &[Tensor<T>]) -> T {
    reconstruction_loss_with_grad(z_hat, z).0
}

/// Negated conditional GAN objective for the discriminator:
/// `mean softplus(−real) + mean softplus(fake)`.
pub fn gan_loss_discriminator_with_grad<T: Scalar>(
    d_real: &[Tensor<T>],
    d_fake: &[Tensor<T>],
) -> (T, Vec<Tensor<T>>, Vec<Tensor<T>>) {
    let nr = T::lit(total_len(d_real).max(1) as f64);
    let nf = T::lit(total_len(d_fake).max(1) as f64);
    let mut lr = T::zero();
    let mut lf = T::zero();
    let gr = d_real
        .iter()
        .map(|t| {
            lr = lr + t.data().iter().map(|&v| softplus(-v)).sum::<T>();
            t.map(|v| -sigmoid(-v) / nr)
        })
        .collect();
    let gf = d_fake
        .iter()
        .map(|t| {
            lf = lf + t.data().iter().map(|&v| softplus(v)).sum::<T>();
            t.map(|v| sigmoid(v) / nf)
        })
        .collect();
    (lr / nr + lf / nf, gr, gf)
}

pub fn gan_loss_discriminator<T: Scalar>(d_real: &[Tensor<T>], d_fake: &[Tensor<T>]) -> T {
    gan_loss_discriminator_with_grad(d_real, d_fake).0
}

/// Non-saturating generator loss `mean softplus(−fake)`.
pub fn gan_loss_generator_with_grad<T: Scalar>(d_fake: &[Tensor<T>]) -> (T, Vec<Tensor<T>>) {
    let n = T::lit(total_len(d_fake).max(1) as f64);
    let mut l = T::zero();
    let g = d_fake
        .iter()
        .map(|t| {
            l = l + t.data().iter().map(|&v| softplus(-v)).sum::<T>();
            t.map(|v| -sigmoid(-v) / n)
        })
        .collect();
    (l / n, g)
}

pub fn gan_loss_generator<T: Scalar>(d_fake: &[Tensor<T>]) -> T {
    gan_loss_generator_with_grad(d_fake).0
}

// ---- schedule ----------------------------------------------------------------

/// Learning rate (halved from `lr_halve_at` on, inclusive) and whether the
/// noise branch long skip is linked.
pub fn schedule(iteration: u64, cfg: &TrainConfig) -> (f64, bool) {
    let lr = if iteration >= cfg.lr_halve_at {
        cfg.lr / 2.0
    } else {
        cfg.lr
    };
    let skip = iteration >= cfg.total_iters.saturating_sub(cfg.long_skip_last_iters);
    (lr, skip)
}

// ---- data --------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub enum Sample<T> {
    /// Image from which pairs are formed on the fly.
    Clean(Image<T>),
    /// Pre-synthesized pair.
    Pair(TrainingPair<T>),
}

impl<T: Scalar> Sample<T> {
    fn dims(&self) -> (usize, usize) {
        match self {
            Sample::Clean(x) => x.dims(),
            Sample::Pair(p) => p.source.dims(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset<T> {
    pub samples: Vec<Sample<T>>,
}

impl<T: Scalar> Dataset<T> {
    pub fn clean(images: Vec<Image<T>>) -> Self {
        Self {
            samples: images.into_iter().map(Sample::Clean).collect(),
        }
    }

    pub fn pairs(pairs: Vec<TrainingPair<T>>) -> Self {
        Self {
            samples: pairs.into_iter().map(Sample::Pair).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub sources: Vec<Image<T>>,
    pub targets: Vec<Image<T>>,
    pub maps: Vec<NoiseLevelMap<T>>,
    pub transforms: Vec<Dihedral>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.len() != self.len() || self.maps.len() != self.len() {
            return Err(Error::ShapeMismatch("batch stacks differ in length".into()));
        }
        for ((s, t), m) in self.sources.iter().zip(&self.targets).zip(&self.maps) {
            if !s.same_shape(t) || s.dims() != m.dims() {
                return Err(Error::ShapeMismatch("batch entries not aligned".into()));
            }
        }
        Ok(())
    }
}

/// Draws `batch_size` augmented patches for `iteration`. Identical
/// `(seed, iteration)` always produce the identical batch.
pub fn build_batch<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
    iteration: u64,
    seed: u64,
) -> Result<Batch<T>> {
    if dataset.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let p = cfg.patch_size;
    for s in &dataset.samples {
        let (h, w) = s.dims();
        if h < p || w < p {
            return Err(Error::PatchTooLarge {
                patch: p,
                height: h,
                width: w,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, &[stream::BATCH, iteration]));
    let mut batch = Batch {
        sources: Vec::with_capacity(cfg.batch_size),
        targets: Vec::with_capacity(cfg.batch_size),
        maps: Vec::with_capacity(cfg.batch_size),
        transforms: Vec::with_capacity(cfg.batch_size),
    };
    for _ in 0..cfg.batch_size {
        let sample = &dataset.samples[rng.gen_range(0..dataset.len())];
        let (h, w) = sample.dims();
        let top = rng.gen_range(0..=h - p);
        let left = rng.gen_range(0..=w - p);
        let t = Dihedral::new(rng.gen_range(0..8));
        let pair_seed: u64 = rng.gen();
        let (source, target, map) = match sample {
            Sample::Clean(x) => {
                let x = x.crop(top, left, p, p)?.transform(t);
                let pair = match cfg.train_pairing {
                    Pairing::Awgn => {
                        let sy = cfg.awgn_sigma_max - rng.gen_range(0.0..cfg.awgn_sigma_max);
                        let sz = cfg.awgn_sigma_max - rng.gen_range(0.0..cfg.awgn_sigma_max);
                        make_awgn_pair(&x, sy, sz, pair_seed)
                    }
                    _ => {
                        let params = cfg.noise_params().sample_sigmas(
                            &mut rng,
                            cfg.sigma_s_max,
                            cfg.sigma_c_max,
                        );
                        make_training_pair(&x, &params, pair_seed)?
                    }
                };
                if cfg.n2c {
                    // camera pairs keep `x` as source, so the corrupted target
                    // becomes the input
                    let noisy = match cfg.train_pairing {
                        Pairing::Awgn => pair.source,
                        _ => pair.target,
                    };
                    (noisy, x, NoiseLevelMap::zeros(p, p))
                } else {
                    (pair.source, pair.target, pair.target_map)
                }
            }
            Sample::Pair(pair) => {
                let s = pair.source.crop(top, left, p, p)?.transform(t);
                let z = pair.target.crop(top, left, p, p)?.transform(t);
                if cfg.n2c {
                    (z, s, NoiseLevelMap::zeros(p, p))
                } else {
                    let m = pair.target_map.crop(top, left, p, p)?.transform(t);
                    (s, z, m)
                }
            }
        };
        batch.sources.push(source);
        batch.targets.push(target);
        batch.maps.push(map);
        batch.transforms.push(t);
    }
    Ok(batch)
}

// ---- optimisation ------------------------------------------------------------

/// Trainable state of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    pub iteration: u64,
    pub gen_params: ParameterSet<T>,
    pub gen_opt: AdamState<T>,
    pub disc_params: Option<ParameterSet<T>>,
    pub disc_opt: Option<AdamState<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub iteration: u64,
    pub lr: f64,
    pub long_skip: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub g_adv: Option<f64>,
    pub g_rec: f64,
    pub g_total: f64,
    pub g_grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_grad_norm: Option<f64>,
    /// Largest noise-level value fed to the generator in this batch.
    pub map_max: f64,
}

struct GenPass<'p, T> {
    graph: Graph<'p, T>,
    output: Var,
}

/// Seed of the randomization factors for sample `index` of a step.
pub fn randomization_seed(cfg: &TrainConfig, iteration: u64, index: usize) -> u64 {
    seed::derive(cfg.seed, &[stream::RANDOMIZE, iteration, index as u64])
}

fn generator_pass<'p, T: Scalar>(
    gen: &Generator,
    params: &'p ParameterSet<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    iteration: u64,
    long_skip: bool,
) -> Result<Vec<GenPass<'p, T>>> {
    batch
        .sources
        .iter()
        .zip(&batch.maps)
        .enumerate()
        .map(|(i, (y, m))| {
            let mut graph = Graph::new(params);
            let yv = graph.constant(y.to_tensor());
            let mv = graph.constant(m.to_tensor());
            let mode = Mode::Train {
                seed: randomization_seed(cfg, iteration, i),
            };
            let output = gen.build(&mut graph, yv, mv, mode, long_skip)?;
            Ok(GenPass { graph, output })
        })
        .collect()
}

fn discriminator_grads<T: Scalar>(
    disc: &Discriminator,
    params: &ParameterSet<T>,
    batch: &Batch<T>,
    fakes: &[Tensor<T>],
) -> Result<(T, ParameterSet<T>)> {
    // logits of every sample first: the loss normalisation is global
    let mut graphs = Vec::with_capacity(fakes.len());
    let (mut real, mut fake) = (Vec::new(), Vec::new());
    for ((m, z), f) in batch.maps.iter().zip(&batch.targets).zip(fakes) {
        let mut g = Graph::new(params);
        let mv = g.constant(m.to_tensor());
        let zv = g.constant(z.to_tensor());
        let fv = g.constant(f.clone());
        let r = disc.build(&mut g, mv, zv)?;
        let q = disc.build(&mut g, mv, fv)?;
        real.push(g.value(r).clone());
        fake.push(g.value(q).clone());
        graphs.push((g, r, q));
    }
    let (loss, gr, gf) = gan_loss_discriminator_with_grad(&real, &fake);
    let mut grads = params.zeros_like();
    for ((g, r, q), (sr, sf)) in graphs.iter().zip(gr.iter().zip(&gf)) {
        let back = g.backward(&[(*r, sr), (*q, sf)]);
        grads.add_assign(&g.param_grads(&back));
    }
    Ok((loss, grads))
}

struct GenGrads<T> {
    adv: Option<T>,
    rec: T,
    total: T,
    grads: ParameterSet<T>,
}

fn generator_grads<T: Scalar>(
    passes: &[GenPass<'_, T>],
    gen_params: &ParameterSet<T>,
    disc: Option<(&Discriminator, &ParameterSet<T>)>,
    batch: &Batch<T>,
    lambda: f64,
) -> Result<GenGrads<T>> {
    let fakes: Vec<Tensor<T>> = passes
        .iter()
        .map(|p| p.graph.value(p.output).clone())
        .collect();
    let targets: Vec<Tensor<T>> = batch.targets.iter().map(Image::to_tensor).collect();
    let (rec, rec_grads) = reconstruction_loss_with_grad(&fakes, &targets);

    let (adv, mut seeds) = match disc {
        None => (None, rec_grads),
        Some((d, dparams)) => {
            let lambda = T::lit(lambda);
            let mut graphs = Vec::with_capacity(fakes.len());
            let mut logits = Vec::with_capacity(fakes.len());
            for (m, f) in batch.maps.iter().zip(&fakes) {
                let mut g = Graph::frozen(dparams);
                let mv = g.constant(m.to_tensor());
                let fv = g.input(f.clone());
                let out = d.build(&mut g, mv, fv)?;
                logits.push(g.value(out).clone());
                graphs.push((g, fv, out));
            }
            let (adv, lg) = gan_loss_generator_with_grad(&logits);
            let seeds = graphs
                .iter()
                .zip(&lg)
                .zip(rec_grads)
                .map(|(((g, fv, out), seed), mut rg)| {
                    let back = g.backward(&[(*out, seed)]);
                    rg.scale(lambda);
                    rg.add_assign(back.get(*fv).expect("fake input gradient"));
                    rg
                })
                .collect();
            (Some(adv), seeds)
        }
    };
    let total = match adv {
        Some(a) => a + T::lit(lambda) * rec,
        None => rec,
    };
    let mut grads = gen_params.zeros_like();
    for (p, s) in passes.iter().zip(seeds.drain(..)) {
        let back = p.graph.backward(&[(p.output, &s)]);
        grads.add_assign(&p.graph.param_grads(&back));
    }
    Ok(GenGrads {
        adv,
        rec,
        total,
        grads,
    })
}

/// Generator objective `L_GAN + λ·L_rec` (or `L_rec` alone without a
/// discriminator) and its parameter gradient.
pub fn generator_objective<T: Scalar>(
    gen: &Generator,
    gen_params: &ParameterSet<T>,
    disc: Option<(&Discriminator, &ParameterSet<T>)>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<(T, ParameterSet<T>)> {
    batch.validate()?;
    let (_, skip) = schedule(iteration, cfg);
    let passes = generator_pass(gen, gen_params, batch, cfg, iteration, skip)?;
    let g = generator_grads(&passes, gen_params, disc, batch, cfg.lambda_rec)?;
    Ok((g.total, g.grads))
}

/// Discriminator loss on real targets and generated samples, with its
/// parameter gradient (generator held fixed).
pub fn discriminator_objective<T: Scalar>(
    gen: &Generator,
    gen_params: &ParameterSet<T>,
    disc: &Discriminator,
    disc_params: &ParameterSet<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    iteration: u64,
) -> Result<(T, ParameterSet<T>)> {
    batch.validate()?;
    let (_, skip) = schedule(iteration, cfg);
    let passes = generator_pass(gen, gen_params, batch, cfg, iteration, skip)?;
    let fakes: Vec<_> = passes
        .iter()
        .map(|p| p.graph.value(p.output).clone())
        .collect();
    discriminator_grads(disc, disc_params, batch, &fakes)
}

fn finite_or<T: Scalar>(v: T, what: &str, iteration: u64) -> Result<f64> {
    let v = v.as_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            iteration,
        })
    }
}

/// One discriminator update then one generator update. On a non-finite loss
/// or gradient the state is left untouched and an error is returned.
pub fn train_step<T: Scalar>(
    batch: &Batch<T>,
    gen: &Generator,
    disc: Option<&Discriminator>,
    state: &mut TrainState<T>,
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    batch.validate()?;
    let it = state.iteration;
    let (lr, long_skip) = schedule(it, cfg);
    let adam = Adam {
        beta1: cfg.adam_betas[0],
        beta2: cfg.adam_betas[1],
        eps: cfg.adam_eps,
    };
    let map_max = batch
        .maps
        .iter()
        .map(|m| m.max().as_f64())
        .fold(0.0, f64::max);

    let passes = generator_pass(gen, &state.gen_params, batch, cfg, it, long_skip)?;

    let mut d_metrics = None;
    let mut new_disc = None;
    if let (Some(d), Some(dparams), Some(dopt)) = (disc, &state.disc_params, &state.disc_opt) {
        let fakes: Vec<_> = passes
            .iter()
            .map(|p| p.graph.value(p.output).clone())
            .collect();
        let (loss, grads) = discriminator_grads(d, dparams, batch, &fakes)?;
        let loss = finite_or(loss, "discriminator loss", it)?;
        let norm = finite_or(grads.sq_norm().sqrt(), "discriminator gradient", it)?;
        let mut p = dparams.clone();
        let mut o = dopt.clone();
        adam.update(&mut p, &grads, &mut o, lr);
        d_metrics = Some((loss, norm));
        new_disc = Some((p, o));
    }

    let disc_ref = match (disc, &new_disc) {
        (Some(d), Some((p, _))) => Some((d, p)),
        _ => None,
    };
    let g = generator_grads(&passes, &state.gen_params, disc_ref, batch, cfg.lambda_rec)?;
    let g_total = finite_or(g.total, "generator loss", it)?;
    let g_norm = finite_or(g.grads.sq_norm().sqrt(), "generator gradient", it)?;
    let metrics = StepMetrics {
        iteration: it,
        lr,
        long_skip,
        d_loss: d_metrics.map(|m| m.0),
        g_adv: g.adv.map(|a| a.as_f64()),
        g_rec: g.rec.as_f64(),
        g_total,
        g_grad_norm: g_norm,
        d_grad_norm: d_metrics.map(|m| m.1),
        map_max,
    };
    drop(passes);

    if let Some((p, o)) = new_disc {
        state.disc_params = Some(p);
        state.disc_opt = Some(o);
    }
    adam.update(&mut state.gen_params, &g.grads, &mut state.gen_opt, lr);
    state.iteration += 1;
    Ok(metrics)
}

// ---- run loop ----------------------------------------------------------------

/// File names written into a run directory.
pub mod files {
    pub const METRICS: &str = "metrics.jsonl";
    pub const CONFIG: &str = "config.toml";
    pub const FINAL: &str = "final.safetensors";
    pub const DIAGNOSTIC: &str = "diagnostic.safetensors";
    pub const DIAGNOSTIC_INFO: &str = "diagnostic.json";

    pub fn checkpoint(iteration: u64) -> String {
        format!("checkpoint_{iteration:08}.safetensors")
    }
}

/// Owns the models, parameters and optimiser state of one run. Every random
/// draw is derived from `(cfg.seed, iteration)`, so the iteration counter is
/// the complete random stream state and a restored checkpoint continues the
/// exact trajectory.
pub struct Trainer<T> {
    cfg: TrainConfig,
    gen: Generator,
    disc: Option<Discriminator>,
    state: TrainState<T>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let gen = Generator::new(cfg.generator_config())?;
        let disc = cfg
            .discriminator_config()
            .map(Discriminator::new)
            .transpose()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[stream::INIT_GEN]));
        let gen_params = gen.init_params(&mut rng)?;
        let disc_params = match &disc {
            Some(d) => {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[stream::INIT_DISC]));
                Some(d.init_params(&mut rng)?)
            }
            None => None,
        };
        let state = TrainState {
            iteration: 0,
            gen_opt: AdamState::new(&gen_params),
            disc_opt: disc_params.as_ref().map(AdamState::new),
            gen_params,
            disc_params,
        };
        Ok(Self {
            cfg,
            gen,
            disc,
            state,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let cfg = ck.train;
        cfg.validate()?;
        let gen = Generator::new(cfg.generator_config())?;
        let disc = cfg
            .discriminator_config()
            .map(Discriminator::new)
            .transpose()?;
        if ck.state.disc_params.is_some() != disc.is_some() {
            return Err(Error::Checkpoint(
                "discriminator presence does not match the stored config".into(),
            ));
        }
        Ok(Self {
            cfg,
            gen,
            disc,
            state: ck.state,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn generator(&self) -> &Generator {
        &self.gen
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.disc.as_ref()
    }

    pub fn state(&self) -> &TrainState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut TrainState<T> {
        &mut self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.iteration >= self.cfg.total_iters
    }

    pub fn step(&mut self, dataset: &Dataset<T>) -> Result<StepMetrics> {
        let batch = build_batch(dataset, &self.cfg, self.state.iteration, self.cfg.seed)?;
        train_step(
            &batch,
            &self.gen,
            self.disc.as_ref(),
            &mut self.state,
            &self.cfg,
        )
    }

    /// Snapshot for saving. The stored generator config has the long skip
    /// set as it was during the last completed step.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        let mut generator = self.gen.config().clone();
        generator.long_skip_noise_branch =
            self.state.iteration > 0 && schedule(self.state.iteration - 1, &self.cfg).1;
        Checkpoint {
            generator,
            discriminator: self.disc.as_ref().map(|d| d.config().clone()),
            train: self.cfg.clone(),
            state: self.state.clone(),
        }
    }

    /// Trains until `total_iters`, appending one JSON line per step to the
    /// metrics log in `dir`, checkpointing every `checkpoint_every` steps and
    /// at the end.
    pub fn run(&mut self, dataset: &Dataset<T>, dir: &Path) -> Result<()> {
        self.run_until(dataset, dir, self.cfg.total_iters)
    }

    /// Like [`Trainer::run`] but stops after iteration `stop` (exclusive);
    /// the final checkpoint is written only when training completes.
    pub fn run_until(&mut self, dataset: &Dataset<T>, dir: &Path, stop: u64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(files::CONFIG);
        std::fs::write(&cfg_path, self.cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
        let log_path = dir.join(files::METRICS);
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let stop = stop.min(self.cfg.total_iters);
        while self.state.iteration < stop {
            let metrics = match self.step(dataset) {
                Ok(m) => m,
                Err(e @ Error::NonFinite { .. }) => {
                    self.dump_diagnostics(dir, &e)?;
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            let line = serde_json::to_string(&metrics).expect("metrics serialize");
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            let it = self.state.iteration;
            if self.cfg.checkpoint_every > 0 && it.is_multiple_of(self.cfg.checkpoint_every) {
                self.checkpoint().save(&dir.join(files::checkpoint(it)))?;
            }
            if it.is_multiple_of(100) {
                log::info!(
                    "iteration {it}: g_total {:.5} g_rec {:.5}",
                    metrics.g_total,
                    metrics.g_rec
                );
            }
        }
        if self.is_done() {
            self.checkpoint().save(&dir.join(files::FINAL))?;
        }
        Ok(())
    }

    fn dump_diagnostics(&self, dir: &Path, err: &Error) -> Result<()> {
        self.checkpoint().save(&dir.join(files::DIAGNOSTIC))?;
        let info = serde_json::json!({
            "error": err.to_string(),
            "iteration": self.state.iteration,
            "gen_params_finite": self.state.gen_params.is_finite(),
            "disc_params_finite": self.state.disc_params.as_ref().map(ParameterSet::is_finite),
            "seed": self.cfg.seed,
        });
        let path = dir.join(files::DIAGNOSTIC_INFO);
        std::fs::write(&path, serde_json::to_string_pretty(&info).expect("json"))
            .map_err(|e| Error::io(&path, e))
    }
}

/// Reads a metrics log written by [`Trainer::run`].
pub fn read_metrics(path: &Path) -> Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, e)))
        .collect()
}
