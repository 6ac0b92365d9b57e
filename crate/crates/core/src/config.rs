//! Flat key-value run configuration shared by every subcommand.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::noise_model::{
    BayerPattern, NoiseModelParams, AWGN_SIGMA_MAX, SIGMA_C_MAX, SIGMA_S_MAX,
};

/// How clean (or reference) images become training pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    /// Camera-pipeline noise added to the observation itself.
    Camera,
    /// Two independent AWGN corruptions of a clean image.
    Awgn,
    /// Store sources only; pairs are formed during training.
    None,
}

/// Table-4 style switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_gan: bool,
    pub no_ror: bool,
    pub no_ca: bool,
    pub no_sa: bool,
    pub n2c: bool,
    pub n2n: bool,
}

impl Ablation {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.no_gan, "no_gan"),
            (self.no_ror, "no_ror"),
            (self.no_ca, "no_ca"),
            (self.no_sa, "no_sa"),
            (self.n2c, "n2c"),
            (self.n2n, "n2n"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Everything that determines a run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    // data and synthesis
    pub image_channels: usize,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub pairing: Pairing,
    /// Pairing applied to manifest entries that carry no target.
    pub train_pairing: Pairing,
    pub crf_gamma: f64,
    pub enable_crf: bool,
    pub enable_bpd: bool,
    pub bayer_pattern: BayerPattern,
    pub sigma_s_max: f64,
    pub sigma_c_max: f64,
    pub awgn_sigma_max: f64,

    // model
    pub num_ntb: usize,
    pub rb_per_ntb: usize,
    pub channels: usize,
    pub ca_bottleneck: usize,
    pub noise_branch_pools: usize,
    pub disc_layers: usize,
    pub disc_base_channels: usize,

    // optimisation
    pub lambda_rec: f64,
    pub lr: f64,
    pub lr_halve_at: u64,
    pub total_iters: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub long_skip_last_iters: u64,
    pub adam_betas: [f64; 2],
    pub adam_eps: f64,
    pub checkpoint_every: u64,

    // ablations
    pub no_gan: bool,
    pub no_ror: bool,
    pub no_ca: bool,
    pub no_sa: bool,
    pub n2c: bool,
    pub n2n: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            image_channels: 3,
            patch_size: 64,
            patches_per_image: 4,
            pairing: Pairing::Camera,
            train_pairing: Pairing::Camera,
            crf_gamma: 2.2,
            enable_crf: true,
            enable_bpd: true,
            bayer_pattern: BayerPattern::Rggb,
            sigma_s_max: SIGMA_S_MAX,
            sigma_c_max: SIGMA_C_MAX,
            awgn_sigma_max: AWGN_SIGMA_MAX,
            num_ntb: 4,
            rb_per_ntb: 4,
            channels: 64,
            ca_bottleneck: 4,
            noise_branch_pools: 2,
            disc_layers: 4,
            disc_base_channels: 64,
            lambda_rec: 0.3,
            lr: 1e-4,
            lr_halve_at: 5_000,
            total_iters: 10_000,
            batch_size: 16,
            seed: 0,
            long_skip_last_iters: 3_000,
            adam_betas: [0.9, 0.999],
            adam_eps: 1e-8,
            checkpoint_every: 1_000,
            no_gan: false,
            no_ror: false,
            no_ca: false,
            no_sa: false,
            n2c: false,
            n2n: false,
        }
    }
}

/// The part of the configuration that shapes synthesized pair files.
#[derive(Serialize)]
struct SynthesisKey {
    image_channels: usize,
    patch_size: usize,
    patches_per_image: usize,
    pairing: Pairing,
    crf_gamma: f64,
    enable_crf: bool,
    enable_bpd: bool,
    bayer_pattern: BayerPattern,
    sigma_s_max: f64,
    sigma_c_max: f64,
    awgn_sigma_max: f64,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.image_channels != 1 && self.image_channels != 3 {
            return bad("image_channels must be 1 or 3".into());
        }
        if self.patch_size < 4 || !self.patch_size.is_multiple_of(2) {
            return bad("patch_size must be even and at least 4".into());
        }
        if self.lambda_rec.is_nan() || self.lambda_rec < 0.0 {
            return bad("lambda_rec must be non-negative".into());
        }
        if self.lr.is_nan() || self.lr <= 0.0 || self.batch_size == 0 || self.total_iters == 0 {
            return bad("lr, batch_size and total_iters must be positive".into());
        }
        if self.n2c && self.n2n {
            return bad("n2c and n2n are mutually exclusive".into());
        }
        if self.train_pairing == Pairing::None {
            return bad("train_pairing must be camera or awgn".into());
        }
        for (v, name) in [
            (self.sigma_s_max, "sigma_s_max"),
            (self.sigma_c_max, "sigma_c_max"),
            (self.awgn_sigma_max, "awgn_sigma_max"),
        ] {
            if v.is_nan() || v <= 0.0 {
                return bad(format!("{name} must be positive"));
            }
        }
        self.generator_config().validate()
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            no_gan: self.no_gan,
            no_ror: self.no_ror,
            no_ca: self.no_ca,
            no_sa: self.no_sa,
            n2c: self.n2c,
            n2n: self.n2n,
        }
    }

    pub fn with_ablation(&self, a: Ablation) -> Self {
        Self {
            no_gan: a.no_gan,
            no_ror: a.no_ror,
            no_ca: a.no_ca,
            no_sa: a.no_sa,
            n2c: a.n2c,
            n2n: a.n2n,
            ..self.clone()
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            image_channels: self.image_channels,
            num_ntb: self.num_ntb,
            rb_per_ntb: self.rb_per_ntb,
            channels: self.channels,
            ca_bottleneck: self.ca_bottleneck,
            kernel_size: 3,
            noise_branch_pools: self.noise_branch_pools,
            long_skip_noise_branch: false,
            spatial_attention: !self.no_sa,
            channel_attention: !self.no_ca,
            residual_on_residual: !self.no_ror,
            noise_branch: !self.n2n,
        }
    }

    pub fn discriminator_config(&self) -> Option<DiscriminatorConfig> {
        (!self.no_gan).then_some(DiscriminatorConfig {
            image_channels: self.image_channels,
            layers: self.disc_layers,
            base_channels: self.disc_base_channels,
            kernel: 4,
        })
    }

    /// Noise model with zero sigmas; sigmas are drawn per pair.
    pub fn noise_params(&self) -> NoiseModelParams {
        NoiseModelParams {
            sigma_s: 0.0,
            sigma_c: 0.0,
            crf_gamma: self.crf_gamma,
            enable_crf: self.enable_crf,
            enable_bpd: self.enable_bpd,
            bayer_pattern: self.bayer_pattern,
        }
    }

    /// SHA-256 over the synthesis-relevant keys.
    pub fn synthesis_hash(&self) -> String {
        let key = SynthesisKey {
            image_channels: self.image_channels,
            patch_size: self.patch_size,
            patches_per_image: self.patches_per_image,
            pairing: self.pairing,
            crf_gamma: self.crf_gamma,
            enable_crf: self.enable_crf,
            enable_bpd: self.enable_bpd,
            bayer_pattern: self.bayer_pattern,
            sigma_s_max: self.sigma_s_max,
            sigma_c_max: self.sigma_c_max,
            awgn_sigma_max: self.awgn_sigma_max,
        };
        let json = serde_json::to_vec(&key).expect("hash key serializes");
        Sha256::digest(json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
