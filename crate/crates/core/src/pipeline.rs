//! Library side of the command-line tool: every subcommand is a function
//! here so it can be driven from tests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::{Ablation, Pairing, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{self, format_metric, EvalReport};
use crate::generator::Generator;
use crate::image::{Image, NoiseLevelMap};
use crate::manifest::{self, Manifest, ManifestEntry};
use crate::nn::ParameterSet;
use crate::noise_model::{gaussian_like, make_awgn_pair, make_training_pair};
use crate::scalar::Scalar;
use crate::seed::{self, stream};
use crate::training::{files, read_metrics, Trainer};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

/// Crops `patches_per_image` patches from every readable image in
/// `image_dir` and writes pairs according to `cfg.pairing` into
/// `out_dir/pairs`, plus `out_dir/manifest.json`.
///
/// With `eval_sigma` set, writes evaluation pairs instead: the source is the
/// patch with AWGN of that standard deviation and the target is the clean
/// patch.
pub fn synthesize<T: Scalar>(
    cfg: &TrainConfig,
    image_dir: &Path,
    out_dir: &Path,
    eval_sigma: Option<f64>,
) -> Result<Manifest> {
    cfg.validate()?;
    if let Some(s) = eval_sigma {
        if s.is_nan() || s < 0.0 {
            return Err(Error::Config(
                "evaluation sigma must be non-negative".into(),
            ));
        }
    }
    let pairs_dir = out_dir.join("pairs");
    create_dir(&pairs_dir)?;
    let mut manifest = Manifest::new(cfg.seed, cfg.synthesis_hash(), out_dir);
    let p = cfg.patch_size;

    for (i, path) in list_images(image_dir)?.iter().enumerate() {
        let img = match Image::<T>::load(path, Some(cfg.image_channels)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let (h, w) = img.dims();
        if h < p || w < p {
            log::warn!("skipping {}: smaller than {p}x{p} patches", path.display());
            continue;
        }
        let name = format!("{i:04}_{}", stem(path));
        for k in 0..cfg.patches_per_image {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(
                cfg.seed,
                &[stream::SYNTH, i as u64, k as u64],
            ));
            let x = img.crop(rng.gen_range(0..=h - p), rng.gen_range(0..=w - p), p, p)?;
            let pair_seed: u64 = rng.gen();
            let base = format!("{name}_{k:02}");
            let rel = |suffix: &str| PathBuf::from("pairs").join(format!("{base}_{suffix}"));
            let mut entry = ManifestEntry {
                source: rel("source.png"),
                target: None,
                map: None,
                sigma_s: 0.0,
                sigma_c: 0.0,
                awgn: None,
                seed: pair_seed,
            };
            let mut outputs = Vec::new();
            if let Some(sigma) = eval_sigma {
                let mut noise_rng = ChaCha8Rng::seed_from_u64(pair_seed);
                let n = gaussian_like(&x, sigma, &mut noise_rng);
                outputs.push((entry.source.clone(), x.zip_map(&n, |a, b| a + b).clamp01()));
                entry.target = Some(rel("target.png"));
                outputs.push((rel("target.png"), x));
                entry.awgn = Some([sigma, 0.0]);
            } else {
                match cfg.pairing {
                    Pairing::None => outputs.push((entry.source.clone(), x)),
                    Pairing::Camera => {
                        let params = cfg.noise_params().sample_sigmas(
                            &mut rng,
                            cfg.sigma_s_max,
                            cfg.sigma_c_max,
                        );
                        let pair = make_training_pair(&x, &params, pair_seed)?;
                        entry.sigma_s = params.sigma_s;
                        entry.sigma_c = params.sigma_c;
                        entry.target = Some(rel("target.png"));
                        entry.map = Some(rel("map.npy"));
                        pair.target_map.save_npy(&out_dir.join(rel("map.npy")))?;
                        outputs.push((entry.source.clone(), pair.source));
                        outputs.push((rel("target.png"), pair.target));
                    }
                    Pairing::Awgn => {
                        let max = cfg.awgn_sigma_max;
                        let sy = max - rng.gen_range(0.0..max);
                        let sz = max - rng.gen_range(0.0..max);
                        let pair = make_awgn_pair(&x, sy, sz, pair_seed);
                        entry.awgn = Some([sy, sz]);
                        entry.target = Some(rel("target.png"));
                        entry.map = Some(rel("map.npy"));
                        pair.target_map.save_npy(&out_dir.join(rel("map.npy")))?;
                        outputs.push((entry.source.clone(), pair.source));
                        outputs.push((rel("target.png"), pair.target));
                    }
                }
            }
            for (rel, img) in outputs {
                img.save_png(&out_dir.join(rel))?;
            }
            manifest.entries.push(entry);
        }
    }
    manifest.save(&out_dir.join(manifest::FILE_NAME))?;
    Ok(manifest)
}

fn load_checked_manifest(cfg: &TrainConfig, path: &Path) -> Result<Manifest> {
    let m = Manifest::load(path)?;
    m.check_config(cfg)?;
    Ok(m)
}

/// Trains on the manifest's data into `out_dir`. With `resume`, continues
/// from a checkpoint of the same configuration. `stop_at` ends the run early
/// (exclusive iteration index).
pub fn train<T: Scalar>(
    cfg: &TrainConfig,
    manifest_path: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
    stop_at: Option<u64>,
) -> Result<Trainer<T>> {
    cfg.validate()?;
    let manifest = load_checked_manifest(cfg, manifest_path)?;
    let dataset = manifest.dataset::<T>(cfg.image_channels)?;
    let mut trainer = match resume {
        None => Trainer::new(cfg.clone())?,
        Some(path) => {
            let ck = Checkpoint::<T>::load(path)?;
            if &ck.train != cfg {
                return Err(Error::Config(format!(
                    "{} was written with a different configuration",
                    path.display()
                )));
            }
            Trainer::from_checkpoint(ck)?
        }
    };
    trainer.run_until(&dataset, out_dir, stop_at.unwrap_or(cfg.total_iters))?;
    Ok(trainer)
}

/// Generator and parameters from a checkpoint. When `cfg` is given the
/// checkpoint must match its model settings.
pub fn load_model<T: Scalar>(
    checkpoint: &Path,
    cfg: Option<&TrainConfig>,
) -> Result<(Generator, ParameterSet<T>)> {
    let ck = Checkpoint::<T>::load(checkpoint)?;
    if let Some(cfg) = cfg {
        ck.check_generator(&cfg.generator_config())?;
    }
    Ok((Generator::new(ck.generator)?, ck.state.gen_params))
}

fn output_path(input: &Path, out_dir: Option<&Path>, suffix: &str) -> PathBuf {
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| input.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    dir.join(format!("{}{suffix}", stem(input)))
}

/// Writes `<stem>_denoised.png` for each input.
pub fn denoise_files<T: Scalar>(
    gen: &Generator,
    params: &ParameterSet<T>,
    inputs: &[PathBuf],
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    if let Some(d) = out_dir {
        create_dir(d)?;
    }
    inputs
        .iter()
        .map(|input| {
            let y = Image::<T>::load(input, Some(gen.config().image_channels))?;
            let out = evaluation::denoise(gen, params, &y)?;
            let path = output_path(input, out_dir, "_denoised.png");
            out.save_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// Target noise level for transference: a constant or a stored map.
#[derive(Clone, Debug, PartialEq)]
pub enum MapSpec {
    Constant(f64),
    File(PathBuf),
}

impl std::str::FromStr for MapSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<f64>() {
            Ok(v) if v >= 0.0 && v.is_finite() => Ok(MapSpec::Constant(v)),
            Ok(_) => Err(Error::Config(format!(
                "noise level {s} must be finite and non-negative"
            ))),
            Err(_) => Ok(MapSpec::File(PathBuf::from(s))),
        }
    }
}

impl MapSpec {
    pub fn resolve<T: Scalar>(&self, height: usize, width: usize) -> Result<NoiseLevelMap<T>> {
        match self {
            MapSpec::Constant(v) => Ok(NoiseLevelMap::constant(height, width, T::lit(*v))),
            MapSpec::File(p) => {
                let m = NoiseLevelMap::load_npy(p)?;
                if m.dims() != (height, width) {
                    return Err(Error::ShapeMismatch(format!(
                        "{}: map is {:?}, image is {:?}",
                        p.display(),
                        m.dims(),
                        (height, width)
                    )));
                }
                Ok(m)
            }
        }
    }
}

/// Writes `<stem>_transfer.png` and the map used, `<stem>_transfer_map.npy`.
/// Input `i` uses randomization seed `derive(seed, [i])`.
pub fn transfer_files<T: Scalar>(
    gen: &Generator,
    params: &ParameterSet<T>,
    inputs: &[PathBuf],
    map: &MapSpec,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    if let Some(d) = out_dir {
        create_dir(d)?;
    }
    inputs
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let y = Image::<T>::load(input, Some(gen.config().image_channels))?;
            let (h, w) = y.dims();
            let m = map.resolve::<T>(h, w)?;
            let out =
                evaluation::transfer_noise(gen, params, &y, &m, seed::derive(seed, &[i as u64]))?;
            let path = output_path(input, out_dir, "_transfer.png");
            out.save_png(&path)?;
            m.save_npy(&output_path(input, out_dir, "_transfer_map.npy"))?;
            Ok(path)
        })
        .collect()
}

/// Denoises every (source, target) entry of the manifest and scores it.
pub fn eval<T: Scalar>(
    cfg: &TrainConfig,
    gen: &Generator,
    params: &ParameterSet<T>,
    manifest_path: &Path,
    report_path: &Path,
) -> Result<EvalReport> {
    let manifest = load_checked_manifest(cfg, manifest_path)?;
    let entries = manifest.eval_entries();
    let report = evaluation::evaluate_dataset(&entries, gen.config().image_channels, |y| {
        evaluation::denoise(gen, params, y)
    });
    if let Some(parent) = report_path.parent() {
        create_dir(parent)?;
    }
    report.save(report_path)?;
    Ok(report)
}

/// The switch combinations of the ablation table, left to right: GAN only,
/// GAN+RoR, GAN+RoR+CA, GAN+RoR+SA, GAN+CA+SA, no GAN, full model, and the
/// noise-to-clean and noise-to-noise regimes.
pub const ABLATION_MATRIX: [Ablation; 9] = {
    const fn a(
        no_gan: bool,
        no_ror: bool,
        no_ca: bool,
        no_sa: bool,
        n2c: bool,
        n2n: bool,
    ) -> Ablation {
        Ablation {
            no_gan,
            no_ror,
            no_ca,
            no_sa,
            n2c,
            n2n,
        }
    }
    [
        a(false, true, true, true, false, false),
        a(false, false, true, true, false, false),
        a(false, false, false, true, false, false),
        a(false, false, true, false, false, false),
        a(false, true, false, false, false, false),
        a(true, false, false, false, false, false),
        a(false, false, false, false, false, false),
        a(false, false, false, false, true, false),
        a(false, false, false, false, false, true),
    ]
};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    pub label: String,
    pub dir: PathBuf,
    pub iterations: u64,
    pub final_rec: f64,
    pub parameters: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

/// Trains every configuration of [`ABLATION_MATRIX`] into
/// `out_dir/<label>` and writes `out_dir/ablation.csv`. With an evaluation
/// manifest each final model is also scored.
pub fn ablate<T: Scalar>(
    cfg: &TrainConfig,
    manifest_path: &Path,
    out_dir: &Path,
    eval_manifest: Option<&Path>,
) -> Result<Vec<AblationRun>> {
    cfg.validate()?;
    load_checked_manifest(cfg, manifest_path)?;
    if let Some(m) = eval_manifest {
        load_checked_manifest(cfg, m)?;
    }
    create_dir(out_dir)?;
    let mut runs = Vec::new();
    for a in ABLATION_MATRIX {
        let run_cfg = cfg.with_ablation(a);
        let label = a.label();
        let dir = out_dir.join(&label);
        log::info!("ablation {label}");
        let trainer = train::<T>(&run_cfg, manifest_path, &dir, None, None)?;
        let metrics = read_metrics(&dir.join(files::METRICS))?;
        let (psnr, ssim) = match eval_manifest {
            Some(m) => {
                let ck = trainer.checkpoint();
                let gen = Generator::new(ck.generator)?;
                let report = eval(
                    &run_cfg,
                    &gen,
                    &ck.state.gen_params,
                    m,
                    &dir.join("eval.csv"),
                )?;
                (report.mean_psnr(), report.mean_ssim())
            }
            None => (None, None),
        };
        runs.push(AblationRun {
            label,
            dir,
            iterations: trainer.state().iteration,
            final_rec: metrics.last().map_or(f64::NAN, |m| m.g_rec),
            parameters: trainer.state().gen_params.numel(),
            psnr,
            ssim,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "iterations",
        "final_rec",
        "parameters",
        "psnr",
        "ssim",
    ])
    .expect("in-memory write");
    for r in &runs {
        w.write_record([
            r.label.clone(),
            r.iterations.to_string(),
            format!("{:.6}", r.final_rec),
            r.parameters.to_string(),
            r.psnr.map(format_metric).unwrap_or_default(),
            r.ssim.map(format_metric).unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    let path = out_dir.join("ablation.csv");
    std::fs::write(&path, w.into_inner().expect("flush")).map_err(|e| Error::io(&path, e))?;
    Ok(runs)
}
