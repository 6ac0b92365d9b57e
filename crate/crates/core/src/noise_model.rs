//! Camera-pipeline noise synthesis and training-pair construction.
//!
//! A clean-ish observation `y` is mapped to irradiance `L = icrf(y)`,
//! corrupted with heterogeneous Gaussian noise of variance
//! `L·σ_s² + σ_c²`, pushed back through the response curve and a Bayer
//! mosaic/demosaic round trip. The synthetic noise is the difference between
//! the noisy and the noise-free branch of that pipeline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, IrradianceImage, NoiseLevelMap};
use crate::scalar::Scalar;

/// Upper bound of the signal-dependent coefficient when sampled for training.
pub const SIGMA_S_MAX: f64 = 0.06;
/// Upper bound of the signal-independent std when sampled for training.
pub const SIGMA_C_MAX: f64 = 0.03;
/// Upper bound of the AWGN levels used for paired training.
pub const AWGN_SIGMA_MAX: f64 = 75.0 / 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum BayerPattern {
    #[default]
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

impl BayerPattern {
    /// Colour index (0 = R, 1 = G, 2 = B) sampled at `(y, x)`.
    pub fn color_at(self, y: usize, x: usize) -> usize {
        let layout = match self {
            BayerPattern::Rggb => [0, 1, 1, 2],
            BayerPattern::Bggr => [2, 1, 1, 0],
            BayerPattern::Grbg => [1, 0, 2, 1],
            BayerPattern::Gbrg => [1, 2, 0, 1],
        };
        layout[(y % 2) * 2 + x % 2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModelParams {
    pub sigma_s: f64,
    pub sigma_c: f64,
    pub crf_gamma: f64,
    pub enable_crf: bool,
    pub enable_bpd: bool,
    pub bayer_pattern: BayerPattern,
}

impl Default for NoiseModelParams {
    fn default() -> Self {
        Self {
            sigma_s: 0.0,
            sigma_c: 0.0,
            crf_gamma: 2.2,
            enable_crf: true,
            enable_bpd: true,
            bayer_pattern: BayerPattern::Rggb,
        }
    }
}

impl NoiseModelParams {
    pub fn with_sigmas(self, sigma_s: f64, sigma_c: f64) -> Self {
        Self {
            sigma_s,
            sigma_c,
            ..self
        }
    }

    /// Draws `σ_s ~ U(0, s_max]` and `σ_c ~ U(0, c_max]` independently.
    pub fn sample_sigmas<R: Rng>(self, rng: &mut R, s_max: f64, c_max: f64) -> Self {
        let s = s_max - rng.gen_range(0.0..s_max);
        let c = c_max - rng.gen_range(0.0..c_max);
        self.with_sigmas(s, c)
    }

    fn validate(&self) -> Result<()> {
        if !(self.sigma_s >= 0.0 && self.sigma_c >= 0.0) {
            return Err(Error::Config("noise sigmas must be non-negative".into()));
        }
        if !(self.crf_gamma > 0.0 && self.crf_gamma.is_finite()) {
            return Err(Error::Config("crf_gamma must be positive".into()));
        }
        Ok(())
    }
}

/// `(y, (M_z, z))`: source observation, target observation and the noise
/// level map of the target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<T> {
    pub source: Image<T>,
    pub target: Image<T>,
    pub target_map: NoiseLevelMap<T>,
}

// Odd extension keeps the curve finite and invertible for the negative
// values that the noisy branch can produce.
fn signed_pow<T: Scalar>(v: T, e: T) -> T {
    if v < T::zero() {
        -(-v).powf(e)
    } else {
        v.powf(e)
    }
}

pub fn apply_icrf<T: Scalar>(y: &Image<T>, params: &NoiseModelParams) -> IrradianceImage<T> {
    if !params.enable_crf {
        return IrradianceImage(y.clone());
    }
    let g = T::lit(params.crf_gamma);
    IrradianceImage(y.map(|v| signed_pow(v, g)))
}

pub fn apply_crf<T: Scalar>(l: &IrradianceImage<T>, params: &NoiseModelParams) -> Image<T> {
    crf(&l.0, params)
}

fn crf<T: Scalar>(l: &Image<T>, params: &NoiseModelParams) -> Image<T> {
    if !params.enable_crf {
        return l.clone();
    }
    let inv = T::lit(1.0 / params.crf_gamma);
    l.map(|v| signed_pow(v, inv))
}

/// `M_z = sqrt(L·σ_s² + σ_c²)`, with `L` reduced to one plane by channel mean.
pub fn compute_noise_level_map<T: Scalar>(
    l: &IrradianceImage<T>,
    params: &NoiseModelParams,
) -> NoiseLevelMap<T> {
    let s2 = T::lit(params.sigma_s * params.sigma_s);
    let c2 = T::lit(params.sigma_c * params.sigma_c);
    let (h, w) = l.0.dims();
    let data =
        l.0.channel_mean()
            .into_iter()
            .map(|v| (v.max(T::zero()) * s2 + c2).sqrt())
            .collect();
    NoiseLevelMap::new(h, w, data).expect("finite non-negative map")
}

/// Zero-mean Gaussian noise with per-element variance `L·σ_s² + σ_c²`.
pub fn sample_heterogeneous_noise<T: Scalar>(
    l: &IrradianceImage<T>,
    params: &NoiseModelParams,
    seed: u64,
) -> Image<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s2 = params.sigma_s * params.sigma_s;
    let c2 = params.sigma_c * params.sigma_c;
    let img = &l.0;
    let data = img
        .data()
        .iter()
        .map(|&v| {
            let std = (v.as_f64().max(0.0) * s2 + c2).sqrt();
            T::lit(std * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    Image::raw(img.channels(), img.height(), img.width(), data)
}

/// Bayer mosaic followed by bilinear demosaicing (reflect-101 borders).
pub fn bayer_process<T: Scalar>(img: &Image<T>, params: &NoiseModelParams) -> Result<Image<T>> {
    if !params.enable_bpd {
        return Ok(img.clone());
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    if c != 3 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::BayerShape {
            channels: c,
            height: h,
            width: w,
        });
    }
    let pattern = params.bayer_pattern;
    let raw: Vec<T> = (0..h * w)
        .map(|p| img.get(pattern.color_at(p / w, p % w), p / w, p % w))
        .collect();
    let reflect = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let here = pattern.color_at(y, x);
            let at = |dy: isize, dx: isize| {
                let yy = reflect(y as isize + dy, h);
                let xx = reflect(x as isize + dx, w);
                (pattern.color_at(yy, xx), raw[yy * w + xx])
            };
            let cross = [at(-1, 0), at(1, 0), at(0, -1), at(0, 1)];
            let diag = [at(-1, -1), at(-1, 1), at(1, -1), at(1, 1)];
            for ch in 0..3 {
                let v = if ch == here {
                    raw[y * w + x]
                } else {
                    average(&cross, ch, half, quarter)
                        .or_else(|| average(&diag, ch, half, quarter))
                        .expect("every bayer neighbourhood covers all colours")
                };
                out[(ch * h + y) * w + x] = v;
            }
        }
    }
    Ok(Image::raw(3, h, w, out))
}

// Pairwise sums so that averaging equal values is exact.
fn average<T: Scalar>(nb: &[(usize, T); 4], ch: usize, half: T, quarter: T) -> Option<T> {
    let vals: Vec<T> = nb
        .iter()
        .filter(|(c, _)| *c == ch)
        .map(|(_, v)| *v)
        .collect();
    match vals.len() {
        0 => None,
        2 => Some((vals[0] + vals[1]) * half),
        4 => Some(((vals[0] + vals[1]) + (vals[2] + vals[3])) * quarter),
        n => Some(vals.iter().copied().sum::<T>() / T::lit(n as f64)),
    }
}

/// Returns the synthetic noise `f_BPD(f_crf(L + n)) − f_BPD(f_crf(L))` and
/// the pseudo noise level map of the target.
pub fn synthesize_noise<T: Scalar>(
    y: &Image<T>,
    params: &NoiseModelParams,
    seed: u64,
) -> Result<(Image<T>, NoiseLevelMap<T>)> {
    params.validate()?;
    let mut params = *params;
    if y.channels() == 1 {
        params.enable_bpd = false;
    }
    let l = apply_icrf(y, &params);
    let n = sample_heterogeneous_noise(&l, &params, seed);
    let noisy = l.0.zip_map(&n, |a, b| a + b);
    let noisy = bayer_process(&crf(&noisy, &params), &params)?;
    let clean = bayer_process(&apply_crf(&l, &params), &params)?;
    let noise = noisy.zip_map(&clean, |a, b| a - b);
    Ok((noise, compute_noise_level_map(&l, &params)))
}

/// `z = clamp(y + n)` with the pseudo map of `n`.
pub fn make_training_pair<T: Scalar>(
    y: &Image<T>,
    params: &NoiseModelParams,
    seed: u64,
) -> Result<TrainingPair<T>> {
    let (noise, map) = synthesize_noise(y, params, seed)?;
    Ok(TrainingPair {
        source: y.clone(),
        target: y.zip_map(&noise, |a, b| a + b).clamp01(),
        target_map: map,
    })
}

/// Two independent AWGN corruptions of a clean image.
pub fn make_awgn_pair<T: Scalar>(
    x: &Image<T>,
    sigma_y: f64,
    sigma_z: f64,
    seed: u64,
) -> TrainingPair<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_y = gaussian_like(x, sigma_y, &mut rng);
    let n_z = gaussian_like(x, sigma_z, &mut rng);
    let (h, w) = x.dims();
    TrainingPair {
        source: x.zip_map(&n_y, |a, b| a + b).clamp01(),
        target: x.zip_map(&n_z, |a, b| a + b).clamp01(),
        target_map: NoiseLevelMap::constant(h, w, T::lit(sigma_z.max(0.0))),
    }
}

/// I.i.d. `N(0, sigma²)` array shaped like `x`.
pub fn gaussian_like<T: Scalar, R: Rng>(x: &Image<T>, sigma: f64, rng: &mut R) -> Image<T> {
    let data = (0..x.data().len())
        .map(|_| T::lit(sigma * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Image::raw(x.channels(), x.height(), x.width(), data)
}
