//! Inference entry points and image quality metrics.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generator::{Generator, Mode};
use crate::image::{Image, NoiseLevelMap};
use crate::nn::ParameterSet;
use crate::scalar::Scalar;

/// Denoising is transference to a zero noise level with the randomization
/// bypassed.
pub fn denoise<T: Scalar>(
    gen: &Generator,
    params: &ParameterSet<T>,
    y: &Image<T>,
) -> Result<Image<T>> {
    let (h, w) = y.dims();
    gen.forward(params, y, &NoiseLevelMap::zeros(h, w), Mode::Inference)
}

/// Re-renders `y` with the noise level given by `m`. The randomization
/// factors are drawn from `seed`; an all-zero map takes the inference path
/// and therefore equals [`denoise`].
pub fn transfer_noise<T: Scalar>(
    gen: &Generator,
    params: &ParameterSet<T>,
    y: &Image<T>,
    m: &NoiseLevelMap<T>,
    seed: u64,
) -> Result<Image<T>> {
    let mode = if m.data().iter().all(|v| *v == T::zero()) {
        Mode::Inference
    } else {
        Mode::Train { seed }
    };
    gen.forward(params, y, m, mode)
}

fn check_aligned<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )))
    }
}

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_aligned(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// PSNR in dB for peak 1.0; `f64::INFINITY` when the images are identical.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// Mean SSIM over all fully contained 11×11 Gaussian windows, averaged over
/// channels.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_aligned(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ShapeMismatch(format!(
            "{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = gaussian_window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..a.channels() {
        let pa = a.plane(c);
        let pb = b.plane(c);
        let mut sum = 0.0;
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    let row = (y + dy) * w + x;
                    for dx in 0..SSIM_WINDOW {
                        let k = win[dy * SSIM_WINDOW + dx];
                        let u = pa[row + dx].as_f64();
                        let v = pb[row + dx].as_f64();
                        ma += k * u;
                        mb += k * v;
                        saa += k * (u * u);
                        sbb += k * (v * v);
                        sab += k * (u * v);
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                sum += num / den;
            }
        }
        total += sum / (oh * ow) as f64;
    }
    Ok(total / a.channels() as f64)
}

// ---- dataset sweep -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEntry {
    pub noisy: PathBuf,
    pub reference: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub path: PathBuf,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&EvalRow) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Mean over rows that were evaluated; infinite if any row is.
    pub fn mean_psnr(&self) -> Option<f64> {
        self.mean(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        self.mean(|r| r.ssim)
    }

    /// Comma-separated report: header, one row per entry, then a `mean` row.
    /// Perfect reconstructions are written as `inf`; failed entries leave the
    /// metric cells empty and describe the failure in `error`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["path", "psnr", "ssim", "error"])
            .expect("in-memory write");
        let cell = |v: Option<f64>| v.map(format_metric).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.path.display().to_string(),
                cell(r.psnr),
                cell(r.ssim),
                r.error.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        w.write_record([
            "mean".to_string(),
            cell(self.mean_psnr()),
            cell(self.mean_ssim()),
            String::new(),
        ])
        .expect("in-memory write");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

pub fn format_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

/// Runs `restore` on every noisy image and scores it against its reference.
/// Entries that cannot be read or processed are reported, not fatal.
pub fn evaluate_dataset<T: Scalar>(
    entries: &[EvalEntry],
    channels: usize,
    mut restore: impl FnMut(&Image<T>) -> Result<Image<T>>,
) -> EvalReport {
    let rows = entries
        .iter()
        .map(|e| {
            let scored = (|| {
                let y = Image::<T>::load(&e.noisy, Some(channels))?;
                let x = Image::<T>::load(&e.reference, Some(channels))?;
                let out = restore(&y)?;
                Ok::<_, Error>((psnr(&out, &x)?, ssim(&out, &x)?))
            })();
            match scored {
                Ok((p, s)) => EvalRow {
                    path: e.noisy.clone(),
                    psnr: Some(p),
                    ssim: Some(s),
                    error: None,
                },
                Err(err) => {
                    log::warn!("{}: {err}", e.noisy.display());
                    EvalRow {
                        path: e.noisy.clone(),
                        psnr: None,
                        ssim: None,
                        error: Some(err.to_string()),
                    }
                }
            }
        })
        .collect();
    EvalReport { rows }
}
