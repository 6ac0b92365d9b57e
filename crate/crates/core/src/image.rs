//! Planar image containers and 8-bit file I/O.

use std::path::Path;

use npyz::WriterBuilder;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `channels × height × width` intensities, channel-major. Values live in
/// `[0, 1]` at pipeline boundaries; intermediate results may leave it.
#[derive(Clone, Debug, PartialEq)]
pub struct Image<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// Linear-domain irradiance. Only [`crate::noise_model::apply_icrf`] creates one.
#[derive(Clone, Debug, PartialEq)]
pub struct IrradianceImage<T>(pub(crate) Image<T>);

impl<T> IrradianceImage<T> {
    pub fn as_image(&self) -> &Image<T> {
        &self.0
    }
}

/// Per-pixel noise standard deviation, one plane.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLevelMap<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

/// The eight rotations/reflections of a square grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral(u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    pub fn new(index: u8) -> Self {
        assert!(index < 8, "dihedral index must be < 8");
        Dihedral(index)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Dihedral> {
        (0..8).map(Dihedral)
    }

    fn quarter_turns(self) -> u8 {
        self.0 % 4
    }

    fn flips(self) -> bool {
        self.0 >= 4
    }

    /// Applies the transform to a planar `[c, h, w]` buffer.
    fn apply_planes<T: Copy>(
        self,
        c: usize,
        h: usize,
        w: usize,
        data: &[T],
    ) -> (usize, usize, Vec<T>) {
        let (mut h, mut w, mut cur) = (h, w, data.to_vec());
        if self.flips() {
            let mut out = Vec::with_capacity(cur.len());
            for row in cur.chunks(w) {
                out.extend(row.iter().rev());
            }
            cur = out;
        }
        for _ in 0..self.quarter_turns() {
            // 90° counter-clockwise: out[i][j] = in[j][w - 1 - i]
            let (nh, nw) = (w, h);
            let mut out = Vec::with_capacity(cur.len());
            for ch in 0..c {
                let plane = &cur[ch * h * w..(ch + 1) * h * w];
                for i in 0..nh {
                    for j in 0..nw {
                        out.push(plane[j * w + (w - 1 - i)]);
                    }
                }
            }
            cur = out;
            h = nh;
            w = nw;
        }
        (h, w, cur)
    }
}

impl<T: Scalar> Image<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels")));
        }
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("empty image".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidImage(format!(
                "{} values for {channels}x{height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImage("non-finite value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        Self::new(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )
        .expect("valid fill")
    }

    /// Builds from any `[c, h, w]` buffer without range or finiteness checks;
    /// used for intermediate noise arrays.
    pub(crate) fn raw(channels: usize, height: usize, width: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.dims() == other.dims()
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert!(self.same_shape(other), "image shapes differ");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::raw(self.channels, self.height, self.width, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::PatchTooLarge {
                patch: height.max(width),
                height: self.height,
                width: self.width,
            });
        }
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in top..top + height {
                let start = (c * self.height + y) * self.width + left;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Self::raw(self.channels, height, width, data))
    }

    pub fn transform(&self, t: Dihedral) -> Self {
        let (h, w, data) = t.apply_planes(self.channels, self.height, self.width, &self.data);
        Self::raw(self.channels, h, w, data)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
    }

    pub fn from_tensor(t: &Tensor<T>) -> Self {
        let (c, h, w) = t.chw();
        Self::raw(c, h, w, t.data().to_vec())
    }

    /// Per-pixel mean over channels.
    pub fn channel_mean(&self) -> Vec<T> {
        let n = self.height * self.width;
        if self.channels == 1 {
            return self.data.clone();
        }
        let inv = T::one() / T::lit(self.channels as f64);
        (0..n)
            .map(|p| (0..self.channels).map(|c| self.data[c * n + p]).sum::<T>() * inv)
            .collect()
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image::raw(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        )
    }

    /// Loads an 8-bit image scaled to `[0, 1]`. `channels` forces gray (1) or
    /// RGB (3); `None` keeps grayscale files gray and converts everything else
    /// to RGB.
    pub fn load(path: &Path, channels: Option<usize>) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::format(path, e))?;
        let gray = match channels {
            Some(1) => true,
            Some(3) => false,
            Some(c) => return Err(Error::InvalidImage(format!("{c} channels requested"))),
            None => !img.color().has_color(),
        };
        if gray {
            let buf = img.to_luma8();
            let (w, h) = buf.dimensions();
            let data = buf
                .pixels()
                .map(|p| T::lit(p.0[0] as f64 / 255.0))
                .collect();
            Self::new(1, h as usize, w as usize, data)
        } else {
            let buf = img.to_rgb8();
            let (w, h) = buf.dimensions();
            let n = (w * h) as usize;
            let mut data = vec![T::zero(); 3 * n];
            for (i, p) in buf.pixels().enumerate() {
                for c in 0..3 {
                    data[c * n + i] = T::lit(p.0[c] as f64 / 255.0);
                }
            }
            Self::new(3, h as usize, w as usize, data)
        }
    }

    /// Writes an 8-bit PNG, clamping to `[0, 1]` and rounding.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let n = self.height * self.width;
        let q = |v: T| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
        let (w, h) = (self.width as u32, self.height as u32);
        let res = if self.channels == 1 {
            let buf: Vec<u8> = self.data.iter().map(|&v| q(v)).collect();
            image::GrayImage::from_raw(w, h, buf)
                .expect("buffer size")
                .save(path)
        } else {
            let mut buf = Vec::with_capacity(3 * n);
            for p in 0..n {
                for c in 0..3 {
                    buf.push(q(self.data[c * n + p]));
                }
            }
            image::RgbImage::from_raw(w, h, buf)
                .expect("buffer size")
                .save(path)
        };
        res.map_err(|e| Error::format(path, e))
    }
}

impl<T: Scalar> NoiseLevelMap<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} map",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(Error::InvalidImage(
                "noise level map must be finite and non-negative".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, sigma: T) -> Self {
        Self::new(height, width, vec![sigma; height * width]).expect("non-negative sigma")
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, T::zero())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::zero(), T::max)
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(Error::PatchTooLarge {
                patch: height.max(width),
                height: self.height,
                width: self.width,
            });
        }
        let data = (top..top + height)
            .flat_map(|y| self.data[y * self.width + left..][..width].iter().copied())
            .collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn transform(&self, t: Dihedral) -> Self {
        let (height, width, data) = t.apply_planes(1, self.height, self.width, &self.data);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_vec(&[1, self.height, self.width], self.data.clone())
    }

    pub fn cast<U: Scalar>(&self) -> NoiseLevelMap<U> {
        NoiseLevelMap {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }

    /// Stores the map as a little-endian `f32` `.npy` array of shape `[h, w]`.
    pub fn save_npy(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = npyz::WriteOptions::<f32>::new()
            .default_dtype()
            .shape(&[self.height as u64, self.width as u64])
            .writer(std::io::BufWriter::new(file))
            .begin_nd()
            .map_err(|e| Error::io(path, e))?;
        writer
            .extend(self.data.iter().map(|v| v.as_f64() as f32))
            .map_err(|e| Error::io(path, e))?;
        writer.finish().map_err(|e| Error::io(path, e))
    }

    pub fn load_npy(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let npy = npyz::NpyFile::new(&bytes[..]).map_err(|e| Error::io(path, e))?;
        let shape = npy.shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::format(
                path,
                format!("expected a 2-D map, got shape {shape:?}"),
            ));
        }
        let data: Vec<f32> = npy.into_vec().map_err(|e| Error::io(path, e))?;
        Self::new(
            shape[0] as usize,
            shape[1] as usize,
            data.into_iter().map(|v| T::lit(v as f64)).collect(),
        )
        .map_err(|e| Error::format(path, e))
    }
}
