use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::nn::params::ParameterSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const PRELU_INIT: f64 = 0.25;

/// Adds `{path}.weight` (`[cout, cin, k, k]`, He fan-in normal) and
/// `{path}.bias` (zeros).
pub fn conv<T: Scalar, R: Rng>(
    set: &mut ParameterSet<T>,
    path: &str,
    cin: usize,
    cout: usize,
    k: usize,
    rng: &mut R,
) -> Result<()> {
    let std = (2.0 / (cin * k * k) as f64).sqrt();
    let data = (0..cout * cin * k * k)
        .map(|_| T::lit(std * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    set.insert(
        format!("{path}.weight"),
        Tensor::from_vec(&[cout, cin, k, k], data),
    )?;
    set.insert(format!("{path}.bias"), Tensor::zeros(&[cout]))
}

/// Same layout as [`conv`] with every weight zero.
pub fn zero_conv<T: Scalar>(
    set: &mut ParameterSet<T>,
    path: &str,
    cin: usize,
    cout: usize,
    k: usize,
) -> Result<()> {
    set.insert(format!("{path}.weight"), Tensor::zeros(&[cout, cin, k, k]))?;
    set.insert(format!("{path}.bias"), Tensor::zeros(&[cout]))
}

pub fn prelu<T: Scalar>(set: &mut ParameterSet<T>, path: &str, channels: usize) -> Result<()> {
    set.insert(
        format!("{path}.slope"),
        Tensor::full(&[channels], T::lit(PRELU_INIT)),
    )
}
