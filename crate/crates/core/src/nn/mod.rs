//! Minimal neural-network toolkit: parameters, reverse-mode graph, Adam.

pub mod adam;
pub mod graph;
pub mod init;
pub mod params;

pub use adam::{Adam, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use params::ParameterSet;

use crate::error::Result;
use crate::scalar::Scalar;

/// `conv(x)` with weights at `{path}.weight` / `{path}.bias`.
pub fn conv<T: Scalar>(
    g: &mut Graph<'_, T>,
    path: &str,
    x: Var,
    stride: usize,
    pad: usize,
) -> Result<Var> {
    let w = g.param(&format!("{path}.weight"))?;
    let b = g.param(&format!("{path}.bias"))?;
    Ok(g.conv2d(x, w, Some(b), stride, pad))
}

pub fn prelu<T: Scalar>(g: &mut Graph<'_, T>, path: &str, x: Var) -> Result<Var> {
    let a = g.param(&format!("{path}.slope"))?;
    Ok(g.prelu(x, a))
}

#[cfg(test)]
mod tests;
