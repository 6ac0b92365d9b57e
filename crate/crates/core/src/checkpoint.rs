//! Named-tensor checkpoint archives with a JSON configuration header.
//!
//! Tensor names are prefixed by their role: `gen/`, `disc/`, and for the
//! optimiser moments `opt/gen/m/`, `opt/gen/v/`, `opt/disc/m/`, `opt/disc/v/`.

use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::error::{Error, Result};
use crate::generator::{Generator, GeneratorConfig};
use crate::nn::{AdamState, ParameterSet};
use crate::scalar::Scalar;
use crate::training::TrainState;

const FORMAT: &str = "noise-transfer/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    dtype: String,
    generator: GeneratorConfig,
    discriminator: Option<DiscriminatorConfig>,
    train: TrainConfig,
    iteration: u64,
    gen_opt_step: u64,
    disc_opt_step: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    /// Generator configuration as it should be used for inference; the
    /// long-skip flag reflects the schedule at the last completed step.
    pub generator: GeneratorConfig,
    pub discriminator: Option<DiscriminatorConfig>,
    pub train: TrainConfig,
    pub state: TrainState<T>,
}

fn dtype_of<T: Scalar>() -> Dtype {
    match T::DTYPE {
        "F32" => Dtype::F32,
        "F64" => Dtype::F64,
        other => unreachable!("unsupported scalar {other}"),
    }
}

fn add_set<T: Scalar>(
    out: &mut Vec<(String, Vec<usize>, Vec<u8>)>,
    prefix: &str,
    set: &ParameterSet<T>,
) {
    for (path, t) in set.iter() {
        out.push((
            format!("{prefix}{path}"),
            t.shape().to_vec(),
            T::to_le_bytes_vec(t.data()),
        ));
    }
}

/// Parameters expected by a generator configuration (values meaningless).
pub fn expected_generator_params<T: Scalar>(cfg: &GeneratorConfig) -> Result<ParameterSet<T>> {
    Generator::new(cfg.clone())?.init_params(&mut ChaCha8Rng::seed_from_u64(0))
}

fn expected_discriminator_params<T: Scalar>(cfg: &DiscriminatorConfig) -> Result<ParameterSet<T>> {
    Discriminator::new(cfg.clone())?.init_params(&mut ChaCha8Rng::seed_from_u64(0))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let s = &self.state;
        let mut tensors = Vec::new();
        add_set(&mut tensors, "gen/", &s.gen_params);
        add_set(&mut tensors, "opt/gen/m/", &s.gen_opt.m);
        add_set(&mut tensors, "opt/gen/v/", &s.gen_opt.v);
        if let Some(p) = &s.disc_params {
            add_set(&mut tensors, "disc/", p);
        }
        if let Some(o) = &s.disc_opt {
            add_set(&mut tensors, "opt/disc/m/", &o.m);
            add_set(&mut tensors, "opt/disc/v/", &o.v);
        }
        let header = Header {
            format: FORMAT.to_string(),
            dtype: T::DTYPE.to_string(),
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            train: self.train.clone(),
            iteration: s.iteration,
            gen_opt_step: s.gen_opt.step,
            disc_opt_step: s.disc_opt.as_ref().map(|o| o.step),
        };
        let meta = HashMap::from([(
            "header".to_string(),
            serde_json::to_string(&header).expect("header serializes"),
        )]);
        let views = tensors
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(dtype_of::<T>(), shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::Checkpoint(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        safetensors::serialize(views, &Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Checkpoint(m);
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| err(e.to_string()))?;
        let raw = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("header"))
            .ok_or_else(|| err("missing header".into()))?;
        let header: Header = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        if header.format != FORMAT {
            return Err(err(format!("unknown format {:?}", header.format)));
        }
        if header.dtype != T::DTYPE {
            return Err(err(format!(
                "stored as {}, requested {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| err(e.to_string()))?;

        let read_set = |prefix: &str| -> Result<ParameterSet<T>> {
            let mut names: Vec<&String> = st.names();
            names.sort();
            let mut set = ParameterSet::new();
            for name in names {
                let Some(path) = name.strip_prefix(prefix) else {
                    continue;
                };
                if path.contains('/') {
                    continue;
                }
                let view = st.tensor(name).map_err(|e| err(e.to_string()))?;
                if view.dtype() != dtype_of::<T>() {
                    return Err(err(format!("{name}: unexpected dtype {:?}", view.dtype())));
                }
                let data = T::from_le_bytes_slice(view.data())
                    .ok_or_else(|| err(format!("{name}: truncated data")))?;
                set.insert(path, crate::tensor::Tensor::from_vec(view.shape(), data))?;
            }
            Ok(set)
        };
        // reorder to the canonical path order of a fresh initialisation
        let ordered =
            |expected: &ParameterSet<T>, loaded: ParameterSet<T>| -> Result<ParameterSet<T>> {
                let diff = expected.shape_diff(&loaded);
                if !diff.is_empty() {
                    return Err(Error::CheckpointMismatch(diff));
                }
                let mut out = ParameterSet::new();
                for path in expected.paths() {
                    out.insert(path, loaded.get(path).expect("checked by diff").clone())?;
                }
                Ok(out)
            };

        let expected_gen = expected_generator_params::<T>(&header.generator)?;
        let gen_params = ordered(&expected_gen, read_set("gen/")?)?;
        let gen_opt = AdamState {
            step: header.gen_opt_step,
            m: ordered(&expected_gen, read_set("opt/gen/m/")?)?,
            v: ordered(&expected_gen, read_set("opt/gen/v/")?)?,
        };
        let (disc_params, disc_opt) = match &header.discriminator {
            None => (None, None),
            Some(dc) => {
                let expected = expected_discriminator_params::<T>(dc)?;
                let opt = AdamState {
                    step: header.disc_opt_step.unwrap_or(0),
                    m: ordered(&expected, read_set("opt/disc/m/")?)?,
                    v: ordered(&expected, read_set("opt/disc/v/")?)?,
                };
                (Some(ordered(&expected, read_set("disc/")?)?), Some(opt))
            }
        };
        Ok(Self {
            generator: header.generator,
            discriminator: header.discriminator,
            train: header.train,
            state: TrainState {
                iteration: header.iteration,
                gen_params,
                gen_opt,
                disc_params,
                disc_opt,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rejects a checkpoint whose generator does not match `cfg`, listing
    /// the differing parameter paths and shapes.
    pub fn check_generator(&self, cfg: &GeneratorConfig) -> Result<()> {
        let expected = expected_generator_params::<T>(cfg)?;
        let diff = expected.shape_diff(&self.state.gen_params);
        if diff.is_empty() {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(diff))
        }
    }
}
