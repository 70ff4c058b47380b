use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Const(f64),
    Normal(f64),
    Uniform(f64),
    /// Glorot uniform for a `[fan_out, fan_in]` matrix.
    Xavier,
}

/// A named set of trainable tensors with seeded initialization.
///
/// Layers keep clones of the tensors handed out by [`ParamGroup::get`];
/// clones share storage with the underlying [`Var`], so optimizer updates
/// and checkpoint loads are visible to the layers.
pub struct ParamGroup {
    name: String,
    dtype: DType,
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, dtype: DType, seed: u64) -> Self {
        let name = name.into();
        // Mix the group name into the seed so groups sharing a run seed differ.
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(name.as_bytes());
        let digest = h.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        Self {
            name,
            dtype,
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::from_seed(bytes),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal(std) => (0..n)
                .map(|_| {
                    let x: f64 = StandardNormal.sample(&mut self.rng);
                    x * std
                })
                .collect(),
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Xavier => {
                let (fan_out, fan_in) = match shape {
                    [o, i] => (*o, *i),
                    [i] => (*i, *i),
                    _ => (shape[0], n / shape[0].max(1)),
                };
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| self.rng.random_range(-a..=a)).collect()
            }
        };
        self.get_from(name, shape, data)
    }

    /// Registers a parameter with explicit initial values.
    pub fn get_from(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if self.vars.contains_key(name) {
            return Err(Error::Config(format!(
                "parameter `{name}` registered twice in group `{}`",
                self.name
            )));
        }
        let t = Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn var_list(&self) -> Vec<Var> {
        self.vars.values().cloned().collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// SHA-256 over names, shapes and values (widened to f64).
    pub fn digest(&self) -> Result<String> {
        let mut h = Sha256::new();
        for (name, var) in &self.vars {
            h.update(name.as_bytes());
            for d in var.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            let values = var
                .as_tensor()
                .flatten_all()?
                .to_dtype(DType::F64)?
                .to_vec1::<f64>()?;
            for v in values {
                h.update(v.to_le_bytes());
            }
        }
        Ok(hex(&h.finalize()))
    }

    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    /// Overwrites every parameter from `source`; all names must be present
    /// with matching shapes.
    pub fn load_from(&self, source: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = source.get(name).ok_or_else(|| {
                Error::Checkpoint(format!("missing tensor `{}/{name}`", self.name))
            })?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}/{name}` has shape {:?}, expected {:?}",
                    self.name,
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
