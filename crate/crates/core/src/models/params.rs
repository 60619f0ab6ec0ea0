use std::collections::BTreeMap;

use crate::autodiff::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Normal { std: f64 },
    Zeros,
}

/// Declared parameter: name, shape and initializer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], init: Init) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            init,
        }
    }
}

/// 64-bit FNV-1a, used to key per-parameter init streams by name.
pub(crate) fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Named parameter arrays, ordered by name.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore<T: Scalar = f32> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    /// Initialize every spec. Each parameter draws from its own stream keyed
    /// by `(seed, name)`, so values do not depend on declaration order.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Result<Self> {
        let mut store = Self::new();
        for spec in specs {
            let tensor = match spec.init {
                Init::Zeros => Tensor::zeros(spec.shape.clone()),
                Init::Normal { std } => {
                    let mut rng = SplitMix64::new(derive_seed(seed, &[fnv1a(&spec.name)]));
                    Tensor::randn(spec.shape.clone(), 0.0, std, &mut rng)
                }
            };
            store.insert(spec.name.clone(), tensor)?;
        }
        Ok(store)
    }

    pub fn insert(&mut self, name: String, tensor: Tensor<T>) -> Result<()> {
        if self.params.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))
    }

    /// Replace the value of an existing parameter, keeping its shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter {name} has shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Record every parameter on `tape`. Names for which `trainable` returns
    /// true become gradient-collecting leaves; the rest are constants.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: impl Fn(&str) -> bool) -> Bindings<'t, T> {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| {
                let var = if trainable(name) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), var)
            })
            .collect();
        Bindings { vars }
    }
}

/// Parameters of a [`ParamStore`] recorded on one tape.
pub struct Bindings<'t, T: Scalar = f32> {
    vars: BTreeMap<String, Var<'t, T>>,
}

impl<'t, T: Scalar> Bindings<'t, T> {
    pub fn get(&self, name: &str) -> Result<Var<'t, T>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("parameter {name} not bound")))
    }

    /// Gradients of every trainable binding reached by the last backward pass.
    /// Unreached trainable parameters get zero gradient.
    pub fn grads(&self) -> BTreeMap<String, Tensor<T>> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad())
            .map(|(k, v)| {
                let g = v.grad().unwrap_or_else(|| Tensor::zeros(v.shape()));
                (k.clone(), g)
            })
            .collect()
    }

    /// Names of trainable bindings whose gradient was populated.
    pub fn reached(&self) -> Vec<String> {
        self.vars
            .iter()
            .filter(|(_, v)| v.requires_grad() && v.grad().is_some())
            .map(|(k, _)| k.clone())
            .collect()
    }
}
