use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::Tensor;

/// Transformer hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Layers per stack (encoder and decoder each).
    pub n_layers: usize,
    pub d_ff: usize,
    /// Width of the per-step source features; 2 means offsets only.
    pub feature_dim: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Desk-scale default.
    pub fn desk(feature_dim: usize) -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            d_ff: 256,
            feature_dim,
            dropout: 0.0,
        }
    }

    /// 512-wide, 8 heads, 6 layers.
    pub fn full_scale(feature_dim: usize) -> Self {
        Self {
            d_model: 512,
            n_heads: 8,
            n_layers: 6,
            d_ff: 2048,
            feature_dim,
            dropout: 0.0,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.d_model % 2 != 0 {
            return bad(format!("d_model must be even and positive, got {}", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be >= 1".into());
        }
        if self.d_ff == 0 {
            return bad("d_ff must be >= 1".into());
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Named weight arrays in a fixed, config-determined order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor>>,
}

impl ModelParams {
    pub fn new(names: Vec<String>, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        if names.len() != tensors.len() {
            return Err(ModelError::Config("parameter names and tensors differ in count".into()));
        }
        Ok(Self {
            names,
            tensors: tensors.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub(crate) fn shared(&self, i: usize) -> Arc<Tensor> {
        Arc::clone(&self.tensors[i])
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        Arc::make_mut(&mut self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.tensors.iter().map(|t| t.as_ref())
    }

    pub fn count_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

/// Shape and initializer of one parameter.
#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in ±√(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
}

pub(crate) fn initialize(specs: &[ParamSpec], seed: u64) -> Result<ModelParams, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::with_capacity(specs.len());
    let mut tensors = Vec::with_capacity(specs.len());
    for spec in specs {
        let t = match spec.init {
            Init::Zeros => Tensor::zeros(&spec.shape),
            Init::Ones => Tensor::filled(&spec.shape, 1.0),
            Init::Xavier { fan_in, fan_out } => {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n = spec.shape.iter().product();
                Tensor::new(spec.shape.clone(), (0..n).map(|_| rng.random_range(-limit..=limit)).collect())?
            }
        };
        names.push(spec.name.clone());
        tensors.push(t);
    }
    ModelParams::new(names, tensors)
}
