//! Named parameter storage shared by all model kinds.
//!
//! Parameters live in a flat, construction-ordered list so the optimizer can
//! walk tensors and gradients positionally; names exist for checkpoints and
//! for targeted access in tests.

use crate::error::{CoreError, Result};
use crate::rng::SeedStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), tensors: Vec::new() }
    }

    /// Append a named tensor, returning its index. Names must be unique.
    pub fn add(&mut self, name: &str, t: Tensor) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "ParamSet: duplicate parameter name {name:?}"
        );
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn tensor_mut_by_name(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = self.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[idx])
    }

    /// Put every tensor on a tape, as trainable leaves or as constants,
    /// preserving construction order so `Var`s align with optimizer state.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect()
    }

    /// Collect gradients positionally after a backward pass.
    pub fn gradients(&self, tape: &Tape, vars: &[Var]) -> Vec<Vec<f64>> {
        assert_eq!(vars.len(), self.tensors.len(), "ParamSet: var list out of sync");
        vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }

    /// Replace tensor values from a checkpoint's (name, tensor) list. Every
    /// stored parameter must be present with a matching shape, and no extras.
    pub fn load_named(&mut self, mut loaded: Vec<(String, Tensor)>) -> Result<()> {
        if loaded.len() != self.names.len() {
            return Err(CoreError::Checkpoint(format!(
                "parameter count mismatch: checkpoint has {}, model expects {}",
                loaded.len(),
                self.names.len()
            )));
        }
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let pos = loaded.iter().position(|(n, _)| n == name).ok_or_else(|| {
                CoreError::Checkpoint(format!("checkpoint is missing parameter {name:?}"))
            })?;
            let (_, incoming) = loaded.swap_remove(pos);
            if incoming.shape != tensor.shape {
                return Err(CoreError::Checkpoint(format!(
                    "parameter {name:?} has shape {:?} in checkpoint, expected {:?}",
                    incoming.shape, tensor.shape
                )));
            }
            *tensor = incoming;
        }
        Ok(())
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

// ── Initializers ──────────────────────────────────────────────────────────

/// Linear weight [out, in], uniform in ±sqrt(1/fan_in).
pub fn linear_weight(rng: &mut SeedStream, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = (1.0 / in_dim as f64).sqrt();
    let data = (0..out_dim * in_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::from_vec(&[out_dim, in_dim], data)
}

/// Bias [out], same ±sqrt(1/fan_in) bound as the weight it pairs with.
pub fn linear_bias(rng: &mut SeedStream, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = (1.0 / in_dim as f64).sqrt();
    let data = (0..out_dim).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::from_vec(&[out_dim], data)
}

/// Embedding table [rows, dim], normal with std 0.02.
pub fn embedding_init(rng: &mut SeedStream, rows: usize, dim: usize) -> Tensor {
    let data = (0..rows * dim).map(|_| 0.02 * rng.normal()).collect();
    Tensor::from_vec(&[rows, dim], data)
}

pub fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(&shape)
}

pub fn ones(shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(&shape, vec![1.0; n])
}
