//! Named parameter storage and the affine layer shared by every model part.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndgrad::{Graph, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Ordered collection of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| g.param(t.clone())).collect(),
        }
    }

    /// Replaces all values, checking names and shapes.
    pub fn load(&mut self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Compatibility("parameter names differ".into()));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::Compatibility(format!(
                    "parameter {} has shape {:?}, snapshot has {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.tensors.clone_from(&other.tensors);
        Ok(())
    }
}

/// Graph leaves for one forward pass, indexed like the store.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    #[cfg(test)]
    pub(crate) fn with(mut self, index: usize, var: Var) -> Self {
        self.vars[index] = var;
        self
    }

    /// Gradients in store order; unreached parameters get zeros.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }
}

/// `y = x·W + b` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("sized")
}

impl Linear {
    /// Uniform initialization in ±1/√inputs for weights and bias.
    pub fn new(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = uniform_tensor(&[inputs, outputs], bound, rng);
        let b = uniform_tensor(&[outputs], bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: Some(store.add(format!("{name}.bias"), b)),
            inputs,
            outputs,
        }
    }

    /// Weight only, same initialization range.
    pub fn unbiased(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let w = uniform_tensor(&[inputs, outputs], bound, rng);
        Self {
            weight: store.add(format!("{name}.weight"), w),
            bias: None,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        if g.value(x).last_dim() != self.inputs {
            return Err(Error::Dimension(format!(
                "linear layer expects {} inputs, got shape {:?}",
                self.inputs,
                g.shape(x)
            )));
        }
        let h = g.matmul(x, p.var(self.weight))?;
        match self.bias {
            Some(b) => g.add_bias(h, p.var(b)),
            None => Ok(h),
        }
    }
}
