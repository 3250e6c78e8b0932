//! Named parameter storage with per-parameter gradient and momentum state.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::{real, to_f64, Real};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub velocity: Tensor<T>,
    /// Buffers (e.g. normalization running statistics) ride along with the
    /// parameters for checkpointing but are never moved by the optimizer.
    pub trainable: bool,
}

/// Ordered map name -> (value, gradient, velocity). Iteration order is
/// insertion order, which fixes the optimizer update and gradient reduction
/// order.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        ParameterStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, value: Tensor<T>, trainable: bool) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!(
                "parameter {name:?} registered twice"
            )));
        }
        let dims = value.dims().to_vec();
        let idx = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(&dims),
            velocity: Tensor::zeros(&dims),
            trainable,
        });
        self.index.insert(name.to_string(), idx);
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn name_at(&self, idx: usize) -> &str {
        &self.entries[idx].name
    }

    pub fn value_at(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].value
    }

    pub fn value_mut_at(&mut self, idx: usize) -> &mut Tensor<T> {
        &mut self.entries[idx].value
    }

    pub fn grad_at(&self, idx: usize) -> &Tensor<T> {
        &self.entries[idx].grad
    }

    pub fn entry_mut(&mut self, idx: usize) -> &mut ParamEntry<T> {
        &mut self.entries[idx]
    }

    pub fn accumulate_grad_at(&mut self, idx: usize, grad: &Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[idx];
        entry.grad.add_assign(grad).map_err(|_| {
            Error::ShapeMismatch(format!(
                "gradient shape {:?} does not match parameter {:?} {:?}",
                grad.dims(),
                entry.name,
                entry.value.dims()
            ))
        })
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.data_mut().fill(T::zero());
        }
    }

    /// Total scalar count over trainable parameters.
    pub fn param_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }

    /// Classic momentum update: v <- m v + g, p <- p - lr v, gradients
    /// cleared afterwards. Buffers are left untouched.
    pub fn sgd_momentum_step(&mut self, lr: f64, momentum: f64) -> Result<()> {
        for e in &mut self.entries {
            if !e.trainable {
                continue;
            }
            if !e.grad.data().iter().all(|g| g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}", e.name)));
            }
            let m = real::<T>(momentum);
            let step = real::<T>(lr);
            for i in 0..e.value.len() {
                let g = e.grad.data()[i];
                let v = m * e.velocity.data()[i] + g;
                e.velocity.data_mut()[i] = v;
                e.value.data_mut()[i] = e.value.data()[i] - step * v;
            }
        }
        self.zero_grads();
        Ok(())
    }

    /// Summed absolute gradient, for logging.
    pub fn grad_norm1(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.grad.data())
            .map(|&g| to_f64(g).abs())
            .sum()
    }
}

/// Exponentially decayed learning rate: `base * decay^epoch`.
pub fn lr_schedule(base: f64, decay: f64, epoch: i64) -> Result<f64> {
    if !(0.0 < decay && decay <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "decay must be in (0, 1], got {decay}"
        )));
    }
    if epoch < 0 {
        return Err(Error::InvalidArgument(format!(
            "epoch must be nonnegative, got {epoch}"
        )));
    }
    Ok(base * decay.powi(epoch as i32))
}
