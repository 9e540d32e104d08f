//! Learnable parameters addressed by dotted path, with a parallel gradient
//! store of identical shapes.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::{Distribution, Uniform};
use rand::rngs::StdRng;

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{EmberError, Result};

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, path: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(path) {
            return Err(EmberError::DuplicateParam {
                path: path.to_string(),
            });
        }
        let (r, c) = tensor.shape();
        self.grads.insert(path.to_string(), Tensor::zeros(r, c));
        self.params.insert(path.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.params
            .get(path)
            .ok_or_else(|| EmberError::UnknownParam {
                path: path.to_string(),
            })
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(path)
            .ok_or_else(|| EmberError::UnknownParam {
                path: path.to_string(),
            })
    }

    pub fn grad(&self, path: &str) -> Result<&Tensor> {
        self.grads
            .get(path)
            .ok_or_else(|| EmberError::UnknownParam {
                path: path.to_string(),
            })
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn coord_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Add a gradient contribution into the slot for `path`.
    pub fn accumulate_grad(&mut self, path: &str, contribution: &[f64]) -> Result<()> {
        let slot = self
            .grads
            .get_mut(path)
            .ok_or_else(|| EmberError::UnknownParam {
                path: path.to_string(),
            })?;
        if slot.len() != contribution.len() {
            return Err(EmberError::dims(
                format!("gradient for {path}"),
                slot.len().to_string(),
                contribution.len().to_string(),
            ));
        }
        for (g, c) in slot.data_mut().iter_mut().zip(contribution) {
            *g += c;
        }
        Ok(())
    }

    /// Round every parameter through 32-bit precision (in-place).
    pub fn round_to_f32(&mut self) {
        for p in self.params.values_mut() {
            p.round_to_f32();
        }
    }
}

/// Glorot-style uniform initialization over
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut StdRng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::from_vec(rows, cols, data).expect("shape matches generated data")
}

/// Register a weight matrix with Glorot init.
pub fn register_weight(
    store: &mut ParamStore,
    path: &str,
    rows: usize,
    cols: usize,
    rng: &mut StdRng,
) -> Result<()> {
    store.register(path, glorot_uniform(rows, cols, rng))
}

/// Register a zero bias row.
pub fn register_bias(store: &mut ParamStore, path: &str, cols: usize) -> Result<()> {
    store.register(path, Tensor::zeros(1, cols))
}

/// One forward/backward pass over a read-only parameter store.
///
/// Parameters bind onto the tape once per session so that gradient
/// contributions from repeated uses accumulate on a single node.
pub struct Session<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: HashMap<String, NodeId>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Bind a parameter as a tape leaf (cached per path).
    pub fn param(&mut self, path: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(path) {
            return Ok(id);
        }
        let value = self.store.get(path)?.clone();
        let id = self.tape.leaf(value);
        self.bound.insert(path.to_string(), id);
        Ok(id)
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.tape.leaf(value)
    }

    /// Run backward from `loss` and return the gradient of every bound
    /// parameter, keyed by path.
    pub fn parameter_gradients(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        let grads = self.tape.backward(loss)?;
        let mut out = BTreeMap::new();
        for (path, &node) in &self.bound {
            let (r, c) = self.tape.value(node).shape();
            let tensor = match grads.get(node) {
                Some(g) => Tensor::from_vec(r, c, g.to_vec())?,
                None => Tensor::zeros(r, c),
            };
            out.insert(path.clone(), tensor);
        }
        Ok(out)
    }
}
