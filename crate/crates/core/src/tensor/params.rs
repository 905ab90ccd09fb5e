//! Named parameter storage. BTreeMap keeps iteration order deterministic,
//! which the bitwise-reproducibility guarantees depend on.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Mapping from parameter name to its leaf node in a graph instance.
pub type ParamNodes = BTreeMap<String, NodeId>;

#[derive(Default, Clone)]
pub struct ParamStore {
    map: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.map.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Insert every parameter into `g` as a differentiable leaf and return
    /// the name -> node mapping used by network forward passes.
    pub fn leaves(&self, g: &mut Graph) -> Result<ParamNodes> {
        let mut nodes = ParamNodes::new();
        for (name, t) in &self.map {
            let id = g.leaf(t.clone().requires_grad())?;
            nodes.insert(name.clone(), id);
        }
        Ok(nodes)
    }

    /// Leaves without gradient tracking, for pure inference passes.
    pub fn const_leaves(&self, g: &mut Graph) -> Result<ParamNodes> {
        let mut nodes = ParamNodes::new();
        for (name, t) in &self.map {
            let mut c = t.clone();
            c.requires_grad = false;
            nodes.insert(name.clone(), g.constant(c)?);
        }
        Ok(nodes)
    }

    /// Collect gradients off a graph after backward, keyed by name.
    pub fn collect_grads(&self, g: &Graph, nodes: &ParamNodes) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, &id) in nodes {
            if let Some(grad) = g.grad(id) {
                out.insert(name.clone(), grad.to_vec());
            }
        }
        out
    }

    pub fn node(nodes: &ParamNodes, name: &str) -> Result<NodeId> {
        nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::config(format!("parameter {name} missing from graph")))
    }
}

/// Uniform [-s, s] init with s = sqrt(1 / (c_in * k^2)).
pub fn init_conv_weight(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> Tensor {
    let s = (1.0 / (cin as f64 * (k * k) as f64)).sqrt();
    let data: Vec<f64> = (0..cout * cin * k * k)
        .map(|_| rng.gen_range(-s..=s))
        .collect();
    Tensor::from_vec(vec![cout, cin, k, k], data).expect("sized by construction")
}
