//! Small building blocks shared by the learnable networks.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{init_conv_weight, Graph, NodeId, ParamNodes, ParamStore, Tensor};

/// A named conv layer; weights live in the ParamStore under `{name}.w` and
/// `{name}.b`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Self {
        Conv {
            name: name.into(),
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    /// 3x3, stride 1, padding 1.
    pub fn same(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Conv::new(name, cin, cout, 3, 1, 1)
    }

    /// 3x3, stride 2, padding 1 (halves spatial dims).
    pub fn down(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Conv::new(name, cin, cout, 3, 2, 1)
    }

    /// 1x1 pointwise.
    pub fn pointwise(name: impl Into<String>, cin: usize, cout: usize) -> Self {
        Conv::new(name, cin, cout, 1, 1, 0)
    }

    pub fn init(&self, ps: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.init_with_bias(ps, rng, 0.0);
    }

    pub fn init_with_bias(&self, ps: &mut ParamStore, rng: &mut ChaCha8Rng, bias: f64) {
        ps.insert(
            format!("{}.w", self.name),
            init_conv_weight(rng, self.cout, self.cin, self.k),
        );
        ps.insert(format!("{}.b", self.name), Tensor::full(vec![self.cout], bias));
    }

    pub fn forward(&self, g: &mut Graph, pn: &ParamNodes, x: NodeId) -> Result<NodeId> {
        let w = ParamStore::node(pn, &format!("{}.w", self.name))?;
        let b = ParamStore::node(pn, &format!("{}.b", self.name))?;
        let c = g.conv2d(x, w, self.stride, self.pad)?;
        g.bias_add(c, b)
    }
}

pub const LRELU_SLOPE: f64 = 0.1;

pub fn lrelu(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    g.leaky_relu(x, LRELU_SLOPE)
}
