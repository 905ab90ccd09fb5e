//! Append-only computation graph. Node insertion order is a topological
//! order, so the backward pass is a single reverse sweep that visits each
//! node exactly once.

use super::kernels;
use super::{all_finite, Tensor};
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Primitive operations. Networks and losses compose exclusively from these,
/// which keeps the differentiation surface small enough to gradient-check
/// exhaustively.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    /// k * x + b, elementwise with scalar constants.
    Affine { k: f64, b: f64 },
    MatMul,
    Conv2d { stride: usize, pad: usize },
    /// Per-channel bias over a C x H x W tensor.
    BiasAdd,
    LeakyRelu { slope: f64 },
    Sigmoid,
    Tanh,
    Downsample2,
    Upsample2,
    /// Concatenation along the channel axis.
    Concat,
    SliceC { start: usize, len: usize },
    SpatialSoftmax,
    ReduceSum,
    ReduceMean,
    Log,
    Abs,
    Sqrt,
    PowScalar { e: f64 },
    /// Bitplane quantizer with straight-through gradient.
    Quantize { bits: u32 },
    /// Inputs: (frame C x H x W, flow 2 x H x W).
    Warp,
}

struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Tensor,
    grad: Option<Vec<f64>>,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf. Gradients are accumulated for it when
    /// `requires_grad` is set on the tensor.
    pub fn leaf(&mut self, t: Tensor) -> Result<NodeId> {
        t.validate_finite("leaf tensor")?;
        let needs = t.requires_grad;
        Ok(self.push(Op::Leaf, vec![], t, needs))
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        t.validate_finite("constant tensor")?;
        Ok(self.push(Op::Leaf, vec![], t, false))
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        self.constant(Tensor::scalar(v))
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id].grad.as_deref()
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor, needs_grad: bool) -> NodeId {
        debug_assert!(all_finite(value.data()), "non-finite op output: {:?}", op);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            grad: None,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn same_shape(&self, a: NodeId, b: NodeId) -> Result<()> {
        if self.nodes[a].value.shape() != self.nodes[b].value.shape() {
            return Err(Error::dim(format!(
                "elementwise op on shapes {:?} vs {:?}",
                self.nodes[a].value.shape(),
                self.nodes[b].value.shape()
            )));
        }
        Ok(())
    }

    fn binary_map(
        &mut self,
        op: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.same_shape(a, b)?;
        let shape = self.nodes[a].value.shape().to_vec();
        let data: Vec<f64> = self.nodes[a]
            .value
            .data()
            .iter()
            .zip(self.nodes[b].value.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let needs = self.needs(&[a, b]);
        Ok(self.push(op, vec![a, b], tensor_unchecked(shape, data), needs))
    }

    fn unary_map(&mut self, op: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let shape = self.nodes[x].value.shape().to_vec();
        let data: Vec<f64> = self.nodes[x].value.data().iter().map(|&v| f(v)).collect();
        let needs = self.needs(&[x]);
        Ok(self.push(op, vec![x], tensor_unchecked(shape, data), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_map(Op::Add, a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_map(Op::Sub, a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_map(Op::Mul, a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_map(Op::Div, a, b, |x, y| x / y)
    }

    pub fn affine(&mut self, x: NodeId, k: f64, b: f64) -> Result<NodeId> {
        self.unary_map(Op::Affine { k, b }, x, |v| k * v + b)
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        self.affine(x, k, 0.0)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (
            self.nodes[a].value.shape().to_vec(),
            self.nodes[b].value.shape().to_vec(),
        );
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul on {:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_fwd(
            self.nodes[a].value.data(),
            self.nodes[b].value.data(),
            m,
            k,
            n,
            &mut out,
        );
        let needs = self.needs(&[a, b]);
        Ok(self.push(Op::MatMul, vec![a, b], tensor_unchecked(vec![m, n], out), needs))
    }

    pub fn conv2d(&mut self, x: NodeId, kern: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let ks = self.nodes[kern].value.shape().to_vec();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::dim(format!("conv2d on {:?} with kernel {:?}", xs, ks)));
        }
        let (cin, h, w) = (xs[0], xs[1], xs[2]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if kcin != cin || kh != kw {
            return Err(Error::dim(format!("conv2d kernel {:?} vs input {:?}", ks, xs)));
        }
        if kh % 2 == 0 {
            return Err(Error::dim(format!("conv2d kernel size {} must be odd", kh)));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be >= 1"));
        }
        let oh = kernels::conv2d_out_dim(h, kh, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d input {}x{} smaller than kernel {}", h, w, kh)))?;
        let ow = kernels::conv2d_out_dim(w, kw, stride, pad)
            .ok_or_else(|| Error::dim(format!("conv2d input {}x{} smaller than kernel {}", h, w, kw)))?;
        let mut out = vec![0.0; cout * oh * ow];
        kernels::conv2d_fwd(
            self.nodes[x].value.data(),
            cin,
            h,
            w,
            self.nodes[kern].value.data(),
            cout,
            kh,
            stride,
            pad,
            oh,
            ow,
            &mut out,
        );
        let needs = self.needs(&[x, kern]);
        Ok(self.push(
            Op::Conv2d { stride, pad },
            vec![x, kern],
            tensor_unchecked(vec![cout, oh, ow], out),
            needs,
        ))
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].value.shape().to_vec();
        let bs = self.nodes[bias].value.shape().to_vec();
        if xs.len() != 3 || bs.len() != 1 || bs[0] != xs[0] {
            return Err(Error::dim(format!("bias_add on {:?} with bias {:?}", xs, bs)));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let bv = self.nodes[bias].value.data().to_vec();
        let mut out = self.nodes[x].value.data().to_vec();
        for ci in 0..c {
            let b = bv[ci];
            for v in &mut out[ci * h * w..(ci + 1) * h * w] {
                *v += b;
            }
        }
        let needs = self.needs(&[x, bias]);
        Ok(self.push(Op::BiasAdd, vec![x, bias], tensor_unchecked(xs, out), needs))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary_map(Op::LeakyRelu { slope }, x, |v| if v >= 0.0 { v } else { slope * v })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary_map(Op::Sigmoid, x, |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary_map(Op::Tanh, x, f64::tanh)
    }

    pub fn downsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.nodes[x].value.dims3()?;
        if h < 2 || w < 2 {
            return Err(Error::dim(format!("downsample2 on {}x{}", h, w)));
        }
        let mut out = vec![0.0; c * (h / 2) * (w / 2)];
        kernels::downsample2_fwd(self.nodes[x].value.data(), c, h, w, &mut out);
        let needs = self.needs(&[x]);
        Ok(self.push(
            Op::Downsample2,
            vec![x],
            tensor_unchecked(vec![c, h / 2, w / 2], out),
            needs,
        ))
    }

    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.nodes[x].value.dims3()?;
        let mut out = vec![0.0; c * 4 * h * w];
        kernels::upsample2_fwd(self.nodes[x].value.data(), c, h, w, &mut out);
        let needs = self.needs(&[x]);
        Ok(self.push(
            Op::Upsample2,
            vec![x],
            tensor_unchecked(vec![c, h * 2, w * 2], out),
            needs,
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::dim("concat of zero tensors"));
        }
        let (_, h, w) = self.nodes[parts[0]].value.dims3()?;
        let mut c_total = 0;
        for &p in parts {
            let (c, ph, pw) = self.nodes[p].value.dims3()?;
            if ph != h || pw != w {
                return Err(Error::dim(format!(
                    "concat spatial mismatch: {}x{} vs {}x{}",
                    ph, pw, h, w
                )));
            }
            c_total += c;
        }
        let mut out = Vec::with_capacity(c_total * h * w);
        for &p in parts {
            out.extend_from_slice(self.nodes[p].value.data());
        }
        let needs = self.needs(parts);
        Ok(self.push(
            Op::Concat,
            parts.to_vec(),
            tensor_unchecked(vec![c_total, h, w], out),
            needs,
        ))
    }

    pub fn slice_c(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (c, h, w) = self.nodes[x].value.dims3()?;
        if len == 0 || start + len > c {
            return Err(Error::dim(format!(
                "slice channels [{}, {}) of {} channels",
                start,
                start + len,
                c
            )));
        }
        let out = self.nodes[x].value.data()[start * h * w..(start + len) * h * w].to_vec();
        let needs = self.needs(&[x]);
        Ok(self.push(
            Op::SliceC { start, len },
            vec![x],
            tensor_unchecked(vec![len, h, w], out),
            needs,
        ))
    }

    pub fn spatial_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.nodes[x].value.dims3()?;
        let mut out = vec![0.0; c * h * w];
        kernels::spatial_softmax_fwd(self.nodes[x].value.data(), c, h * w, &mut out);
        let needs = self.needs(&[x]);
        Ok(self.push(
            Op::SpatialSoftmax,
            vec![x],
            tensor_unchecked(vec![c, h, w], out),
            needs,
        ))
    }

    pub fn reduce_sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s: f64 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(&[x]);
        Ok(self.push(Op::ReduceSum, vec![x], Tensor::scalar(s), needs))
    }

    pub fn reduce_mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x].value.len();
        if n == 0 {
            return Err(Error::dim("reduce_mean of empty tensor"));
        }
        let s: f64 = self.nodes[x].value.data().iter().sum();
        let needs = self.needs(&[x]);
        Ok(self.push(Op::ReduceMean, vec![x], Tensor::scalar(s / n as f64), needs))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x].value.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::range("log of non-positive value"));
        }
        self.unary_map(Op::Log, x, f64::ln)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary_map(Op::Abs, x, f64::abs)
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        if self.nodes[x].value.data().iter().any(|&v| v < 0.0) {
            return Err(Error::range("sqrt of negative value"));
        }
        self.unary_map(Op::Sqrt, x, f64::sqrt)
    }

    pub fn powf(&mut self, x: NodeId, e: f64) -> Result<NodeId> {
        if self.nodes[x].value.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::range("powf of non-positive base"));
        }
        self.unary_map(Op::PowScalar { e }, x, |v| v.powf(e))
    }

    /// Straight-through bitplane quantizer: forward rounds to the B-bit grid
    /// over [-1, 1], backward passes the gradient unchanged.
    pub fn quantize(&mut self, x: NodeId, bits: u32) -> Result<NodeId> {
        if !(1..=16).contains(&bits) {
            return Err(Error::range(format!("bitplane count {} outside [1,16]", bits)));
        }
        if self.nodes[x].value.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
            return Err(Error::range("quantize input outside [-1, 1]"));
        }
        self.unary_map(Op::Quantize { bits }, x, |v| kernels::quantize_unit(v, bits).1)
    }

    pub fn warp(&mut self, frame: NodeId, flow: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.nodes[frame].value.dims3()?;
        let (fc, fh, fw) = self.nodes[flow].value.dims3()?;
        if fc != 2 || fh != h || fw != w {
            return Err(Error::dim(format!(
                "warp flow {:?} vs frame {:?}",
                self.nodes[flow].value.shape(),
                self.nodes[frame].value.shape()
            )));
        }
        let mut out = vec![0.0; c * h * w];
        kernels::warp_fwd(
            self.nodes[frame].value.data(),
            self.nodes[flow].value.data(),
            c,
            h,
            w,
            &mut out,
        );
        let needs = self.needs(&[frame, flow]);
        Ok(self.push(
            Op::Warp,
            vec![frame, flow],
            tensor_unchecked(vec![c, h, w], out),
            needs,
        ))
    }

    fn accum(&mut self, id: NodeId, contrib: Vec<f64>) {
        debug_assert_eq!(contrib.len(), self.nodes[id].value.len());
        match &mut self.nodes[id].grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += ci;
                }
            }
            None => self.nodes[id].grad = Some(contrib),
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients land on every node
    /// reachable from a leaf with `requires_grad`; read them with `grad()`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward from non-scalar loss of shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss].grad = Some(vec![1.0]);
        for i in (0..=loss).rev() {
            if self.nodes[i].grad.is_none() || self.nodes[i].inputs.is_empty() {
                continue;
            }
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.nodes[i].grad.clone().expect("grad present");
            let op = self.nodes[i].op.clone();
            let inputs = self.nodes[i].inputs.clone();
            self.backprop_op(&op, &inputs, i, &g);
        }
        Ok(())
    }

    fn backprop_op(&mut self, op: &Op, inputs: &[NodeId], node: NodeId, g: &[f64]) {
        match op {
            Op::Leaf => {}
            Op::Add => {
                if self.nodes[inputs[0]].needs_grad {
                    self.accum(inputs[0], g.to_vec());
                }
                if self.nodes[inputs[1]].needs_grad {
                    self.accum(inputs[1], g.to_vec());
                }
            }
            Op::Sub => {
                if self.nodes[inputs[0]].needs_grad {
                    self.accum(inputs[0], g.to_vec());
                }
                if self.nodes[inputs[1]].needs_grad {
                    self.accum(inputs[1], g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a].needs_grad {
                    let db: Vec<f64> = self.nodes[b]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&bv, &gv)| bv * gv)
                        .collect();
                    self.accum(a, db);
                }
                if self.nodes[b].needs_grad {
                    let da: Vec<f64> = self.nodes[a]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&av, &gv)| av * gv)
                        .collect();
                    self.accum(b, da);
                }
            }
            Op::Div => {
                let (a, b) = (inputs[0], inputs[1]);
                if self.nodes[a].needs_grad {
                    let da: Vec<f64> = self.nodes[b]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&bv, &gv)| gv / bv)
                        .collect();
                    self.accum(a, da);
                }
                if self.nodes[b].needs_grad {
                    let db: Vec<f64> = self.nodes[a]
                        .value
                        .data()
                        .iter()
                        .zip(self.nodes[b].value.data())
                        .zip(g)
                        .map(|((&av, &bv), &gv)| -gv * av / (bv * bv))
                        .collect();
                    self.accum(b, db);
                }
            }
            Op::Affine { k, .. } => {
                if self.nodes[inputs[0]].needs_grad {
                    self.accum(inputs[0], g.iter().map(|v| k * v).collect());
                }
            }
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let m = self.nodes[a].value.shape()[0];
                let k = self.nodes[a].value.shape()[1];
                let n = self.nodes[b].value.shape()[1];
                if self.nodes[a].needs_grad {
                    let mut da = vec![0.0; m * k];
                    kernels::matmul_bwd_a(g, self.nodes[b].value.data(), m, k, n, &mut da);
                    self.accum(a, da);
                }
                if self.nodes[b].needs_grad {
                    let mut db = vec![0.0; k * n];
                    kernels::matmul_bwd_b(g, self.nodes[a].value.data(), m, k, n, &mut db);
                    self.accum(b, db);
                }
            }
            Op::Conv2d { stride, pad } => {
                let (x, kern) = (inputs[0], inputs[1]);
                let (cin, h, w) = self.nodes[x].value.dims3().expect("checked at build");
                let ks = self.nodes[kern].value.shape();
                let (cout, kk) = (ks[0], ks[2]);
                let os = self.nodes[node].value.shape();
                let (oh, ow) = (os[1], os[2]);
                if self.nodes[x].needs_grad {
                    let mut dx = vec![0.0; cin * h * w];
                    kernels::conv2d_bwd_input(
                        g,
                        self.nodes[kern].value.data(),
                        cin,
                        h,
                        w,
                        cout,
                        kk,
                        *stride,
                        *pad,
                        oh,
                        ow,
                        &mut dx,
                    );
                    self.accum(x, dx);
                }
                if self.nodes[kern].needs_grad {
                    let mut dk = vec![0.0; cout * cin * kk * kk];
                    kernels::conv2d_bwd_kernel(
                        g,
                        self.nodes[x].value.data(),
                        cin,
                        h,
                        w,
                        cout,
                        kk,
                        *stride,
                        *pad,
                        oh,
                        ow,
                        &mut dk,
                    );
                    self.accum(kern, dk);
                }
            }
            Op::BiasAdd => {
                let (x, bias) = (inputs[0], inputs[1]);
                let (c, h, w) = self.nodes[x].value.dims3().expect("checked at build");
                if self.nodes[x].needs_grad {
                    self.accum(x, g.to_vec());
                }
                if self.nodes[bias].needs_grad {
                    let mut db = vec![0.0; c];
                    for ci in 0..c {
                        db[ci] = g[ci * h * w..(ci + 1) * h * w].iter().sum();
                    }
                    self.accum(bias, db);
                }
            }
            Op::LeakyRelu { slope } => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[inputs[0]]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| if x >= 0.0 { gv } else { slope * gv })
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Sigmoid => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[node]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &gv)| y * (1.0 - y) * gv)
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Tanh => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[node]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &gv)| (1.0 - y * y) * gv)
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Downsample2 => {
                if self.nodes[inputs[0]].needs_grad {
                    let (c, h, w) = self.nodes[inputs[0]].value.dims3().expect("rank 3");
                    let mut dx = vec![0.0; c * h * w];
                    kernels::downsample2_bwd(g, c, h, w, &mut dx);
                    self.accum(inputs[0], dx);
                }
            }
            Op::Upsample2 => {
                if self.nodes[inputs[0]].needs_grad {
                    let (c, h, w) = self.nodes[inputs[0]].value.dims3().expect("rank 3");
                    let mut dx = vec![0.0; c * h * w];
                    kernels::upsample2_bwd(g, c, h, w, &mut dx);
                    self.accum(inputs[0], dx);
                }
            }
            Op::Concat => {
                let mut offset = 0;
                for &p in inputs {
                    let n = self.nodes[p].value.len();
                    if self.nodes[p].needs_grad {
                        self.accum(p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceC { start, len } => {
                if self.nodes[inputs[0]].needs_grad {
                    let (c, h, w) = self.nodes[inputs[0]].value.dims3().expect("rank 3");
                    let mut dx = vec![0.0; c * h * w];
                    dx[start * h * w..(start + len) * h * w].copy_from_slice(g);
                    self.accum(inputs[0], dx);
                }
            }
            Op::SpatialSoftmax => {
                if self.nodes[inputs[0]].needs_grad {
                    let (c, h, w) = self.nodes[inputs[0]].value.dims3().expect("rank 3");
                    let mut dx = vec![0.0; c * h * w];
                    kernels::spatial_softmax_bwd(
                        g,
                        self.nodes[node].value.data(),
                        c,
                        h * w,
                        &mut dx,
                    );
                    self.accum(inputs[0], dx);
                }
            }
            Op::ReduceSum => {
                if self.nodes[inputs[0]].needs_grad {
                    let n = self.nodes[inputs[0]].value.len();
                    self.accum(inputs[0], vec![g[0]; n]);
                }
            }
            Op::ReduceMean => {
                if self.nodes[inputs[0]].needs_grad {
                    let n = self.nodes[inputs[0]].value.len();
                    self.accum(inputs[0], vec![g[0] / n as f64; n]);
                }
            }
            Op::Log => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[inputs[0]]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| gv / x)
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Abs => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[inputs[0]]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| {
                            if x > 0.0 {
                                gv
                            } else if x < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Sqrt => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[node]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&y, &gv)| gv / (2.0 * y))
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::PowScalar { e } => {
                if self.nodes[inputs[0]].needs_grad {
                    let dx: Vec<f64> = self.nodes[inputs[0]]
                        .value
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&x, &gv)| e * x.powf(e - 1.0) * gv)
                        .collect();
                    self.accum(inputs[0], dx);
                }
            }
            Op::Quantize { .. } => {
                // Straight-through: gradient passes unchanged.
                if self.nodes[inputs[0]].needs_grad {
                    self.accum(inputs[0], g.to_vec());
                }
            }
            Op::Warp => {
                let (frame, flow) = (inputs[0], inputs[1]);
                let (c, h, w) = self.nodes[frame].value.dims3().expect("rank 3");
                let mut dframe = vec![0.0; c * h * w];
                let mut dflow = vec![0.0; 2 * h * w];
                kernels::warp_bwd(
                    g,
                    self.nodes[frame].value.data(),
                    self.nodes[flow].value.data(),
                    c,
                    h,
                    w,
                    &mut dframe,
                    &mut dflow,
                );
                if self.nodes[frame].needs_grad {
                    self.accum(frame, dframe);
                }
                if self.nodes[flow].needs_grad {
                    self.accum(flow, dflow);
                }
            }
        }
    }
}

/// Internal constructor for op outputs whose length is correct by
/// construction; finiteness is checked by `push` in debug builds.
fn tensor_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    Tensor {
        shape,
        data,
        requires_grad: false,
        grad: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad())
            .unwrap();
        let loss = g.reduce_sum(x).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn elementwise_square_gradient() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap().requires_grad())
            .unwrap();
        let sq = g.mul(x, x).unwrap();
        let loss = g.reduce_sum(sq).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g
            .leaf(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap().requires_grad())
            .unwrap();
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn conv2d_scalar_scaling() {
        // 1x3x3 ones, 1x1x1x1 kernel [2.0] -> all 2.0
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 3, 3], 1.0)).unwrap();
        let k = g.constant(Tensor::from_vec(vec![1, 1, 1, 1], vec![2.0]).unwrap()).unwrap();
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_zero_padded_center() {
        // 1x1x1 input [5.0], 3x3 all-ones kernel, pad 1 -> only center survives
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1, 1, 1], vec![5.0]).unwrap()).unwrap();
        let k = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0)).unwrap();
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn quantize_rejects_out_of_range() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vec![1], vec![1.5]).unwrap()).unwrap();
        assert!(g.quantize(x, 6).is_err());
    }

    #[test]
    fn spatial_softmax_partitions_unity() {
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::from_vec(vec![3, 1, 2], vec![0.3, -1.0, 2.0, 0.1, -0.5, 0.7]).unwrap())
            .unwrap();
        let y = g.spatial_softmax(x).unwrap();
        let v = g.value(y).data();
        for i in 0..2 {
            let s: f64 = (0..3).map(|c| v[c * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
