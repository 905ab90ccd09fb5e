//! Codelayer coding: bitplane decomposition, context-adaptive binary
//! arithmetic coding, and the training-time codelength regularizer with its
//! feedback loop.

mod context;
mod rangecoder;

pub use context::{ContextConfig, ContextModel, SymbolModel};
pub use rangecoder::{RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};
use crate::tensor::{kernels::quantize_unit, Graph, NodeId, Tensor};

/// Binary expansion of a codelayer: B bitplanes over C x Y x X values,
/// plane-major with plane 0 holding the most significant bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    pub planes: usize,
    pub c: usize,
    pub y: usize,
    pub x: usize,
    pub bits: Vec<u8>,
}

impl BinaryCode {
    pub fn zeros(planes: usize, c: usize, y: usize, x: usize) -> Self {
        BinaryCode {
            planes,
            c,
            y,
            x,
            bits: vec![0; planes * c * y * x],
        }
    }

    pub fn values(&self) -> usize {
        self.c * self.y * self.x
    }

    #[inline]
    pub fn index(&self, plane: usize, ch: usize, y: usize, x: usize) -> usize {
        ((plane * self.c + ch) * self.y + y) * self.x + x
    }
}

/// Decompose a [-1, 1] tensor into B bitplanes. Returns the binary tensor
/// and the dequantized values; the largest error is one quantizer step,
/// |c - chat| <= 1/(2^B - 1).
pub fn bitplane_decompose(c: &Tensor, planes: u32) -> Result<(BinaryCode, Tensor)> {
    if !(1..=16).contains(&planes) {
        return Err(Error::range(format!("bitplane count {planes} outside [1,16]")));
    }
    if c.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
        return Err(Error::range("codelayer value outside [-1, 1]"));
    }
    let (ch, y, x) = c.dims3()?;
    let mut code = BinaryCode::zeros(planes as usize, ch, y, x);
    let mut dq = vec![0.0; c.len()];
    for (i, &v) in c.data().iter().enumerate() {
        let (q, d) = quantize_unit(v, planes);
        dq[i] = d;
        for p in 0..planes as usize {
            let bit = ((q >> (planes as usize - 1 - p)) & 1) as u8;
            code.bits[p * c.len() + i] = bit;
        }
    }
    Ok((code, Tensor::from_vec(vec![ch, y, x], dq)?))
}

/// Rebuild dequantized values from a binary tensor.
pub fn bitplane_compose(code: &BinaryCode) -> Result<Tensor> {
    let n = code.values();
    let levels = ((1u64 << code.planes) - 1) as f64;
    let mut dq = vec![0.0; n];
    for i in 0..n {
        let mut q = 0u32;
        for p in 0..code.planes {
            q = (q << 1) | code.bits[p * n + i] as u32;
        }
        dq[i] = 2.0 * q as f64 / levels - 1.0;
    }
    Tensor::from_vec(vec![code.c, code.y, code.x], dq)
}

/// Straight-through quantizer as a graph node: forward equals the bitplane
/// dequantization, backward passes the gradient unchanged.
pub fn straight_through_quantize(g: &mut Graph, c: NodeId, planes: u32) -> Result<NodeId> {
    g.quantize(c, planes)
}

fn encode_one_bit(enc: &mut RangeEncoder, model: &mut ContextModel, ctx: usize, bit: u8) {
    let (c0, c1) = model.counts(ctx);
    let total = c0 + c1;
    if bit == 0 {
        enc.encode(0, c0, total);
    } else {
        enc.encode(c0, total, total);
    }
    model.update(ctx, bit);
}

fn decode_one_bit(dec: &mut RangeDecoder, model: &mut ContextModel, ctx: usize) -> Result<u8> {
    let (c0, c1) = model.counts(ctx);
    let total = c0 + c1;
    let target = dec.decode_target(total);
    let bit = u8::from(target >= c0);
    if bit == 0 {
        dec.advance(0, c0, total)?;
    } else {
        dec.advance(c0, total, total)?;
    }
    model.update(ctx, bit);
    Ok(bit)
}

/// Entropy-code a binary tensor. `mask`, when given, holds one flag per
/// (y, x) location; inactive locations are skipped entirely in scan order.
/// Scan order is plane-major (MSB plane first), then channel, row, column.
pub fn aec_encode_masked(
    code: &BinaryCode,
    mask: Option<&[bool]>,
    model: &mut ContextModel,
) -> Result<Vec<u8>> {
    if let Some(m) = mask {
        if m.len() != code.y * code.x {
            return Err(Error::dim(format!(
                "mask of {} entries for {}x{} map",
                m.len(),
                code.y,
                code.x
            )));
        }
    }
    if model.planes() != code.planes {
        return Err(Error::config(format!(
            "context model sized for {} planes, code has {}",
            model.planes(),
            code.planes
        )));
    }
    let mut enc = RangeEncoder::new();
    for p in 0..code.planes {
        for ch in 0..code.c {
            for y in 0..code.y {
                for x in 0..code.x {
                    if let Some(m) = mask {
                        if !m[y * code.x + x] {
                            continue;
                        }
                    }
                    let ctx =
                        model.context_id(&code.bits, code.planes, code.c, code.y, code.x, p, ch, y, x);
                    let bit = code.bits[code.index(p, ch, y, x)];
                    encode_one_bit(&mut enc, model, ctx, bit);
                }
            }
        }
    }
    Ok(enc.finish())
}

pub fn aec_encode(code: &BinaryCode, model: &mut ContextModel) -> Result<Vec<u8>> {
    aec_encode_masked(code, None, model)
}

/// Inverse of `aec_encode_masked`. Skipped positions come back as zero bits.
pub fn aec_decode_masked(
    bytes: &[u8],
    planes: usize,
    c: usize,
    y_dim: usize,
    x_dim: usize,
    mask: Option<&[bool]>,
    model: &mut ContextModel,
) -> Result<BinaryCode> {
    if let Some(m) = mask {
        if m.len() != y_dim * x_dim {
            return Err(Error::dim(format!(
                "mask of {} entries for {}x{} map",
                m.len(),
                y_dim,
                x_dim
            )));
        }
    }
    if model.planes() != planes {
        return Err(Error::config(format!(
            "context model sized for {} planes, code has {}",
            model.planes(),
            planes
        )));
    }
    let mut code = BinaryCode::zeros(planes, c, y_dim, x_dim);
    let mut dec = RangeDecoder::new(bytes)?;
    for p in 0..planes {
        for ch in 0..c {
            for y in 0..y_dim {
                for x in 0..x_dim {
                    if let Some(m) = mask {
                        if !m[y * x_dim + x] {
                            continue;
                        }
                    }
                    let ctx = model.context_id(&code.bits, planes, c, y_dim, x_dim, p, ch, y, x);
                    let bit = decode_one_bit(&mut dec, model, ctx)?;
                    let idx = code.index(p, ch, y, x);
                    code.bits[idx] = bit;
                }
            }
        }
    }
    Ok(code)
}

pub fn aec_decode(
    bytes: &[u8],
    planes: usize,
    c: usize,
    y_dim: usize,
    x_dim: usize,
    model: &mut ContextModel,
) -> Result<BinaryCode> {
    aec_decode_masked(bytes, planes, c, y_dim, x_dim, None, model)
}

/// Estimated codelength in bits plus a per-(y,x) map of the cost, without
/// producing a stream. Uses the same adaptive counts as real coding, so the
/// estimate tracks what the coder would spend.
pub fn aec_cost_map(
    code: &BinaryCode,
    mask: Option<&[bool]>,
    model: &mut ContextModel,
) -> Result<(f64, Vec<f64>)> {
    let mut total = 0.0;
    let mut map = vec![0.0; code.y * code.x];
    for p in 0..code.planes {
        for ch in 0..code.c {
            for y in 0..code.y {
                for x in 0..code.x {
                    if let Some(m) = mask {
                        if !m[y * code.x + x] {
                            continue;
                        }
                    }
                    let ctx =
                        model.context_id(&code.bits, code.planes, code.c, code.y, code.x, p, ch, y, x);
                    let bit = code.bits[code.index(p, ch, y, x)];
                    let p1 = model.p_one(ctx);
                    let prob = if bit == 1 { p1 } else { 1.0 - p1 };
                    let cost = -prob.log2();
                    total += cost;
                    map[y * code.x + x] += cost;
                    model.update(ctx, bit);
                }
            }
        }
    }
    Ok((total, map))
}

/// State of the adaptive codelength regularizer for one codelayer.
#[derive(Debug, Clone)]
pub struct RegularizerState {
    pub alpha: f64,
    pub target_bpp: f64,
    /// Adaptation gain of the feedback loop.
    pub eta: f64,
    /// Running average of observed BPP (exponential, decay 0.9).
    pub observed_bpp: f64,
}

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e3;

impl RegularizerState {
    pub fn new(target_bpp: f64) -> Self {
        RegularizerState {
            alpha: 0.01,
            target_bpp,
            eta: 0.05,
            observed_bpp: 0.0,
        }
    }
}

/// Stabilizer added inside the log: one quantizer step.
pub fn log_epsilon(planes: u32) -> f64 {
    1.0 / ((1u64 << planes) - 1) as f64
}

/// Scalar codelength regularizer (alpha / CYX) * sum log(|chat| + eps).
pub fn codelength_regularizer(chat: &Tensor, alpha: f64, planes: u32) -> f64 {
    if chat.is_empty() {
        return 0.0;
    }
    let eps = log_epsilon(planes);
    let s: f64 = chat.data().iter().map(|&v| (v.abs() + eps).ln()).sum();
    alpha * s / chat.len() as f64
}

/// Graph version of the regularizer, differentiable through `chat`.
pub fn codelength_regularizer_node(
    g: &mut Graph,
    chat: NodeId,
    alpha: f64,
    planes: u32,
) -> Result<NodeId> {
    let eps = log_epsilon(planes);
    let a = g.abs(chat)?;
    let shifted = g.affine(a, 1.0, eps)?;
    let l = g.log(shifted)?;
    let mean = g.reduce_mean(l)?;
    g.scale(mean, alpha)
}

/// Feedback update: multiplicative-exponential in the relative discrepancy
/// between observed and target BPP. Monotone: a larger overshoot never
/// decreases alpha. Also folds the observation into the running average.
pub fn update_alpha(state: &mut RegularizerState, observed_bpp: f64) {
    let rel = (observed_bpp - state.target_bpp) / state.target_bpp;
    state.alpha = (state.alpha * (state.eta * rel).exp()).clamp(ALPHA_MIN, ALPHA_MAX);
    state.observed_bpp = if state.observed_bpp == 0.0 {
        observed_bpp
    } else {
        0.9 * state.observed_bpp + 0.1 * observed_bpp
    };
}
