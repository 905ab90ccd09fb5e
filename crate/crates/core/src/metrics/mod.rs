//! Color transforms, quality metrics, losses, and bit accounting.
//!
//! MS-SSIM conventions used throughout (and mirrored by the test oracle):
//! 11x11 Gaussian window with sigma 1.5 applied as a valid convolution,
//! per-scale means of the luminance and contrast-structure maps, 2x2
//! average pooling between scales, the reference five-scale exponents
//! renormalized when small frames force fewer scales, and scalar terms
//! floored at 1e-9 before exponentiation.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Tensor};

/// Reference MS-SSIM scale exponents.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Gaussian window size and sigma.
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
/// Stabilizers on unit dynamic range.
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
/// Floor applied to per-scale means before exponentiation.
pub const TERM_FLOOR: f64 = 1e-9;

/// Y, Cb, Cr channel weights used for every aggregate metric.
pub const CHANNEL_WEIGHTS: [f64; 3] = [6.0 / 8.0, 1.0 / 8.0, 1.0 / 8.0];

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

/// Frame in the YCbCr domain: Y in [0,1], Cb and Cr in [-0.5, 0.5].
#[derive(Debug, Clone)]
pub struct YCbCrFrame(pub Tensor);

/// BT.601 full-range RGB -> YCbCr. Input channels in [0,1].
pub fn rgb_to_ycbcr(rgb: &Tensor) -> Result<YCbCrFrame> {
    let (c, h, w) = rgb.dims3()?;
    if c != 3 {
        return Err(Error::dim(format!("rgb frame with {c} channels")));
    }
    if rgb.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::range("rgb values outside [0,1]"));
    }
    let n = h * w;
    let (r, g, b) = (&rgb.data()[..n], &rgb.data()[n..2 * n], &rgb.data()[2 * n..]);
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let y = KR * r[i] + KG * g[i] + KB * b[i];
        let cb = (b[i] - y) / (2.0 * (1.0 - KB));
        let cr = (r[i] - y) / (2.0 * (1.0 - KR));
        out[i] = y.clamp(0.0, 1.0);
        out[n + i] = cb.clamp(-0.5, 0.5);
        out[2 * n + i] = cr.clamp(-0.5, 0.5);
    }
    Ok(YCbCrFrame(Tensor::from_vec(vec![3, h, w], out)?))
}

pub fn ycbcr_to_rgb(ycbcr: &YCbCrFrame) -> Result<Tensor> {
    let (c, h, w) = ycbcr.0.dims3()?;
    if c != 3 {
        return Err(Error::dim(format!("ycbcr frame with {c} channels")));
    }
    let n = h * w;
    let d = ycbcr.0.data();
    let (y, cb, cr) = (&d[..n], &d[n..2 * n], &d[2 * n..]);
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let r = y[i] + 2.0 * (1.0 - KR) * cr[i];
        let b = y[i] + 2.0 * (1.0 - KB) * cb[i];
        let g = (y[i] - KR * r - KB * b) / KG;
        out[i] = r.clamp(0.0, 1.0);
        out[n + i] = g.clamp(0.0, 1.0);
        out[2 * n + i] = b.clamp(0.0, 1.0);
    }
    Tensor::from_vec(vec![3, h, w], out)
}

/// Normalized 11x11 Gaussian window as a 1x1xWxW conv kernel.
pub fn gaussian_window() -> Tensor {
    let mut data = vec![0.0; WINDOW * WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dy * dy + dx * dx) / (2.0 * SIGMA * SIGMA)).exp();
            data[y * WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut data {
        *v /= sum;
    }
    Tensor::from_vec(vec![1, 1, WINDOW, WINDOW], data).expect("sized")
}

/// Number of scales usable for an H x W frame: the window must fit at the
/// coarsest scale, capped at the reference five.
pub fn usable_scales(h: usize, w: usize) -> usize {
    let mut scales = 0;
    let mut m = h.min(w);
    while scales < 5 && m >= WINDOW {
        scales += 1;
        m /= 2;
    }
    scales.max(1)
}

/// First `scales` reference exponents renormalized to sum 1.
pub fn scale_weights(scales: usize) -> Vec<f64> {
    let w = &MSSSIM_WEIGHTS[..scales.min(5)];
    let sum: f64 = w.iter().sum();
    w.iter().map(|v| v / sum).collect()
}

fn floor_positive(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    // max(x, TERM_FLOOR) = relu(x - floor) + floor
    let shifted = g.affine(x, 1.0, -TERM_FLOOR)?;
    let r = g.relu(shifted)?;
    g.affine(r, 1.0, TERM_FLOOR)
}

/// Differentiable MS-SSIM between two single-channel maps, as a graph node.
pub fn ms_ssim_node(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let (ca, ha, wa) = g.value(a).dims3()?;
    let (cb, hb, wb) = g.value(b).dims3()?;
    if ca != 1 || cb != 1 || ha != hb || wa != wb {
        return Err(Error::dim(format!(
            "ms_ssim on {:?} vs {:?}",
            g.value(a).shape(),
            g.value(b).shape()
        )));
    }
    let scales = usable_scales(ha, wa);
    if ha.min(wa) < WINDOW {
        return Err(Error::dim(format!(
            "frame {ha}x{wa} smaller than the {WINDOW}x{WINDOW} window"
        )));
    }
    let weights = scale_weights(scales);
    let win = gaussian_window();
    let win = g.constant(win)?;

    let mut cur_a = a;
    let mut cur_b = b;
    let mut terms: Vec<NodeId> = Vec::new();
    for (s, &wgt) in weights.iter().enumerate() {
        let mu_a = g.conv2d(cur_a, win, 1, 0)?;
        let mu_b = g.conv2d(cur_b, win, 1, 0)?;
        let aa = g.mul(cur_a, cur_a)?;
        let bb = g.mul(cur_b, cur_b)?;
        let ab = g.mul(cur_a, cur_b)?;
        let e_aa = g.conv2d(aa, win, 1, 0)?;
        let e_bb = g.conv2d(bb, win, 1, 0)?;
        let e_ab = g.conv2d(ab, win, 1, 0)?;
        let mu_a2 = g.mul(mu_a, mu_a)?;
        let mu_b2 = g.mul(mu_b, mu_b)?;
        let mu_ab = g.mul(mu_a, mu_b)?;
        let var_a = g.sub(e_aa, mu_a2)?;
        let var_b = g.sub(e_bb, mu_b2)?;
        let cov = g.sub(e_ab, mu_ab)?;

        // cs = (2 cov + C2) / (var_a + var_b + C2)
        let num_cs = {
            let t = g.scale(cov, 2.0)?;
            g.affine(t, 1.0, C2)?
        };
        let den_cs = {
            let t = g.add(var_a, var_b)?;
            g.affine(t, 1.0, C2)?
        };
        let cs = g.div(num_cs, den_cs)?;
        let mean_cs = g.reduce_mean(cs)?;

        if s + 1 == scales {
            // l = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1) at the last scale
            let num_l = {
                let t = g.scale(mu_ab, 2.0)?;
                g.affine(t, 1.0, C1)?
            };
            let den_l = {
                let t = g.add(mu_a2, mu_b2)?;
                g.affine(t, 1.0, C1)?
            };
            let l = g.div(num_l, den_l)?;
            let mean_l = g.reduce_mean(l)?;
            let fl = floor_positive(g, mean_l)?;
            terms.push(g.powf(fl, wgt)?);
        }
        let fcs = floor_positive(g, mean_cs)?;
        terms.push(g.powf(fcs, wgt)?);

        if s + 1 < scales {
            cur_a = g.downsample2(cur_a)?;
            cur_b = g.downsample2(cur_b)?;
        }
    }
    let mut prod = terms[0];
    for &t in &terms[1..] {
        prod = g.mul(prod, t)?;
    }
    Ok(prod)
}

/// MS-SSIM between two single-channel maps as a plain number.
pub fn ms_ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let ai = g.constant(a.clone())?;
    let bi = g.constant(b.clone())?;
    let node = ms_ssim_node(&mut g, ai, bi)?;
    g.value(node).item()
}

/// Weighted 6/8, 1/8, 1/8 MS-SSIM across the three channels of a YCbCr
/// frame pair (as a graph node; channels sliced out of 3 x H x W inputs).
pub fn weighted_ms_ssim_node(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    let mut acc: Option<NodeId> = None;
    for ch in 0..3 {
        let ac = g.slice_c(a, ch, 1)?;
        let bc = g.slice_c(b, ch, 1)?;
        let m = ms_ssim_node(g, ac, bc)?;
        let wm = g.scale(m, CHANNEL_WEIGHTS[ch])?;
        acc = Some(match acc {
            Some(prev) => g.add(prev, wm)?,
            None => wm,
        });
    }
    Ok(acc.expect("three channels"))
}

/// Per-channel and weighted MS-SSIM of two 3 x H x W frames.
pub fn frame_ms_ssim(a: &Tensor, b: &Tensor) -> Result<([f64; 3], f64)> {
    let (c, h, w) = a.dims3()?;
    if c != 3 || a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "frame_ms_ssim on {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let n = h * w;
    let mut per = [0.0; 3];
    for ch in 0..3 {
        let ac = Tensor::from_vec(vec![1, h, w], a.data()[ch * n..(ch + 1) * n].to_vec())?;
        let bc = Tensor::from_vec(vec![1, h, w], b.data()[ch * n..(ch + 1) * n].to_vec())?;
        per[ch] = ms_ssim(&ac, &bc)?;
    }
    let weighted = per
        .iter()
        .zip(CHANNEL_WEIGHTS)
        .map(|(m, w)| m * w)
        .sum::<f64>();
    Ok((per, weighted))
}

pub const CHARBONNIER_EPS: f64 = 1e-3;

/// Zero-anchored Charbonnier: mean(sqrt((a-b)^2 + eps^2)) - eps.
pub fn charbonnier_node(g: &mut Graph, a: NodeId, b: NodeId, eps: f64) -> Result<NodeId> {
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    let shifted = g.affine(d2, 1.0, eps * eps)?;
    let root = g.sqrt(shifted)?;
    let mean = g.reduce_mean(root)?;
    g.affine(mean, 1.0, -eps)
}

pub fn charbonnier(a: &Tensor, b: &Tensor, eps: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "charbonnier on {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut g = Graph::new();
    let ai = g.constant(a.clone())?;
    let bi = g.constant(b.clone())?;
    let n = charbonnier_node(&mut g, ai, bi, eps)?;
    g.value(n).item()
}

/// Bits per pixel of a byte payload over an H x W x T volume.
pub fn bpp(bitstream_bytes: usize, h: usize, w: usize, t: usize) -> f64 {
    8.0 * bitstream_bytes as f64 / (h * w * t) as f64
}

/// One row of the per-frame quality CSV.
#[derive(Debug, Clone, Serialize)]
pub struct QualityReport {
    pub video_id: String,
    pub frame: usize,
    pub bpp: f64,
    pub msssim_y: f64,
    pub msssim_cb: f64,
    pub msssim_cr: f64,
    pub msssim_weighted: f64,
}

impl QualityReport {
    pub fn csv_header() -> &'static str {
        "video_id,frame,bpp,msssim_y,msssim_cb,msssim_cr,msssim_weighted"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.video_id,
            self.frame,
            self.bpp,
            self.msssim_y,
            self.msssim_cb,
            self.msssim_cr,
            self.msssim_weighted
        )
    }
}
