//! Inverse optical flow: the warp operator and the learnable flow
//! estimator used for motion compensation.

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{lrelu, Conv};
use crate::tensor::{kernels, Graph, NodeId, ParamNodes, ParamStore, Tensor};

/// Per-pixel displacement map in pixels: channel 0 vertical, channel 1
/// horizontal. Values are real and unconstrained.
#[derive(Debug, Clone)]
pub struct FlowField(pub Tensor);

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        FlowField(Tensor::zeros(vec![2, h, w]))
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let (c, _, _) = t.dims3()?;
        if c != 2 {
            return Err(Error::dim(format!("flow field with {c} channels")));
        }
        t.validate_finite("flow field")?;
        Ok(FlowField(t))
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.0.shape();
        (s[1], s[2])
    }
}

/// Sample `frame` at displaced coordinates (h + f1, w + f2) with bilinear
/// interpolation; coordinates clamp to the frame border.
pub fn warp(frame: &Tensor, flow: &FlowField) -> Result<Tensor> {
    let (c, h, w) = frame.dims3()?;
    let (fh, fw) = flow.dims();
    if fh != h || fw != w {
        return Err(Error::dim(format!(
            "flow {fh}x{fw} does not match frame {h}x{w}"
        )));
    }
    let mut out = vec![0.0; c * h * w];
    kernels::warp_fwd(frame.data(), flow.0.data(), c, h, w, &mut out);
    Tensor::from_vec(vec![c, h, w], out)
}

/// Coarse-to-fine flow estimator: a conv pyramid predicting residual flow
/// per scale. Three scales and 16 channels by default; both are size knobs.
#[derive(Debug, Clone)]
pub struct FlowEstimator {
    pub prefix: String,
    pub width: usize,
    pub scales: usize,
    convs: Vec<(Conv, Conv)>,
}

impl FlowEstimator {
    pub fn new(prefix: impl Into<String>, width: usize, scales: usize) -> Self {
        let prefix = prefix.into();
        let convs = (0..scales)
            .map(|s| {
                (
                    // inputs: warped prev (3) + target (3) + upsampled flow (2)
                    Conv::same(format!("{prefix}.s{s}.c1"), 8, width),
                    Conv::same(format!("{prefix}.s{s}.c2"), width, 2),
                )
            })
            .collect();
        FlowEstimator {
            prefix,
            width,
            scales,
            convs,
        }
    }

    /// Spatial dims must be divisible by this.
    pub fn down_factor(&self) -> usize {
        1 << (self.scales - 1)
    }

    pub fn init(&self, ps: &mut ParamStore, rng: &mut ChaCha8Rng) {
        for (c1, c2) in &self.convs {
            c1.init(ps, rng);
            c2.init(ps, rng);
        }
    }

    /// Estimate the inverse flow warping `prev` toward `target`.
    pub fn forward(
        &self,
        g: &mut Graph,
        pn: &ParamNodes,
        prev: NodeId,
        target: NodeId,
    ) -> Result<NodeId> {
        let (c, h, w) = g.value(prev).dims3()?;
        let (ct, ht, wt) = g.value(target).dims3()?;
        if (c, h, w) != (ct, ht, wt) || c != 3 {
            return Err(Error::dim(format!(
                "flow estimator inputs {:?} vs {:?}",
                g.value(prev).shape(),
                g.value(target).shape()
            )));
        }
        let d = self.down_factor();
        if h % d != 0 || w % d != 0 {
            return Err(Error::dim(format!(
                "frame {h}x{w} not divisible by pyramid factor {d}"
            )));
        }
        // image pyramids, index 0 = full resolution
        let mut prevs = vec![prev];
        let mut targets = vec![target];
        for s in 1..self.scales {
            prevs.push(g.downsample2(prevs[s - 1])?);
            targets.push(g.downsample2(targets[s - 1])?);
        }
        let mut flow: Option<NodeId> = None;
        for s in (0..self.scales).rev() {
            let (sh, sw) = (h >> s, w >> s);
            let f_up = match flow {
                // displacement doubles when moving to the finer grid
                Some(f) => {
                    let u = g.upsample2(f)?;
                    g.scale(u, 2.0)?
                }
                None => g.constant(Tensor::zeros(vec![2, sh, sw]))?,
            };
            let warped = g.warp(prevs[s], f_up)?;
            let inp = g.concat(&[warped, targets[s], f_up])?;
            let (c1, c2) = &self.convs[s];
            let hdn = c1.forward(g, pn, inp)?;
            let act = lrelu(g, hdn)?;
            let delta = c2.forward(g, pn, act)?;
            flow = Some(g.add(f_up, delta)?);
        }
        Ok(flow.expect("at least one scale"))
    }
}

/// Estimate flow between two plain frames with the given weights.
pub fn estimate_flow(
    est: &FlowEstimator,
    params: &ParamStore,
    prev: &Tensor,
    target: &Tensor,
) -> Result<FlowField> {
    let mut g = Graph::new();
    let pn = params.const_leaves(&mut g)?;
    let p = g.constant(prev.clone())?;
    let t = g.constant(target.clone())?;
    let f = est.forward(&mut g, &pn, p, t)?;
    FlowField::from_tensor(g.value(f).clone())
}

/// Dump a flow field as CSV rows `y,x,dy,dx`.
pub fn flow_to_csv(flow: &FlowField, path: &Path) -> Result<()> {
    let (h, w) = flow.dims();
    let d = flow.0.data();
    let mut out = String::from("y,x,dy,dx\n");
    for y in 0..h {
        for x in 0..w {
            out.push_str(&format!(
                "{},{},{},{}\n",
                y,
                x,
                d[y * w + x],
                d[h * w + y * w + x]
            ));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Dump a flow field as a color-wheel P6 PPM: hue encodes direction,
/// saturation encodes magnitude relative to the field maximum.
pub fn flow_to_ppm(flow: &FlowField, path: &Path) -> Result<()> {
    let (h, w) = flow.dims();
    let d = flow.0.data();
    let max_mag = (0..h * w)
        .map(|i| (d[i] * d[i] + d[h * w + i] * d[h * w + i]).sqrt())
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P6\n{} {}\n255\n", w, h)?;
    for i in 0..h * w {
        let (dy, dx) = (d[i], d[h * w + i]);
        let mag = ((dy * dy + dx * dx).sqrt() / max_mag).min(1.0);
        let hue = dy.atan2(dx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        let (r, g, b) = hsv_to_rgb(hue, mag, 1.0);
        file.write_all(&[
            (r * 255.0).round() as u8,
            (g * 255.0).round() as u8,
            (b * 255.0).round() as u8,
        ])?;
    }
    file.flush()?;
    Ok(())
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match (i as i64).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}
