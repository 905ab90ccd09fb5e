//! Numeric kernels behind the graph ops. Shapes are passed explicitly so the
//! graph layer stays free of indexing arithmetic.

/// Valid output range for one kernel tap: all `o` in `lo..hi` satisfy
/// `0 <= o*stride + k - pad < size`.
#[inline]
fn tap_range(k: usize, pad: usize, stride: usize, size: usize, out: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k + stride - 1) / stride
    } else {
        0
    };
    let last = size as isize - 1 + pad as isize - k as isize;
    if last < 0 {
        return (0, 0);
    }
    let hi = ((last as usize) / stride + 1).min(out);
    (lo.min(hi), hi)
}

pub fn conv2d_out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Cross-correlation of a C_in x H x W input with a C_out x C_in x k x k
/// kernel. `out` must be zeroed, length C_out*OH*OW.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_fwd(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kern: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    for co in 0..cout {
        let out_plane = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let x_plane = &x[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * cin + ci) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = tap_range(ky, pad, stride, h, oh);
                for kx in 0..k {
                    let wv = kern[k_base + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = tap_range(kx, pad, stride, w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let x_row = &x_plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out_plane[oy * ow..(oy + 1) * ow];
                        let off = kx as isize - pad as isize;
                        for ox in ox_lo..ox_hi {
                            let ix = (ox * stride) as isize + off;
                            out_row[ox] += wv * x_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of conv2d w.r.t. its input. `dx` is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_input(
    dy: &[f64],
    kern: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dx: &mut [f64],
) {
    for co in 0..cout {
        let dy_plane = &dy[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * cin + ci) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = tap_range(ky, pad, stride, h, oh);
                for kx in 0..k {
                    let wv = kern[k_base + ky * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = tap_range(kx, pad, stride, w, ow);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let dx_row = &mut dx_plane[iy * w..(iy + 1) * w];
                        let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                        let off = kx as isize - pad as isize;
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * stride) as isize + off) as usize;
                            dx_row[ix] += wv * dy_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of conv2d w.r.t. the kernel. `dk` is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_bwd_kernel(
    dy: &[f64],
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    dk: &mut [f64],
) {
    for co in 0..cout {
        let dy_plane = &dy[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..cin {
            let x_plane = &x[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * cin + ci) * k * k;
            for ky in 0..k {
                let (oy_lo, oy_hi) = tap_range(ky, pad, stride, h, oh);
                for kx in 0..k {
                    let (ox_lo, ox_hi) = tap_range(kx, pad, stride, w, ow);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let x_row = &x_plane[iy * w..(iy + 1) * w];
                        let dy_row = &dy_plane[oy * ow..(oy + 1) * ow];
                        let off = kx as isize - pad as isize;
                        for ox in ox_lo..ox_hi {
                            let ix = ((ox * stride) as isize + off) as usize;
                            acc += x_row[ix] * dy_row[ox];
                        }
                    }
                    dk[k_base + ky * k + kx] += acc;
                }
            }
        }
    }
}

pub fn matmul_fwd(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let out_row = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += av * b_row[j];
            }
        }
    }
}

/// dA = dC . B^T, accumulated.
pub fn matmul_bwd_a(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize, da: &mut [f64]) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += dc_row[j] * b_row[j];
            }
            da[i * k + p] += acc;
        }
    }
}

/// dB = A^T . dC, accumulated.
pub fn matmul_bwd_b(dc: &[f64], a: &[f64], m: usize, k: usize, n: usize, db: &mut [f64]) {
    for i in 0..m {
        let dc_row = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let db_row = &mut db[p * n..(p + 1) * n];
            for j in 0..n {
                db_row[j] += av * dc_row[j];
            }
        }
    }
}

/// 2x2 average pooling over each channel. Odd trailing rows/columns are
/// dropped (floor semantics).
pub fn downsample2_fwd(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        let op = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for oy in 0..oh {
            let r0 = &xp[(2 * oy) * w..(2 * oy + 1) * w];
            let r1 = &xp[(2 * oy + 1) * w..(2 * oy + 2) * w];
            let orow = &mut op[oy * ow..(oy + 1) * ow];
            for ox in 0..ow {
                orow[ox] = 0.25 * (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]);
            }
        }
    }
}

pub fn downsample2_bwd(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ci in 0..c {
        let dyp = &dy[ci * oh * ow..(ci + 1) * oh * ow];
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            let drow = &dyp[oy * ow..(oy + 1) * ow];
            for ox in 0..ow {
                let g = 0.25 * drow[ox];
                dxp[(2 * oy) * w + 2 * ox] += g;
                dxp[(2 * oy) * w + 2 * ox + 1] += g;
                dxp[(2 * oy + 1) * w + 2 * ox] += g;
                dxp[(2 * oy + 1) * w + 2 * ox + 1] += g;
            }
        }
    }
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2_fwd(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (h * 2, w * 2);
    for ci in 0..c {
        let xp = &x[ci * h * w..(ci + 1) * h * w];
        let op = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..h {
            let xrow = &xp[y * w..(y + 1) * w];
            for dy in 0..2 {
                let orow = &mut op[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                for x_i in 0..w {
                    orow[2 * x_i] = xrow[x_i];
                    orow[2 * x_i + 1] = xrow[x_i];
                }
            }
        }
    }
}

pub fn upsample2_bwd(dy: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let ow = w * 2;
    for ci in 0..c {
        let dyp = &dy[ci * 4 * h * w..(ci + 1) * 4 * h * w];
        let dxp = &mut dx[ci * h * w..(ci + 1) * h * w];
        for y in 0..h {
            for x_i in 0..w {
                let mut g = 0.0;
                for dyy in 0..2 {
                    let row = &dyp[(2 * y + dyy) * ow..(2 * y + dyy + 1) * ow];
                    g += row[2 * x_i] + row[2 * x_i + 1];
                }
                dxp[y * w + x_i] += g;
            }
        }
    }
}

/// Softmax across the channel axis, independently at each (y, x).
pub fn spatial_softmax_fwd(x: &[f64], c: usize, hw: usize, out: &mut [f64]) {
    for i in 0..hw {
        let mut mx = f64::NEG_INFINITY;
        for ci in 0..c {
            mx = mx.max(x[ci * hw + i]);
        }
        let mut denom = 0.0;
        for ci in 0..c {
            let e = (x[ci * hw + i] - mx).exp();
            out[ci * hw + i] = e;
            denom += e;
        }
        for ci in 0..c {
            out[ci * hw + i] /= denom;
        }
    }
}

pub fn spatial_softmax_bwd(dy: &[f64], y: &[f64], c: usize, hw: usize, dx: &mut [f64]) {
    for i in 0..hw {
        let mut dot = 0.0;
        for ci in 0..c {
            dot += dy[ci * hw + i] * y[ci * hw + i];
        }
        for ci in 0..c {
            dx[ci * hw + i] += y[ci * hw + i] * (dy[ci * hw + i] - dot);
        }
    }
}

/// Inverse-flow warp: out(c,h,w) = frame(c, h + f1(h,w), w + f2(h,w)) with
/// bilinear interpolation; sample coordinates clamp to the frame border.
pub fn warp_fwd(frame: &[f64], flow: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let hw = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let sy = (y as f64 + flow[i]).clamp(0.0, (h - 1) as f64);
            let sx = (x as f64 + flow[hw + i]).clamp(0.0, (w - 1) as f64);
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wy = sy - y0 as f64;
            let wx = sx - x0 as f64;
            for ci in 0..c {
                let fp = &frame[ci * hw..(ci + 1) * hw];
                let top = fp[y0 * w + x0] * (1.0 - wx) + fp[y0 * w + x1] * wx;
                let bot = fp[y1 * w + x0] * (1.0 - wx) + fp[y1 * w + x1] * wx;
                out[ci * hw + i] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
}

/// Gradients of warp w.r.t. frame and flow. Coordinates that clamp at the
/// border contribute zero flow gradient (the sample no longer moves).
#[allow(clippy::too_many_arguments)]
pub fn warp_bwd(
    dy_out: &[f64],
    frame: &[f64],
    flow: &[f64],
    c: usize,
    h: usize,
    w: usize,
    dframe: &mut [f64],
    dflow: &mut [f64],
) {
    let hw = h * w;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let ry = y as f64 + flow[i];
            let rx = x as f64 + flow[hw + i];
            let sy = ry.clamp(0.0, (h - 1) as f64);
            let sx = rx.clamp(0.0, (w - 1) as f64);
            let clamped_y = ry != sy;
            let clamped_x = rx != sx;
            let y0 = sy.floor() as usize;
            let x0 = sx.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            let wy = sy - y0 as f64;
            let wx = sx - x0 as f64;
            let mut g_sy = 0.0;
            let mut g_sx = 0.0;
            for ci in 0..c {
                let g = dy_out[ci * hw + i];
                if g == 0.0 {
                    continue;
                }
                let fp = &frame[ci * hw..(ci + 1) * hw];
                let dfp = &mut dframe[ci * hw..(ci + 1) * hw];
                dfp[y0 * w + x0] += g * (1.0 - wy) * (1.0 - wx);
                dfp[y0 * w + x1] += g * (1.0 - wy) * wx;
                dfp[y1 * w + x0] += g * wy * (1.0 - wx);
                dfp[y1 * w + x1] += g * wy * wx;
                let top = fp[y0 * w + x0] * (1.0 - wx) + fp[y0 * w + x1] * wx;
                let bot = fp[y1 * w + x0] * (1.0 - wx) + fp[y1 * w + x1] * wx;
                g_sy += g * (bot - top);
                let left = fp[y0 * w + x0] * (1.0 - wy) + fp[y1 * w + x0] * wy;
                let right = fp[y0 * w + x1] * (1.0 - wy) + fp[y1 * w + x1] * wy;
                g_sx += g * (right - left);
            }
            if !clamped_y {
                dflow[i] += g_sy;
            }
            if !clamped_x {
                dflow[hw + i] += g_sx;
            }
        }
    }
}

/// Uniform quantizer over [-1, 1] with `bits` planes: rounds to the level
/// grid q in 0..2^bits and returns (q, dequantized value).
#[inline]
pub fn quantize_unit(x: f64, bits: u32) -> (u32, f64) {
    let levels = ((1u64 << bits) - 1) as f64;
    let q = ((x + 1.0) / 2.0 * levels + 0.5).floor().clamp(0.0, levels) as u32;
    let dq = 2.0 * q as f64 / levels - 1.0;
    (q, dq)
}
