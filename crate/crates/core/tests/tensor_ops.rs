//! Oracle tests for the tensor engine: conv2d against a direct-summation
//! reference, and finite-difference gradient checks for every primitive op.

use lvc_core::gradcheck::{check_gradients, DEFAULT_STEP};
use lvc_core::tensor::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Brute-force cross-correlation, quadruple loop, zero padding.
#[allow(clippy::too_many_arguments)]
fn conv2d_oracle(
    x: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    kern: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; cout * oh * ow];
    for co in 0..cout {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ci in 0..cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                let xv = x[ci * h * w + iy as usize * w + ix as usize];
                                let kv = kern[((co * cin + ci) * k + ky) * k + kx];
                                acc += xv * kv;
                            }
                        }
                    }
                }
                out[co * oh * ow + oy * ow + ox] = acc;
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn conv2d_matches_direct_summation_oracle() {
    let mut r = rng(11);
    for case in 0..120 {
        let cin = r.gen_range(1..=3);
        let cout = r.gen_range(1..=4);
        let k = *[1usize, 3, 5].get(r.gen_range(0..3)).unwrap();
        let stride = r.gen_range(1..=2);
        let pad = r.gen_range(0..=2);
        let h = r.gen_range(k.max(3)..=10);
        let w = r.gen_range(k.max(3)..=10);
        let x = rand_tensor(&mut r, vec![cin, h, w]);
        let kern = rand_tensor(&mut r, vec![cout, cin, k, k]);
        let (want, oh, ow) = conv2d_oracle(x.data(), cin, h, w, kern.data(), cout, k, stride, pad);

        let mut g = Graph::new();
        let xi = g.constant(x).unwrap();
        let ki = g.constant(kern).unwrap();
        let y = g.conv2d(xi, ki, stride, pad).unwrap();
        assert_eq!(g.value(y).shape(), &[cout, oh, ow], "case {case}");
        for (a, b) in g.value(y).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn conv2d_random_8x8_case_from_contract() {
    // random 2x8x8 input, 4x2x3x3 kernel, the contract's named oracle case
    let mut r = rng(7);
    let x = rand_tensor(&mut r, vec![2, 8, 8]);
    let kern = rand_tensor(&mut r, vec![4, 2, 3, 3]);
    let (want, ..) = conv2d_oracle(x.data(), 2, 8, 8, kern.data(), 4, 3, 1, 0);
    let mut g = Graph::new();
    let xi = g.constant(x).unwrap();
    let ki = g.constant(kern).unwrap();
    let y = g.conv2d(xi, ki, 1, 0).unwrap();
    for (a, b) in g.value(y).data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

const OP_TOL: f64 = 1e-4;

#[test]
fn gradcheck_elementwise_binary_ops() {
    let mut r = rng(21);
    let a = rand_tensor(&mut r, vec![2, 3, 4]);
    let mut b = rand_tensor(&mut r, vec![2, 3, 4]);
    // keep divisor away from zero
    for v in b.data_mut() {
        *v = 0.5 + v.abs();
    }
    for op in ["add", "sub", "mul", "div"] {
        check_gradients(
            &|g: &mut Graph, ids: &[usize]| {
                let y = match op {
                    "add" => g.add(ids[0], ids[1])?,
                    "sub" => g.sub(ids[0], ids[1])?,
                    "mul" => g.mul(ids[0], ids[1])?,
                    _ => g.div(ids[0], ids[1])?,
                };
                let sq = g.mul(y, y)?;
                g.reduce_sum(sq)
            },
            &[a.clone(), b.clone()],
            DEFAULT_STEP,
            OP_TOL,
            None,
        )
        .unwrap_or_else(|e| panic!("{op}: {e}"));
    }
}

#[test]
fn gradcheck_unary_ops() {
    let mut r = rng(22);
    let x = rand_tensor(&mut r, vec![3, 2, 2]);
    let mut pos = x.clone();
    for v in pos.data_mut() {
        *v = v.abs() + 0.5;
    }
    let cases: Vec<(&str, Tensor)> = vec![
        ("leaky_relu", x.clone()),
        ("sigmoid", x.clone()),
        ("tanh", x.clone()),
        ("abs", x.clone()),
        ("affine", x.clone()),
        ("log", pos.clone()),
        ("sqrt", pos.clone()),
        ("powf", pos.clone()),
        ("softmax", x.clone()),
        ("reduce_mean", x.clone()),
    ];
    for (op, t) in cases {
        check_gradients(
            &|g: &mut Graph, ids: &[usize]| {
                let y = match op {
                    "leaky_relu" => g.leaky_relu(ids[0], 0.1)?,
                    "sigmoid" => g.sigmoid(ids[0])?,
                    "tanh" => g.tanh(ids[0])?,
                    "abs" => g.abs(ids[0])?,
                    "affine" => g.affine(ids[0], -1.7, 0.3)?,
                    "log" => g.log(ids[0])?,
                    "sqrt" => g.sqrt(ids[0])?,
                    "powf" => g.powf(ids[0], 0.7)?,
                    "softmax" => g.spatial_softmax(ids[0])?,
                    _ => return g.reduce_mean(ids[0]),
                };
                let sq = g.mul(y, y)?;
                g.reduce_sum(sq)
            },
            &[t],
            DEFAULT_STEP,
            OP_TOL,
            None,
        )
        .unwrap_or_else(|e| panic!("{op}: {e}"));
    }
}

#[test]
fn gradcheck_conv2d_and_matmul() {
    let mut r = rng(23);
    let x = rand_tensor(&mut r, vec![2, 6, 6]);
    let kern = rand_tensor(&mut r, vec![3, 2, 3, 3]);
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let y = g.conv2d(ids[0], ids[1], 2, 1)?;
            let sq = g.mul(y, y)?;
            g.reduce_sum(sq)
        },
        &[x, kern],
        DEFAULT_STEP,
        OP_TOL,
        None,
    )
    .unwrap();

    let a = rand_tensor(&mut r, vec![3, 4]);
    let b = rand_tensor(&mut r, vec![4, 2]);
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let y = g.matmul(ids[0], ids[1])?;
            let sq = g.mul(y, y)?;
            g.reduce_sum(sq)
        },
        &[a, b],
        DEFAULT_STEP,
        OP_TOL,
        None,
    )
    .unwrap();
}

#[test]
fn gradcheck_resampling_concat_slice_bias() {
    let mut r = rng(24);
    let x = rand_tensor(&mut r, vec![2, 4, 4]);
    let y2 = rand_tensor(&mut r, vec![3, 4, 4]);
    let bias = rand_tensor(&mut r, vec![2]);
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let d = g.downsample2(ids[0])?;
            let u = g.upsample2(d)?;
            let b = g.bias_add(u, ids[2])?;
            let cat = g.concat(&[b, ids[1]])?;
            let sl = g.slice_c(cat, 1, 3)?;
            let sq = g.mul(sl, sl)?;
            g.reduce_sum(sq)
        },
        &[x, y2, bias],
        DEFAULT_STEP,
        OP_TOL,
        None,
    )
    .unwrap();
}

#[test]
fn gradcheck_warp_away_from_kinks() {
    let mut r = rng(25);
    let frame = rand_tensor(&mut r, vec![2, 5, 5]);
    // flows bounded away from integers by >= 0.1 and from the border
    let n = 2 * 5 * 5;
    let flow_data: Vec<f64> = (0..n)
        .map(|_| {
            let mag: f64 = r.gen_range(0.15..0.85);
            let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            sign * mag
        })
        .collect();
    let flow = Tensor::from_vec(vec![2, 5, 5], flow_data).unwrap();
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let y = g.warp(ids[0], ids[1])?;
            let sq = g.mul(y, y)?;
            g.reduce_sum(sq)
        },
        &[frame, flow],
        DEFAULT_STEP,
        1e-3,
        None,
    )
    .unwrap();
}

#[test]
fn gradcheck_composite_graph_matches_finite_differences() {
    let mut r = rng(26);
    let x = rand_tensor(&mut r, vec![1, 4, 4]);
    let k1 = rand_tensor(&mut r, vec![4, 1, 3, 3]);
    let k2 = rand_tensor(&mut r, vec![2, 4, 3, 3]);
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let c1 = g.conv2d(ids[0], ids[1], 1, 1)?;
            let a1 = g.leaky_relu(c1, 0.2)?;
            let c2 = g.conv2d(a1, ids[2], 1, 1)?;
            let t = g.tanh(c2)?;
            let sm = g.spatial_softmax(t)?;
            let pick = g.slice_c(sm, 0, 1)?;
            g.reduce_mean(pick)
        },
        &[x, k1, k2],
        DEFAULT_STEP,
        OP_TOL,
        None,
    )
    .unwrap();
}

#[test]
fn forward_and_backward_are_bitwise_reproducible() {
    let run = || {
        let mut r = rng(31);
        let x = rand_tensor(&mut r, vec![2, 6, 6]).requires_grad();
        let k = rand_tensor(&mut r, vec![3, 2, 3, 3]).requires_grad();
        let mut g = Graph::new();
        let xi = g.leaf(x).unwrap();
        let ki = g.leaf(k).unwrap();
        let c = g.conv2d(xi, ki, 1, 1).unwrap();
        let s = g.sigmoid(c).unwrap();
        let loss = g.reduce_mean(s).unwrap();
        g.backward(loss).unwrap();
        (
            g.value(loss).item().unwrap().to_bits(),
            g.grad(ki).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn quantize_forward_matches_bitplane_dequant_and_passes_grad() {
    let mut g = Graph::new();
    let x = g
        .leaf(
            Tensor::from_vec(vec![3], vec![-1.0, 0.0, 1.0])
                .unwrap()
                .requires_grad(),
        )
        .unwrap();
    let q = g.quantize(x, 6).unwrap();
    let v = g.value(q).data();
    assert_eq!(v[0], -1.0);
    assert!((v[1] - (64.0 / 63.0 - 1.0)).abs() < 1e-15);
    assert_eq!(v[2], 1.0);
    let loss = g.reduce_sum(q).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}
