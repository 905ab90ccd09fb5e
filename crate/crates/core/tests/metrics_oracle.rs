//! Independent direct-formula MS-SSIM oracle. Written as plain nested loops
//! with no shared code beyond the published constants, so a bug in the
//! graph-op composition cannot hide here.

use lvc_core::metrics::{self, ms_ssim};
use lvc_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Map {
    h: usize,
    w: usize,
    v: Vec<f64>,
}

fn gauss_kernel() -> Vec<f64> {
    let n = 11;
    let sigma = 1.5;
    let c = (n / 2) as f64;
    let mut k = vec![0.0; n * n];
    let mut sum = 0.0;
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - c, x as f64 - c);
            let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            k[y * n + x] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid 11x11 Gaussian filtering.
fn filter(img: &Map, k: &[f64]) -> Map {
    let n = 11;
    let oh = img.h - n + 1;
    let ow = img.w - n + 1;
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = 0.0;
            for ky in 0..n {
                for kx in 0..n {
                    acc += k[ky * n + kx] * img.v[(oy + ky) * img.w + (ox + kx)];
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
    Map { h: oh, w: ow, v: out }
}

fn halve(img: &Map) -> Map {
    let oh = img.h / 2;
    let ow = img.w / 2;
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = 0.25
                * (img.v[2 * y * img.w + 2 * x]
                    + img.v[2 * y * img.w + 2 * x + 1]
                    + img.v[(2 * y + 1) * img.w + 2 * x]
                    + img.v[(2 * y + 1) * img.w + 2 * x + 1]);
        }
    }
    Map { h: oh, w: ow, v: out }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_ms_ssim(a0: &Map, b0: &Map) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    const C1: f64 = 0.0001;
    const C2: f64 = 0.0009;
    let mut scales = 0usize;
    let mut m = a0.h.min(a0.w);
    while scales < 5 && m >= 11 {
        scales += 1;
        m /= 2;
    }
    let wsum: f64 = WEIGHTS[..scales].iter().sum();
    let kern = gauss_kernel();

    let mut a = Map { h: a0.h, w: a0.w, v: a0.v.clone() };
    let mut b = Map { h: b0.h, w: b0.w, v: b0.v.clone() };
    let mut result = 1.0;
    for s in 0..scales {
        let mu_a = filter(&a, &kern);
        let mu_b = filter(&b, &kern);
        let aa = Map { h: a.h, w: a.w, v: a.v.iter().map(|v| v * v).collect() };
        let bb = Map { h: b.h, w: b.w, v: b.v.iter().map(|v| v * v).collect() };
        let ab = Map {
            h: a.h,
            w: a.w,
            v: a.v.iter().zip(&b.v).map(|(x, y)| x * y).collect(),
        };
        let e_aa = filter(&aa, &kern);
        let e_bb = filter(&bb, &kern);
        let e_ab = filter(&ab, &kern);
        let n = mu_a.v.len();
        let mut cs_map = vec![0.0; n];
        let mut l_map = vec![0.0; n];
        for i in 0..n {
            let va = e_aa.v[i] - mu_a.v[i] * mu_a.v[i];
            let vb = e_bb.v[i] - mu_b.v[i] * mu_b.v[i];
            let cov = e_ab.v[i] - mu_a.v[i] * mu_b.v[i];
            cs_map[i] = (2.0 * cov + C2) / (va + vb + C2);
            l_map[i] = (2.0 * mu_a.v[i] * mu_b.v[i] + C1)
                / (mu_a.v[i] * mu_a.v[i] + mu_b.v[i] * mu_b.v[i] + C1);
        }
        let weight = WEIGHTS[s] / wsum;
        result *= mean(&cs_map).max(1e-9).powf(weight);
        if s + 1 == scales {
            result *= mean(&l_map).max(1e-9).powf(weight);
        } else {
            a = halve(&a);
            b = halve(&b);
        }
    }
    result
}

fn to_tensor(m: &Map) -> Tensor {
    Tensor::from_vec(vec![1, m.h, m.w], m.v.clone()).unwrap()
}

#[test]
fn msssim_matches_oracle_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    for case in 0..20 {
        let h = [32, 48, 64, 96][case % 4];
        let w = [32, 64, 48, 96][(case / 4) % 4];
        let smooth = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            // random low-frequency pattern plus noise, clamped to [0,1]
            let fy = rng.gen_range(0.5..3.0);
            let fx = rng.gen_range(0.5..3.0);
            let ph = rng.gen_range(0.0..6.28);
            (0..h * w)
                .map(|i| {
                    let (y, x) = ((i / w) as f64, (i % w) as f64);
                    let v = 0.5
                        + 0.25 * ((fy * y / h as f64 + fx * x / w as f64) * 6.28 + ph).sin()
                        + rng.gen_range(-0.1..0.1);
                    v.clamp(0.0, 1.0)
                })
                .collect()
        };
        let a = Map { h, w, v: smooth(&mut rng) };
        let b = Map { h, w, v: smooth(&mut rng) };
        let want = oracle_ms_ssim(&a, &b);
        let got = ms_ssim(&to_tensor(&a), &to_tensor(&b)).unwrap();
        assert!(
            (got - want).abs() < 1e-9,
            "case {case} ({h}x{w}): {got} vs oracle {want}"
        );
    }
}

#[test]
fn checkerboard_vs_inverse_matches_oracle() {
    // 8x8-cell checkerboard against its inverse at 64x64.
    let h = 64;
    let v: Vec<f64> = (0..h * h)
        .map(|i| {
            let (y, x) = (i / h, i % h);
            f64::from((y / 8 + x / 8) % 2 == 0)
        })
        .collect();
    let inv: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
    let a = Map { h, w: h, v };
    let b = Map { h, w: h, v: inv };
    let want = oracle_ms_ssim(&a, &b);
    let got = ms_ssim(&to_tensor(&a), &to_tensor(&b)).unwrap();
    assert!((got - want).abs() < 1e-9, "{got} vs {want}");
}

#[test]
fn msssim_in_unit_interval_on_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..5 {
        let a: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let b: Vec<f64> = (0..32 * 32).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let m = ms_ssim(
            &Tensor::from_vec(vec![1, 32, 32], a).unwrap(),
            &Tensor::from_vec(vec![1, 32, 32], b).unwrap(),
        )
        .unwrap();
        assert!(m > 0.0 && m <= 1.0, "got {m}");
    }
}

#[test]
fn msssim_as_loss_is_differentiable() {
    use lvc_core::gradcheck::check_gradients;
    use lvc_core::tensor::Graph;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let a: Vec<f64> = (0..24 * 24).map(|_| rng.gen_range(0.3..=0.7)).collect();
    let b: Vec<f64> = a.iter().map(|v| (v + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)).collect();
    check_gradients(
        &|g: &mut Graph, ids: &[usize]| {
            let m = metrics::ms_ssim_node(g, ids[0], ids[1])?;
            g.affine(m, -1.0, 1.0) // 1 - MS-SSIM, the training form
        },
        &[
            Tensor::from_vec(vec![1, 24, 24], a).unwrap(),
            Tensor::from_vec(vec![1, 24, 24], b).unwrap(),
        ],
        1e-5,
        1e-3,
        Some(24),
    )
    .unwrap();
}
