//! Independent reference implementations used by the integration tests and
//! the acceptance suite: finite differences, naive loops and brute force.
#![allow(dead_code)]

use gad_core::loss::{mse_loss, softmax_cross_entropy};
use gad_core::network::{Architecture, LayerSpec, Model};
use gad_core::ops::{
    conv2d_backward, dense_backward, maxpool2x2_backward, maxpool2x2_forward, relu_backward,
};
use gad_core::{ReluBackwardMode, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values bounded away from zero by more than the finite-difference step.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced 0.05 apart, so a ±h nudge never reorders them.
pub fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 * 0.05 - 0.5).collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub const H: f32 = 1e-3;

/// One analytic-versus-numeric comparison.
#[derive(Debug, Clone)]
pub struct GradCase {
    pub what: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCase {
    /// `|a - n| / max(|a|, |n|)`, with the denominator floored at 1e-2 so a
    /// pair of near-zero derivatives is judged on absolute agreement.
    pub fn rel_err(&self) -> f64 {
        let d = (self.analytic - self.numeric).abs();
        d / self.analytic.abs().max(self.numeric.abs()).max(1e-2)
    }
}

pub fn f64s(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn dot(a: &[f64], r: &[f64]) -> f64 {
    a.iter().zip(r).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` along coordinate `i`, in f64.
pub fn central(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> f64 {
    let h = H as f64;
    let mut p = x.to_vec();
    p[i] += h;
    let mut m = x.to_vec();
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}

/// Central difference, or `None` when the one-sided slopes disagree enough
/// to indicate a ReLU or pooling kink inside `[x - h, x + h]`.
pub fn smooth_central(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize) -> Option<f64> {
    let h = H as f64;
    let f0 = f(x);
    let mut p = x.to_vec();
    p[i] += h;
    let mut m = x.to_vec();
    m[i] -= h;
    let (fp, fm) = (f(&p), f(&m));
    let (right, left) = ((fp - f0) / h, (f0 - fm) / h);
    if (right - left).abs() > 1e-6 * right.abs().max(left.abs()).max(1.0) {
        return None;
    }
    Some((fp - fm) / (2.0 * h))
}

fn pick(rng: &mut ChaCha8Rng, t: &Tensor) -> usize {
    rng.random_range(0..t.len())
}

/// Gradient checks for every layer, both losses and a composed model, `reps`
/// random cases per check. Analytic values come from the f32 backward
/// passes; numeric values are central differences of the f64 reference
/// forwards below, so rounding noise stays far below the tolerance.
pub fn layer_gradient_cases(seed: u64, reps: usize) -> Vec<GradCase> {
    let mut rng = rng(seed);
    let mut cases = Vec::new();
    let mut push = |what: &str, analytic: f32, numeric: f64| {
        cases.push(GradCase {
            what: what.to_string(),
            analytic: analytic as f64,
            numeric,
        })
    };
    for _ in 0..reps {
        // Convolution: input, weight and bias gradients of Σ r ⊙ conv(x).
        let (ci, co, k, h, w) = (2, 3, [1usize, 3, 5][rng.random_range(0..3)], 5, 4);
        let x = uniform(&mut rng, &[ci, h, w], 1.0);
        let wt = uniform(&mut rng, &[co, ci, k, k], 0.5);
        let b = uniform(&mut rng, &[co], 0.5);
        let r = uniform(&mut rng, &[co, h, w], 1.0);
        let (gx, gw, gb) = conv2d_backward(&r, &x, &wt).unwrap();
        let (x64, w64, b64, r64) = (f64s(&x), f64s(&wt), f64s(&b), f64s(&r));
        let (xd, wd) = ([ci, h, w], [co, k]);
        let i = pick(&mut rng, &x);
        push(
            "conv input",
            gx.data()[i],
            central(|x| dot(&conv64(x, xd, &w64, wd, &b64), &r64), &x64, i),
        );
        let i = pick(&mut rng, &wt);
        push(
            "conv weight",
            gw.data()[i],
            central(|wt| dot(&conv64(&x64, xd, wt, wd, &b64), &r64), &w64, i),
        );
        let i = pick(&mut rng, &b);
        push(
            "conv bias",
            gb.data()[i],
            central(|b| dot(&conv64(&x64, xd, &w64, wd, b), &r64), &b64, i),
        );

        // ReLU away from its kink.
        let x = away_from_zero(&mut rng, &[3, 4, 4]);
        let r = uniform(&mut rng, &[3, 4, 4], 1.0);
        let g = relu_backward(&r, &x, ReluBackwardMode::Standard).unwrap();
        let r64 = f64s(&r);
        let i = pick(&mut rng, &x);
        push(
            "relu",
            g.data()[i],
            central(|x| dot(&relu64(x), &r64), &f64s(&x), i),
        );

        // Max pool with well-separated window entries.
        let x = distinct(&mut rng, &[2, 4, 6]);
        let r = uniform(&mut rng, &[2, 2, 3], 1.0);
        let (_, cache) = maxpool2x2_forward(&x).unwrap();
        let g = maxpool2x2_backward(&r, &cache).unwrap();
        let r64 = f64s(&r);
        let i = pick(&mut rng, &x);
        push(
            "maxpool",
            g.data()[i],
            central(|x| dot(&pool64(x, [2, 4, 6]), &r64), &f64s(&x), i),
        );

        // Dense over a multi-dimensional input.
        let x = uniform(&mut rng, &[2, 3, 2], 1.0);
        let wt = uniform(&mut rng, &[4, 12], 0.5);
        let b = uniform(&mut rng, &[4], 0.5);
        let r = uniform(&mut rng, &[4], 1.0);
        let (gx, gw, gb) = dense_backward(&r, &x, &wt).unwrap();
        let (x64, w64, b64, r64) = (f64s(&x), f64s(&wt), f64s(&b), f64s(&r));
        let i = pick(&mut rng, &x);
        push(
            "dense input",
            gx.data()[i],
            central(|x| dot(&dense64(x, &w64, &b64), &r64), &x64, i),
        );
        let i = pick(&mut rng, &wt);
        push(
            "dense weight",
            gw.data()[i],
            central(|wt| dot(&dense64(&x64, wt, &b64), &r64), &w64, i),
        );
        let i = pick(&mut rng, &b);
        push(
            "dense bias",
            gb.data()[i],
            central(|b| dot(&dense64(&x64, &w64, b), &r64), &b64, i),
        );

        // Losses.
        let z = uniform(&mut rng, &[4], 2.0);
        let label = rng.random_range(0..4);
        let (_, g) = softmax_cross_entropy(&z, label).unwrap();
        let i = pick(&mut rng, &z);
        push(
            "softmax cross-entropy",
            g.data()[i],
            central(|z| cross_entropy64(z, label), &f64s(&z), i),
        );
        let p = uniform(&mut rng, &[5], 2.0);
        let t = uniform(&mut rng, &[5], 2.0);
        let (_, g) = mse_loss(&p, &t).unwrap();
        let t64 = f64s(&t);
        let i = pick(&mut rng, &p);
        push(
            "mse",
            g.data()[i],
            central(|p| mse64(p, &t64), &f64s(&p), i),
        );
    }
    cases.extend(model_gradient_cases(seed ^ 0x5eed, reps));
    cases
}

pub fn conv64(
    x: &[f64],
    [ci, h, w]: [usize; 3],
    wt: &[f64],
    [co, k]: [usize; 2],
    b: &[f64],
) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let mut out = vec![0.0f64; co * h * w];
    for o in 0..co {
        for r in 0..h {
            for c in 0..w {
                let mut s = b[o];
                for i in 0..ci {
                    for u in 0..k {
                        for v in 0..k {
                            let (rr, cc) =
                                (r as isize + u as isize - pad, c as isize + v as isize - pad);
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            s += x[(i * h + rr as usize) * w + cc as usize]
                                * wt[((o * ci + i) * k + u) * k + v];
                        }
                    }
                }
                out[(o * h + r) * w + c] = s;
            }
        }
    }
    out
}

pub fn relu64(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn pool64(x: &[f64], [c, h, w]: [usize; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(c * h * w / 4);
    for ch in 0..c {
        for r in (0..h).step_by(2) {
            for col in (0..w).step_by(2) {
                let at = |dr: usize, dc: usize| x[(ch * h + r + dr) * w + col + dc];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    out
}

pub fn dense64(x: &[f64], wt: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bo)| bo + (0..n).map(|i| wt[o * n + i] * x[i]).sum::<f64>())
        .collect()
}

pub fn cross_entropy64(z: &[f64], label: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - z[label]
}

pub fn mse64(p: &[f64], t: &[f64]) -> f64 {
    p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64
}

/// f64 forward pass of any architecture, with parameters given as f64 vectors.
pub fn reference_forward(arch: &Architecture, params: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut shape = arch.input_shape.clone();
    let mut v = x.to_vec();
    let mut p = 0;
    for layer in &arch.layers {
        match *layer {
            LayerSpec::Conv {
                out_channels,
                kernel,
                ..
            } => {
                v = conv64(
                    &v,
                    [shape[0], shape[1], shape[2]],
                    &params[p],
                    [out_channels, kernel],
                    &params[p + 1],
                );
                shape[0] = out_channels;
                p += 2;
            }
            LayerSpec::Relu => v = relu64(&v),
            LayerSpec::MaxPool => {
                v = pool64(&v, [shape[0], shape[1], shape[2]]);
                shape[1] /= 2;
                shape[2] /= 2;
            }
            LayerSpec::Dense { outputs, .. } => {
                v = dense64(&v, &params[p], &params[p + 1]);
                shape = vec![outputs];
                p += 2;
            }
        }
    }
    v
}

pub fn tiny_cnn_arch(channels: usize, classes: usize) -> Architecture {
    Architecture {
        input_shape: vec![channels, 4, 4],
        layers: vec![
            LayerSpec::Conv {
                in_channels: channels,
                out_channels: 3,
                kernel: 3,
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool,
            LayerSpec::Dense {
                inputs: 12,
                outputs: 5,
            },
            LayerSpec::Relu,
            LayerSpec::Dense {
                inputs: 5,
                outputs: classes,
            },
        ],
    }
}

pub fn random_model(arch: Architecture, rng: &mut ChaCha8Rng, scale: f32) -> Model {
    let params = arch
        .param_layout()
        .into_iter()
        .map(|(_, shape)| uniform(rng, &shape, scale))
        .collect();
    Model::new(arch, params, 0).unwrap()
}

/// The composed network: cross-entropy gradients with respect to the input
/// and every parameter tensor. Draws whose perturbation crosses a kink are
/// skipped.
pub fn model_gradient_cases(seed: u64, reps: usize) -> Vec<GradCase> {
    let mut rng = rng(seed);
    let mut cases = Vec::new();
    while cases.len() < 2 * reps {
        let model = random_model(tiny_cnn_arch(2, 3), &mut rng, 0.8);
        let x = uniform(&mut rng, &[2, 4, 4], 1.0);
        let label = rng.random_range(0..3);
        let params: Vec<Vec<f64>> = model.params.iter().map(f64s).collect();
        let x64 = f64s(&x);
        let arch = &model.arch;
        let trace = model.forward_trace(&x).unwrap();
        let (_, g) = softmax_cross_entropy(&trace.output, label).unwrap();
        let (gx, gp) = model
            .backward(&trace, &g, ReluBackwardMode::Standard, true)
            .unwrap();
        let gp = gp.unwrap();

        let i = pick(&mut rng, &x);
        let loss_x = |x: &[f64]| cross_entropy64(&reference_forward(arch, &params, x), label);
        if let Some(n) = smooth_central(loss_x, &x64, i) {
            cases.push(GradCase {
                what: "model input".into(),
                analytic: gx.data()[i] as f64,
                numeric: n,
            });
        }
        let p = rng.random_range(0..gp.len());
        let j = pick(&mut rng, &gp[p]);
        let loss_p = |t: &[f64]| {
            let mut ps = params.clone();
            ps[p] = t.to_vec();
            cross_entropy64(&reference_forward(arch, &ps, &x64), label)
        };
        if let Some(n) = smooth_central(loss_p, &params[p], j) {
            cases.push(GradCase {
                what: format!("model {}", model.param_names()[p]),
                analytic: gp[p].data()[j] as f64,
                numeric: n,
            });
        }
    }
    cases
}

/// Direct six-loop cross-correlation with zero padding, accumulated in f64.
pub fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (co, k) = (w.shape()[0], w.shape()[2]);
    conv64(&f64s(x), [s[0], s[1], s[2]], &f64s(w), [co, k], &f64s(b))
}

/// 2×2 max pool by scanning each window.
pub fn naive_pool(x: &Tensor) -> Vec<f32> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Vec::new();
    for ch in 0..c {
        for r in (0..h).step_by(2) {
            for col in (0..w).step_by(2) {
                let mut m = f32::NEG_INFINITY;
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m = m.max(x.data()[(ch * h + r + dr) * w + col + dc]);
                }
                out.push(m);
            }
        }
    }
    out
}

pub type P = (i64, i64);

fn cross(o: P, a: P, b: P) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Hull vertices by testing every ordered pair as a candidate edge: `(i, j)`
/// is a hull edge when no point lies strictly to its right and every
/// collinear point lies within the segment. Returns sorted, deduplicated
/// vertices; collinear boundary points are not vertices.
pub fn brute_force_hull(points: &[P]) -> Vec<P> {
    let mut pts = points.to_vec();
    pts.sort();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let within = |a: P, b: P, p: P| {
        p.0 >= a.0.min(b.0) && p.0 <= a.0.max(b.0) && p.1 >= a.1.min(b.1) && p.1 <= a.1.max(b.1)
    };
    let mut verts = Vec::new();
    for &a in &pts {
        for &b in &pts {
            if a == b {
                continue;
            }
            let edge = pts.iter().all(|&p| {
                let c = cross(a, b, p);
                c > 0 || (c == 0 && within(a, b, p))
            });
            if edge {
                verts.push(a);
                verts.push(b);
            }
        }
    }
    verts.sort();
    verts.dedup();
    // A fully collinear set yields its two extremes from both directions.
    verts
}

/// Twice the absolute triangle area.
fn area2(a: P, b: P, c: P) -> i64 {
    cross(a, b, c).abs()
}

/// Point-in-triangle by area decomposition: the sub-triangle areas sum to the
/// whole exactly when `p` is inside or on the boundary.
pub fn in_triangle(t: [P; 3], p: P) -> bool {
    area2(t[0], t[1], p) + area2(t[1], t[2], p) + area2(t[2], t[0], p) == area2(t[0], t[1], t[2])
}

/// Lattice mask of a non-degenerate triangle, one point test per pixel.
pub fn triangle_mask(t: [P; 3], h: usize, w: usize) -> Vec<u8> {
    let mut m = vec![0u8; h * w];
    for r in 0..h {
        for c in 0..w {
            m[r * w + c] = in_triangle(t, (c as i64, r as i64)) as u8;
        }
    }
    m
}

/// Small conv/pool/dense ReLU network over a `[1, 4, 4]` input.
pub fn small_relu_model(rng: &mut ChaCha8Rng) -> Model {
    random_model(tiny_cnn_arch(1, 3), rng, 0.8)
}

/// `Σ IG` versus `f(x) - f(baseline)` at zero baseline.
pub fn completeness_gap(model: &Model, x: &Tensor, class: usize, steps: usize) -> (f64, f64) {
    use gad_core::attribution::{integrated_gradients, IgConfig};
    let map = integrated_gradients(model, x, class, &IgConfig::with_steps(steps)).unwrap();
    let total: f64 = map.values.iter().map(|&v| v as f64).sum();
    let fx = model.forward(x).unwrap().data()[class] as f64;
    let f0 = model.forward(&Tensor::zeros(x.shape())).unwrap().data()[class] as f64;
    (total, fx - f0)
}

/// Exhaustive best split of points into two non-empty groups by total
/// squared distance to the group means, for `n ≤ 8`. Returns the group that
/// contains index 0 first.
pub fn best_two_partition(points: &[Vec<f32>]) -> (Vec<usize>, Vec<usize>) {
    let n = points.len();
    let cost = |idx: &[usize]| -> f64 {
        let d = points[0].len();
        let mut mean = vec![0.0f64; d];
        for &i in idx {
            for (m, &v) in mean.iter_mut().zip(&points[i]) {
                *m += v as f64 / idx.len() as f64;
            }
        }
        idx.iter()
            .map(|&i| {
                points[i]
                    .iter()
                    .zip(&mean)
                    .map(|(&v, m)| (v as f64 - m).powi(2))
                    .sum::<f64>()
            })
            .sum()
    };
    let mut best = (f64::INFINITY, vec![], vec![]);
    // Masks with bit 0 set enumerate each partition once.
    for mask in 1u32..(1 << n) {
        if mask & 1 == 0 || mask == (1 << n) - 1 {
            continue;
        }
        let a: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 1).collect();
        let b: Vec<usize> = (0..n).filter(|&i| mask >> i & 1 == 0).collect();
        let c = cost(&a) + cost(&b);
        if c < best.0 {
            best = (c, a, b);
        }
    }
    (best.1, best.2)
}
