//! Forward and backward rules for the layers the pipeline uses.
//!
//! Convolutions are stride 1 with "same" zero padding and odd square kernels,
//! so spatial coordinates of every feature map line up with input pixels.
//! Max-pooling is fixed at 2x2 windows with stride 2.

use serde::{Deserialize, Serialize};

use crate::error::{GadError, Result};
use crate::tensor::Tensor;

/// Backward rule applied at ReLU nonlinearities.
///
/// `Standard` is the true derivative. `Deconv` passes only positive upstream
/// gradient and ignores the forward sign; `Guided` applies both masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReluBackwardMode {
    Standard,
    Deconv,
    Guided,
}

/// Forward switches of a 2x2 max-pool: for each output cell, the flat index
/// into the input tensor that won the window.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolCache {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(GadError::shape(format!(
            "{what}: expected [C,H,W], got {s:?}"
        ))),
    }
}

fn conv_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    let (c_in, h, w) = dims3(input, "conv2d input")?;
    let [c_out, wc_in, kh, kw] = *weights.shape() else {
        return Err(GadError::shape(format!(
            "conv2d weights: expected [C_out,C_in,k,k], got {:?}",
            weights.shape()
        )));
    };
    if wc_in != c_in {
        return Err(GadError::shape(format!(
            "conv2d: input has {c_in} channels, weights expect {wc_in}"
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(GadError::shape(format!(
            "conv2d: kernel must be square and odd, got {kh}x{kw}"
        )));
    }
    Ok((c_in, c_out, h, w, kh))
}

/// Range of output coordinates `o` for which `o + offset` stays inside `[0, n)`.
#[inline]
fn valid_range(n: usize, offset: isize) -> std::ops::Range<usize> {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    lo..hi.max(lo)
}

pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (c_in, c_out, h, w, k) = conv_dims(input, weights)?;
    if bias.shape() != [c_out] {
        return Err(GadError::shape(format!(
            "conv2d bias: expected [{c_out}], got {:?}",
            bias.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0f32; c_out * h * w];
    for co in 0..c_out {
        let plane = &mut out[co * h * w..(co + 1) * h * w];
        plane.fill(bias.data()[co]);
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let wv = wt[((co * c_in + ci) * k + ky) * k + kx];
                    let xs = valid_range(w, dx);
                    for oy in valid_range(h, dy) {
                        let iy = (oy as isize + dy) as usize;
                        let orow = &mut plane[oy * w..(oy + 1) * w];
                        let irow = &src[iy * w..(iy + 1) * w];
                        for ox in xs.clone() {
                            orow[ox] += wv * irow[(ox as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![c_out, h, w], out)?;
    out.check_finite("conv2d_forward")?;
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
/// `input` is the tensor the forward pass consumed.
pub fn conv2d_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (gx, params) = conv_backward_impl(grad_out, input, weights, true)?;
    let (gw, gb) = params.expect("parameter gradients requested");
    Ok((gx, gw, gb))
}

/// Input gradient of [`conv2d_forward`] only.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<Tensor> {
    Ok(conv_backward_impl(grad_out, input, weights, false)?.0)
}

fn conv_backward_impl(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    want_params: bool,
) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
    let (c_in, c_out, h, w, k) = conv_dims(input, weights)?;
    if grad_out.shape() != [c_out, h, w] {
        return Err(GadError::shape(format!(
            "conv2d_backward: grad_out {:?}, forward output [{c_out}, {h}, {w}]",
            grad_out.shape()
        )));
    }
    let pad = (k / 2) as isize;
    let g = grad_out.data();
    let x = input.data();
    let wt = weights.data();
    let mut gx = vec![0.0f32; c_in * h * w];
    let mut gw = vec![0.0f32; wt.len()];
    let gb: Vec<f32> = (0..c_out)
        .map(|co| g[co * h * w..(co + 1) * h * w].iter().sum())
        .collect();
    for co in 0..c_out {
        let gplane = &g[co * h * w..(co + 1) * h * w];
        for ci in 0..c_in {
            let src = &x[ci * h * w..(ci + 1) * h * w];
            let dst = &mut gx[ci * h * w..(ci + 1) * h * w];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let widx = ((co * c_in + ci) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let xs = valid_range(w, dx);
                    let mut acc = 0.0f32;
                    for oy in valid_range(h, dy) {
                        let iy = (oy as isize + dy) as usize;
                        let grow = &gplane[oy * w..(oy + 1) * w];
                        let drow = &mut dst[iy * w..(iy + 1) * w];
                        for ox in xs.clone() {
                            drow[(ox as isize + dx) as usize] += grow[ox] * wv;
                        }
                        if want_params {
                            let irow = &src[iy * w..(iy + 1) * w];
                            for ox in xs.clone() {
                                acc += grow[ox] * irow[(ox as isize + dx) as usize];
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    let gx = Tensor::new(vec![c_in, h, w], gx)?;
    gx.check_finite("conv2d_backward")?;
    if !want_params {
        return Ok((gx, None));
    }
    let gw = Tensor::new(weights.shape().to_vec(), gw)?;
    let gb = Tensor::new(vec![c_out], gb)?;
    gw.check_finite("conv2d_backward")?;
    Ok((gx, Some((gw, gb))))
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Backward pass through a ReLU whose forward input was `cache_input`.
/// The derivative at exactly zero is taken as zero.
pub fn relu_backward(
    grad_out: &Tensor,
    cache_input: &Tensor,
    mode: ReluBackwardMode,
) -> Result<Tensor> {
    grad_out.zip_map(cache_input, |g, x| {
        let pass = match mode {
            ReluBackwardMode::Standard => x > 0.0,
            ReluBackwardMode::Deconv => g > 0.0,
            ReluBackwardMode::Guided => x > 0.0 && g > 0.0,
        };
        if pass {
            g
        } else {
            0.0
        }
    })
}

/// 2x2/stride-2 max-pool. Ties go to the first maximal element in row-major
/// order within the window.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolCache)> {
    let (c, h, w) = dims3(input, "maxpool input")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(GadError::shape(format!(
            "maxpool2x2 needs even spatial extent, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    Ok((
        Tensor::new(vec![c, oh, ow], out)?,
        PoolCache {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes each upstream gradient to its recorded forward switch.
pub fn maxpool2x2_backward(grad_out: &Tensor, cache: &PoolCache) -> Result<Tensor> {
    if grad_out.len() != cache.argmax.len() {
        return Err(GadError::shape(format!(
            "maxpool backward: {} gradients for {} switches",
            grad_out.len(),
            cache.argmax.len()
        )));
    }
    let mut gx = Tensor::zeros(&cache.input_shape);
    let dst = gx.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(&cache.argmax) {
        if idx >= dst.len() {
            return Err(GadError::shape(format!("pool switch {idx} out of range")));
        }
        dst[idx] += g;
    }
    Ok(gx)
}

fn dense_dims(input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let [m, n] = *weights.shape() else {
        return Err(GadError::shape(format!(
            "dense weights: expected [m,n], got {:?}",
            weights.shape()
        )));
    };
    if input.len() != n {
        return Err(GadError::shape(format!(
            "dense: input has {} values, weights expect {n}",
            input.len()
        )));
    }
    Ok((m, n))
}

/// Affine map `W x + b`; `input` is flattened regardless of its shape.
pub fn dense_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights)?;
    if bias.shape() != [m] {
        return Err(GadError::shape(format!(
            "dense bias: expected [{m}], got {:?}",
            bias.shape()
        )));
    }
    let x = input.data();
    let out: Vec<f32> = weights
        .data()
        .chunks_exact(n)
        .zip(bias.data())
        .map(|(row, &b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f32>())
        .collect();
    let out = Tensor::new(vec![m], out)?;
    out.check_finite("dense_forward")?;
    Ok(out)
}

/// Gradients of [`dense_forward`]; `grad_input` takes the shape of `input`.
pub fn dense_backward(
    grad_out: &Tensor,
    input: &Tensor,
    weights: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (m, n) = dense_dims(input, weights)?;
    if grad_out.len() != m {
        return Err(GadError::shape(format!(
            "dense_backward: {} upstream gradients for {m} outputs",
            grad_out.len()
        )));
    }
    let g = grad_out.data();
    let x = input.data();
    let mut gx = vec![0.0f32; n];
    let mut gw = vec![0.0f32; m * n];
    for (i, row) in weights.data().chunks_exact(n).enumerate() {
        let gi = g[i];
        for ((dx, dw), (&w, &xv)) in gx
            .iter_mut()
            .zip(&mut gw[i * n..(i + 1) * n])
            .zip(row.iter().zip(x))
        {
            *dx += gi * w;
            *dw = gi * xv;
        }
    }
    let gx = Tensor::new(input.shape().to_vec(), gx)?;
    gx.check_finite("dense_backward")?;
    Ok((
        gx,
        Tensor::new(vec![m, n], gw)?,
        Tensor::new(vec![m], g.to_vec())?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_scalar_kernel() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[1, 1, 1, 1], &[2.0]);
        let b = t(&[1], &[0.0]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 6.0, 8.0]);

        let g = t(&[1, 2, 2], &[1.0, -1.0, 0.5, 2.0]);
        let (gx, _, _) = conv2d_backward(&g, &x, &w).unwrap();
        assert_eq!(gx.data(), &[2.0, -2.0, 1.0, 4.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let x = t(&[2, 3, 3], &[1.0; 18]);
        let w = Tensor::zeros(&[2, 2, 3, 3]);
        let b = t(&[2], &[0.5, -1.5]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert!(y.data()[..9].iter().all(|&v| v == 0.5));
        assert!(y.data()[9..].iter().all(|&v| v == -1.5));
    }

    #[test]
    fn conv_zero_upstream() {
        let x = t(&[1, 3, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = Tensor::filled(&[2, 1, 3, 3], 0.3);
        let (gx, gw, gb) = conv2d_backward(&Tensor::zeros(&[2, 3, 3]), &x, &w).unwrap();
        assert!(gx
            .data()
            .iter()
            .chain(gw.data())
            .chain(gb.data())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b).is_err());
        assert!(conv2d_forward(&x, &Tensor::zeros(&[1, 2, 2, 2]), &b).is_err());
        assert!(conv2d_backward(
            &Tensor::zeros(&[2, 4, 4]),
            &x,
            &Tensor::zeros(&[1, 2, 3, 3])
        )
        .is_err());
    }

    #[test]
    fn relu_modes() {
        let x = t(&[2], &[-1.0, 2.0]);
        let g = t(&[2], &[3.0, -4.0]);
        let std = relu_backward(&g, &x, ReluBackwardMode::Standard).unwrap();
        let dec = relu_backward(&g, &x, ReluBackwardMode::Deconv).unwrap();
        let gui = relu_backward(&g, &x, ReluBackwardMode::Guided).unwrap();
        assert_eq!(std.data(), &[0.0, -4.0]);
        assert_eq!(dec.data(), &[3.0, 0.0]);
        assert_eq!(gui.data(), &[0.0, 0.0]);
    }

    #[test]
    fn relu_zero_input_has_zero_derivative() {
        let x = t(&[1], &[0.0]);
        let g = t(&[1], &[1.0]);
        assert_eq!(
            relu_backward(&g, &x, ReluBackwardMode::Standard)
                .unwrap()
                .data(),
            &[0.0]
        );
    }

    #[test]
    fn maxpool_single_window() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, cache) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let gx = maxpool2x2_backward(&t(&[1, 1, 1], &[7.0]), &cache).unwrap();
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 7.0]);
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = t(&[1, 2, 2], &[5.0, 5.0, 5.0, 5.0]);
        let (_, cache) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(cache.argmax, vec![0]);
        let x = t(&[1, 2, 2], &[1.0, 5.0, 5.0, 2.0]);
        let (_, cache) = maxpool2x2_forward(&x).unwrap();
        assert_eq!(cache.argmax, vec![1]);
    }

    #[test]
    fn maxpool_rejects_odd() {
        assert!(maxpool2x2_forward(&Tensor::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn dense_identity_and_dot() {
        let x = t(&[2], &[1.5, -2.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = dense_forward(&x, &eye, &Tensor::zeros(&[2])).unwrap();
        assert_eq!(y.data(), x.data());

        let w = t(&[1, 2], &[2.0, 3.0]);
        let y = dense_forward(&t(&[2], &[1.0, 1.0]), &w, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[5.0]);
        assert!(dense_forward(&t(&[3], &[1.0; 3]), &w, &Tensor::zeros(&[1])).is_err());
    }
}
