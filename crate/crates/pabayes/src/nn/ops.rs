//! Layer primitives with explicit forward and backward passes.
//!
//! All convolutions are 3x3 with one pixel of zero padding; stride is 1
//! (same resolution) or 2 (downsampling, even input dims required). The
//! inner loops run over contiguous rows so the compiler can vectorize them.

use crate::nn::tensor::Tensor4;
use crate::rng::DetRng;

pub const KSIZE: usize = 3;

/// Valid output range [lo, hi) along one axis for kernel tap `k`, stride `s`.
#[inline]
fn tap_range(k: usize, s: usize, in_dim: usize, out_dim: usize) -> (usize, usize) {
    // input index = s*out + k - 1 must lie in [0, in_dim)
    let lo = if k == 0 { 1usize.div_ceil(s) } else { 0 };
    let hi_signed = (in_dim as isize - k as isize) / s as isize + 1;
    let hi = hi_signed.clamp(0, out_dim as isize) as usize;
    (lo.min(hi), hi)
}

pub fn conv_out_dim(in_dim: usize, stride: usize) -> usize {
    match stride {
        1 => in_dim,
        2 => in_dim / 2,
        _ => unreachable!("stride must be 1 or 2"),
    }
}

/// y[n,co] = b[co] + sum_ci w[co,ci] * x[n,ci]  (3x3, pad 1, stride s)
pub fn conv2d_forward(
    x: &Tensor4,
    weights: &[f64],
    bias: &[f64],
    out_ch: usize,
    stride: usize,
) -> Tensor4 {
    let (h_out, w_out) = (conv_out_dim(x.h, stride), conv_out_dim(x.w, stride));
    let mut y = Tensor4::zeros(x.n, out_ch, h_out, w_out);
    let in_ch = x.c;
    for n in 0..x.n {
        for co in 0..out_ch {
            y.plane_mut(n, co).fill(bias[co]);
            for ci in 0..in_ch {
                let xp = x.plane(n, ci);
                let yp = y.plane_mut(n, co);
                for kh in 0..KSIZE {
                    let (oh_lo, oh_hi) = tap_range(kh, stride, x.h, h_out);
                    for kw in 0..KSIZE {
                        let wk = weights[((co * in_ch + ci) * KSIZE + kh) * KSIZE + kw];
                        let (ow_lo, ow_hi) = tap_range(kw, stride, x.w, w_out);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        for oh in oh_lo..oh_hi {
                            let ih = stride * oh + kh - 1;
                            let xrow = &xp[ih * x.w..(ih + 1) * x.w];
                            let yrow = &mut yp[oh * w_out..(oh + 1) * w_out];
                            if stride == 1 {
                                let xs = &xrow[ow_lo + kw - 1..ow_hi + kw - 1];
                                for (yv, xv) in yrow[ow_lo..ow_hi].iter_mut().zip(xs) {
                                    *yv += wk * xv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    yrow[ow] += wk * xrow[stride * ow + kw - 1];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Gradients of the convolution: returns dx and accumulates (dw, db).
pub fn conv2d_backward(
    x: &Tensor4,
    weights: &[f64],
    out_ch: usize,
    stride: usize,
    dy: &Tensor4,
    dw: &mut [f64],
    db: &mut [f64],
) -> Tensor4 {
    let in_ch = x.c;
    let (h_out, w_out) = (dy.h, dy.w);
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);

    for n in 0..x.n {
        for co in 0..out_ch {
            let dyp = dy.plane(n, co);
            db[co] += dyp.iter().sum::<f64>();
            for ci in 0..in_ch {
                let xp = x.plane(n, ci);
                let dxp = dx.plane_mut(n, ci);
                for kh in 0..KSIZE {
                    let (oh_lo, oh_hi) = tap_range(kh, stride, x.h, h_out);
                    for kw in 0..KSIZE {
                        let widx = ((co * in_ch + ci) * KSIZE + kh) * KSIZE + kw;
                        let wk = weights[widx];
                        let (ow_lo, ow_hi) = tap_range(kw, stride, x.w, w_out);
                        if ow_lo >= ow_hi {
                            continue;
                        }
                        let mut wgrad = 0.0;
                        for oh in oh_lo..oh_hi {
                            let ih = stride * oh + kh - 1;
                            let xrow = &xp[ih * x.w..(ih + 1) * x.w];
                            let dxrow = &mut dxp[ih * x.w..(ih + 1) * x.w];
                            let dyrow = &dyp[oh * w_out..(oh + 1) * w_out];
                            if stride == 1 {
                                let base = ow_lo + kw - 1;
                                let xs = &xrow[base..base + (ow_hi - ow_lo)];
                                let dxs = &mut dxrow[base..base + (ow_hi - ow_lo)];
                                for ((xv, dxv), dyv) in
                                    xs.iter().zip(dxs.iter_mut()).zip(&dyrow[ow_lo..ow_hi])
                                {
                                    wgrad += xv * dyv;
                                    *dxv += wk * dyv;
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = stride * ow + kw - 1;
                                    wgrad += xrow[iw] * dyrow[ow];
                                    dxrow[iw] += wk * dyrow[ow];
                                }
                            }
                        }
                        dw[widx] += wgrad;
                    }
                }
            }
        }
    }
    dx
}

pub const BN_EPS: f64 = 1e-5;
/// Running-statistics update momentum (fraction of the new batch statistic).
pub const BN_MOMENTUM: f64 = 0.1;

pub struct BnCache {
    pub xhat: Tensor4,
    pub inv_std: Vec<f64>,
}

/// Batch statistics over (batch, height, width) per channel; updates the
/// running mean/variance in place (biased variance, momentum 0.1).
pub fn batchnorm_forward_train(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    run_mean: &mut [f64],
    run_var: &mut [f64],
) -> (Tensor4, BnCache) {
    let m = (x.n * x.h * x.w) as f64;
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut xhat = Tensor4::zeros(x.n, x.c, x.h, x.w);
    let mut inv_std = vec![0.0; x.c];
    for c in 0..x.c {
        let mut sum = 0.0;
        for n in 0..x.n {
            sum += x.plane(n, c).iter().sum::<f64>();
        }
        let mean = sum / m;
        let mut var_sum = 0.0;
        for n in 0..x.n {
            for &v in x.plane(n, c) {
                let d = v - mean;
                var_sum += d * d;
            }
        }
        let var = var_sum / m;
        let istd = 1.0 / (var + BN_EPS).sqrt();
        inv_std[c] = istd;
        run_mean[c] = (1.0 - BN_MOMENTUM) * run_mean[c] + BN_MOMENTUM * mean;
        run_var[c] = (1.0 - BN_MOMENTUM) * run_var[c] + BN_MOMENTUM * var;
        for n in 0..x.n {
            let xp = x.plane(n, c);
            let xhp = xhat.plane_mut(n, c);
            for (xh, &v) in xhp.iter_mut().zip(xp) {
                *xh = (v - mean) * istd;
            }
            let yp = y.plane_mut(n, c);
            let xhp = xhat.plane(n, c);
            for (yv, &xh) in yp.iter_mut().zip(xhp) {
                *yv = gamma[c] * xh + beta[c];
            }
        }
    }
    (y, BnCache { xhat, inv_std })
}

/// Frozen-statistics normalization: a fixed per-channel affine map.
pub fn batchnorm_forward_eval(
    x: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    run_mean: &[f64],
    run_var: &[f64],
) -> Tensor4 {
    let mut y = Tensor4::zeros(x.n, x.c, x.h, x.w);
    for c in 0..x.c {
        let scale = gamma[c] / (run_var[c] + BN_EPS).sqrt();
        let shift = beta[c] - scale * run_mean[c];
        for n in 0..x.n {
            let xp = x.plane(n, c);
            let yp = y.plane_mut(n, c);
            for (yv, &v) in yp.iter_mut().zip(xp) {
                *yv = scale * v + shift;
            }
        }
    }
    y
}

pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &[f64],
    dy: &Tensor4,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor4 {
    let x = &cache.xhat;
    let m = (x.n * x.h * x.w) as f64;
    let mut dx = Tensor4::zeros(x.n, x.c, x.h, x.w);
    for c in 0..x.c {
        let mut s1 = 0.0; // sum dy
        let mut s2 = 0.0; // sum dy * xhat
        for n in 0..x.n {
            let dyp = dy.plane(n, c);
            let xhp = x.plane(n, c);
            for (&d, &xh) in dyp.iter().zip(xhp) {
                s1 += d;
                s2 += d * xh;
            }
        }
        dgamma[c] += s2;
        dbeta[c] += s1;
        let k = gamma[c] * cache.inv_std[c];
        for n in 0..x.n {
            let dyp = dy.plane(n, c);
            let xhp = x.plane(n, c);
            let dxp = dx.plane_mut(n, c);
            for ((dxv, &d), &xh) in dxp.iter_mut().zip(dyp).zip(xhp) {
                *dxv = k * (d - s1 / m - xh * s2 / m);
            }
        }
    }
    dx
}

pub fn leaky_relu_forward(x: &Tensor4, slope: f64) -> Tensor4 {
    let mut y = x.clone();
    for v in &mut y.data {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    y
}

pub fn leaky_relu_backward(x: &Tensor4, slope: f64, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (d, &v) in dx.data.iter_mut().zip(&x.data) {
        if v < 0.0 {
            *d *= slope;
        }
    }
    dx
}

/// Inverted dropout: kept units are scaled by 1/(1-rate) so expectations are
/// preserved. Returns the multiplier mask (None when rate = 0).
pub fn dropout_forward(x: &Tensor4, rate: f64, rng: &mut DetRng) -> (Tensor4, Option<Vec<f64>>) {
    if rate == 0.0 {
        return (x.clone(), None);
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let mut y = x.clone();
    let mut mask = vec![0.0; x.data.len()];
    for (m, v) in mask.iter_mut().zip(&mut y.data) {
        if rng.next_f64() < rate {
            *v = 0.0;
        } else {
            *m = keep_scale;
            *v *= keep_scale;
        }
    }
    (y, Some(mask))
}

pub fn dropout_backward(mask: &Option<Vec<f64>>, dy: &Tensor4) -> Tensor4 {
    match mask {
        None => dy.clone(),
        Some(mask) => {
            let mut dx = dy.clone();
            for (d, &m) in dx.data.iter_mut().zip(mask) {
                *d *= m;
            }
            dx
        }
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(x: &Tensor4) -> Tensor4 {
    let mut y = Tensor4::zeros(x.n, x.c, x.h * 2, x.w * 2);
    for n in 0..x.n {
        for c in 0..x.c {
            let xp = x.plane(n, c);
            let yp = y.plane_mut(n, c);
            let w_out = x.w * 2;
            for ih in 0..x.h {
                for iw in 0..x.w {
                    let v = xp[ih * x.w + iw];
                    let base = (2 * ih) * w_out + 2 * iw;
                    yp[base] = v;
                    yp[base + 1] = v;
                    yp[base + w_out] = v;
                    yp[base + w_out + 1] = v;
                }
            }
        }
    }
    y
}

pub fn upsample2_backward(dy: &Tensor4) -> Tensor4 {
    let (h_in, w_in) = (dy.h / 2, dy.w / 2);
    let mut dx = Tensor4::zeros(dy.n, dy.c, h_in, w_in);
    for n in 0..dy.n {
        for c in 0..dy.c {
            let dyp = dy.plane(n, c);
            let dxp = dx.plane_mut(n, c);
            for ih in 0..h_in {
                for iw in 0..w_in {
                    let base = (2 * ih) * dy.w + 2 * iw;
                    dxp[ih * w_in + iw] =
                        dyp[base] + dyp[base + 1] + dyp[base + dy.w] + dyp[base + dy.w + 1];
                }
            }
        }
    }
    dx
}

/// Channel concatenation `[a | b]`.
pub fn concat_forward(a: &Tensor4, b: &Tensor4) -> Tensor4 {
    debug_assert!(a.n == b.n && a.h == b.h && a.w == b.w);
    let mut y = Tensor4::zeros(a.n, a.c + b.c, a.h, a.w);
    for n in 0..a.n {
        for c in 0..a.c {
            y.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..b.c {
            y.plane_mut(n, a.c + c).copy_from_slice(b.plane(n, c));
        }
    }
    y
}

/// Split the concatenation gradient back into (da, db).
pub fn concat_backward(dy: &Tensor4, a_ch: usize) -> (Tensor4, Tensor4) {
    let b_ch = dy.c - a_ch;
    let mut da = Tensor4::zeros(dy.n, a_ch, dy.h, dy.w);
    let mut db = Tensor4::zeros(dy.n, b_ch, dy.h, dy.w);
    for n in 0..dy.n {
        for c in 0..a_ch {
            da.plane_mut(n, c).copy_from_slice(dy.plane(n, c));
        }
        for c in 0..b_ch {
            db.plane_mut(n, c).copy_from_slice(dy.plane(n, a_ch + c));
        }
    }
    (da, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn rand_tensor(rng: &mut DetRng, n: usize, c: usize, h: usize, w: usize) -> Tensor4 {
        let mut t = Tensor4::zeros(n, c, h, w);
        for v in &mut t.data {
            *v = rng.normal();
        }
        t
    }

    /// Central finite difference of scalar <dy, op(x)> along every input.
    fn fd_check_input(
        op: impl Fn(&Tensor4) -> Tensor4,
        grad: impl Fn(&Tensor4, &Tensor4) -> Tensor4,
        x: &Tensor4,
        tol: f64,
    ) {
        let mut rng = DetRng::new(999);
        let y0 = op(x);
        let dy = rand_tensor(&mut rng, y0.n, y0.c, y0.h, y0.w);
        let dx = grad(x, &dy);
        let h = 1e-6;
        for i in (0..x.data.len()).step_by(x.data.len().div_ceil(40).max(1)) {
            let mut xp = x.clone();
            xp.data[i] += h;
            let mut xm = x.clone();
            xm.data[i] -= h;
            let lp: f64 = op(&xp).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let lm: f64 = op(&xm).data.iter().zip(&dy.data).map(|(a, b)| a * b).sum();
            let num = (lp - lm) / (2.0 * h);
            let rel = (dx.data[i] - num).abs() / dx.data[i].abs().max(num.abs()).max(1e-6);
            assert!(rel < tol, "input {i}: analytic {} vs fd {num}", dx.data[i]);
        }
    }

    #[test]
    fn conv_stride1_matches_finite_differences() {
        let mut rng = DetRng::new(1);
        let (in_ch, out_ch) = (2, 3);
        let x = rand_tensor(&mut rng, 2, in_ch, 5, 6);
        let weights: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| rng.normal() * 0.3).collect();
        let bias: Vec<f64> = (0..out_ch).map(|_| rng.normal() * 0.1).collect();

        fd_check_input(
            |x| conv2d_forward(x, &weights, &bias, out_ch, 1),
            |x, dy| {
                let mut dw = vec![0.0; weights.len()];
                let mut db = vec![0.0; bias.len()];
                conv2d_backward(x, &weights, out_ch, 1, dy, &mut dw, &mut db)
            },
            &x,
            1e-5,
        );

        // weight gradients
        let y0 = conv2d_forward(&x, &weights, &bias, out_ch, 1);
        let dy = rand_tensor(&mut rng, y0.n, y0.c, y0.h, y0.w);
        let mut dw = vec![0.0; weights.len()];
        let mut db = vec![0.0; bias.len()];
        conv2d_backward(&x, &weights, out_ch, 1, &dy, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..weights.len() {
            let mut wp = weights.clone();
            wp[i] += h;
            let mut wm = weights.clone();
            wm[i] -= h;
            let lp: f64 = conv2d_forward(&x, &wp, &bias, out_ch, 1)
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            let lm: f64 = conv2d_forward(&x, &wm, &bias, out_ch, 1)
                .data
                .iter()
                .zip(&dy.data)
                .map(|(a, b)| a * b)
                .sum();
            let num = (lp - lm) / (2.0 * h);
            let rel = (dw[i] - num).abs() / dw[i].abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-5, "weight {i}: analytic {} vs fd {num}", dw[i]);
        }
    }

    #[test]
    fn conv_stride2_matches_finite_differences() {
        let mut rng = DetRng::new(2);
        let (in_ch, out_ch) = (2, 2);
        let x = rand_tensor(&mut rng, 1, in_ch, 6, 4);
        let weights: Vec<f64> = (0..out_ch * in_ch * 9).map(|_| rng.normal() * 0.3).collect();
        let bias = vec![0.05, -0.02];
        let y = conv2d_forward(&x, &weights, &bias, out_ch, 2);
        assert_eq!((y.h, y.w), (3, 2));
        fd_check_input(
            |x| conv2d_forward(x, &weights, &bias, out_ch, 2),
            |x, dy| {
                let mut dw = vec![0.0; weights.len()];
                let mut db = vec![0.0; bias.len()];
                conv2d_backward(x, &weights, out_ch, 2, dy, &mut dw, &mut db)
            },
            &x,
            1e-5,
        );
    }

    #[test]
    fn conv_on_1x1_grid_uses_center_tap_only() {
        let x = Tensor4 {
            n: 1,
            c: 1,
            h: 1,
            w: 1,
            data: vec![2.0],
        };
        let mut weights = vec![0.0; 9];
        weights[4] = 3.0; // center tap
        weights[0] = 100.0; // off-grid taps must not contribute
        let y = conv2d_forward(&x, &weights, &[1.0], 1, 1);
        assert_eq!(y.data, vec![7.0]);
    }

    #[test]
    fn batchnorm_train_matches_finite_differences() {
        let mut rng = DetRng::new(3);
        let x = rand_tensor(&mut rng, 2, 3, 4, 4);
        let gamma = vec![1.1, 0.9, 1.3];
        let beta = vec![0.1, -0.2, 0.0];
        fd_check_input(
            |x| {
                let mut rm = vec![0.0; 3];
                let mut rv = vec![1.0; 3];
                batchnorm_forward_train(x, &gamma, &beta, &mut rm, &mut rv).0
            },
            |x, dy| {
                let mut rm = vec![0.0; 3];
                let mut rv = vec![1.0; 3];
                let (_, cache) = batchnorm_forward_train(x, &gamma, &beta, &mut rm, &mut rv);
                let mut dg = vec![0.0; 3];
                let mut db = vec![0.0; 3];
                batchnorm_backward(&cache, &gamma, dy, &mut dg, &mut db)
            },
            &x,
            1e-4,
        );
    }

    #[test]
    fn batchnorm_eval_is_affine_per_channel() {
        let mut rng = DetRng::new(4);
        let gamma = vec![1.5, 0.7];
        let beta = vec![0.3, -0.1];
        let rm = vec![0.2, -0.4];
        let rv = vec![1.7, 0.9];
        let x1 = rand_tensor(&mut rng, 1, 2, 3, 3);
        let x2 = rand_tensor(&mut rng, 1, 2, 3, 3);
        let zero = Tensor4::zeros(1, 2, 3, 3);
        let f = |x: &Tensor4| batchnorm_forward_eval(x, &gamma, &beta, &rm, &rv);
        let y0 = f(&zero);
        let sum = Tensor4 {
            data: x1.data.iter().zip(&x2.data).map(|(a, b)| a + b).collect(),
            ..x1.clone()
        };
        let lhs = f(&sum);
        let y1 = f(&x1);
        let y2 = f(&x2);
        for i in 0..lhs.data.len() {
            let rhs = y1.data[i] + y2.data[i] - y0.data[i];
            assert!((lhs.data[i] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn leaky_relu_gradient() {
        let mut rng = DetRng::new(5);
        let x = rand_tensor(&mut rng, 1, 2, 4, 4);
        fd_check_input(
            |x| leaky_relu_forward(x, 0.01),
            |x, dy| leaky_relu_backward(x, 0.01, dy),
            &x,
            1e-5,
        );
    }

    #[test]
    fn dropout_mask_statistics() {
        let mut rng = DetRng::new(6);
        let rate = 0.1;
        let x = Tensor4 {
            n: 1,
            c: 1,
            h: 1,
            w: 100_000,
            data: vec![1.0; 100_000],
        };
        let (y, mask) = dropout_forward(&x, rate, &mut rng);
        let kept = y.data.iter().filter(|&&v| v != 0.0).count();
        let keep_rate = kept as f64 / y.data.len() as f64;
        assert!(
            (keep_rate - (1.0 - rate)).abs() < 0.01,
            "keep rate {keep_rate}"
        );
        // Kept values are scaled by 1/(1-rate).
        let scale = 1.0 / (1.0 - rate);
        assert!(y
            .data
            .iter()
            .all(|&v| v == 0.0 || (v - scale).abs() < 1e-12));
        // Backward applies the same mask.
        let dy = Tensor4 {
            data: vec![2.0; 100_000],
            ..x.clone()
        };
        let dx = dropout_backward(&mask, &dy);
        for (d, v) in dx.data.iter().zip(&y.data) {
            assert_eq!(*d, 2.0 * v);
        }
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        let mut rng = DetRng::new(7);
        let x = rand_tensor(&mut rng, 1, 1, 3, 3);
        let (y, mask) = dropout_forward(&x, 0.0, &mut rng);
        assert_eq!(y.data, x.data);
        assert!(mask.is_none());
    }

    #[test]
    fn upsample_roundtrip_gradient() {
        let mut rng = DetRng::new(8);
        let x = rand_tensor(&mut rng, 1, 2, 3, 2);
        fd_check_input(
            upsample2_forward,
            |_, dy| upsample2_backward(dy),
            &x,
            1e-6,
        );
        let y = upsample2_forward(&x);
        assert_eq!((y.h, y.w), (6, 4));
        assert_eq!(y.plane(0, 0)[0], x.plane(0, 0)[0]);
        assert_eq!(y.plane(0, 0)[1], x.plane(0, 0)[0]);
    }

    #[test]
    fn concat_split_roundtrip() {
        let mut rng = DetRng::new(9);
        let a = rand_tensor(&mut rng, 2, 2, 3, 3);
        let b = rand_tensor(&mut rng, 2, 3, 3, 3);
        let y = concat_forward(&a, &b);
        assert_eq!(y.c, 5);
        let (da, db) = concat_backward(&y, 2);
        assert_eq!(da.data, a.data);
        assert_eq!(db.data, b.data);
    }
}
