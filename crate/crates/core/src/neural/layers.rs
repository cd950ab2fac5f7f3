//! Primitive differentiable operations in batched form.
//!
//! Every op comes as a `_forward` returning what its `_backward` needs.
//! Convolutions run as one im2col GEMM across the whole batch, which is what
//! keeps training viable on a single core.

use ndarray::{Array1, Array2, Array3, Array4, Axis};

use crate::neural::real::Real;

// ── Linear ────────────────────────────────────────────────────────────────────

/// `y = x W^T + b` with `x: [n, in]`, `w: [out, in]`.
pub fn linear_forward<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &Array1<F>) -> Array2<F> {
    let mut y = x.dot(&w.t());
    for mut row in y.rows_mut() {
        row += b;
    }
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<F: Real>(
    dy: &Array2<F>,
    x: &Array2<F>,
    w: &Array2<F>,
) -> (Array2<F>, Array2<F>, Array1<F>) {
    let dx = dy.dot(w);
    let dw = dy.t().dot(x);
    let db = dy.sum_axis(Axis(0));
    (dx, dw, db)
}

// ── ReLU ──────────────────────────────────────────────────────────────────────

pub fn relu_forward<F: Real, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    x.mapv(|v| v.max_val(F::zero()))
}

/// `dx = dy * [x > 0]`.
pub fn relu_backward<F: Real, D: ndarray::Dimension>(
    dy: &ndarray::Array<F, D>,
    x: &ndarray::Array<F, D>,
) -> ndarray::Array<F, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(x, |d, &v| {
        if v <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

// ── 3x3 convolution, stride 1, zero padding ───────────────────────────────────

/// Unfold `[n, c, h, w]` into patch columns `[c*9, n*h*w]`.
pub fn im2col3<F: Real>(input: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = input.dim();
    let mut cols = Array2::zeros((c * 9, n * h * w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 3 + ky) * 3 + kx;
                for ni in 0..n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            cols[[row, (ni * h + y) * w + x]] =
                                input[[ni, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of patch-column gradients back onto the input grid.
fn col2im3<F: Real>(dcols: &Array2<F>, n: usize, c: usize, h: usize, w: usize) -> Array4<F> {
    let mut dx = Array4::zeros((n, c, h, w));
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 3 + ky) * 3 + kx;
                for ni in 0..n {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for x in 0..w {
                            let sx = x as isize + kx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dx[[ni, ci, sy as usize, sx as usize]] +=
                                dcols[[row, (ni * h + y) * w + x]];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Batched conv output plus the patch matrix the backward pass reuses.
pub struct ConvCache<F: Real> {
    pub cols: Array2<F>,
    input_dim: (usize, usize, usize, usize),
}

/// `weight: [c_out, c_in, 3, 3]`; output `[n, c_out, h, w]`.
pub fn conv3_forward<F: Real>(
    input: &Array4<F>,
    weight: &Array4<F>,
    bias: &Array1<F>,
) -> (Array4<F>, ConvCache<F>) {
    let (n, c_in, h, w) = input.dim();
    let c_out = weight.dim().0;
    debug_assert_eq!(weight.dim(), (c_out, c_in, 3, 3));
    let cols = im2col3(input);
    let w_mat = weight
        .view()
        .into_shape((c_out, c_in * 9))
        .expect("contiguous weight");
    let mut out_mat = w_mat.dot(&cols);
    for (mut row, &b) in out_mat.rows_mut().into_iter().zip(bias.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    let mut out = Array4::zeros((n, c_out, h, w));
    for ni in 0..n {
        for co in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    out[[ni, co, y, x]] = out_mat[[co, (ni * h + y) * w + x]];
                }
            }
        }
    }
    (out, ConvCache { cols, input_dim: (n, c_in, h, w) })
}

/// Returns `(dx, dw, db)`; pass `compute_dx = false` at the first layer of a
/// branch when the input gradient is not needed.
pub fn conv3_backward<F: Real>(
    dy: &Array4<F>,
    cache: &ConvCache<F>,
    weight: &Array4<F>,
    compute_dx: bool,
) -> (Option<Array4<F>>, Array4<F>, Array1<F>) {
    let (n, c_in, h, w) = cache.input_dim;
    let c_out = weight.dim().0;
    let mut dy_mat = Array2::zeros((c_out, n * h * w));
    for ni in 0..n {
        for co in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    dy_mat[[co, (ni * h + y) * w + x]] = dy[[ni, co, y, x]];
                }
            }
        }
    }
    let dw_mat = dy_mat.dot(&cache.cols.t());
    let dw = dw_mat
        .into_shape((c_out, c_in, 3, 3))
        .expect("contiguous gradient");
    let db = dy_mat.sum_axis(Axis(1));
    let dx = if compute_dx {
        let w_mat = weight
            .view()
            .into_shape((c_out, c_in * 9))
            .expect("contiguous weight");
        let dcols = w_mat.t().dot(&dy_mat);
        Some(col2im3(&dcols, n, c_in, h, w))
    } else {
        None
    };
    (dx, dw, db)
}

// ── Pooling ───────────────────────────────────────────────────────────────────

/// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
pub fn spatial_mean_forward<F: Real>(x: &Array4<F>) -> Array2<F> {
    let (_, _, h, w) = x.dim();
    let scale = F::from_f64(1.0 / (h * w) as f64);
    x.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v * scale)
}

pub fn spatial_mean_backward<F: Real>(dy: &Array2<F>, h: usize, w: usize) -> Array4<F> {
    let (n, c) = dy.dim();
    let scale = F::from_f64(1.0 / (h * w) as f64);
    Array4::from_shape_fn((n, c, h, w), |(ni, ci, _, _)| dy[[ni, ci]] * scale)
}

/// Mean over the token axis: `[b, t, d] -> [b, d]`.
pub fn temporal_mean_forward<F: Real>(x: &Array3<F>) -> Array2<F> {
    let t = x.dim().1;
    let scale = F::from_f64(1.0 / t as f64);
    x.sum_axis(Axis(1)).mapv(|v| v * scale)
}

pub fn temporal_mean_backward<F: Real>(dy: &Array2<F>, t: usize) -> Array3<F> {
    let (b, d) = dy.dim();
    let scale = F::from_f64(1.0 / t as f64);
    Array3::from_shape_fn((b, t, d), |(bi, _, di)| dy[[bi, di]] * scale)
}

// ── Layer norm over the last axis ─────────────────────────────────────────────

pub const LN_EPS: f64 = 1e-5;

pub struct LayerNormCache<F: Real> {
    /// Normalized activations before gain/bias.
    pub x_hat: Array2<F>,
    /// Per-row `1 / sqrt(var + eps)`.
    pub inv_std: Array1<F>,
}

/// Row-wise normalization of `[n, d]` with learned gain and bias.
pub fn layer_norm_forward<F: Real>(
    x: &Array2<F>,
    gain: &Array1<F>,
    bias: &Array1<F>,
) -> (Array2<F>, LayerNormCache<F>) {
    let (n, d) = x.dim();
    let inv_d = F::from_f64(1.0 / d as f64);
    let eps = F::from_f64(LN_EPS);
    let mut x_hat = Array2::zeros((n, d));
    let mut inv_std = Array1::zeros(n);
    let mut y = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let is = F::one() / (var + eps).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let xh = (x[[i, j]] - mean) * is;
            x_hat[[i, j]] = xh;
            y[[i, j]] = gain[j] * xh + bias[j];
        }
    }
    (y, LayerNormCache { x_hat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<F: Real>(
    dy: &Array2<F>,
    cache: &LayerNormCache<F>,
    gain: &Array1<F>,
) -> (Array2<F>, Array1<F>, Array1<F>) {
    let (n, d) = dy.dim();
    let inv_d = F::from_f64(1.0 / d as f64);
    let mut dx = Array2::zeros((n, d));
    let mut dgain = Array1::zeros(d);
    let mut dbias = Array1::zeros(d);
    for i in 0..n {
        let mut sum_dxhat = F::zero();
        let mut sum_dxhat_xhat = F::zero();
        for j in 0..d {
            let dxh = dy[[i, j]] * gain[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * cache.x_hat[[i, j]];
            dgain[j] += dy[[i, j]] * cache.x_hat[[i, j]];
            dbias[j] += dy[[i, j]];
        }
        for j in 0..d {
            let dxh = dy[[i, j]] * gain[j];
            dx[[i, j]] = (dxh - sum_dxhat * inv_d - cache.x_hat[[i, j]] * sum_dxhat_xhat * inv_d)
                * cache.inv_std[i];
        }
    }
    (dx, dgain, dbias)
}

// ── Softmax over the last axis ────────────────────────────────────────────────

/// Row-wise softmax with max subtraction.
pub fn softmax_forward<F: Real>(x: &Array2<F>) -> Array2<F> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().copied().fold(F::from_f64(f64::NEG_INFINITY), F::max_val);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.iter().copied().sum::<F>();
        row.mapv_inplace(|v| v / sum);
    }
    y
}

/// `dx_i = p_i (dy_i - sum_j dy_j p_j)` per row.
pub fn softmax_backward<F: Real>(dy: &Array2<F>, p: &Array2<F>) -> Array2<F> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let dot = (0..d).map(|j| dy[[i, j]] * p[[i, j]]).sum::<F>();
        for j in 0..d {
            dx[[i, j]] = p[[i, j]] * (dy[[i, j]] - dot);
        }
    }
    dx
}

// ── Sigmoid ───────────────────────────────────────────────────────────────────

/// Numerically stable logistic function.
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `d sigmoid / dx` expressed through the output probability.
pub fn sigmoid_backward<F: Real>(dy: F, p: F) -> F {
    dy * p * (F::one() - p)
}

// ── Positional encoding ───────────────────────────────────────────────────────

/// Sinusoidal table `[positions, d]`:
/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(...)`.
pub fn positional_encoding<F: Real>(positions: usize, d: usize) -> Array2<F> {
    let mut pe = Array2::zeros((positions, d));
    for t in 0..positions {
        for i in 0..d.div_ceil(2) {
            let angle = t as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe[[t, 2 * i]] = F::from_f64(angle.sin());
            if 2 * i + 1 < d {
                pe[[t, 2 * i + 1]] = F::from_f64(angle.cos());
            }
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn randn2(shape: (usize, usize), seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, &[0]);
        Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn max_rel(analytic: f64, numeric: f64) -> f64 {
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
    }

    /// Central-difference check of `d(sum(weights * f(x)))/dx` for 2-d ops.
    fn check_grad_2d(
        f: &dyn Fn(&Array2<f64>) -> Array2<f64>,
        x: &Array2<f64>,
        analytic: &Array2<f64>,
        weights: &Array2<f64>,
    ) {
        let h = 1e-5;
        for i in 0..x.dim().0 {
            for j in 0..x.dim().1 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let lp = (f(&xp) * weights).sum();
                let lm = (f(&xm) * weights).sum();
                let numeric = (lp - lm) / (2.0 * h);
                assert!(
                    max_rel(analytic[[i, j]], numeric) < 1e-4,
                    "at ({i}, {j}): analytic {} vs numeric {numeric}",
                    analytic[[i, j]]
                );
            }
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let x = randn2((4, 5), 1);
        let w = randn2((3, 5), 2);
        let b = Array1::from_shape_fn(3, |i| 0.1 * i as f64);
        let weights = randn2((4, 3), 3);
        let (dx, dw, db) = linear_backward(&weights, &x, &w);

        check_grad_2d(&|x| linear_forward(x, &w, &b), &x, &dx, &weights);
        check_grad_2d(&|w| linear_forward(&x, w, &b), &w, &dw, &weights);
        let h = 1e-5;
        for j in 0..3 {
            let mut bp = b.clone();
            bp[j] += h;
            let mut bm = b.clone();
            bm[j] -= h;
            let numeric = ((linear_forward(&x, &w, &bp) * &weights).sum()
                - (linear_forward(&x, &w, &bm) * &weights).sum())
                / (2.0 * h);
            assert!(max_rel(db[j], numeric) < 1e-4);
        }
    }

    #[test]
    fn relu_gradient_masks_negative_inputs() {
        let x = randn2((3, 4), 5);
        let dy = randn2((3, 4), 6);
        let dx = relu_backward(&dy, &x);
        for i in 0..3 {
            for j in 0..4 {
                let expected = if x[[i, j]] > 0.0 { dy[[i, j]] } else { 0.0 };
                assert_eq!(dx[[i, j]], expected);
            }
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = stream(7, &[0]);
        let input = Array4::from_shape_fn((2, 3, 5, 5), |_| rng.gen_range(-1.0f64..1.0));
        let weight = Array4::from_shape_fn((4, 3, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(4, |i| i as f64 * 0.1);
        let (out, _) = conv3_forward(&input, &weight, &bias);
        // direct nested-loop convolution as the oracle
        for n in 0..2 {
            for co in 0..4 {
                for y in 0..5i32 {
                    for x in 0..5i32 {
                        let mut acc = bias[co];
                        for ci in 0..3 {
                            for ky in 0..3i32 {
                                for kx in 0..3i32 {
                                    let (sy, sx) = (y + ky - 1, x + kx - 1);
                                    if (0..5).contains(&sy) && (0..5).contains(&sx) {
                                        acc += weight[[co, ci, ky as usize, kx as usize]]
                                            * input[[n, ci, sy as usize, sx as usize]];
                                    }
                                }
                            }
                        }
                        let got = out[[n, co, y as usize, x as usize]];
                        assert!((got - acc).abs() < 1e-12, "({n},{co},{y},{x})");
                    }
                }
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = stream(8, &[0]);
        let input = Array4::from_shape_fn((2, 2, 4, 4), |_| rng.gen_range(-1.0f64..1.0));
        let weight = Array4::from_shape_fn((3, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let bias = Array1::from_shape_fn(3, |_| rng.gen_range(-0.5..0.5));
        let dy = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.gen_range(-1.0..1.0));

        let (_, cache) = conv3_forward(&input, &weight, &bias);
        let (dx, dw, db) = conv3_backward(&dy, &cache, &weight, true);
        let dx = dx.unwrap();

        let loss = |input: &Array4<f64>, weight: &Array4<f64>, bias: &Array1<f64>| -> f64 {
            let (out, _) = conv3_forward(input, weight, bias);
            (out * &dy).sum()
        };
        let h = 1e-5;
        for (idx, analytic) in input.indexed_iter().map(|(i, _)| (i, dx[i])) {
            let mut p = input.clone();
            p[idx] += h;
            let mut m = input.clone();
            m[idx] -= h;
            let numeric = (loss(&p, &weight, &bias) - loss(&m, &weight, &bias)) / (2.0 * h);
            assert!(max_rel(analytic, numeric) < 1e-4, "dx at {idx:?}");
        }
        for (idx, analytic) in weight.indexed_iter().map(|(i, _)| (i, dw[i])) {
            let mut p = weight.clone();
            p[idx] += h;
            let mut m = weight.clone();
            m[idx] -= h;
            let numeric = (loss(&input, &p, &bias) - loss(&input, &m, &bias)) / (2.0 * h);
            assert!(max_rel(analytic, numeric) < 1e-4, "dw at {idx:?}");
        }
        for j in 0..3 {
            let mut p = bias.clone();
            p[j] += h;
            let mut m = bias.clone();
            m[j] -= h;
            let numeric = (loss(&input, &weight, &p) - loss(&input, &weight, &m)) / (2.0 * h);
            assert!(max_rel(db[j], numeric) < 1e-4, "db at {j}");
        }
    }

    #[test]
    fn pooling_gradients_are_uniform() {
        let mut rng = stream(9, &[0]);
        let x = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.gen_range(-1.0f64..1.0));
        let pooled = spatial_mean_forward(&x);
        assert_eq!(pooled.dim(), (2, 3));
        let manual = x
            .index_axis(Axis(0), 0)
            .index_axis(Axis(0), 1)
            .iter()
            .sum::<f64>()
            / 16.0;
        assert!((pooled[[0, 1]] - manual).abs() < 1e-12);

        let dy = randn2((2, 3), 10);
        let dx = spatial_mean_backward(&dy, 4, 4);
        assert!((dx[[1, 2, 0, 0]] - dy[[1, 2]] / 16.0).abs() < 1e-15);

        let x3 = Array3::from_shape_fn((2, 5, 3), |_| rng.gen_range(-1.0f64..1.0));
        let t_pooled = temporal_mean_forward(&x3);
        let manual_t = (0..5).map(|t| x3[[1, t, 2]]).sum::<f64>() / 5.0;
        assert!((t_pooled[[1, 2]] - manual_t).abs() < 1e-12);
        let dyt = randn2((2, 3), 11);
        let dxt = temporal_mean_backward(&dyt, 5);
        assert!((dxt[[0, 4, 1]] - dyt[[0, 1]] / 5.0).abs() < 1e-15);
    }

    #[test]
    fn temporal_pooling_is_token_permutation_invariant() {
        let mut rng = stream(17, &[0]);
        let x = Array3::from_shape_fn((2, 6, 4), |_| rng.gen_range(-1.0f64..1.0));
        let perm = [3usize, 0, 5, 1, 4, 2];
        let shuffled = Array3::from_shape_fn((2, 6, 4), |(b, t, d)| x[[b, perm[t], d]]);
        let a = temporal_mean_forward(&x);
        let b = temporal_mean_forward(&shuffled);
        for (va, vb) in a.iter().zip(b.iter()) {
            assert!((va - vb).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_output_is_normalized_and_gradients_check() {
        let x = randn2((4, 6), 12);
        let gain = Array1::from_shape_fn(6, |i| 1.0 + 0.1 * i as f64);
        let bias = Array1::from_shape_fn(6, |i| 0.05 * i as f64);
        let (y, cache) = layer_norm_forward(&x, &gain, &bias);
        for i in 0..4 {
            let mean: f64 = cache.x_hat.row(i).sum() / 6.0;
            let var: f64 = cache.x_hat.row(i).iter().map(|v| v * v).sum::<f64>() / 6.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4, "var {var} (eps-shrunk)");
        }
        assert_eq!(y.dim(), (4, 6));

        let dy = randn2((4, 6), 13);
        let (dx, dgain, dbias) = layer_norm_backward(&dy, &cache, &gain);
        check_grad_2d(&|x| layer_norm_forward(x, &gain, &bias).0, &x, &dx, &dy);
        let h = 1e-5;
        for j in 0..6 {
            let mut gp = gain.clone();
            gp[j] += h;
            let mut gm = gain.clone();
            gm[j] -= h;
            let numeric = ((layer_norm_forward(&x, &gp, &bias).0 * &dy).sum()
                - (layer_norm_forward(&x, &gm, &bias).0 * &dy).sum())
                / (2.0 * h);
            assert!(max_rel(dgain[j], numeric) < 1e-4);
            let mut bp = bias.clone();
            bp[j] += h;
            let mut bm = bias.clone();
            bm[j] -= h;
            let numeric = ((layer_norm_forward(&x, &gain, &bp).0 * &dy).sum()
                - (layer_norm_forward(&x, &gain, &bm).0 * &dy).sum())
                / (2.0 * h);
            assert!(max_rel(dbias[j], numeric) < 1e-4);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_gradients_check() {
        let x = randn2((3, 5), 14).mapv(|v| v * 3.0);
        let p = softmax_forward(&x);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        let dy = randn2((3, 5), 15);
        let dx = softmax_backward(&dy, &p);
        check_grad_2d(&softmax_forward, &x, &dx, &dy);
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let x = Array2::from_shape_fn((1, 4), |(_, j)| 500.0 * j as f64);
        let p = softmax_forward(&x);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[[0, 3]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_and_gradient_checks() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!(sigmoid(800.0f64) <= 1.0);
        let h = 1e-6;
        for &x in &[-3.0f64, -0.5, 0.0, 1.2, 4.0] {
            let p = sigmoid(x);
            let numeric = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            assert!(max_rel(sigmoid_backward(1.0, p), numeric) < 1e-4);
        }
    }

    #[test]
    fn positional_encoding_matches_formula() {
        let pe: Array2<f64> = positional_encoding(48, 32);
        assert_eq!(pe.dim(), (48, 32));
        // pos 0: sin -> 0, cos -> 1
        for i in 0..16 {
            assert_eq!(pe[[0, 2 * i]], 0.0);
            assert_eq!(pe[[0, 2 * i + 1]], 1.0);
        }
        let angle = 7.0 / 10_000f64.powf(10.0 / 32.0);
        assert!((pe[[7, 10]] - angle.sin()).abs() < 1e-12);
        assert!((pe[[7, 11]] - angle.cos()).abs() < 1e-12);
        assert!(pe.iter().all(|v| v.abs() <= 1.0));
    }
}
