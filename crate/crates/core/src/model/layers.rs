//! Layer primitives: forward passes with caches and hand-derived backward
//! passes. Everything is generic over f32/f64 so training runs single
//! precision while gradient checks run double.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis, NdFloat};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Variance guard inside normalization.
pub const BN_EPSILON: f64 = 1e-3;

// --- ReLU --------------------------------------------------------------

pub fn relu_inplace<F: NdFloat, D: ndarray::Dimension>(x: &mut ndarray::Array<F, D>) {
    x.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// dx = dy where the forward output was positive.
pub fn relu_backward<F: NdFloat, D: ndarray::Dimension>(
    dy: &mut ndarray::Array<F, D>,
    forward_out: &ndarray::Array<F, D>,
) {
    ndarray::Zip::from(dy)
        .and(forward_out)
        .for_each(|g, &o| {
            if o <= F::zero() {
                *g = F::zero();
            }
        });
}

// --- 1D convolution over the time axis (same padding, width 3) ---------

pub struct Conv1dCache<F> {
    pub input: Array3<F>,
}

/// input [n, c_in, d], weight [filters, c_in, 3] flattened, bias [filters].
pub fn conv1d_same_forward<F: NdFloat>(
    input: &Array3<F>,
    weight: &[F],
    bias: &[F],
    filters: usize,
) -> (Array3<F>, Conv1dCache<F>) {
    let (n, c_in, d) = input.dim();
    let mut out = Array3::<F>::zeros((n, filters, d));
    for s in 0..n {
        for f in 0..filters {
            for t in 0..d {
                let mut acc = bias[f];
                for c in 0..c_in {
                    let wbase = (f * c_in + c) * 3;
                    for (kw, &w) in weight[wbase..wbase + 3].iter().enumerate() {
                        let ti = t as isize + kw as isize - 1;
                        if ti >= 0 && (ti as usize) < d {
                            acc = acc + w * input[[s, c, ti as usize]];
                        }
                    }
                }
                out[[s, f, t]] = acc;
            }
        }
    }
    (
        out,
        Conv1dCache {
            input: input.clone(),
        },
    )
}

pub fn conv1d_same_backward<F: NdFloat>(
    dy: &Array3<F>,
    cache: &Conv1dCache<F>,
    weight: &[F],
    dweight: &mut [F],
    dbias: &mut [F],
) -> Array3<F> {
    let (n, c_in, d) = cache.input.dim();
    let filters = dy.dim().1;
    let mut dx = Array3::<F>::zeros((n, c_in, d));
    for s in 0..n {
        for f in 0..filters {
            for t in 0..d {
                let g = dy[[s, f, t]];
                dbias[f] = dbias[f] + g;
                for c in 0..c_in {
                    let wbase = (f * c_in + c) * 3;
                    for kw in 0..3 {
                        let ti = t as isize + kw as isize - 1;
                        if ti >= 0 && (ti as usize) < d {
                            dweight[wbase + kw] =
                                dweight[wbase + kw] + g * cache.input[[s, c, ti as usize]];
                            dx[[s, c, ti as usize]] =
                                dx[[s, c, ti as usize]] + g * weight[wbase + kw];
                        }
                    }
                }
            }
        }
    }
    dx
}

// --- 2D convolution (same padding, 3x3, stride 1) via im2col -----------

pub struct Conv2dCache<F> {
    /// [n*h*w, c_in*9]
    pub cols: Array2<F>,
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
}

/// input [n, c_in, h, w], weight [filters, c_in, 3, 3] flattened, bias [filters].
pub fn conv2d_same_forward<F: NdFloat>(
    input: &Array4<F>,
    weight: &[F],
    bias: &[F],
    filters: usize,
) -> (Array4<F>, Conv2dCache<F>) {
    let (n, c_in, h, w) = input.dim();
    let mut cols = Array2::<F>::zeros((n * h * w, c_in * 9));
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (s * h + y) * w + x;
                for c in 0..c_in {
                    for ky in 0..3usize {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = x as isize + kx as isize - 1;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            cols[[row, (c * 3 + ky) * 3 + kx]] =
                                input[[s, c, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    let wmat = ArrayView2::from_shape((filters, c_in * 9), weight)
        .expect("weight shape")
        .reversed_axes(); // [c_in*9, filters]
    let mut out_mat = cols.dot(&wmat); // [n*h*w, filters]
    let bias_view = ArrayView1::from(bias);
    out_mat += &bias_view;
    let mut out = Array4::<F>::zeros((n, filters, h, w));
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (s * h + y) * w + x;
                for f in 0..filters {
                    out[[s, f, y, x]] = out_mat[[row, f]];
                }
            }
        }
    }
    (
        out,
        Conv2dCache {
            cols,
            n,
            c_in,
            h,
            w,
        },
    )
}

pub fn conv2d_same_backward<F: NdFloat>(
    dy: &Array4<F>,
    cache: &Conv2dCache<F>,
    weight: &[F],
    dweight: &mut [F],
    dbias: &mut [F],
) -> Array4<F> {
    let (n, filters, h, w) = dy.dim();
    let c_in = cache.c_in;
    let mut dy_mat = Array2::<F>::zeros((n * h * w, filters));
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (s * h + y) * w + x;
                for f in 0..filters {
                    dy_mat[[row, f]] = dy[[s, f, y, x]];
                }
            }
        }
    }
    // dW = dy_mat^T . cols, laid out [filters, c_in*9]
    let dw = dy_mat.t().dot(&cache.cols);
    for (dst, src) in dweight.iter_mut().zip(dw.iter()) {
        *dst = *dst + *src;
    }
    for f in 0..filters {
        dbias[f] = dbias[f] + dy_mat.column(f).sum();
    }
    // dcols = dy_mat . W
    let wmat = ArrayView2::from_shape((filters, c_in * 9), weight).expect("weight shape");
    let dcols = dy_mat.dot(&wmat); // [n*h*w, c_in*9]
    let mut dx = Array4::<F>::zeros((n, c_in, h, w));
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let row = (s * h + y) * w + x;
                for c in 0..c_in {
                    for ky in 0..3usize {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = x as isize + kx as isize - 1;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            dx[[s, c, iy as usize, ix as usize]] = dx
                                [[s, c, iy as usize, ix as usize]]
                                + dcols[[row, (c * 3 + ky) * 3 + kx]];
                        }
                    }
                }
            }
        }
    }
    dx
}

// --- 2x2 max pooling, stride 2, floor ----------------------------------

pub struct MaxPoolCache {
    /// Flat input index of each pooled maximum.
    pub argmax: Vec<usize>,
    pub input_dim: (usize, usize, usize, usize),
}

pub fn maxpool2_forward<F: NdFloat>(input: &Array4<F>) -> (Array4<F>, MaxPoolCache) {
    let (n, c, h, w) = input.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut out = Array4::<F>::zeros((n, c, ph, pw));
    let mut argmax = vec![0usize; n * c * ph * pw];
    let strides = (c * h * w, h * w, w);
    for s in 0..n {
        for ch in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    let mut best = input[[s, ch, 2 * py, 2 * px]];
                    let mut best_idx = s * strides.0 + ch * strides.1 + (2 * py) * strides.2 + 2 * px;
                    for dy in 0..2usize {
                        for dx in 0..2usize {
                            let v = input[[s, ch, 2 * py + dy, 2 * px + dx]];
                            if v > best {
                                best = v;
                                best_idx = s * strides.0
                                    + ch * strides.1
                                    + (2 * py + dy) * strides.2
                                    + (2 * px + dx);
                            }
                        }
                    }
                    out[[s, ch, py, px]] = best;
                    argmax[((s * c + ch) * ph + py) * pw + px] = best_idx;
                }
            }
        }
    }
    (
        out,
        MaxPoolCache {
            argmax,
            input_dim: (n, c, h, w),
        },
    )
}

pub fn maxpool2_backward<F: NdFloat>(dy: &Array4<F>, cache: &MaxPoolCache) -> Array4<F> {
    let mut dx = Array4::<F>::zeros(cache.input_dim);
    let flat = dx.as_slice_mut().expect("contiguous");
    for (slot, &idx) in cache.argmax.iter().enumerate() {
        flat[idx] = flat[idx] + dy.as_slice().expect("contiguous")[slot];
    }
    dx
}

// --- batch normalization over [rows, features] --------------------------

pub struct BatchNormCache<F> {
    pub x_hat: Array2<F>,
    pub inv_std: Array1<F>,
}

/// Training-mode normalization with batch statistics; updates running
/// statistics in place when `running` is provided.
pub fn batchnorm_train_forward<F: NdFloat>(
    x: &Array2<F>,
    gamma: &[F],
    beta: &[F],
    running: Option<(&mut [F], &mut [F], f64)>,
) -> (Array2<F>, BatchNormCache<F>) {
    let rows = x.nrows();
    let nf = F::from(rows).expect("rows fit in float");
    let eps = F::from(BN_EPSILON).expect("epsilon");
    let mean = x.sum_axis(Axis(0)) / nf;
    let mut var = Array1::<F>::zeros(x.ncols());
    for row in x.rows() {
        for (j, &v) in row.iter().enumerate() {
            let d = v - mean[j];
            var[j] = var[j] + d * d;
        }
    }
    var.mapv_inplace(|v| v / nf);
    let inv_std = var.mapv(|v| F::one() / (v + eps).sqrt());
    let mut x_hat = x.clone();
    for mut row in x_hat.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j];
        }
    }
    let mut out = x_hat.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = gamma[j] * *v + beta[j];
        }
    }
    if let Some((running_mean, running_var, momentum)) = running {
        let m = F::from(momentum).expect("momentum");
        let one_m = F::one() - m;
        for j in 0..x.ncols() {
            running_mean[j] = m * running_mean[j] + one_m * mean[j];
            running_var[j] = m * running_var[j] + one_m * var[j];
        }
    }
    (out, BatchNormCache { x_hat, inv_std })
}

/// Inference-mode normalization with running statistics.
pub fn batchnorm_infer_forward<F: NdFloat>(
    x: &Array2<F>,
    gamma: &[F],
    beta: &[F],
    running_mean: &[F],
    running_var: &[F],
) -> Array2<F> {
    let eps = F::from(BN_EPSILON).expect("epsilon");
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let inv = F::one() / (running_var[j] + eps).sqrt();
            *v = gamma[j] * (*v - running_mean[j]) * inv + beta[j];
        }
    }
    out
}

pub fn batchnorm_backward<F: NdFloat>(
    dy: &Array2<F>,
    cache: &BatchNormCache<F>,
    gamma: &[F],
    dgamma: &mut [F],
    dbeta: &mut [F],
) -> Array2<F> {
    let rows = dy.nrows();
    let cols = dy.ncols();
    let nf = F::from(rows).expect("rows fit in float");
    let mut sum_dy = vec![F::zero(); cols];
    let mut sum_dy_xhat = vec![F::zero(); cols];
    for (row_dy, row_xhat) in dy.rows().into_iter().zip(cache.x_hat.rows()) {
        for j in 0..cols {
            sum_dy[j] = sum_dy[j] + row_dy[j];
            sum_dy_xhat[j] = sum_dy_xhat[j] + row_dy[j] * row_xhat[j];
        }
    }
    for j in 0..cols {
        dgamma[j] = dgamma[j] + sum_dy_xhat[j];
        dbeta[j] = dbeta[j] + sum_dy[j];
    }
    let mut dx = Array2::<F>::zeros((rows, cols));
    for i in 0..rows {
        for j in 0..cols {
            let term = nf * dy[[i, j]] - sum_dy[j] - cache.x_hat[[i, j]] * sum_dy_xhat[j];
            dx[[i, j]] = gamma[j] * cache.inv_std[j] * term / nf;
        }
    }
    dx
}

// --- inverted dropout ----------------------------------------------------

pub struct DropoutCache<F> {
    /// Zero where dropped, 1/keep where kept; empty when rate is zero.
    pub mask: Array2<F>,
    pub active: bool,
}

pub fn dropout_forward<F: NdFloat>(
    x: &Array2<F>,
    rate: f64,
    rng: &mut ChaCha8Rng,
) -> (Array2<F>, DropoutCache<F>) {
    if rate <= 0.0 {
        return (
            x.clone(),
            DropoutCache {
                mask: Array2::zeros((0, 0)),
                active: false,
            },
        );
    }
    let keep = 1.0 - rate;
    let scale = F::from(1.0 / keep).expect("scale");
    let mask = Array2::from_shape_fn(x.dim(), |_| {
        if rng.gen::<f64>() < keep {
            scale
        } else {
            F::zero()
        }
    });
    (x * &mask, DropoutCache { mask, active: true })
}

pub fn dropout_backward<F: NdFloat>(dy: &Array2<F>, cache: &DropoutCache<F>) -> Array2<F> {
    if cache.active {
        dy * &cache.mask
    } else {
        dy.clone()
    }
}

// --- dense layer ---------------------------------------------------------

pub struct DenseCache<F> {
    pub input: Array2<F>,
}

/// x [n, in] . w [in, out] + b.
pub fn dense_forward<F: NdFloat>(
    x: &Array2<F>,
    weight: ArrayView2<F>,
    bias: &[F],
) -> (Array2<F>, DenseCache<F>) {
    let mut out = x.dot(&weight);
    out += &ArrayView1::from(bias);
    (out, DenseCache { input: x.clone() })
}

pub fn dense_backward<F: NdFloat>(
    dy: &Array2<F>,
    cache: &DenseCache<F>,
    weight: ArrayView2<F>,
    dweight: &mut [F],
    dbias: &mut [F],
) -> Array2<F> {
    let dw = cache.input.t().dot(dy);
    for (dst, src) in dweight.iter_mut().zip(dw.iter()) {
        *dst = *dst + *src;
    }
    for (j, db) in dbias.iter_mut().enumerate() {
        *db = *db + dy.column(j).sum();
    }
    dy.dot(&weight.t())
}

// --- LSTM layer ------------------------------------------------------------

pub struct LstmStepCache<F> {
    pub x: Array2<F>,
    pub h_prev: Array2<F>,
    pub c_prev: Array2<F>,
    /// Post-activation gates.
    pub i: Array2<F>,
    pub f: Array2<F>,
    pub g: Array2<F>,
    pub o: Array2<F>,
    pub tanh_c: Array2<F>,
}

pub struct LstmCache<F> {
    pub steps: Vec<LstmStepCache<F>>,
    pub hidden: usize,
}

fn sigmoid<F: NdFloat>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Runs an LSTM over `inputs[t]` of shape [n, in]; returns the output
/// sequence h_1..h_d. Gate order in the packed matrices is (i, f, g, o).
pub fn lstm_forward<F: NdFloat>(
    inputs: &[Array2<F>],
    w_ih: ArrayView2<F>,
    w_hh: ArrayView2<F>,
    bias: &[F],
    hidden: usize,
) -> (Vec<Array2<F>>, LstmCache<F>) {
    let n = inputs[0].nrows();
    let mut h = Array2::<F>::zeros((n, hidden));
    let mut c = Array2::<F>::zeros((n, hidden));
    let mut outputs = Vec::with_capacity(inputs.len());
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let mut gates = x.dot(&w_ih) + h.dot(&w_hh);
        gates += &ArrayView1::from(bias);
        let mut gi = Array2::<F>::zeros((n, hidden));
        let mut gf = Array2::<F>::zeros((n, hidden));
        let mut gg = Array2::<F>::zeros((n, hidden));
        let mut go = Array2::<F>::zeros((n, hidden));
        for s in 0..n {
            for u in 0..hidden {
                gi[[s, u]] = sigmoid(gates[[s, u]]);
                gf[[s, u]] = sigmoid(gates[[s, hidden + u]]);
                gg[[s, u]] = gates[[s, 2 * hidden + u]].tanh();
                go[[s, u]] = sigmoid(gates[[s, 3 * hidden + u]]);
            }
        }
        let c_prev = c.clone();
        c = &gf * &c_prev + &gi * &gg;
        let tanh_c = c.mapv(|v| v.tanh());
        let h_prev = h.clone();
        h = &go * &tanh_c;
        outputs.push(h.clone());
        steps.push(LstmStepCache {
            x: x.clone(),
            h_prev,
            c_prev,
            i: gi,
            f: gf,
            g: gg,
            o: go,
            tanh_c,
        });
    }
    (outputs, LstmCache { steps, hidden })
}

/// Backpropagation through time. `dy[t]` is the loss gradient at the raw
/// output h_t. Returns per-step input gradients.
pub fn lstm_backward<F: NdFloat>(
    dy: &[Array2<F>],
    cache: &LstmCache<F>,
    w_ih: ArrayView2<F>,
    w_hh: ArrayView2<F>,
    dw_ih: &mut [F],
    dw_hh: &mut [F],
    dbias: &mut [F],
) -> Vec<Array2<F>> {
    let hidden = cache.hidden;
    let steps = cache.steps.len();
    let n = dy[0].nrows();
    let in_width = cache.steps[0].x.ncols();
    let one = F::one();
    let mut dh_next = Array2::<F>::zeros((n, hidden));
    let mut dc_next = Array2::<F>::zeros((n, hidden));
    let mut dx: Vec<Array2<F>> = vec![Array2::zeros((n, in_width)); steps];
    let mut dw_ih_acc = Array2::<F>::zeros((in_width, 4 * hidden));
    let mut dw_hh_acc = Array2::<F>::zeros((hidden, 4 * hidden));
    for t in (0..steps).rev() {
        let step = &cache.steps[t];
        let dh = &dy[t] + &dh_next;
        let mut da = Array2::<F>::zeros((n, 4 * hidden));
        let mut dc_prev = Array2::<F>::zeros((n, hidden));
        for s in 0..n {
            for u in 0..hidden {
                let o = step.o[[s, u]];
                let tanh_c = step.tanh_c[[s, u]];
                let dh_su = dh[[s, u]];
                let do_ = dh_su * tanh_c;
                let dc = dc_next[[s, u]] + dh_su * o * (one - tanh_c * tanh_c);
                let i = step.i[[s, u]];
                let f = step.f[[s, u]];
                let g = step.g[[s, u]];
                da[[s, u]] = dc * g * i * (one - i);
                da[[s, hidden + u]] = dc * step.c_prev[[s, u]] * f * (one - f);
                da[[s, 2 * hidden + u]] = dc * i * (one - g * g);
                da[[s, 3 * hidden + u]] = do_ * o * (one - o);
                dc_prev[[s, u]] = dc * f;
            }
        }
        dw_ih_acc = dw_ih_acc + step.x.t().dot(&da);
        dw_hh_acc = dw_hh_acc + step.h_prev.t().dot(&da);
        for j in 0..4 * hidden {
            dbias[j] = dbias[j] + da.column(j).sum();
        }
        dx[t] = da.dot(&w_ih.t());
        dh_next = da.dot(&w_hh.t());
        dc_next = dc_prev;
    }
    for (dst, src) in dw_ih.iter_mut().zip(dw_ih_acc.iter()) {
        *dst = *dst + *src;
    }
    for (dst, src) in dw_hh.iter_mut().zip(dw_hh_acc.iter()) {
        *dst = *dst + *src;
    }
    dx
}

// --- softmax cross-entropy -------------------------------------------------

/// Row-wise softmax with max subtraction.
pub fn softmax<F: NdFloat>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

/// Mean cross-entropy and its gradient at the logits.
pub fn cross_entropy<F: NdFloat>(probs: &Array2<F>, labels: &[u8]) -> (F, Array2<F>) {
    let n = probs.nrows();
    let nf = F::from(n).expect("batch size fits");
    let floor = F::from(1e-300).unwrap_or_else(F::min_positive_value);
    let mut loss = F::zero();
    let mut dlogits = probs.clone();
    for (s, &label) in labels.iter().enumerate() {
        let p = probs[[s, label as usize]].max(floor);
        loss = loss - p.ln();
        dlogits[[s, label as usize]] = dlogits[[s, label as usize]] - F::one();
    }
    dlogits.mapv_inplace(|v| v / nf);
    (loss / nf, dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = array![[1.0f64, 2.0, 3.0], [-5.0, 0.0, 5.0], [100.0, 100.0, 100.0]];
        let p = softmax(&logits);
        for row in p.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        // symmetric logits give uniform probabilities
        assert!((p[[2, 0]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_predictions_lose_ln3() {
        let logits = Array2::<f64>::zeros((4, 3));
        let probs = softmax(&logits);
        let (loss, _) = cross_entropy(&probs, &[0, 1, 2, 0]);
        assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn maxpool_floor_and_argmax_routing() {
        let mut input = Array4::<f64>::zeros((1, 1, 5, 5));
        for y in 0..5 {
            for x in 0..5 {
                input[[0, 0, y, x]] = (y * 5 + x) as f64;
            }
        }
        let (out, cache) = maxpool2_forward(&input);
        assert_eq!(out.dim(), (1, 1, 2, 2));
        assert_eq!(out[[0, 0, 0, 0]], 6.0); // max of rows 0-1, cols 0-1
        assert_eq!(out[[0, 0, 1, 1]], 18.0);
        let dy = Array4::<f64>::ones((1, 1, 2, 2));
        let dx = maxpool2_backward(&dy, &cache);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx[[0, 0, 0, 0]], 0.0);
        assert_eq!(dx.sum(), 4.0);
    }

    #[test]
    fn batchnorm_normalizes_columns() {
        let x = array![[1.0f64, 10.0], [3.0, 30.0], [5.0, 50.0]];
        let gamma = [1.0, 1.0];
        let beta = [0.0, 0.0];
        let (out, _) = batchnorm_train_forward(&x, &gamma, &beta, None);
        for j in 0..2 {
            let mean: f64 = out.column(j).sum() / 3.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_scales_survivors() {
        let x = Array2::<f64>::ones((64, 32));
        let mut rng = crate::rng::stream(1, "dropout-test", 0);
        let (out, cache) = dropout_forward(&x, 0.3, &mut rng);
        let kept = out.iter().filter(|&&v| v > 0.0).count();
        assert!(out.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.7).abs() < 1e-12));
        let frac = kept as f64 / out.len() as f64;
        assert!((frac - 0.7).abs() < 0.05);
        let dy = Array2::<f64>::ones((64, 32));
        let dx = dropout_backward(&dy, &cache);
        assert_eq!(
            dx.iter().filter(|&&v| v > 0.0).count(),
            kept
        );
    }

    #[test]
    fn conv2d_same_padding_keeps_shape() {
        let input = Array4::<f64>::ones((2, 3, 5, 5));
        let weight = vec![0.1f64; 4 * 3 * 9];
        let bias = vec![0.0f64; 4];
        let (out, _) = conv2d_same_forward(&input, &weight, &bias, 4);
        assert_eq!(out.dim(), (2, 4, 5, 5));
        // center output: all 9 taps x 3 channels x 0.1
        assert!((out[[0, 0, 2, 2]] - 2.7).abs() < 1e-12);
        // corner output: only 4 taps visible
        assert!((out[[0, 0, 0, 0]] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn lstm_forward_shapes_and_zero_state() {
        let inputs = vec![Array2::<f64>::ones((3, 4)); 2];
        let w_ih = Array2::<f64>::zeros((4, 8));
        let w_hh = Array2::<f64>::zeros((2, 8));
        let bias = vec![0.0f64; 8];
        let (out, _) = lstm_forward(&inputs, w_ih.view(), w_hh.view(), &bias, 2);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].dim(), (3, 2));
        // zero weights and biases: i=f=o=0.5, g=0 -> c=0 -> h=0
        assert!(out[1].iter().all(|&v| v == 0.0));
    }
}
