//! Network assembly: batches, the two-branch forward pass, and
//! reverse-mode gradients.
//!
//! Recurrent branch: width-3 same-padded 1D convolution over the stage
//! axis, ReLU, then a densely connected LSTM stack where layer j >= 2 reads
//! the concatenated outputs of all earlier LSTM layers; each layer is
//! followed by normalization (batch statistics while training, running
//! statistics at inference) and dropout. Convolutional branch: two 3x3
//! same-padded convolutions with ReLU and normalization, then a 2x2 floor
//! max pool. The flattened branches and the scaled growing-days input meet
//! in a dense layer ahead of the softmax output. Fusion order is
//! [conv | recurrent | delta].

use ndarray::{Array1, Array2, Array3, Array4, NdFloat};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::SampleBatch;
use crate::model::layers::{
    self, BatchNormCache, Conv1dCache, Conv2dCache, DenseCache, DropoutCache, LstmCache,
    MaxPoolCache,
};
use crate::model::params::{ArchDescriptor, Gradients, ModelParams};

/// Growing days are divided by this before entering the dense layer.
pub const DELTA_SCALE: f64 = 365.0;

/// One minibatch in tensor form.
#[derive(Debug, Clone)]
pub struct Batch<F> {
    /// `[n, channels, timesteps]`
    pub x_lstm: Array3<F>,
    /// `[n, channels*timesteps, k, k]`, channel index = t * M + m.
    pub x_cnn: Array4<F>,
    /// `[n]`, already divided by [`DELTA_SCALE`].
    pub delta: Option<Array1<F>>,
    pub labels: Vec<u8>,
}

impl<F: NdFloat> Batch<F> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A full sample set laid out for minibatch gathering.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    pub x_lstm: Array3<F>,
    pub x_cnn: Array4<F>,
    pub delta: Option<Array1<F>>,
    pub labels: Vec<u8>,
}

impl<F: NdFloat> Dataset<F> {
    /// Reorders sample tensors to match a descriptor, validating geometry.
    pub fn from_samples(batch: &SampleBatch, desc: &ArchDescriptor) -> Result<Self> {
        if batch.season != desc.season {
            return Err(Error::ModeMismatch(format!(
                "samples are {} season, model is {}",
                batch.season, desc.season
            )));
        }
        let (m, d, k) = (batch.channels, batch.timesteps, batch.patch);
        if m != desc.channels || d != desc.timesteps || k != desc.patch {
            return Err(Error::ShapeMismatch(format!(
                "samples are {m}x{d} patch {k}, model wants {}x{} patch {}",
                desc.channels, desc.timesteps, desc.patch
            )));
        }
        let n = batch.samples.len();
        let mut x_lstm = Array3::<F>::zeros((n, m, d));
        let mut x_cnn = Array4::<F>::zeros((n, m * d, k, k));
        let mut delta = if desc.with_delta {
            Some(Array1::<F>::zeros(n))
        } else {
            None
        };
        let mut labels = Vec::with_capacity(n);
        let scale = F::from(DELTA_SCALE).expect("delta scale");
        for (s, sample) in batch.samples.iter().enumerate() {
            for mi in 0..m {
                for di in 0..d {
                    x_lstm[[s, mi, di]] =
                        F::from(sample.x_lstm[mi * d + di]).expect("f32 to float");
                }
            }
            for kr in 0..k {
                for kc in 0..k {
                    for ch in 0..m * d {
                        x_cnn[[s, ch, kr, kc]] =
                            F::from(sample.x_cnn[(kr * k + kc) * m * d + ch])
                                .expect("f32 to float");
                    }
                }
            }
            if let Some(delta) = delta.as_mut() {
                let days = sample.delta_days.ok_or_else(|| {
                    Error::ModeMismatch(format!(
                        "sample at ({}, {}) has no growing-days scalar",
                        sample.row, sample.col
                    ))
                })?;
                delta[s] = F::from(days).expect("f32 to float") / scale;
            }
            labels.push(sample.label);
        }
        Ok(Self {
            x_lstm,
            x_cnn,
            delta,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> Batch<F> {
        let (_, m, d) = self.x_lstm.dim();
        let (_, c, k, _) = self.x_cnn.dim();
        let n = indices.len();
        let mut x_lstm = Array3::<F>::zeros((n, m, d));
        let mut x_cnn = Array4::<F>::zeros((n, c, k, k));
        let mut delta = self.delta.as_ref().map(|_| Array1::<F>::zeros(n));
        let mut labels = Vec::with_capacity(n);
        for (row, &i) in indices.iter().enumerate() {
            x_lstm
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.x_lstm.index_axis(ndarray::Axis(0), i));
            x_cnn
                .index_axis_mut(ndarray::Axis(0), row)
                .assign(&self.x_cnn.index_axis(ndarray::Axis(0), i));
            if let (Some(dst), Some(src)) = (delta.as_mut(), self.delta.as_ref()) {
                dst[row] = src[i];
            }
            labels.push(self.labels[i]);
        }
        Batch {
            x_lstm,
            x_cnn,
            delta,
            labels,
        }
    }
}

/// Everything the backward pass needs from one training forward.
pub struct TrainCache<F: NdFloat> {
    // convolutional branch
    conv1: Option<Conv2dCache<F>>,
    act1: Option<Array4<F>>,
    bn_c1: Option<BatchNormCache<F>>,
    conv2: Option<Conv2dCache<F>>,
    act2: Option<Array4<F>>,
    bn_c2: Option<BatchNormCache<F>>,
    pool: Option<MaxPoolCache>,
    // recurrent branch
    conv1d: Option<Conv1dCache<F>>,
    act1d: Option<Array3<F>>,
    lstm: Vec<LstmCache<F>>,
    bn_rec: Vec<BatchNormCache<F>>,
    drop_rec: Vec<DropoutCache<F>>,
    // fusion head
    fused: Option<DenseCache<F>>,
    act_fusion: Option<Array2<F>>,
    out_dense: Option<DenseCache<F>>,
    n: usize,
}

/// How a forward pass should treat normalization and dropout.
pub enum ForwardMode<'r> {
    Inference,
    Train {
        dropout: f64,
        rng: &'r mut ChaCha8Rng,
        bn_momentum: f64,
        /// Leave running statistics untouched (e.g. during gradient checks).
        update_running: bool,
    },
}

fn seq_to_mat<F: NdFloat>(steps: &[Array2<F>]) -> Array2<F> {
    let views: Vec<_> = steps.iter().map(|s| s.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("step shapes agree")
}

fn mat_to_seq<F: NdFloat>(mat: &Array2<F>, steps: usize, n: usize) -> Vec<Array2<F>> {
    (0..steps)
        .map(|t| mat.slice(ndarray::s![t * n..(t + 1) * n, ..]).to_owned())
        .collect()
}

fn concat_features<F: NdFloat>(parts: &[&Array2<F>]) -> Array2<F> {
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(1), &views).expect("row counts agree")
}

/// Forward pass; returns class probabilities and, in training mode, the
/// cache consumed by the backward pass.
pub fn forward<F: NdFloat>(
    params: &mut ModelParams<F>,
    batch: &Batch<F>,
    mode: &mut ForwardMode,
) -> Result<(Array2<F>, TrainCache<F>)> {
    let desc = params.desc.clone();
    let n = batch.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    if batch.x_lstm.dim() != (n, desc.channels, desc.timesteps) {
        return Err(Error::ShapeMismatch(format!(
            "x_lstm {:?} does not match descriptor",
            batch.x_lstm.dim()
        )));
    }
    if desc.with_delta && batch.delta.is_none() {
        return Err(Error::ModeMismatch("model expects a delta input".into()));
    }
    for v in batch.x_lstm.iter().chain(batch.x_cnn.iter()) {
        if !v.is_finite() {
            return Err(Error::NonFiniteFeature(0));
        }
    }

    let mut cache = TrainCache {
        conv1: None,
        act1: None,
        bn_c1: None,
        conv2: None,
        act2: None,
        bn_c2: None,
        pool: None,
        conv1d: None,
        act1d: None,
        lstm: Vec::new(),
        bn_rec: Vec::new(),
        drop_rec: Vec::new(),
        fused: None,
        act_fusion: None,
        out_dense: None,
        n,
    };

    // --- convolutional branch ---
    let conv_flat: Option<Array2<F>> = if desc.conv_branch {
        let (k, cf) = (desc.patch, desc.conv_filters);
        let w1 = params.get("conv2d1.weight").data.clone();
        let b1 = params.get("conv2d1.bias").data.clone();
        let (mut z1, c1_cache) = layers::conv2d_same_forward(&batch.x_cnn, &w1, &b1, cf);
        layers::relu_inplace(&mut z1);
        let a1 = z1;
        let (b1_mat, bn1_cache) = apply_norm(params, "norm_conv1", &nchw_to_mat(&a1), mode);
        let b1_4d = mat_to_nchw(&b1_mat, (n, cf, k, k));

        let w2 = params.get("conv2d2.weight").data.clone();
        let b2 = params.get("conv2d2.bias").data.clone();
        let (mut z2, c2_cache) = layers::conv2d_same_forward(&b1_4d, &w2, &b2, cf);
        layers::relu_inplace(&mut z2);
        let a2 = z2;
        let (b2_mat, bn2_cache) = apply_norm(params, "norm_conv2", &nchw_to_mat(&a2), mode);
        let b2_4d = mat_to_nchw(&b2_mat, (n, cf, k, k));
        let (pooled, pool_cache) = layers::maxpool2_forward(&b2_4d);
        let flat = nchw_flatten(&pooled);
        cache.conv1 = Some(c1_cache);
        cache.act1 = Some(a1);
        cache.bn_c1 = bn1_cache;
        cache.conv2 = Some(c2_cache);
        cache.act2 = Some(a2);
        cache.bn_c2 = bn2_cache;
        cache.pool = Some(pool_cache);
        Some(flat)
    } else {
        None
    };

    // --- recurrent branch ---
    let rec_flat: Option<Array2<F>> = if desc.lstm_branch {
        let (d, h) = (desc.timesteps, desc.lstm_units);
        let w = params.get("conv1d.weight").data.clone();
        let b = params.get("conv1d.bias").data.clone();
        let (mut z, conv1d_cache) =
            layers::conv1d_same_forward(&batch.x_lstm, &w, &b, desc.conv1d_filters);
        layers::relu_inplace(&mut z);
        let act = z;
        cache.conv1d = Some(conv1d_cache);

        let layer1_inputs: Vec<Array2<F>> = (0..d)
            .map(|t| {
                let mut step = Array2::<F>::zeros((n, desc.conv1d_filters));
                for s in 0..n {
                    for f in 0..desc.conv1d_filters {
                        step[[s, f]] = act[[s, f, t]];
                    }
                }
                step
            })
            .collect();
        cache.act1d = Some(act);

        let mut outputs_per_layer: Vec<Vec<Array2<F>>> = Vec::new();
        for j in 0..desc.lstm_layers {
            let inputs: Vec<Array2<F>> = if j == 0 {
                layer1_inputs.clone()
            } else {
                (0..d)
                    .map(|t| {
                        let parts: Vec<&Array2<F>> =
                            outputs_per_layer.iter().map(|y| &y[t]).collect();
                        concat_features(&parts)
                    })
                    .collect()
            };
            let tag = j + 1;
            let w_ih = params.get(&format!("lstm{tag}.w_ih")).data.clone();
            let w_hh = params.get(&format!("lstm{tag}.w_hh")).data.clone();
            let bias = params.get(&format!("lstm{tag}.bias")).data.clone();
            let w_ih_view =
                ndarray::ArrayView2::from_shape((desc.lstm_input_width(j), 4 * h), &w_ih)
                    .expect("w_ih shape");
            let w_hh_view =
                ndarray::ArrayView2::from_shape((h, 4 * h), &w_hh).expect("w_hh shape");
            let (h_seq, lstm_cache) = layers::lstm_forward(&inputs, w_ih_view, w_hh_view, &bias, h);
            cache.lstm.push(lstm_cache);

            let mat = seq_to_mat(&h_seq);
            let (bn_out, bn_cache) = apply_norm(params, &format!("norm_rec{tag}"), &mat, mode);
            if let Some(bn_cache) = bn_cache {
                cache.bn_rec.push(bn_cache);
            }
            let (dropped, drop_cache) = match mode {
                ForwardMode::Train { dropout, rng, .. } => {
                    layers::dropout_forward(&bn_out, *dropout, rng)
                }
                ForwardMode::Inference => (
                    bn_out.clone(),
                    DropoutCache {
                        mask: Array2::zeros((0, 0)),
                        active: false,
                    },
                ),
            };
            cache.drop_rec.push(drop_cache);
            outputs_per_layer.push(mat_to_seq(&dropped, d, n));
        }

        // flatten the last layer's sequence: [n, d*h], time-major features
        let last = outputs_per_layer.last().expect("at least one LSTM layer");
        let mut flat = Array2::<F>::zeros((n, d * h));
        for (t, step) in last.iter().enumerate() {
            for s in 0..n {
                for u in 0..h {
                    flat[[s, t * h + u]] = step[[s, u]];
                }
            }
        }
        Some(flat)
    } else {
        None
    };

    // --- fusion head ---
    let mut parts: Vec<&Array2<F>> = Vec::new();
    if let Some(conv_flat) = conv_flat.as_ref() {
        parts.push(conv_flat);
    }
    if let Some(rec_flat) = rec_flat.as_ref() {
        parts.push(rec_flat);
    }
    let delta_col: Option<Array2<F>> = if desc.with_delta {
        let delta = batch.delta.as_ref().expect("checked above");
        Some(Array2::from_shape_fn((n, 1), |(s, _)| delta[s]))
    } else {
        None
    };
    if let Some(delta_col) = delta_col.as_ref() {
        parts.push(delta_col);
    }
    let fused_in = concat_features(&parts);

    let (mut z_f, fused_cache) = layers::dense_forward(
        &fused_in,
        params.get("fusion.weight").as2(),
        &params.get("fusion.bias").data.clone(),
    );
    layers::relu_inplace(&mut z_f);
    let a_f = z_f;
    let (logits, out_cache) = layers::dense_forward(
        &a_f,
        params.get("output.weight").as2(),
        &params.get("output.bias").data.clone(),
    );
    let probs = layers::softmax(&logits);
    cache.fused = Some(fused_cache);
    cache.act_fusion = Some(a_f);
    cache.out_dense = Some(out_cache);
    Ok((probs, cache))
}

/// Normalization dispatch; returns a cache only in training mode.
fn apply_norm<F: NdFloat>(
    params: &mut ModelParams<F>,
    prefix: &str,
    x: &Array2<F>,
    mode: &mut ForwardMode,
) -> (Array2<F>, Option<BatchNormCache<F>>) {
    let gamma = params.get(&format!("{prefix}.gamma")).data.clone();
    let beta = params.get(&format!("{prefix}.beta")).data.clone();
    match mode {
        ForwardMode::Inference => {
            let mean = params.get(&format!("{prefix}.mean")).data.clone();
            let var = params.get(&format!("{prefix}.var")).data.clone();
            (
                layers::batchnorm_infer_forward(x, &gamma, &beta, &mean, &var),
                None,
            )
        }
        ForwardMode::Train {
            bn_momentum,
            update_running,
            ..
        } => {
            if *update_running {
                let mut mean = params.get(&format!("{prefix}.mean")).data.clone();
                let mut var = params.get(&format!("{prefix}.var")).data.clone();
                let (out, bn_cache) = layers::batchnorm_train_forward(
                    x,
                    &gamma,
                    &beta,
                    Some((&mut mean, &mut var, *bn_momentum)),
                );
                params.get_mut(&format!("{prefix}.mean")).data = mean;
                params.get_mut(&format!("{prefix}.var")).data = var;
                (out, Some(bn_cache))
            } else {
                let (out, bn_cache) = layers::batchnorm_train_forward(x, &gamma, &beta, None);
                (out, Some(bn_cache))
            }
        }
    }
}

/// Inference-mode probabilities. Running statistics are read, not written.
pub fn forward_infer<F: NdFloat>(params: &ModelParams<F>, batch: &Batch<F>) -> Result<Array2<F>> {
    let mut shadow = params.clone();
    let (probs, _) = forward(&mut shadow, batch, &mut ForwardMode::Inference)?;
    Ok(probs)
}

/// Mean cross-entropy, probabilities, and parameter gradients for one batch.
pub fn loss_and_gradients<F: NdFloat>(
    params: &mut ModelParams<F>,
    batch: &Batch<F>,
    dropout: f64,
    bn_momentum: f64,
    update_running: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(F, Array2<F>, Gradients<F>)> {
    let mut mode = ForwardMode::Train {
        dropout,
        rng,
        bn_momentum,
        update_running,
    };
    let (probs, cache) = forward(params, batch, &mut mode)?;
    let (loss, dlogits) = layers::cross_entropy(&probs, &batch.labels);
    let grads = backward(params, &cache, &dlogits);
    Ok((loss, probs, grads))
}

/// Accumulates `src` into the gradient tensor called `name`.
fn add_grad<F: NdFloat>(grads: &mut Gradients<F>, name: &str, src: &[F]) {
    let tensor = grads
        .iter_mut()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("unknown gradient tensor {name}"));
    debug_assert_eq!(tensor.data.len(), src.len());
    for (dst, s) in tensor.data.iter_mut().zip(src) {
        *dst = *dst + *s;
    }
}

fn backward<F: NdFloat>(
    params: &ModelParams<F>,
    cache: &TrainCache<F>,
    dlogits: &Array2<F>,
) -> Gradients<F> {
    let desc = params.desc.clone();
    let n = cache.n;
    let mut grads = params.zeros_like();

    // output layer
    let mut dw = vec![F::zero(); params.get("output.weight").len()];
    let mut db = vec![F::zero(); params.get("output.bias").len()];
    let mut d_act_f = layers::dense_backward(
        dlogits,
        cache.out_dense.as_ref().expect("cache"),
        params.get("output.weight").as2(),
        &mut dw,
        &mut db,
    );
    add_grad(&mut grads, "output.weight", &dw);
    add_grad(&mut grads, "output.bias", &db);

    layers::relu_backward(&mut d_act_f, cache.act_fusion.as_ref().expect("cache"));

    let mut dw = vec![F::zero(); params.get("fusion.weight").len()];
    let mut db = vec![F::zero(); params.get("fusion.bias").len()];
    let d_fused = layers::dense_backward(
        &d_act_f,
        cache.fused.as_ref().expect("cache"),
        params.get("fusion.weight").as2(),
        &mut dw,
        &mut db,
    );
    add_grad(&mut grads, "fusion.weight", &dw);
    add_grad(&mut grads, "fusion.bias", &db);

    let conv_len = if desc.conv_branch {
        desc.conv_flat_len()
    } else {
        0
    };
    let rec_len = if desc.lstm_branch {
        desc.lstm_flat_len()
    } else {
        0
    };

    // --- convolutional branch backward ---
    if desc.conv_branch {
        let (k, cf) = (desc.patch, desc.conv_filters);
        let p = desc.pooled_side();
        let d_flat = d_fused.slice(ndarray::s![.., 0..conv_len]).to_owned();
        let d_pool = flat_to_nchw(&d_flat, (n, cf, p, p));
        let d_b2_4d = layers::maxpool2_backward(&d_pool, cache.pool.as_ref().expect("cache"));

        let mut dgamma = vec![F::zero(); cf];
        let mut dbeta = vec![F::zero(); cf];
        let mut d_a2_mat = layers::batchnorm_backward(
            &nchw_to_mat(&d_b2_4d),
            cache.bn_c2.as_ref().expect("train cache"),
            &params.get("norm_conv2.gamma").data,
            &mut dgamma,
            &mut dbeta,
        );
        add_grad(&mut grads, "norm_conv2.gamma", &dgamma);
        add_grad(&mut grads, "norm_conv2.beta", &dbeta);

        layers::relu_backward(&mut d_a2_mat, &nchw_to_mat(cache.act2.as_ref().expect("cache")));
        let d_z2 = mat_to_nchw(&d_a2_mat, (n, cf, k, k));

        let mut dw = vec![F::zero(); params.get("conv2d2.weight").len()];
        let mut db = vec![F::zero(); cf];
        let d_b1_4d = layers::conv2d_same_backward(
            &d_z2,
            cache.conv2.as_ref().expect("cache"),
            &params.get("conv2d2.weight").data,
            &mut dw,
            &mut db,
        );
        add_grad(&mut grads, "conv2d2.weight", &dw);
        add_grad(&mut grads, "conv2d2.bias", &db);

        let mut dgamma = vec![F::zero(); cf];
        let mut dbeta = vec![F::zero(); cf];
        let mut d_a1_mat = layers::batchnorm_backward(
            &nchw_to_mat(&d_b1_4d),
            cache.bn_c1.as_ref().expect("train cache"),
            &params.get("norm_conv1.gamma").data,
            &mut dgamma,
            &mut dbeta,
        );
        add_grad(&mut grads, "norm_conv1.gamma", &dgamma);
        add_grad(&mut grads, "norm_conv1.beta", &dbeta);

        layers::relu_backward(&mut d_a1_mat, &nchw_to_mat(cache.act1.as_ref().expect("cache")));
        let d_z1 = mat_to_nchw(&d_a1_mat, (n, cf, k, k));

        let mut dw = vec![F::zero(); params.get("conv2d1.weight").len()];
        let mut db = vec![F::zero(); cf];
        let _ = layers::conv2d_same_backward(
            &d_z1,
            cache.conv1.as_ref().expect("cache"),
            &params.get("conv2d1.weight").data,
            &mut dw,
            &mut db,
        );
        add_grad(&mut grads, "conv2d1.weight", &dw);
        add_grad(&mut grads, "conv2d1.bias", &db);
    }

    // --- recurrent branch backward ---
    if desc.lstm_branch {
        let (d, h) = (desc.timesteps, desc.lstm_units);
        let layer_count = desc.lstm_layers;
        // accumulators on each layer's post-dropout output matrix [d*n, h]
        let mut dy_post: Vec<Array2<F>> = (0..layer_count)
            .map(|_| Array2::<F>::zeros((d * n, h)))
            .collect();
        let d_rec = d_fused
            .slice(ndarray::s![.., conv_len..conv_len + rec_len])
            .to_owned();
        for t in 0..d {
            for s in 0..n {
                for u in 0..h {
                    dy_post[layer_count - 1][[t * n + s, u]] =
                        dy_post[layer_count - 1][[t * n + s, u]] + d_rec[[s, t * h + u]];
                }
            }
        }

        let mut d_layer1_input: Vec<Array2<F>> =
            vec![Array2::zeros((n, desc.conv1d_filters)); d];
        for j in (0..layer_count).rev() {
            let tag = j + 1;
            let d_drop = layers::dropout_backward(&dy_post[j], &cache.drop_rec[j]);

            let mut dgamma = vec![F::zero(); h];
            let mut dbeta = vec![F::zero(); h];
            let d_bn = layers::batchnorm_backward(
                &d_drop,
                &cache.bn_rec[j],
                &params.get(&format!("norm_rec{tag}.gamma")).data,
                &mut dgamma,
                &mut dbeta,
            );
            add_grad(&mut grads, &format!("norm_rec{tag}.gamma"), &dgamma);
            add_grad(&mut grads, &format!("norm_rec{tag}.beta"), &dbeta);

            let dy_steps = mat_to_seq(&d_bn, d, n);
            let w_ih = &params.get(&format!("lstm{tag}.w_ih")).data;
            let w_hh = &params.get(&format!("lstm{tag}.w_hh")).data;
            let w_ih_view =
                ndarray::ArrayView2::from_shape((desc.lstm_input_width(j), 4 * h), w_ih)
                    .expect("w_ih shape");
            let w_hh_view =
                ndarray::ArrayView2::from_shape((h, 4 * h), w_hh).expect("w_hh shape");
            let mut dw_ih = vec![F::zero(); w_ih.len()];
            let mut dw_hh = vec![F::zero(); w_hh.len()];
            let mut dbias = vec![F::zero(); 4 * h];
            let dx_steps = layers::lstm_backward(
                &dy_steps,
                &cache.lstm[j],
                w_ih_view,
                w_hh_view,
                &mut dw_ih,
                &mut dw_hh,
                &mut dbias,
            );
            add_grad(&mut grads, &format!("lstm{tag}.w_ih"), &dw_ih);
            add_grad(&mut grads, &format!("lstm{tag}.w_hh"), &dw_hh);
            add_grad(&mut grads, &format!("lstm{tag}.bias"), &dbias);

            if j == 0 {
                d_layer1_input = dx_steps;
            } else {
                // the input was the concatenation of outputs of layers 0..j
                for (t, dx) in dx_steps.iter().enumerate() {
                    for prev in 0..j {
                        for s in 0..n {
                            for u in 0..h {
                                dy_post[prev][[t * n + s, u]] =
                                    dy_post[prev][[t * n + s, u]] + dx[[s, prev * h + u]];
                            }
                        }
                    }
                }
            }
        }

        // back through conv1d + relu
        let act1d = cache.act1d.as_ref().expect("cache");
        let mut d_act = Array3::<F>::zeros((n, desc.conv1d_filters, d));
        for (t, step) in d_layer1_input.iter().enumerate() {
            for s in 0..n {
                for f in 0..desc.conv1d_filters {
                    d_act[[s, f, t]] = step[[s, f]];
                }
            }
        }
        layers::relu_backward(&mut d_act, act1d);
        let mut dw = vec![F::zero(); params.get("conv1d.weight").len()];
        let mut db = vec![F::zero(); desc.conv1d_filters];
        let _ = layers::conv1d_same_backward(
            &d_act,
            cache.conv1d.as_ref().expect("cache"),
            &params.get("conv1d.weight").data,
            &mut dw,
            &mut db,
        );
        add_grad(&mut grads, "conv1d.weight", &dw);
        add_grad(&mut grads, "conv1d.bias", &db);
    }
    grads
}

// --- nchw <-> [rows, channels] helpers --------------------------------------

/// [n, c, h, w] -> [n*h*w, c] so normalization sees channels as features.
fn nchw_to_mat<F: NdFloat>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::<F>::zeros((n * h * w, c));
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[[(s * h + y) * w + xx, ch]] = x[[s, ch, y, xx]];
                }
            }
        }
    }
    out
}

fn mat_to_nchw<F: NdFloat>(mat: &Array2<F>, dim: (usize, usize, usize, usize)) -> Array4<F> {
    let (n, c, h, w) = dim;
    let mut out = Array4::<F>::zeros(dim);
    for s in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[[s, ch, y, xx]] = mat[[(s * h + y) * w + xx, ch]];
                }
            }
        }
    }
    out
}

/// [n, c, h, w] -> [n, c*h*w] in (c, y, x) order.
fn nchw_flatten<F: NdFloat>(x: &Array4<F>) -> Array2<F> {
    let (n, c, h, w) = x.dim();
    let mut out = Array2::<F>::zeros((n, c * h * w));
    for s in 0..n {
        let mut col = 0;
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[[s, col]] = x[[s, ch, y, xx]];
                    col += 1;
                }
            }
        }
    }
    out
}

fn flat_to_nchw<F: NdFloat>(flat: &Array2<F>, dim: (usize, usize, usize, usize)) -> Array4<F> {
    let (n, c, h, w) = dim;
    let mut out = Array4::<F>::zeros(dim);
    for s in 0..n {
        let mut col = 0;
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[[s, ch, y, xx]] = flat[[s, col]];
                    col += 1;
                }
            }
        }
    }
    out
}

/// Argmax with ties to the lowest class index.
pub fn argmax_class<F: NdFloat>(row: ndarray::ArrayView1<F>) -> u8 {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u8
}
