//! Model tests: a fully independent scalar re-implementation of the
//! forward pass (the oracle), finite-difference gradient checks, training
//! behavior, ablation containment, the forest, and format roundtrips.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::features::{Sample, SampleBatch, SeasonMode};
use crate::model::forest::{forest_train, ForestConfig};
use crate::model::io::{read_forest, read_weights, write_forest, write_weights};
use crate::model::layers::BN_EPSILON;
use crate::model::net::{self, Batch, Dataset, ForwardMode};
use crate::model::params::{init_params, ArchDescriptor, ModelKind, ModelParams};
use crate::model::train::{evaluate, train, TrainConfig};
use crate::rng;

fn small_descriptor() -> ArchDescriptor {
    let mut desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
    desc.conv1d_filters = 4;
    desc.lstm_units = 2;
    desc.conv_filters = 4;
    desc.dense_units = 8;
    desc
}

fn random_batch(desc: &ArchDescriptor, n: usize, seed: u64) -> Batch<f64> {
    let mut r = rng::stream(seed, "test-batch", 0);
    let x_lstm = Array3::from_shape_fn((n, desc.channels, desc.timesteps), |_| {
        r.gen_range(0.1..0.9)
    });
    let x_cnn = Array4::from_shape_fn(
        (n, desc.channels * desc.timesteps, desc.patch, desc.patch),
        |_| r.gen_range(0.1..0.9),
    );
    let delta = if desc.with_delta {
        Some(Array1::from_shape_fn(n, |_| r.gen_range(0.2..0.5)))
    } else {
        None
    };
    let labels = (0..n).map(|i| (i % 3) as u8).collect();
    Batch {
        x_lstm,
        x_cnn,
        delta,
        labels,
    }
}

/// Randomizes every tensor, including running statistics, so the oracle
/// exercises real normalization arithmetic.
fn randomize_params(params: &mut ModelParams<f64>, seed: u64) {
    let mut r = rng::stream(seed, "test-params", 0);
    for tensor in params.tensors.iter_mut() {
        for v in tensor.data.iter_mut() {
            *v = if tensor.name.ends_with(".var") {
                r.gen_range(0.5..1.5)
            } else if tensor.name.ends_with(".gamma") {
                r.gen_range(0.5..1.5)
            } else {
                r.gen_range(-0.4..0.4)
            };
        }
    }
}

// --- independent scalar forward implementation ------------------------------

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-line scalar evaluation of the whole network for one batch,
/// written from the layer definitions without touching the library path.
/// `batch_stats = true` mirrors training-mode normalization (dropout 0).
fn naive_forward(
    params: &ModelParams<f64>,
    batch: &Batch<f64>,
    batch_stats: bool,
) -> Vec<[f64; 3]> {
    let desc = &params.desc;
    let n = batch.labels.len();
    let (m, d, k) = (desc.channels, desc.timesteps, desc.patch);
    let get = |name: &str| -> &[f64] { &params.get(name).data };

    let normalize = |rows: &mut Vec<Vec<f64>>, prefix: &str| {
        let gamma = get(&format!("{prefix}.gamma"));
        let beta = get(&format!("{prefix}.beta"));
        let cols = gamma.len();
        let (mean, var): (Vec<f64>, Vec<f64>) = if batch_stats {
            let count = rows.len() as f64;
            let mut mean = vec![0.0; cols];
            for row in rows.iter() {
                for j in 0..cols {
                    mean[j] += row[j];
                }
            }
            for mj in mean.iter_mut() {
                *mj /= count;
            }
            let mut var = vec![0.0; cols];
            for row in rows.iter() {
                for j in 0..cols {
                    var[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
                }
            }
            for vj in var.iter_mut() {
                *vj /= count;
            }
            (mean, var)
        } else {
            (
                get(&format!("{prefix}.mean")).to_vec(),
                get(&format!("{prefix}.var")).to_vec(),
            )
        };
        for row in rows.iter_mut() {
            for j in 0..cols {
                row[j] = gamma[j] * (row[j] - mean[j]) / (var[j] + BN_EPSILON).sqrt() + beta[j];
            }
        }
    };

    // recurrent branch
    let rec_flat: Option<Vec<Vec<f64>>> = if desc.lstm_branch {
        let f1 = desc.conv1d_filters;
        let w = get("conv1d.weight");
        let b = get("conv1d.bias");
        let mut seq = vec![vec![vec![0.0f64; f1]; n]; d]; // [t][s][f]
        for s in 0..n {
            for f in 0..f1 {
                for t in 0..d {
                    let mut acc = b[f];
                    for c in 0..m {
                        for kk in 0..3usize {
                            let ti = t as isize + kk as isize - 1;
                            if ti >= 0 && (ti as usize) < d {
                                acc +=
                                    w[(f * m + c) * 3 + kk] * batch.x_lstm[[s, c, ti as usize]];
                            }
                        }
                    }
                    seq[t][s][f] = acc.max(0.0);
                }
            }
        }
        let h = desc.lstm_units;
        let mut layer_outputs: Vec<Vec<Vec<Vec<f64>>>> = Vec::new(); // [layer][t][s][u]
        for j in 0..desc.lstm_layers {
            let input_width = desc.lstm_input_width(j);
            let inputs: Vec<Vec<Vec<f64>>> = if j == 0 {
                seq.clone()
            } else {
                (0..d)
                    .map(|t| {
                        (0..n)
                            .map(|s| {
                                let mut row = Vec::with_capacity(input_width);
                                for prev in layer_outputs.iter() {
                                    row.extend_from_slice(&prev[t][s]);
                                }
                                row
                            })
                            .collect()
                    })
                    .collect()
            };
            let tag = j + 1;
            let w_ih = get(&format!("lstm{tag}.w_ih"));
            let w_hh = get(&format!("lstm{tag}.w_hh"));
            let bias = get(&format!("lstm{tag}.bias"));
            let mut hs = vec![vec![0.0f64; h]; n];
            let mut cs = vec![vec![0.0f64; h]; n];
            let mut outputs: Vec<Vec<Vec<f64>>> = Vec::new();
            for step_input in inputs.iter() {
                let mut new_out = vec![vec![0.0f64; h]; n];
                for s in 0..n {
                    let mut gates = vec![0.0f64; 4 * h];
                    for (gi, gate) in gates.iter_mut().enumerate() {
                        let mut acc = bias[gi];
                        for (xi, &xv) in step_input[s].iter().enumerate() {
                            acc += xv * w_ih[xi * 4 * h + gi];
                        }
                        for u in 0..h {
                            acc += hs[s][u] * w_hh[u * 4 * h + gi];
                        }
                        *gate = acc;
                    }
                    for u in 0..h {
                        let i = sig(gates[u]);
                        let f = sig(gates[h + u]);
                        let g = gates[2 * h + u].tanh();
                        let o = sig(gates[3 * h + u]);
                        cs[s][u] = f * cs[s][u] + i * g;
                        new_out[s][u] = o * cs[s][u].tanh();
                    }
                }
                hs = new_out.clone();
                outputs.push(new_out);
            }
            // normalization over all (t, s) rows, t-major
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d * n);
            for step in &outputs {
                for s in 0..n {
                    rows.push(step[s].clone());
                }
            }
            normalize(&mut rows, &format!("norm_rec{tag}"));
            let mut post: Vec<Vec<Vec<f64>>> = vec![vec![vec![0.0; h]; n]; d];
            for t in 0..d {
                for s in 0..n {
                    post[t][s] = rows[t * n + s].clone();
                }
            }
            layer_outputs.push(post);
        }
        let last = layer_outputs.last().unwrap();
        Some(
            (0..n)
                .map(|s| {
                    let mut flat = Vec::with_capacity(d * h);
                    for step in last.iter().take(d) {
                        flat.extend_from_slice(&step[s]);
                    }
                    flat
                })
                .collect(),
        )
    } else {
        None
    };

    // convolutional branch
    let conv_flat: Option<Vec<Vec<f64>>> = if desc.conv_branch {
        let cf = desc.conv_filters;
        let cin = m * d;
        type Planes = Vec<Vec<Vec<Vec<f64>>>>;
        let conv = |input: &Planes, w: &[f64], b: &[f64], in_ch: usize| -> Planes {
            let mut out = vec![vec![vec![vec![0.0f64; k]; k]; cf]; n];
            for s in 0..n {
                for f in 0..cf {
                    for y in 0..k {
                        for x in 0..k {
                            let mut acc = b[f];
                            for c in 0..in_ch {
                                for ky in 0..3usize {
                                    for kx in 0..3usize {
                                        let iy = y as isize + ky as isize - 1;
                                        let ix = x as isize + kx as isize - 1;
                                        if iy >= 0
                                            && (iy as usize) < k
                                            && ix >= 0
                                            && (ix as usize) < k
                                        {
                                            acc += w[((f * in_ch + c) * 3 + ky) * 3 + kx]
                                                * input[s][c][iy as usize][ix as usize];
                                        }
                                    }
                                }
                            }
                            out[s][f][y][x] = acc.max(0.0);
                        }
                    }
                }
            }
            out
        };
        let x0: Planes = (0..n)
            .map(|s| {
                (0..cin)
                    .map(|c| {
                        (0..k)
                            .map(|y| (0..k).map(|x| batch.x_cnn[[s, c, y, x]]).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let bn = |data: &mut Planes, prefix: &str| {
            let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n * k * k);
            for s in 0..n {
                for y in 0..k {
                    for x in 0..k {
                        rows.push((0..cf).map(|c| data[s][c][y][x]).collect());
                    }
                }
            }
            normalize(&mut rows, prefix);
            for s in 0..n {
                for y in 0..k {
                    for x in 0..k {
                        for c in 0..cf {
                            data[s][c][y][x] = rows[(s * k + y) * k + x][c];
                        }
                    }
                }
            }
        };
        let mut a1 = conv(&x0, get("conv2d1.weight"), get("conv2d1.bias"), cin);
        bn(&mut a1, "norm_conv1");
        let mut a2 = conv(&a1, get("conv2d2.weight"), get("conv2d2.bias"), cf);
        bn(&mut a2, "norm_conv2");
        let p = k / 2;
        Some(
            (0..n)
                .map(|s| {
                    let mut flat = Vec::with_capacity(cf * p * p);
                    for c in 0..cf {
                        for py in 0..p {
                            for px in 0..p {
                                let mut best = f64::NEG_INFINITY;
                                for dy in 0..2 {
                                    for dx in 0..2 {
                                        best = best.max(a2[s][c][2 * py + dy][2 * px + dx]);
                                    }
                                }
                                flat.push(best);
                            }
                        }
                    }
                    flat
                })
                .collect(),
        )
    } else {
        None
    };

    // fusion head
    let w_f = get("fusion.weight");
    let b_f = get("fusion.bias");
    let w_o = get("output.weight");
    let b_o = get("output.bias");
    let dense_units = desc.dense_units;
    let fusion_in = desc.fusion_input_len();
    (0..n)
        .map(|s| {
            let mut fused = Vec::with_capacity(fusion_in);
            if let Some(conv) = conv_flat.as_ref() {
                fused.extend_from_slice(&conv[s]);
            }
            if let Some(rec) = rec_flat.as_ref() {
                fused.extend_from_slice(&rec[s]);
            }
            if desc.with_delta {
                fused.push(batch.delta.as_ref().unwrap()[s]);
            }
            assert_eq!(fused.len(), fusion_in);
            let mut hidden = vec![0.0f64; dense_units];
            for (u, hv) in hidden.iter_mut().enumerate() {
                let mut acc = b_f[u];
                for (i, &v) in fused.iter().enumerate() {
                    acc += v * w_f[i * dense_units + u];
                }
                *hv = acc.max(0.0);
            }
            let mut logits = [0.0f64; 3];
            for (c, logit) in logits.iter_mut().enumerate() {
                let mut acc = b_o[c];
                for (u, &hv) in hidden.iter().enumerate() {
                    acc += hv * w_o[u * 3 + c];
                }
                *logit = acc;
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            [exps[0] / sum, exps[1] / sum, exps[2] / sum]
        })
        .collect()
}

#[test]
fn zero_parameters_give_uniform_probabilities() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 0).unwrap();
    for tensor in params.tensors.iter_mut() {
        let keep_var = tensor.name.ends_with(".var");
        for v in tensor.data.iter_mut() {
            *v = if keep_var { 1.0 } else { 0.0 };
        }
    }
    let batch = random_batch(&desc, 5, 1);
    let probs = net::forward_infer(&params, &batch).unwrap();
    for row in probs.rows() {
        for &p in row {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}

#[test]
fn probabilities_form_a_distribution_in_both_modes() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 2).unwrap();
    randomize_params(&mut params, 3);
    let batch = random_batch(&desc, 6, 4);
    let probs = net::forward_infer(&params, &batch).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mode = ForwardMode::Train {
        dropout: 0.3,
        rng: &mut rng,
        bn_momentum: 0.99,
        update_running: false,
    };
    let (probs, _) = net::forward(&mut params, &batch, &mut mode).unwrap();
    for row in probs.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn forward_matches_naive_scalar_implementation() {
    for kind in [ModelKind::CnnLstmDelta, ModelKind::Cnn, ModelKind::Lstm] {
        let mut desc = ArchDescriptor::new(kind, SeasonMode::Late).unwrap();
        desc.channels = 3;
        desc.conv1d_filters = 2;
        desc.lstm_units = 2;
        desc.conv_filters = 2;
        desc.dense_units = 4;
        let mut params: ModelParams<f64> = init_params(&desc, 5).unwrap();
        randomize_params(&mut params, 6);
        let batch = random_batch(&desc, 3, 7);

        // inference path against running-statistics oracle
        let got = net::forward_infer(&params, &batch).unwrap();
        let want = naive_forward(&params, &batch, false);
        for (s, row) in got.rows().into_iter().enumerate() {
            for c in 0..3 {
                assert!(
                    (row[c] - want[s][c]).abs() < 1e-10,
                    "{kind:?} inference sample {s} class {c}: {} vs {}",
                    row[c],
                    want[s][c]
                );
            }
        }

        // training path (dropout 0) against batch-statistics oracle
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mode = ForwardMode::Train {
            dropout: 0.0,
            rng: &mut rng,
            bn_momentum: 0.99,
            update_running: false,
        };
        let (got, _) = net::forward(&mut params, &batch, &mut mode).unwrap();
        let want = naive_forward(&params, &batch, true);
        for (s, row) in got.rows().into_iter().enumerate() {
            for c in 0..3 {
                assert!(
                    (row[c] - want[s][c]).abs() < 1e-10,
                    "{kind:?} training sample {s} class {c}: {} vs {}",
                    row[c],
                    want[s][c]
                );
            }
        }
    }
}

/// Central-difference check of every trainable parameter.
///
/// Relative error uses a magnitude floor: |a - n| / max(|a|, |n|, 1e-4),
/// which holds near-zero gradients to an absolute 1e-8 instead of
/// amplifying finite-difference noise.
pub(crate) fn run_gradient_check(seed: u64) -> (usize, usize, f64) {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, seed).unwrap();
    let batch = random_batch(&desc, 3, seed.wrapping_add(100));
    let mask_seed = seed.wrapping_add(7);
    let dropout = 0.3;

    let loss_at = |params: &mut ModelParams<f64>| -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (loss, _, _) =
            net::loss_and_gradients(params, &batch, dropout, 0.99, false, &mut rng).unwrap();
        loss
    };
    let analytic = {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let (_, _, grads) =
            net::loss_and_gradients(&mut params, &batch, dropout, 0.99, false, &mut rng).unwrap();
        grads
    };

    let step = 1e-5;
    let mut checked = 0usize;
    let mut failed = 0usize;
    let mut worst = 0.0f64;
    for ti in 0..params.tensors.len() {
        if !params.tensors[ti].trainable {
            continue;
        }
        for i in 0..params.tensors[ti].data.len() {
            let original = params.tensors[ti].data[i];
            params.tensors[ti].data[i] = original + step;
            let up = loss_at(&mut params);
            params.tensors[ti].data[i] = original - step;
            let down = loss_at(&mut params);
            params.tensors[ti].data[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic[ti].data[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(err);
            checked += 1;
            if err > 1e-4 {
                failed += 1;
            }
        }
    }
    (checked, failed, worst)
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [0u64, 1] {
        let (checked, failed, worst) = run_gradient_check(seed);
        assert!(checked > 1000, "checked only {checked} parameters");
        assert_eq!(failed, 0, "seed {seed}: worst relative error {worst}");
    }
}

#[test]
fn duplicated_sample_keeps_mean_gradient() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 11).unwrap();
    let single = random_batch(&desc, 1, 12);
    let doubled = Batch {
        x_lstm: ndarray::concatenate(
            ndarray::Axis(0),
            &[single.x_lstm.view(), single.x_lstm.view()],
        )
        .unwrap(),
        x_cnn: ndarray::concatenate(
            ndarray::Axis(0),
            &[single.x_cnn.view(), single.x_cnn.view()],
        )
        .unwrap(),
        delta: single
            .delta
            .as_ref()
            .map(|d| ndarray::concatenate(ndarray::Axis(0), &[d.view(), d.view()]).unwrap()),
        labels: vec![single.labels[0], single.labels[0]],
    };
    let grads_of = |params: &mut ModelParams<f64>, batch: &Batch<f64>| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, _, grads) =
            net::loss_and_gradients(params, batch, 0.0, 0.99, false, &mut rng).unwrap();
        grads
    };
    let g1 = grads_of(&mut params, &single);
    let g2 = grads_of(&mut params, &doubled);
    for (a, b) in g1.iter().zip(&g2) {
        for (va, vb) in a.data.iter().zip(&b.data) {
            assert!((va - vb).abs() < 1e-9, "{}: {va} vs {vb}", a.name);
        }
    }
}

fn toy_samples(n_per_class: usize, seed: u64) -> SampleBatch {
    let mut r = rng::stream(seed, "toy", 0);
    let mut batch = SampleBatch::new(SeasonMode::Late);
    let (m, d, k) = (batch.channels, batch.timesteps, batch.patch);
    for class in 0u8..3 {
        for i in 0..n_per_class {
            let level = 0.2 + 0.25 * class as f32;
            let x_lstm: Vec<f32> = (0..m * d)
                .map(|_| level + r.gen_range(-0.05..0.05))
                .collect();
            let x_cnn: Vec<f32> = (0..k * k * m * d)
                .map(|_| level + r.gen_range(-0.05..0.05))
                .collect();
            batch.samples.push(Sample {
                x_lstm,
                x_cnn,
                delta_days: Some(90.0 + 30.0 * class as f32 + r.gen_range(-5.0..5.0)),
                label: class,
                row: i as u32,
                col: class as u32,
            });
        }
    }
    batch
}

#[test]
fn training_is_bitwise_deterministic() {
    let desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
    let samples = toy_samples(10, 21);
    let data = Dataset::<f32>::from_samples(&samples, &desc).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut params: ModelParams<f32> = init_params(&desc, cfg.seed).unwrap();
        let history = train(&mut params, &data, &data, &cfg).unwrap();
        (params, history)
    };
    let (params_a, history_a) = run();
    let (params_b, history_b) = run();
    assert_eq!(params_a, params_b);
    assert_eq!(history_a, history_b);
}

#[test]
fn separable_toy_set_trains_to_high_accuracy() {
    let desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
    let samples = toy_samples(50, 33);
    let data = Dataset::<f32>::from_samples(&samples, &desc).unwrap();
    // small batches so the normalization running statistics see enough
    // updates within 25 epochs on a 150-sample set
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 8,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut params: ModelParams<f32> = init_params(&desc, cfg.seed).unwrap();
    let history = train(&mut params, &data, &data, &cfg).unwrap();
    assert_eq!(history.len(), 25);
    let final_acc = evaluate(&params, &data, 64).unwrap();
    assert!(
        final_acc >= 0.99,
        "final training accuracy {final_acc} < 0.99"
    );
    // validation accuracy in history comes from inference mode and is finite
    assert!(history.iter().all(|e| e.val_accuracy.is_finite()));
}

#[test]
fn inference_is_deterministic_with_dropout_off() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 40).unwrap();
    randomize_params(&mut params, 41);
    let batch = random_batch(&desc, 4, 42);
    let a = net::forward_infer(&params, &batch).unwrap();
    let b = net::forward_infer(&params, &batch).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ablations_are_contained_in_the_full_model() {
    let full_desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
    let mut full: ModelParams<f64> = init_params(&full_desc, 50).unwrap();
    randomize_params(&mut full, 51);
    let batch = random_batch(&full_desc, 4, 52);
    let conv_len = full_desc.conv_flat_len();
    let rec_len = full_desc.lstm_flat_len();
    let dense = full_desc.dense_units;

    // CNN-only: copy conv branch plus the conv rows of the fusion weight,
    // zero everything else in the full model's fusion weight
    {
        let cnn_desc = ArchDescriptor::new(ModelKind::Cnn, SeasonMode::Late).unwrap();
        let mut cnn: ModelParams<f64> = init_params(&cnn_desc, 53).unwrap();
        for tensor in cnn.tensors.iter_mut() {
            if tensor.name.starts_with("conv2d")
                || tensor.name.starts_with("norm_conv")
                || tensor.name == "fusion.bias"
                || tensor.name.starts_with("output")
            {
                tensor.data = full.get(&tensor.name).data.clone();
            }
        }
        cnn.get_mut("fusion.weight").data =
            full.get("fusion.weight").data[..conv_len * dense].to_vec();

        let mut zeroed = full.clone();
        for row in conv_len..full_desc.fusion_input_len() {
            for col in 0..dense {
                zeroed.get_mut("fusion.weight").data[row * dense + col] = 0.0;
            }
        }
        let cnn_batch = Batch {
            x_lstm: batch.x_lstm.clone(),
            x_cnn: batch.x_cnn.clone(),
            delta: None,
            labels: batch.labels.clone(),
        };
        let got = net::forward_infer(&cnn, &cnn_batch).unwrap();
        let want = net::forward_infer(&zeroed, &batch).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12, "cnn containment: {a} vs {b}");
        }
    }

    // LSTM-only: same with the recurrent rows
    {
        let lstm_desc = ArchDescriptor::new(ModelKind::Lstm, SeasonMode::Late).unwrap();
        let mut lstm: ModelParams<f64> = init_params(&lstm_desc, 54).unwrap();
        for tensor in lstm.tensors.iter_mut() {
            if tensor.name.starts_with("conv1d")
                || tensor.name.starts_with("lstm")
                || tensor.name.starts_with("norm_rec")
                || tensor.name == "fusion.bias"
                || tensor.name.starts_with("output")
            {
                tensor.data = full.get(&tensor.name).data.clone();
            }
        }
        let full_fusion = &full.get("fusion.weight").data;
        lstm.get_mut("fusion.weight").data =
            full_fusion[conv_len * dense..(conv_len + rec_len) * dense].to_vec();

        let mut zeroed = full.clone();
        for row in (0..conv_len).chain(conv_len + rec_len..full_desc.fusion_input_len()) {
            for col in 0..dense {
                zeroed.get_mut("fusion.weight").data[row * dense + col] = 0.0;
            }
        }
        let lstm_batch = Batch {
            x_lstm: batch.x_lstm.clone(),
            x_cnn: batch.x_cnn.clone(),
            delta: None,
            labels: batch.labels.clone(),
        };
        let got = net::forward_infer(&lstm, &lstm_batch).unwrap();
        let want = net::forward_infer(&zeroed, &batch).unwrap();
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12, "lstm containment: {a} vs {b}");
        }
    }
}

#[test]
fn weights_roundtrip_bit_exact() {
    for kind in [ModelKind::CnnLstmDelta, ModelKind::Cnn, ModelKind::Lstm] {
        let desc = ArchDescriptor::new(kind, SeasonMode::Late).unwrap();
        let params: ModelParams<f32> = init_params(&desc, 60).unwrap();
        let mut buf = Vec::new();
        write_weights(&params, &mut buf).unwrap();
        let back: ModelParams<f32> = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!(params, back);
    }
}

// --- forest ------------------------------------------------------------------

#[test]
fn single_threshold_is_learned_by_one_tree() {
    let features: Vec<f32> = vec![0.1, 0.2, 0.3, 0.7, 0.8, 0.9];
    let labels = vec![0u8, 0, 0, 1, 1, 1];
    let cfg = ForestConfig {
        trees: 1,
        bootstrap: false,
        include_delta: false,
        seed: 1,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 1, &labels, &cfg).unwrap();
    for (i, &x) in features.iter().enumerate() {
        let (label, votes) = forest.predict_one(&[x]).unwrap();
        assert_eq!(label, labels[i]);
        assert_eq!(votes[label as usize], 1.0);
    }
}

#[test]
fn forest_training_is_deterministic() {
    let mut r = rng::stream(70, "forest-det", 0);
    let n = 120;
    let features: Vec<f32> = (0..n * 4).map(|_| r.gen_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let cfg = ForestConfig {
        trees: 15,
        seed: 9,
        include_delta: false,
        ..ForestConfig::default()
    };
    let a = forest_train(&features, 4, &labels, &cfg).unwrap();
    let b = forest_train(&features, 4, &labels, &cfg).unwrap();
    assert_eq!(a, b);
    let probe: Vec<f32> = (0..40).map(|_| r.gen_range(0.0..1.0)).collect();
    assert_eq!(a.predict(&probe).unwrap(), b.predict(&probe).unwrap());
}

#[test]
fn gaussian_blobs_classify_with_high_accuracy() {
    let mut r = rng::stream(71, "forest-blobs", 0);
    let centers = [[0.2f32, 0.2], [0.8, 0.3], [0.5, 0.9]];
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut test_features = Vec::new();
    let mut test_labels = Vec::new();
    for class in 0u8..3 {
        for i in 0..160 {
            let x = centers[class as usize][0] + r.gen_range(-0.08..0.08f32);
            let y = centers[class as usize][1] + r.gen_range(-0.08..0.08f32);
            if i < 120 {
                features.extend_from_slice(&[x, y]);
                labels.push(class);
            } else {
                test_features.extend_from_slice(&[x, y]);
                test_labels.push(class);
            }
        }
    }
    let cfg = ForestConfig {
        trees: 100,
        seed: 3,
        include_delta: false,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 2, &labels, &cfg).unwrap();
    let preds = forest.predict(&test_features).unwrap();
    let correct = preds
        .iter()
        .zip(&test_labels)
        .filter(|((p, _), l)| p == *l)
        .count();
    let acc = correct as f64 / test_labels.len() as f64;
    assert!(acc >= 0.95, "blob accuracy {acc}");
}

#[test]
fn purity_grown_forest_memorizes_consistent_data() {
    let mut r = rng::stream(72, "forest-memo", 0);
    let n = 90;
    let features: Vec<f32> = (0..n * 3).map(|_| r.gen_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..n).map(|_| r.gen_range(0..3u8)).collect();
    let cfg = ForestConfig {
        trees: 30,
        bootstrap: false, // every tree sees every sample
        mtry: Some(3),    // and every feature
        include_delta: false,
        seed: 4,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 3, &labels, &cfg).unwrap();
    let preds = forest.predict(&features).unwrap();
    for (i, (p, _)) in preds.iter().enumerate() {
        assert_eq!(*p, labels[i], "sample {i}");
    }
}

#[test]
fn nan_probe_is_rejected() {
    let features: Vec<f32> = vec![0.1, 0.9, 0.2, 0.8];
    let labels = vec![0u8, 1, 0, 1];
    let cfg = ForestConfig {
        trees: 3,
        include_delta: false,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 1, &labels, &cfg).unwrap();
    assert!(matches!(
        forest.predict_one(&[f32::NAN]),
        Err(crate::error::Error::NonFiniteFeature(0))
    ));
    assert!(matches!(
        forest.predict_one(&[0.1, 0.2]),
        Err(crate::error::Error::FeatureLenMismatch { .. })
    ));
}

#[test]
fn monotone_feature_transform_preserves_predictions() {
    let mut r = rng::stream(73, "forest-mono", 0);
    let n = 150;
    let mut features: Vec<f32> = Vec::with_capacity(n * 2);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let a = r.gen_range(0.0..1.0f32);
        let b = r.gen_range(0.0..1.0f32);
        features.extend_from_slice(&[a, b]);
        labels.push(u8::from(a + b > 1.0));
    }
    let transform = |v: f32| (3.0 * v).exp(); // strictly monotone
    let mut transformed = features.clone();
    for i in (0..transformed.len()).step_by(2) {
        transformed[i] = transform(transformed[i]);
    }
    let cfg = ForestConfig {
        trees: 40,
        seed: 6,
        include_delta: false,
        ..ForestConfig::default()
    };
    let plain = forest_train(&features, 2, &labels, &cfg).unwrap();
    let warped = forest_train(&transformed, 2, &labels, &cfg).unwrap();
    let mut probe = Vec::new();
    let mut probe_warped = Vec::new();
    for _ in 0..60 {
        let a = r.gen_range(0.0..1.0f32);
        let b = r.gen_range(0.0..1.0f32);
        probe.extend_from_slice(&[a, b]);
        probe_warped.extend_from_slice(&[transform(a), b]);
    }
    let p1: Vec<u8> = plain
        .predict(&probe)
        .unwrap()
        .iter()
        .map(|(c, _)| *c)
        .collect();
    let p2: Vec<u8> = warped
        .predict(&probe_warped)
        .unwrap()
        .iter()
        .map(|(c, _)| *c)
        .collect();
    assert_eq!(p1, p2);
}

#[test]
fn single_class_input_yields_constant_classifier() {
    let features: Vec<f32> = vec![0.1, 0.5, 0.9];
    let labels = vec![2u8, 2, 2];
    let cfg = ForestConfig {
        trees: 5,
        include_delta: false,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 1, &labels, &cfg).unwrap();
    for x in [0.0f32, 0.4, 1.0] {
        let (label, votes) = forest.predict_one(&[x]).unwrap();
        assert_eq!(label, 2);
        assert_eq!(votes[2], 1.0);
    }
}

#[test]
fn forest_roundtrip_bit_exact() {
    let mut r = rng::stream(74, "forest-io", 0);
    let n = 60;
    let features: Vec<f32> = (0..n * 3).map(|_| r.gen_range(0.0..1.0)).collect();
    let labels: Vec<u8> = (0..n).map(|i| (i % 3) as u8).collect();
    let cfg = ForestConfig {
        trees: 7,
        max_depth: Some(6),
        seed: 11,
        include_delta: false,
        ..ForestConfig::default()
    };
    let forest = forest_train(&features, 3, &labels, &cfg).unwrap();
    let mut buf = Vec::new();
    write_forest(&forest, &mut buf).unwrap();
    let back = read_forest(&mut buf.as_slice()).unwrap();
    assert_eq!(forest, back);
}

#[test]
fn empty_inputs_are_rejected() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 80).unwrap();
    let empty = Dataset::<f64> {
        x_lstm: Array3::zeros((0, desc.channels, desc.timesteps)),
        x_cnn: Array4::zeros((0, desc.channels * desc.timesteps, desc.patch, desc.patch)),
        delta: Some(Array1::zeros(0)),
        labels: vec![],
    };
    assert!(train(&mut params, &empty, &empty, &TrainConfig::default()).is_err());
    assert!(forest_train(&[], 3, &[], &ForestConfig::default()).is_err());
}

#[test]
fn dataset_requires_delta_when_model_wants_it() {
    let desc = ArchDescriptor::new(ModelKind::CnnLstmDelta, SeasonMode::Late).unwrap();
    let mut samples = toy_samples(2, 90);
    samples.samples[0].delta_days = None;
    assert!(matches!(
        Dataset::<f32>::from_samples(&samples, &desc),
        Err(crate::error::Error::ModeMismatch(_))
    ));
}

#[test]
fn nan_in_batch_is_rejected() {
    let desc = small_descriptor();
    let mut params: ModelParams<f64> = init_params(&desc, 91).unwrap();
    let mut batch = random_batch(&desc, 2, 92);
    batch.x_cnn[[0, 0, 0, 0]] = f64::NAN;
    assert!(net::forward_infer(&params, &batch).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(net::loss_and_gradients(&mut params, &batch, 0.3, 0.99, false, &mut rng).is_err());
}

// keep Array2 referenced for the cache types used above
#[allow(dead_code)]
fn _type_anchor(_: Array2<f64>) {}
