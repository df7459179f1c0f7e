use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whittle_core::nn::{copy_params, Adam, Batch, DenseNet};

/// Straight-line recomputation with explicit loops.
fn reference_forward(net: &DenseNet, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    let last = net.layers().len() - 1;
    for (l, layer) in net.layers().iter().enumerate() {
        let (out, inp) = layer.weights.dim();
        let mut z = vec![0.0; out];
        for (i, zi) in z.iter_mut().enumerate() {
            let mut acc = layer.bias[i];
            for j in 0..inp {
                acc += layer.weights[[i, j]] * a[j];
            }
            *zi = if l < last { acc.max(0.0) } else { acc };
        }
        a = z;
    }
    a
}

fn random_batch(rng: &mut ChaCha8Rng, rows: usize, dims: &[usize]) -> Batch {
    let inp = dims[0];
    let out = *dims.last().unwrap();
    let inputs = Array2::from_shape_fn((rows, inp), |_| rng.random_range(-1.0..1.0));
    let targets = Array1::from_shape_fn(rows, |_| rng.random_range(-2.0..2.0));
    let mask = (0..rows).map(|_| rng.random_range(0..out)).collect();
    if rng.random::<bool>() {
        let weights = Array1::from_shape_fn(rows, |_| rng.random_range(0.1..3.0));
        Batch::weighted(inputs, targets, mask, weights).unwrap()
    } else {
        Batch::new(inputs, targets, mask).unwrap()
    }
}

/// Every parameter, biases included, drawn at random. Zero biases put
/// pre-activations exactly on the rectifier kink whenever a whole layer is
/// dead, where the derivative is one-sided.
fn random_params(dims: &[usize], rng: &mut ChaCha8Rng) -> DenseNet {
    let mut net = DenseNet::zeros(dims).unwrap();
    let params: Vec<f64> = (0..net.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    net.set_params_flat(&params).unwrap();
    net
}

fn loss_at(net: &mut DenseNet, params: &[f64], batch: &Batch) -> f64 {
    net.set_params_flat(params).unwrap();
    net.backward_mse(batch).unwrap().0
}

/// Norm-wise relative error between analytic and central-difference
/// gradients.
fn gradient_error(net: &DenseNet, batch: &Batch, h: f64) -> f64 {
    let (_, grads) = net.backward_mse(batch).unwrap();
    let analytic = grads.flat();
    let theta = net.params_flat();
    let mut probe = net.clone();
    let mut numeric = vec![0.0; theta.len()];
    let mut p = theta.clone();
    for k in 0..theta.len() {
        p[k] = theta[k] + h;
        let up = loss_at(&mut probe, &p, batch);
        p[k] = theta[k] - h;
        let down = loss_at(&mut probe, &p, batch);
        p[k] = theta[k];
        numeric[k] = (up - down) / (2.0 * h);
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|a| a * a)
        .sum::<f64>()
        .sqrt()
        .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn forward_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let net = DenseNet::new(&[2, 7, 5, 3], &mut rng).unwrap();
    for _ in 0..20 {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let got = net.forward(&x).unwrap();
        let want = reference_forward(&net, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn glorot_bounds_and_zero_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = DenseNet::<f64>::new(&[2, 100, 200, 100, 2], &mut rng).unwrap();
    assert_eq!(net.param_count(), 40_802);
    for layer in net.layers() {
        let (out, inp) = layer.weights.dim();
        let bound = (6.0 / (inp + out) as f64).sqrt();
        assert!(layer.weights.iter().all(|w| w.abs() <= bound));
        assert!(layer.bias.iter().all(|b| *b == 0.0));
    }
}

#[test]
fn single_parameter_gradient() {
    let mut net = DenseNet::zeros(&[1, 1]).unwrap();
    net.set_params_flat(&[0.7, 0.0]).unwrap();
    let batch = Batch::new(Array2::from_elem((1, 1), 1.3), Array1::from_elem(1, -0.4), vec![0]).unwrap();
    let (loss, grads) = net.backward_mse(&batch).unwrap();
    let err: f64 = 0.7 * 1.3 + 0.4;
    assert!((loss - err * err).abs() < 1e-14);
    let h = 1e-5;
    let up = loss_at(&mut net.clone(), &[0.7 + h, 0.0], &batch);
    let down = loss_at(&mut net.clone(), &[0.7 - h, 0.0], &batch);
    let fd = (up - down) / (2.0 * h);
    let g = grads.flat()[0];
    assert!(((g - fd) / g).abs() < 1e-5);
    assert!((g - 2.0 * err * 1.3).abs() < 1e-12);
}

#[test]
fn small_net_every_coordinate() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = random_params(&[2, 8, 8, 2], &mut rng);
    let batch = random_batch(&mut rng, 16, &[2, 8, 8, 2]);
    let (_, grads) = net.backward_mse(&batch).unwrap();
    let analytic = grads.flat();
    let theta = net.params_flat();
    let mut probe = net.clone();
    let h = 1e-6;
    let mut p = theta.clone();
    for k in 0..theta.len() {
        p[k] = theta[k] + h;
        let up = loss_at(&mut probe, &p, &batch);
        p[k] = theta[k] - h;
        let down = loss_at(&mut probe, &p, &batch);
        p[k] = theta[k];
        let fd = (up - down) / (2.0 * h);
        let scale = analytic[k].abs().max(fd.abs()).max(1e-6);
        assert!((analytic[k] - fd).abs() / scale < 1e-4, "coordinate {k}: {} vs {fd}", analytic[k]);
    }
}

#[test]
fn gradient_check_hundred_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let depth = rng.random_range(1..4);
        let mut dims = vec![rng.random_range(1..4)];
        for _ in 0..depth {
            dims.push(rng.random_range(2..12));
        }
        dims.push(rng.random_range(1..4));
        let net = random_params(&dims, &mut rng);
        assert!(net.param_count() <= 500);
        let rows = rng.random_range(1..20);
        let batch = random_batch(&mut rng, rows, &dims);
        worst = worst.max(gradient_error(&net, &batch, 1e-6));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn adam_minimizes_quadratic_bowl() {
    // Linear net regressing a fixed linear map: a convex quadratic in the
    // parameters with minimum zero.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = DenseNet::new(&[3, 1], &mut rng).unwrap();
    let inputs = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
    let targets = inputs.rows().into_iter().map(|r| 0.5 * r[0] - r[1] + 2.0 * r[2] + 0.25).collect();
    let batch = Batch::new(inputs, targets, vec![0; 12]).unwrap();
    let initial = net.backward_mse(&batch).unwrap().0;
    let mut opt = Adam::with_rate(&net, 0.05);
    for _ in 0..500 {
        let (_, g) = net.backward_mse(&batch).unwrap();
        opt.step(&mut net, &g).unwrap();
    }
    let last = net.backward_mse(&batch).unwrap().0;
    assert!(last < 1e-6 * initial, "{initial} -> {last}");
}

#[test]
fn copy_then_diverge() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let src = DenseNet::new(&[2, 6, 2], &mut rng).unwrap();
    let mut dst = DenseNet::new(&[2, 6, 2], &mut rng).unwrap();
    copy_params(&src, &mut dst).unwrap();
    assert_eq!(src, dst);
    copy_params(&src, &mut dst).unwrap();
    assert_eq!(src, dst);
    assert_eq!(src.forward(&[0.2, 0.4]).unwrap(), dst.forward(&[0.2, 0.4]).unwrap());

    let mut moved = src.clone();
    let batch = random_batch(&mut rng, 4, &[2, 6, 2]);
    let (_, g) = moved.backward_mse(&batch).unwrap();
    Adam::new(&moved).step(&mut moved, &g).unwrap();
    assert_ne!(moved, dst);
}

#[test]
fn save_load_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net = DenseNet::new(&[2, 5, 4, 2], &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.bin");
    net.save(&path).unwrap();
    let back = DenseNet::<f64>::load(&path).unwrap();
    assert_eq!(net, back);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 + 8 * (1 + 4 + net.param_count() as u64));
    assert!(DenseNet::<f64>::read_from(&b"nope"[..]).is_err());
}

#[test]
fn duplicate_rows_equal_weighted_mean_target() {
    // Gradient of k copies with targets y_i equals one row weighted k with
    // target mean(y_i).
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let net = DenseNet::new(&[2, 5, 2], &mut rng).unwrap();
    let row = [0.3, 0.8];
    let ys = [0.1, 0.5, -0.2];
    let full = Batch::new(
        Array2::from_shape_fn((4, 2), |(i, j)| if i < 3 { row[j] } else { [0.9, 0.1][j] }),
        Array1::from(vec![ys[0], ys[1], ys[2], 1.0]),
        vec![1, 1, 1, 0],
    )
    .unwrap();
    let mean = ys.iter().sum::<f64>() / 3.0;
    let folded = Batch::weighted(
        Array2::from_shape_fn((2, 2), |(i, j)| if i == 0 { row[j] } else { [0.9, 0.1][j] }),
        Array1::from(vec![mean, 1.0]),
        vec![1, 0],
        Array1::from(vec![3.0, 1.0]),
    )
    .unwrap();
    let (_, a) = net.backward_mse(&full).unwrap();
    let (_, b) = net.backward_mse(&folded).unwrap();
    for (x, y) in a.flat().iter().zip(b.flat()) {
        assert!((x - y).abs() < 1e-12);
    }
}

