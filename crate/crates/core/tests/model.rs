use rand::Rng;
use rand_distr::{Distribution, Normal};
use uqeval::model::{
    backward, batch_loss, read_checkpoint, train, write_checkpoint, Batch, HeteroModel, Objective, TrainConfig,
};
use uqeval::rng::seeded;

fn randomized(dims: Vec<usize>, dropout: f64, seed: u64) -> HeteroModel {
    let mut model = HeteroModel::new(dims, dropout, seed).unwrap();
    let mut rng = seeded(seed ^ 0xABCD);
    for p in model.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    model
}

fn central_difference(model: &HeteroModel, f: impl Fn(&HeteroModel) -> f64, h: f64) -> Vec<f64> {
    (0..model.num_params())
        .map(|k| {
            let mut plus = model.clone();
            plus.params_mut()[k] += h;
            let mut minus = model.clone();
            minus.params_mut()[k] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn backward_matches_finite_differences_on_small_network() {
    let model = randomized(vec![2, 4, 2], 0.0, 11);
    let mut rng = seeded(3);
    let x: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Batch::new(&x, &y).unwrap();
    let objective = Objective {
        lambda: 0.3,
        anchored: false,
        reg_count: 8,
    };
    let analytic = backward(&model, &batch, &objective, None).unwrap();
    let numeric = central_difference(&model, |m| batch_loss(m, &batch, &objective, None).unwrap(), 1e-6);
    for (k, (a, n)) in analytic.values.iter().zip(&numeric).enumerate() {
        let scale = a.abs().max(n.abs()).max(1e-3);
        assert!((a - n).abs() / scale < 1e-5, "param {k}: analytic {a}, numeric {n}");
    }
}

#[test]
fn mean_head_gradient_is_half_the_mse_gradient_at_unit_variance() {
    // Zero log-variance head: NLL reduces to half the squared error.
    let mut model = randomized(vec![3, 5, 2], 0.0, 21);
    let last = model.num_layers() - 1;
    {
        let (w, b) = model.layer_mut(last);
        let fan_in = w.len() / 2;
        w[fan_in..].fill(0.0);
        b[1] = 0.0;
    }
    let mut rng = seeded(4);
    let x: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Batch::new(&x, &y).unwrap();
    let mse = |m: &HeteroModel| {
        (0..batch.len())
            .map(|i| {
                let p = m.forward(batch.row(i), None).unwrap();
                (batch.target(i) - p.mean).powi(2)
            })
            .sum::<f64>()
            / batch.len() as f64
    };
    let analytic = backward(&model, &batch, &Objective::nll_only(), None).unwrap();
    let mse_grad = central_difference(&model, mse, 1e-6);

    // Parameters feeding the log-variance head are excluded.
    let n = model.num_params();
    let (w_last, _) = model.layer(last);
    let fan_in = w_last.len() / 2;
    let w_start = n - w_last.len() - 2;
    let logvar_params: Vec<usize> = (w_start + fan_in..w_start + 2 * fan_in).chain([n - 1]).collect();
    for k in (0..n).filter(|k| !logvar_params.contains(k)) {
        let expected = 0.5 * mse_grad[k];
        let scale = expected.abs().max(1e-3);
        assert!(
            (analytic.values[k] - expected).abs() / scale < 1e-5,
            "param {k}: {} vs {expected}",
            analytic.values[k]
        );
    }
}

#[test]
fn inverted_dropout_preserves_expected_output() {
    // One hidden layer: the output mean is linear in the masked activations.
    let model = randomized(vec![3, 16, 2], 0.3, 8);
    let x = [0.4, -0.7, 1.1];
    let plain = model.forward(&x, None).unwrap().mean;
    let mut rng = seeded(99);
    let draws: Vec<f64> = (0..20_000)
        .map(|_| {
            let mask = model.sample_mask(&mut rng);
            model.forward(&x, Some(&mask)).unwrap().mean
        })
        .collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    assert!(sd > 0.0);
    assert!((mean - plain).abs() < 3.0 * se, "mean {mean}, plain {plain}, se {se}");
}

fn linear_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = seeded(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = x.iter().map(|xi| 3.0 * xi + 1.0 + noise.sample(&mut rng)).collect();
    (x, y)
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn linear_network_recovers_slope() {
    let (x, y) = linear_data(2000, 1);
    let (xv, yv) = linear_data(400, 2);
    let config = TrainConfig {
        learning_rate: 0.02,
        max_epochs: 60,
        patience: 10,
        ..TrainConfig::default()
    };
    let model = HeteroModel::new(vec![1, 2], 0.0, 5).unwrap();
    let (fitted, _) = train(
        model,
        Batch::new(&x, &y).unwrap(),
        Batch::new(&xv, &yv).unwrap(),
        &config,
    )
    .unwrap();
    let slope = fitted.layer(0).0[0];
    let oracle = least_squares_slope(&x, &y);
    assert!((slope - 3.0).abs() < 0.15, "slope {slope}");
    assert!((slope - oracle).abs() < 0.1, "slope {slope}, least squares {oracle}");
    let sigma = fitted.forward(&[0.0], None).unwrap().variance().sqrt();
    assert!((sigma - 0.5).abs() < 0.05, "sigma {sigma}");
}

#[test]
fn early_stopping_keeps_best_validation_weights() {
    let (x, y) = linear_data(200, 3);
    let (xv, yv) = linear_data(50, 4);
    let config = TrainConfig {
        max_epochs: 40,
        patience: 5,
        ..TrainConfig::default()
    };
    let model = HeteroModel::new(vec![1, 8, 2], 0.0, 6).unwrap();
    let val = Batch::new(&xv, &yv).unwrap();
    let (fitted, history) = train(model, Batch::new(&x, &y).unwrap(), val, &config).unwrap();
    let last = *history.val_loss.last().unwrap();
    assert!(history.best_val_loss <= last);
    assert_eq!(history.best_val_loss, history.val_loss[history.best_epoch - 1]);
    let restored = batch_loss(&fitted, &val, &Objective::nll_only(), None).unwrap();
    assert!((restored - history.best_val_loss).abs() < 1e-12);
}

#[test]
fn single_epoch_budget_runs_once() {
    let (x, y) = linear_data(64, 5);
    let config = TrainConfig {
        max_epochs: 1,
        patience: 1,
        ..TrainConfig::default()
    };
    let model = HeteroModel::new(vec![1, 4, 2], 0.1, 7).unwrap();
    let (_, history) = train(model, Batch::new(&x, &y).unwrap(), Batch::new(&x, &y).unwrap(), &config).unwrap();
    assert_eq!(history.epochs_run(), 1);
    assert_eq!(history.best_epoch, 1);
}

#[test]
fn training_is_bit_reproducible_and_checkpoints_round_trip() {
    let (x, y) = linear_data(128, 6);
    let config = TrainConfig {
        max_epochs: 5,
        patience: 5,
        seed: 42,
        ..TrainConfig::default()
    };
    let run = || {
        let model = HeteroModel::new(vec![1, 6, 6, 2], 0.2, 9).unwrap();
        train(model, Batch::new(&x, &y).unwrap(), Batch::new(&x, &y).unwrap(), &config).unwrap()
    };
    let (a, ha) = run();
    let (b, hb) = run();
    let bits = |m: &HeteroModel| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(ha, hb);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    write_checkpoint(&a, &path).unwrap();
    let loaded = read_checkpoint(&path).unwrap();
    assert_eq!(bits(&loaded), bits(&a));
    assert_eq!(loaded.layer_dims(), a.layer_dims());
    assert_eq!(loaded.dropout_rate(), a.dropout_rate());
}
