//! Backpropagation and minibatch SGD with early stopping.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::loss::{gaussian_nll_grad, nll};
use super::{DropoutMask, HeteroModel, Trace, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::error::{Result, UqError};
use crate::rng;

/// Prior used to draw the anchor point `theta_0` of an anchored member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    /// Isotropic prior standard deviation for `theta_0`.
    pub prior_std: f64,
    /// Strength of the pull towards `theta_0`.
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Plain L2 weight decay. Must be zero when `anchor` is set.
    pub weight_decay: f64,
    pub anchor: Option<AnchorConfig>,
    pub batch_size: usize,
    /// Optional clip on the global gradient norm of each minibatch step.
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            max_epochs: 200,
            patience: 20,
            weight_decay: 0.0,
            anchor: None,
            batch_size: 32,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(UqError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return err(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return err("max_epochs, patience and batch_size must be positive".into());
        }
        if self.patience > self.max_epochs {
            return err(format!(
                "patience ({}) exceeds max_epochs ({})",
                self.patience, self.max_epochs
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if let Some(a) = &self.anchor {
            if !(a.lambda >= 0.0 && a.lambda.is_finite()) {
                return err(format!("anchor lambda must be non-negative, got {}", a.lambda));
            }
            if !(a.prior_std > 0.0 && a.prior_std.is_finite()) {
                return err(format!("anchor prior_std must be positive, got {}", a.prior_std));
            }
            if self.weight_decay > 0.0 {
                return err("weight decay and anchored regularization are mutually exclusive".into());
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return err(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// The regularized objective: mean batch NLL plus `(lambda / n) * ||theta - theta_0||^2`,
/// with `theta_0 = 0` for plain weight decay and `n` the training-set size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub lambda: f64,
    pub anchored: bool,
    pub reg_count: usize,
}

impl Objective {
    pub fn nll_only() -> Self {
        Self {
            lambda: 0.0,
            anchored: false,
            reg_count: 1,
        }
    }

    pub fn from_config(config: &TrainConfig, n_train: usize) -> Self {
        match &config.anchor {
            Some(a) => Self {
                lambda: a.lambda,
                anchored: true,
                reg_count: n_train.max(1),
            },
            None => Self {
                lambda: config.weight_decay,
                anchored: false,
                reg_count: n_train.max(1),
            },
        }
    }

    fn scale(&self) -> f64 {
        self.lambda / self.reg_count as f64
    }

    fn anchor<'m>(&self, model: &'m HeteroModel) -> Result<Option<&'m [f64]>> {
        if !self.anchored {
            return Ok(None);
        }
        model
            .anchor()
            .map(Some)
            .ok_or_else(|| UqError::Config("anchored objective on a model without an anchor point".into()))
    }

    fn penalty(&self, model: &HeteroModel) -> Result<f64> {
        if self.lambda == 0.0 {
            return Ok(0.0);
        }
        let sq: f64 = match self.anchor(model)? {
            Some(a) => model.params().iter().zip(a).map(|(t, t0)| (t - t0) * (t - t0)).sum(),
            None => model.params().iter().map(|t| t * t).sum(),
        };
        Ok(self.scale() * sq)
    }

    fn add_gradient(&self, model: &HeteroModel, grad: &mut [f64]) -> Result<()> {
        if self.lambda == 0.0 {
            return Ok(());
        }
        let s = 2.0 * self.scale();
        match self.anchor(model)? {
            Some(a) => {
                for ((g, t), t0) in grad.iter_mut().zip(model.params()).zip(a) {
                    *g += s * (t - t0);
                }
            }
            None => {
                for (g, t) in grad.iter_mut().zip(model.params()) {
                    *g += s * t;
                }
            }
        }
        Ok(())
    }
}

/// Row-major feature block and matching targets.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [f64],
    targets: &'a [f64],
    dim: usize,
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [f64], targets: &'a [f64]) -> Result<Self> {
        if targets.is_empty() {
            return Err(UqError::Input("empty batch".into()));
        }
        if !features.len().is_multiple_of(targets.len()) || features.is_empty() {
            return Err(UqError::Input(format!(
                "{} feature values do not split into {} rows",
                features.len(),
                targets.len()
            )));
        }
        Ok(Self {
            features,
            targets,
            dim: features.len() / targets.len(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn target(&self, i: usize) -> f64 {
        self.targets[i]
    }

    fn check(&self, model: &HeteroModel) -> Result<()> {
        if self.dim != model.input_dim() {
            return Err(UqError::Dimension {
                expected: model.input_dim(),
                actual: self.dim,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Gradient in the model's flat parameter layout.
    pub values: Vec<f64>,
    /// Objective value at the current parameters.
    pub loss: f64,
}

/// Objective value for `batch` (mean NLL plus regularizer).
pub fn batch_loss(
    model: &HeteroModel,
    batch: &Batch<'_>,
    objective: &Objective,
    masks: Option<&[DropoutMask]>,
) -> Result<f64> {
    batch.check(model)?;
    check_masks(model, batch, masks)?;
    let mut trace = Trace::new(model);
    let mut total = 0.0;
    for i in 0..batch.len() {
        let p = model.forward_trace(batch.row(i), masks.map(|m| &m[i]), &mut trace);
        total += nll(p.mean, p.log_var, batch.target(i));
    }
    Ok(total / batch.len() as f64 + objective.penalty(model)?)
}

/// Gradient of [`batch_loss`] with respect to every parameter.
///
/// `masks`, when given, holds one dropout mask per batch row.
pub fn backward(
    model: &HeteroModel,
    batch: &Batch<'_>,
    objective: &Objective,
    masks: Option<&[DropoutMask]>,
) -> Result<Gradients> {
    batch.check(model)?;
    check_masks(model, batch, masks)?;
    let mut scratch = Scratch::new(model);
    let mut grad = vec![0.0; model.num_params()];
    let inv = 1.0 / batch.len() as f64;
    let mut data_loss = 0.0;
    for i in 0..batch.len() {
        data_loss += scratch.accumulate(
            model,
            batch.row(i),
            batch.target(i),
            masks.map(|m| &m[i]),
            inv,
            &mut grad,
        );
    }
    objective.add_gradient(model, &mut grad)?;
    Ok(Gradients {
        values: grad,
        loss: data_loss * inv + objective.penalty(model)?,
    })
}

fn check_masks(model: &HeteroModel, batch: &Batch<'_>, masks: Option<&[DropoutMask]>) -> Result<()> {
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(UqError::Dimension {
                expected: batch.len(),
                actual: m.len(),
            });
        }
        for mask in m {
            mask.check_against(model)?;
        }
    }
    Ok(())
}

/// Forward trace plus backpropagated deltas, reused across samples.
struct Scratch {
    trace: Trace,
    deltas: Vec<Vec<f64>>,
}

impl Scratch {
    fn new(model: &HeteroModel) -> Self {
        Self {
            trace: Trace::new(model),
            deltas: model.layer_dims()[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }

    /// Adds `weight * d nll / d theta` for one sample to `grad`; returns the
    /// sample's NLL.
    fn accumulate(
        &mut self,
        model: &HeteroModel,
        x: &[f64],
        y: f64,
        mask: Option<&DropoutMask>,
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let n_layers = model.num_layers();
        let p = model.forward_trace(x, mask, &mut self.trace);
        let raw_log_var = self.trace.pre[n_layers - 1][1];
        let (d_mean, mut d_log_var) = gaussian_nll_grad(p.mean, p.log_var, y);
        if !(LOG_VAR_MIN..=LOG_VAR_MAX).contains(&raw_log_var) {
            d_log_var = 0.0;
        }
        let out = &mut self.deltas[n_layers - 1];
        out[0] = weight * d_mean;
        out[1] = weight * d_log_var;

        for layer in (0..n_layers).rev() {
            let dims = model.layer_dims();
            let (n_in, n_out) = (dims[layer], dims[layer + 1]);
            let w_range = model.weight_range(layer);
            let b_range = model.bias_range(layer);
            let input = &self.trace.acts[layer];
            let (lower, upper) = self.deltas.split_at_mut(layer);
            let delta = &upper[0];

            let gw = &mut grad[w_range.clone()];
            for (o, &d) in delta.iter().enumerate() {
                if d != 0.0 {
                    for (g, a) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            for (g, d) in grad[b_range].iter_mut().zip(delta) {
                *g += d;
            }

            if layer > 0 {
                let w = &model.params()[w_range];
                let prev = &mut lower[layer - 1];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    if d != 0.0 {
                        for (pv, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *pv += wv * d;
                        }
                    }
                }
                let pre = &self.trace.pre[layer - 1];
                let scale = mask.map(|m| &m.layers()[layer - 1]);
                for (i, pv) in prev.iter_mut().enumerate() {
                    if pre[i] <= 0.0 {
                        *pv = 0.0;
                    } else if let Some(s) = scale {
                        *pv *= s[i];
                    }
                }
            }
        }
        nll(p.mean, p.log_var, y)
    }
}

/// Per-epoch losses and the epoch whose weights were kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Mean training NLL per epoch (dropout active).
    pub train_loss: Vec<f64>,
    /// Validation NLL per epoch (no dropout).
    pub val_loss: Vec<f64>,
    /// 1-based epoch of the restored weights.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl History {
    pub fn epochs_run(&self) -> usize {
        self.val_loss.len()
    }
}

/// Mean NLL of `set` without dropout.
pub(crate) fn mean_nll(model: &HeteroModel, set: &Batch<'_>) -> f64 {
    let mut trace = Trace::new(model);
    let total: f64 = (0..set.len())
        .map(|i| {
            let p = model.forward_trace(set.row(i), None, &mut trace);
            nll(p.mean, p.log_var, set.target(i))
        })
        .sum();
    total / set.len() as f64
}

/// Minibatch SGD with momentum on the regularized NLL, with early stopping on
/// validation NLL. Returns the weights of the best validation epoch.
pub fn train(
    mut model: HeteroModel,
    train_set: Batch<'_>,
    val_set: Batch<'_>,
    config: &TrainConfig,
) -> Result<(HeteroModel, History)> {
    config.validate()?;
    train_set.check(&model)?;
    val_set.check(&model)?;
    if config.anchor.is_some() && model.anchor().is_none() {
        return Err(UqError::Config(
            "anchored training requires a model built with an anchor point".into(),
        ));
    }
    let objective = Objective::from_config(config, train_set.len());
    let mut rng = rng::seeded(rng::derive_seed(config.seed, 0x7EA1_0001));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut velocity = vec![0.0; model.num_params()];
    let mut scratch = Scratch::new(&model);
    let mut mask = DropoutMask::ones(&model);
    let use_dropout = model.dropout_rate() > 0.0;

    let mut history = History {
        best_val_loss: f64::INFINITY,
        ..History::default()
    };
    let mut best_params = model.params().to_vec();
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let m = if use_dropout {
                    resample_mask(&mut mask, model.dropout_rate(), &mut rng);
                    Some(&mask)
                } else {
                    None
                };
                epoch_loss += scratch.accumulate(&model, train_set.row(i), train_set.target(i), m, inv, &mut grad);
            }
            objective.add_gradient(&model, &mut grad)?;
            if let Some(limit) = config.grad_clip {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > limit {
                    let s = limit / norm;
                    grad.iter_mut().for_each(|g| *g *= s);
                }
            }
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = mean_nll(&model, &val_set);
        if !train_loss.is_finite() || !val_loss.is_finite() || model.params().iter().any(|p| !p.is_finite()) {
            return Err(UqError::Divergence { epoch, member: None });
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);

        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best_params.copy_from_slice(model.params());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((model.with_params(best_params), history))
}

fn resample_mask(mask: &mut DropoutMask, p: f64, rng: &mut rng::Rng) {
    let keep = 1.0 / (1.0 - p);
    for layer in &mut mask.layers {
        for v in layer.iter_mut() {
            *v = if rng.random::<f64>() < p { 0.0 } else { keep };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_batch(n: usize, dim: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut r = rng::seeded(seed);
        let xs: Vec<f64> = (0..n * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        (xs, ys)
    }

    #[test]
    fn anchored_penalty_gradient_vanishes_at_anchor() {
        let model = HeteroModel::new_anchored(vec![2, 3, 2], 0.0, 1, 1.0).unwrap();
        let anchor = model.anchor().unwrap().to_vec();
        let model = HeteroModel::from_parts(vec![2, 3, 2], 0.0, 1, anchor.clone(), Some(anchor)).unwrap();
        let obj = Objective {
            lambda: 3.0,
            anchored: true,
            reg_count: 4,
        };
        let mut grad = vec![0.0; model.num_params()];
        obj.add_gradient(&model, &mut grad).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
        assert_eq!(obj.penalty(&model).unwrap(), 0.0);
    }

    #[test]
    fn zero_residual_unit_variance_gives_zero_mean_head_gradient() {
        // Single linear layer; log-variance head identically zero.
        let mut model = HeteroModel::zeros(vec![2, 2], 0.0).unwrap();
        let (w, _) = model.layer_mut(0);
        w[0] = 1.5;
        w[1] = -0.5;
        let xs = [1.0, 2.0, -1.0, 0.5, 3.0, 3.0];
        let ys: Vec<f64> = xs.chunks(2).map(|r| 1.5 * r[0] - 0.5 * r[1]).collect();
        let batch = Batch::new(&xs, &ys).unwrap();
        let g = backward(&model, &batch, &Objective::nll_only(), None).unwrap();
        let (wr, br) = (model.weight_range(0), model.bias_range(0));
        // Row 0 of the weight matrix and bias[0] feed the mean head.
        assert!(g.values[wr.start..wr.start + 2].iter().all(|&v| v == 0.0));
        assert_eq!(g.values[br.start], 0.0);
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        let bad = TrainConfig {
            patience: 500,
            max_epochs: 10,
            ..ok.clone()
        };
        assert!(bad.validate().is_err());
        let both = TrainConfig {
            weight_decay: 0.1,
            anchor: Some(AnchorConfig {
                prior_std: 1.0,
                lambda: 0.1,
            }),
            ..ok.clone()
        };
        assert!(both.validate().is_err());
        assert!(TrainConfig {
            momentum: 1.0,
            ..ok.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            learning_rate: 0.0,
            ..ok
        }
        .validate()
        .is_err());
    }

    #[test]
    fn single_epoch_when_patience_and_max_are_one() {
        let (xs, ys) = toy_batch(20, 2, 3);
        let model = HeteroModel::new(vec![2, 4, 2], 0.0, 1).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            patience: 1,
            ..TrainConfig::default()
        };
        let train_b = Batch::new(&xs[..30], &ys[..15]).unwrap();
        let val_b = Batch::new(&xs[30..], &ys[15..]).unwrap();
        let (_, h) = train(model, train_b, val_b, &cfg).unwrap();
        assert_eq!(h.epochs_run(), 1);
        assert_eq!(h.best_epoch, 1);
    }

    #[test]
    fn divergence_reports_epoch() {
        let (xs, mut ys) = toy_batch(20, 2, 3);
        ys[0] = 1e300;
        let model = HeteroModel::new(vec![2, 4, 2], 0.0, 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 10.0,
            momentum: 0.0,
            grad_clip: None,
            ..TrainConfig::default()
        };
        let train_b = Batch::new(&xs[..30], &ys[..15]).unwrap();
        let val_b = Batch::new(&xs[30..], &ys[15..]).unwrap();
        match train(model, train_b, val_b, &cfg) {
            Err(UqError::Divergence { epoch, member: None }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn anchored_training_needs_anchor_point() {
        let (xs, ys) = toy_batch(10, 1, 0);
        let model = HeteroModel::new(vec![1, 2], 0.0, 0).unwrap();
        let cfg = TrainConfig {
            anchor: Some(AnchorConfig {
                prior_std: 1.0,
                lambda: 1.0,
            }),
            ..TrainConfig::default()
        };
        let b = Batch::new(&xs, &ys).unwrap();
        assert!(matches!(train(model, b, b, &cfg), Err(UqError::Config(_))));
    }
}
