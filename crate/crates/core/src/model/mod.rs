//! Feed-forward regressor with a heteroscedastic Gaussian head.
//!
//! The network maps an input vector through ReLU hidden layers to two
//! outputs: the predicted mean and the predicted log-variance. Parameters are
//! kept in one flat buffer, layer by layer, each layer stored as its
//! `out x in` weight matrix (row-major) followed by its bias vector. The flat
//! layout makes optimizer updates, anchoring and checkpointing plain slice
//! operations.
//!
//! Dropout is applied to the output of every hidden layer (never to the raw
//! input) using inverted scaling: kept units are multiplied by `1 / (1 - p)`.

mod checkpoint;
mod loss;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{gaussian_nll_grad, gaussian_nll_loss};
pub use train::{backward, batch_loss, train, AnchorConfig, Batch, Gradients, History, Objective, TrainConfig};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, UqError};
use crate::rng;

/// Bounds applied to the log-variance output before exponentiation.
pub const LOG_VAR_MIN: f64 = -15.0;
pub const LOG_VAR_MAX: f64 = 15.0;

/// Width of the output layer: mean and log-variance.
pub const OUTPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Log-variance, clamped to `[LOG_VAR_MIN, LOG_VAR_MAX]`.
    pub log_var: f64,
}

impl Prediction {
    pub fn variance(&self) -> f64 {
        self.log_var.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeteroModel {
    layer_dims: Vec<usize>,
    dropout_rate: f64,
    seed: u64,
    params: Vec<f64>,
    anchor: Option<Vec<f64>>,
}

impl HeteroModel {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new(layer_dims: Vec<usize>, dropout_rate: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, dropout_rate)?;
        model.seed = seed;
        let mut rng = rng::seeded(seed);
        for layer in 0..model.num_layers() {
            let (fan_in, fan_out) = (model.layer_dims[layer], model.layer_dims[layer + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let range = model.weight_range(layer);
            for w in &mut model.params[range] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    /// Like [`HeteroModel::new`], additionally drawing an anchor point
    /// `theta_0 ~ N(0, prior_std^2)` for every parameter.
    pub fn new_anchored(layer_dims: Vec<usize>, dropout_rate: f64, seed: u64, prior_std: f64) -> Result<Self> {
        if !(prior_std > 0.0 && prior_std.is_finite()) {
            return Err(UqError::Config(format!(
                "anchor prior_std must be positive, got {prior_std}"
            )));
        }
        let mut model = Self::new(layer_dims, dropout_rate, seed)?;
        // Separate stream so anchoring does not perturb the weight init.
        let mut rng = rng::seeded(rng::derive_seed(seed, 0xA4C4));
        let anchor = (0..model.params.len())
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                prior_std * z
            })
            .collect();
        model.anchor = Some(anchor);
        Ok(model)
    }

    /// Builds the model a [`TrainConfig`] asks for: anchored when the config
    /// carries an [`AnchorConfig`], plain otherwise.
    pub fn for_config(layer_dims: Vec<usize>, dropout_rate: f64, config: &TrainConfig) -> Result<Self> {
        match &config.anchor {
            Some(a) => Self::new_anchored(layer_dims, dropout_rate, config.seed, a.prior_std),
            None => Self::new(layer_dims, dropout_rate, config.seed),
        }
    }

    /// All-zero network; useful as a starting point for hand-set weights.
    pub fn zeros(layer_dims: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        validate_dims(&layer_dims)?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(UqError::Config(format!(
                "dropout_rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let n = param_count(&layer_dims);
        Ok(Self {
            layer_dims,
            dropout_rate,
            seed: 0,
            params: vec![0.0; n],
            anchor: None,
        })
    }

    pub(crate) fn from_parts(
        layer_dims: Vec<usize>,
        dropout_rate: f64,
        seed: u64,
        params: Vec<f64>,
        anchor: Option<Vec<f64>>,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_dims, dropout_rate)?;
        if params.len() != model.params.len() {
            return Err(UqError::Dimension {
                expected: model.params.len(),
                actual: params.len(),
            });
        }
        if let Some(a) = &anchor {
            if a.len() != params.len() {
                return Err(UqError::Dimension {
                    expected: params.len(),
                    actual: a.len(),
                });
            }
        }
        model.seed = seed;
        model.params = params;
        model.anchor = anchor;
        Ok(model)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn hidden_dims(&self) -> &[usize] {
        &self.layer_dims[1..self.layer_dims.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Anchor point `theta_0` when the model was built anchored.
    pub fn anchor(&self) -> Option<&[f64]> {
        self.anchor.as_deref()
    }

    /// Weight matrix (row-major, `out x in`) and bias of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        (
            &self.params[self.weight_range(layer)],
            &self.params[self.bias_range(layer)],
        )
    }

    pub fn layer_mut(&mut self, layer: usize) -> (&mut [f64], &mut [f64]) {
        let w = self.weight_range(layer);
        let b = self.bias_range(layer);
        debug_assert_eq!(w.end, b.start);
        let (head, tail) = self.params.split_at_mut(w.end);
        (&mut head[w], &mut tail[..b.len()])
    }

    fn layer_offset(&self, layer: usize) -> usize {
        (0..layer)
            .map(|l| (self.layer_dims[l] + 1) * self.layer_dims[l + 1])
            .sum()
    }

    pub(crate) fn weight_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(layer);
        start..start + self.layer_dims[layer] * self.layer_dims[layer + 1]
    }

    pub(crate) fn bias_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start = self.weight_range(layer).end;
        start..start + self.layer_dims[layer + 1]
    }

    /// Forward pass. Without a mask no dropout is applied.
    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<Prediction> {
        if x.len() != self.input_dim() {
            return Err(UqError::Dimension {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        if let Some(m) = mask {
            m.check_against(self)?;
        }
        let mut trace = Trace::new(self);
        Ok(self.forward_trace(x, mask, &mut trace))
    }

    /// Forward pass recording every intermediate needed by backpropagation.
    pub(crate) fn forward_trace(&self, x: &[f64], mask: Option<&DropoutMask>, trace: &mut Trace) -> Prediction {
        let n_layers = self.num_layers();
        trace.acts[0].copy_from_slice(x);
        for layer in 0..n_layers {
            let (w, b) = self.layer(layer);
            let n_in = self.layer_dims[layer];
            let (before, after) = trace.acts.split_at_mut(layer + 1);
            let input = &before[layer];
            let out = &mut after[0];
            let pre = &mut trace.pre[layer];
            for (o, (row, bias)) in w.chunks_exact(n_in).zip(b).enumerate() {
                let z = bias + dot(row, input);
                pre[o] = z;
                out[o] = z;
            }
            if layer + 1 < n_layers {
                let scale = mask.map(|m| &m.layers[layer][..]);
                for (o, v) in out.iter_mut().enumerate() {
                    let h = v.max(0.0);
                    *v = match scale {
                        Some(s) => h * s[o],
                        None => h,
                    };
                }
            }
        }
        let out = &trace.acts[n_layers];
        Prediction {
            mean: out[0],
            log_var: out[1].clamp(LOG_VAR_MIN, LOG_VAR_MAX),
        }
    }

    /// Draws one dropout mask covering every hidden layer.
    pub fn sample_mask<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> DropoutMask {
        let p = self.dropout_rate;
        let keep = 1.0 / (1.0 - p);
        let layers = self
            .hidden_dims()
            .iter()
            .map(|&width| {
                (0..width)
                    .map(|_| if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { keep })
                    .collect()
            })
            .collect();
        DropoutMask { layers }
    }

    pub(crate) fn with_params(&self, params: Vec<f64>) -> Self {
        debug_assert_eq!(params.len(), self.params.len());
        Self { params, ..self.clone() }
    }
}

/// Per-hidden-layer multiplicative dropout mask; entries are `0` (dropped)
/// or `1 / (1 - p)` (kept).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    layers: Vec<Vec<f64>>,
}

impl DropoutMask {
    pub fn new(layers: Vec<Vec<f64>>) -> Self {
        Self { layers }
    }

    /// The identity mask: every unit kept with unit scale.
    pub fn ones(model: &HeteroModel) -> Self {
        Self {
            layers: model.hidden_dims().iter().map(|&w| vec![1.0; w]).collect(),
        }
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    fn check_against(&self, model: &HeteroModel) -> Result<()> {
        let hidden = model.hidden_dims();
        if self.layers.len() != hidden.len() {
            return Err(UqError::Dimension {
                expected: hidden.len(),
                actual: self.layers.len(),
            });
        }
        for (layer, &width) in self.layers.iter().zip(hidden) {
            if layer.len() != width {
                return Err(UqError::Dimension {
                    expected: width,
                    actual: layer.len(),
                });
            }
            if layer.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(UqError::Input(
                    "dropout mask entries must be finite and non-negative".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Reusable buffers for one forward/backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    /// `acts[0]` is the input, `acts[l + 1]` the (masked) output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pub pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn new(model: &HeteroModel) -> Self {
        let dims = model.layer_dims();
        Self {
            acts: dims.iter().map(|&d| vec![0.0; d]).collect(),
            pre: dims[1..].iter().map(|&d| vec![0.0; d]).collect(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(UqError::Config("layer_dims needs an input and an output width".into()));
    }
    if dims.contains(&0) {
        return Err(UqError::Config("layer widths must be positive".into()));
    }
    if *dims.last().unwrap() != OUTPUT_DIM {
        return Err(UqError::Config(format!(
            "final layer must have {OUTPUT_DIM} outputs (mean, log-variance), got {}",
            dims.last().unwrap()
        )));
    }
    Ok(())
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}
