//! Two-phase training on top of the contrastive losses.
//!
//! Phase one trains an MLP encoder plus a two-layer projection head with a
//! contrastive objective over augmented feature pairs; phase two freezes the
//! encoder and fits a sigmoid linear probe on its representations. Both
//! phases run plain SGD with momentum under a cosine schedule with linear
//! warmup, single-threaded and with every random stream derived from the
//! config seed, so a (config, seed) pair reproduces results byte for byte.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label_algebra::LabelSet;
use crate::losses::{evaluate, ContrastiveBatch, Placement, Strategy};
use crate::metrics::{evaluate_all, Metrics, Predictions};
use crate::seed::mix;
use crate::synth::{augment_pair_with_rng, Dataset};

const STREAM_INIT: u64 = 0x11;
const STREAM_SHUFFLE: u64 = 0x22;
const STREAM_AUGMENT: u64 = 0x33;
const STREAM_PROBE_SHUFFLE: u64 = 0x44;

const NORM_EPS: f64 = 1e-12;

/// Probe metrics report precision at these cutoffs, skipping any that exceed
/// the class count.
pub const DEFAULT_PRECISION_KS: [usize; 2] = [5, 8];

/// Hyperparameters for both phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub epochs_contrastive: usize,
    pub epochs_probe: usize,
    /// Samples per contrastive minibatch before pairing doubles it; also the
    /// probe batch size.
    pub batch_pairs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of total steps spent in linear warmup.
    pub warmup_fraction: f64,
    /// L2-normalize projection outputs before the loss.
    pub normalize_projection: bool,
    /// Hidden widths of the encoder MLP.
    pub encoder_widths: Vec<usize>,
    pub projection_dim: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::SimDis {
                placement: Placement::OutsideLog,
                penalty: crate::label_algebra::PenaltyKind::Reciprocal,
            },
            temperature: 0.07,
            epochs_contrastive: 30,
            epochs_probe: 40,
            batch_pairs: 64,
            learning_rate: 0.3,
            momentum: 0.9,
            weight_decay: 1e-4,
            warmup_fraction: 0.05,
            normalize_projection: true,
            encoder_widths: vec![64, 64],
            projection_dim: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.epochs_contrastive == 0 || self.epochs_probe == 0 {
            return Err(Error::InvalidConfig(
                "both phases need at least one epoch".into(),
            ));
        }
        if self.batch_pairs == 0 {
            return Err(Error::InvalidConfig("batch_pairs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidConfig(format!(
                "warmup_fraction must lie in [0, 1), got {}",
                self.warmup_fraction
            )));
        }
        if self.encoder_widths.is_empty() || self.encoder_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder_widths must be nonempty and positive".into(),
            ));
        }
        if self.projection_dim == 0 {
            return Err(Error::InvalidConfig(
                "projection_dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One dense layer; `weight` is `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self {
            weight: Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-limit..limit)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }

    fn forward(&self, input: &Array2<f64>) -> Array2<f64> {
        input.dot(&self.weight) + &self.bias
    }
}

/// Encoder, projection head (always two layers), and linear probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Vec<DenseLayer>,
    pub projection: Vec<DenseLayer>,
    pub probe: DenseLayer,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, drawn in a fixed order so the
    /// initialization depends only on the shapes and the seed.
    pub fn init(
        feature_dim: usize,
        encoder_widths: &[usize],
        projection_dim: usize,
        num_classes: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(encoder_widths.len());
        let mut fan_in = feature_dim;
        for &width in encoder_widths {
            encoder.push(DenseLayer::glorot(&mut rng, fan_in, width));
            fan_in = width;
        }
        let projection = vec![
            DenseLayer::glorot(&mut rng, fan_in, fan_in),
            DenseLayer::glorot(&mut rng, fan_in, projection_dim),
        ];
        let probe = DenseLayer::glorot(&mut rng, fan_in, num_classes);
        Self {
            encoder,
            projection,
            probe,
        }
    }

    pub fn encoder_output_dim(&self) -> usize {
        self.encoder
            .last()
            .expect("encoder has layers")
            .weight
            .ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.probe.weight.ncols()
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(ParamsWire::from(self)).expect("params serialize")
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<Self> {
        let wire: ParamsWire = serde_json::from_value(value.clone())?;
        wire.try_into()
    }
}

#[derive(Serialize, Deserialize)]
struct LayerWire {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<&DenseLayer> for LayerWire {
    fn from(layer: &DenseLayer) -> Self {
        Self {
            weight: layer
                .weight
                .rows()
                .into_iter()
                .map(|r| r.to_vec())
                .collect(),
            bias: layer.bias.to_vec(),
        }
    }
}

impl TryFrom<LayerWire> for DenseLayer {
    type Error = Error;

    fn try_from(wire: LayerWire) -> Result<Self> {
        let rows = wire.weight.len();
        let cols = wire.weight.first().map_or(0, |r| r.len());
        if rows == 0 || cols == 0 || wire.weight.iter().any(|r| r.len() != cols) {
            return Err(Error::Parse("malformed weight matrix".into()));
        }
        if wire.bias.len() != cols {
            return Err(Error::Parse("bias width does not match weight".into()));
        }
        let flat: Vec<f64> = wire.weight.into_iter().flatten().collect();
        Ok(Self {
            weight: Array2::from_shape_vec((rows, cols), flat)
                .map_err(|e| Error::Parse(e.to_string()))?,
            bias: Array1::from_vec(wire.bias),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsWire {
    encoder: Vec<LayerWire>,
    projection: Vec<LayerWire>,
    probe: LayerWire,
}

impl From<&ModelParams> for ParamsWire {
    fn from(params: &ModelParams) -> Self {
        Self {
            encoder: params.encoder.iter().map(LayerWire::from).collect(),
            projection: params.projection.iter().map(LayerWire::from).collect(),
            probe: LayerWire::from(&params.probe),
        }
    }
}

impl TryFrom<ParamsWire> for ModelParams {
    type Error = Error;

    fn try_from(wire: ParamsWire) -> Result<Self> {
        if wire.encoder.is_empty() || wire.projection.len() != 2 {
            return Err(Error::Parse(
                "checkpoint needs a nonempty encoder and a two-layer projection".into(),
            ));
        }
        Ok(Self {
            encoder: wire
                .encoder
                .into_iter()
                .map(DenseLayer::try_from)
                .collect::<Result<_>>()?,
            projection: wire
                .projection
                .into_iter()
                .map(DenseLayer::try_from)
                .collect::<Result<_>>()?,
            probe: wire.probe.try_into()?,
        })
    }
}

/// Gradients for the contrastive trunk (encoder plus projection).
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub encoder: Vec<DenseLayer>,
    pub projection: Vec<DenseLayer>,
}

/// Cosine learning-rate schedule with linear warmup. `lr_at(0)` is
/// `max_lr / warmup_steps`, the peak sits at the end of warmup, and the tail
/// decays to (nearly) zero at the final step.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub max_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(max_lr: f64, total_steps: usize, warmup_fraction: f64) -> Self {
        let warmup_steps = ((total_steps as f64) * warmup_fraction).round() as usize;
        Self {
            max_lr,
            warmup_steps: warmup_steps.min(total_steps),
            total_steps,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.max_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        if self.total_steps <= self.warmup_steps {
            return self.max_lr;
        }
        let progress =
            (step - self.warmup_steps) as f64 / (self.total_steps - self.warmup_steps) as f64;
        self.max_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Which phase a trace row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Contrastive,
    Probe,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Contrastive => write!(f, "contrastive"),
            Phase::Probe => write!(f, "probe"),
        }
    }
}

/// Mean loss and last learning rate of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub lr: f64,
}

/// Per-epoch history plus, after the probe phase, final metrics.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub rows: Vec<TraceRow>,
    pub metrics: Option<Metrics>,
}

impl TrainTrace {
    pub fn phase_losses(&self, phase: Phase) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.loss)
            .collect()
    }

    /// `epoch,phase,loss,lr` rows in phase order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,phase,loss,lr\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.epoch, row.phase, row.loss, row.lr
            ));
        }
        out
    }
}

struct LayerCache {
    input: Array2<f64>,
    /// Post-activation output.
    output: Array2<f64>,
}

struct TrunkCache {
    encoder: Vec<LayerCache>,
    projection: Vec<LayerCache>,
    pre_norm: Array2<f64>,
    output: Array2<f64>,
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

/// Encoder representations: every encoder layer is Dense followed by the
/// activation.
pub fn encode(params: &ModelParams, features: &Array2<f64>) -> Array2<f64> {
    let mut h = features.clone();
    for layer in &params.encoder {
        h = relu(layer.forward(&h));
    }
    h
}

fn l2_normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt().max(NORM_EPS);
        row.mapv_inplace(|v| v / norm);
    }
    out
}

fn forward_trunk(params: &ModelParams, x: &Array2<f64>, normalize: bool) -> TrunkCache {
    let mut encoder = Vec::with_capacity(params.encoder.len());
    let mut h = x.clone();
    for layer in &params.encoder {
        let out = relu(layer.forward(&h));
        encoder.push(LayerCache {
            input: h,
            output: out.clone(),
        });
        h = out;
    }
    // Projection: Dense, activation, Dense.
    let p0 = relu(params.projection[0].forward(&h));
    let pre_norm = params.projection[1].forward(&p0);
    let projection = vec![
        LayerCache {
            input: h,
            output: p0.clone(),
        },
        LayerCache {
            input: p0,
            output: pre_norm.clone(),
        },
    ];
    let output = if normalize {
        l2_normalize_rows(&pre_norm)
    } else {
        pre_norm.clone()
    };
    TrunkCache {
        encoder,
        projection,
        pre_norm,
        output,
    }
}

/// Projection embeddings for a feature matrix, as the loss sees them.
pub fn project(params: &ModelParams, features: &Array2<f64>, normalize: bool) -> Array2<f64> {
    forward_trunk(params, features, normalize).output
}

/// Backprop of `z = u / max(‖u‖, ε)` applied row-wise:
/// `∂L/∂u = (g - z (z·g)) / ‖u‖`.
fn backward_through_normalization(pre_norm: &Array2<f64>, grad_out: &Array2<f64>) -> Array2<f64> {
    let mut grad_in = Array2::zeros(pre_norm.raw_dim());
    for i in 0..pre_norm.nrows() {
        let u = pre_norm.row(i);
        let g = grad_out.row(i);
        let norm = u.dot(&u).sqrt().max(NORM_EPS);
        let z = u.mapv(|v| v / norm);
        let zg = z.dot(&g);
        for k in 0..u.len() {
            grad_in[[i, k]] = (g[k] - z[k] * zg) / norm;
        }
    }
    grad_in
}

fn backward_layer(
    layer: &DenseLayer,
    cache: &LayerCache,
    grad_out: &Array2<f64>,
    relu_after: bool,
) -> (DenseLayer, Array2<f64>) {
    let grad_pre = if relu_after {
        let mut masked = grad_out.clone();
        masked.zip_mut_with(&cache.output, |g, &o| {
            if o <= 0.0 {
                *g = 0.0;
            }
        });
        masked
    } else {
        grad_out.clone()
    };
    let grad = DenseLayer {
        weight: cache.input.t().dot(&grad_pre),
        bias: grad_pre.sum_axis(Axis(0)),
    };
    let grad_in = grad_pre.dot(&layer.weight.t());
    (grad, grad_in)
}

fn backward_trunk(
    params: &ModelParams,
    cache: &TrunkCache,
    grad_output: &Array2<f64>,
    normalize: bool,
) -> ModelGrads {
    let mut delta = if normalize {
        backward_through_normalization(&cache.pre_norm, grad_output)
    } else {
        grad_output.clone()
    };

    let (g_p1, d) = backward_layer(&params.projection[1], &cache.projection[1], &delta, false);
    delta = d;
    let (g_p0, d) = backward_layer(&params.projection[0], &cache.projection[0], &delta, true);
    delta = d;

    let mut encoder_grads = vec![None; params.encoder.len()];
    for idx in (0..params.encoder.len()).rev() {
        let (g, d) = backward_layer(&params.encoder[idx], &cache.encoder[idx], &delta, true);
        encoder_grads[idx] = Some(g);
        delta = d;
    }

    ModelGrads {
        encoder: encoder_grads.into_iter().map(Option::unwrap).collect(),
        projection: vec![g_p0, g_p1],
    }
}

/// Contrastive loss of one prepared (already augmented and paired) batch as a
/// function of the trunk parameters.
pub fn contrastive_batch_loss(
    params: &ModelParams,
    features: &Array2<f64>,
    labels: &[LabelSet],
    strategy: Strategy,
    temperature: f64,
    normalize: bool,
) -> Result<f64> {
    let cache = forward_trunk(params, features, normalize);
    let batch = ContrastiveBatch::new(cache.output, labels.to_vec(), temperature)?;
    Ok(evaluate(&batch, strategy)?.total)
}

/// Loss and trunk gradients of one prepared batch. This is the exact code
/// path the training loop steps on.
pub fn contrastive_batch_grads(
    params: &ModelParams,
    features: &Array2<f64>,
    labels: &[LabelSet],
    strategy: Strategy,
    temperature: f64,
    normalize: bool,
) -> Result<(f64, ModelGrads)> {
    let cache = forward_trunk(params, features, normalize);
    let batch = ContrastiveBatch::new(cache.output.clone(), labels.to_vec(), temperature)?;
    let report = evaluate(&batch, strategy)?;
    let grads = backward_trunk(params, &cache, &report.gradient, normalize);
    Ok((report.total, grads))
}

/// One SGD step with momentum. Weight decay applies to weights, not biases.
fn sgd_step(
    param: &mut DenseLayer,
    grad: &DenseLayer,
    velocity: &mut DenseLayer,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    azip_step(
        &mut param.weight,
        &grad.weight,
        &mut velocity.weight,
        lr,
        momentum,
        weight_decay,
    );
    for k in 0..param.bias.len() {
        let g = grad.bias[k];
        velocity.bias[k] = momentum * velocity.bias[k] + g;
        param.bias[k] -= lr * velocity.bias[k];
    }
}

fn azip_step(
    param: &mut Array2<f64>,
    grad: &Array2<f64>,
    velocity: &mut Array2<f64>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for ((p, g), v) in param.iter_mut().zip(grad.iter()).zip(velocity.iter_mut()) {
        let g = g + weight_decay * *p;
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}

fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}

/// Phase one: contrastive training of encoder and projection head.
///
/// Each step takes `batch_pairs` samples (leftovers past a full batch are
/// dropped that epoch), expands them into two augmented views apiece, and
/// descends the configured loss. Returns the trained parameters (probe
/// untouched) and the per-epoch trace.
pub fn train_contrastive(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Degenerate("cannot train on an empty dataset".into()));
    }
    let n = dataset.len();
    let mut params = ModelParams::init(
        dataset.feature_dim(),
        &config.encoder_widths,
        config.projection_dim,
        dataset.universe_size(),
        mix(&[config.seed, STREAM_INIT]),
    );
    let mut velocity = ModelGrads {
        encoder: params.encoder.iter().map(DenseLayer::zeros_like).collect(),
        projection: params
            .projection
            .iter()
            .map(DenseLayer::zeros_like)
            .collect(),
    };

    let batch_samples = config.batch_pairs.min(n);
    let batches_per_epoch = n / batch_samples;
    let total_steps = config.epochs_contrastive * batches_per_epoch;
    let schedule = LrSchedule::new(config.learning_rate, total_steps, config.warmup_fraction);

    let mut rows = Vec::with_capacity(config.epochs_contrastive);
    let mut step = 0usize;
    for epoch in 0..config.epochs_contrastive {
        let order = shuffled_indices(n, mix(&[config.seed, STREAM_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for b in 0..batches_per_epoch {
            let chunk = &order[b * batch_samples..(b + 1) * batch_samples];
            let mut aug_rng = ChaCha8Rng::seed_from_u64(mix(&[
                config.seed,
                STREAM_AUGMENT,
                epoch as u64,
                b as u64,
            ]));
            let mut views = Array2::<f64>::zeros((2 * chunk.len(), dataset.feature_dim()));
            let mut labels = Vec::with_capacity(2 * chunk.len());
            for (j, &idx) in chunk.iter().enumerate() {
                let (a, b_view) = augment_pair_with_rng(
                    dataset.features.row(idx),
                    dataset.augment_sigma,
                    &mut aug_rng,
                );
                views.row_mut(2 * j).assign(&a);
                views.row_mut(2 * j + 1).assign(&b_view);
                labels.push(dataset.labels[idx].clone());
                labels.push(dataset.labels[idx].clone());
            }

            let lr = schedule.lr_at(step);
            let (loss, grads) = contrastive_batch_grads(
                &params,
                &views,
                &labels,
                config.strategy,
                config.temperature,
                config.normalize_projection,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!(
                    "{what} (contrastive phase, epoch {epoch}, batch {b})"
                )),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "contrastive loss diverged at epoch {epoch}, batch {b}"
                )));
            }
            for (layer, (grad, vel)) in params
                .encoder
                .iter_mut()
                .zip(grads.encoder.iter().zip(velocity.encoder.iter_mut()))
            {
                sgd_step(layer, grad, vel, lr, config.momentum, config.weight_decay);
            }
            for (layer, (grad, vel)) in params
                .projection
                .iter_mut()
                .zip(grads.projection.iter().zip(velocity.projection.iter_mut()))
            {
                sgd_step(layer, grad, vel, lr, config.momentum, config.weight_decay);
            }
            epoch_loss += loss;
            last_lr = lr;
            step += 1;
        }
        rows.push(TraceRow {
            epoch,
            phase: Phase::Contrastive,
            loss: epoch_loss / batches_per_epoch as f64,
            lr: last_lr,
        });
    }

    Ok((
        params,
        TrainTrace {
            rows,
            metrics: None,
        },
    ))
}

fn multi_hot(labels: &[LabelSet], classes: usize) -> Array2<f64> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (i, l) in labels.iter().enumerate() {
        for c in l.members() {
            out[[i, c]] = 1.0;
        }
    }
    out
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid cross-entropy over all cells, evaluated in logit space so
/// saturated predictions stay finite, plus its logit gradient.
fn bce_with_logits(logits: &Array2<f64>, targets: &Array2<f64>) -> (f64, Array2<f64>) {
    let cells = (logits.nrows() * logits.ncols()) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(logits.raw_dim());
    for ((i, c), &x) in logits.indexed_iter() {
        let y = targets[[i, c]];
        loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
        grad[[i, c]] = (stable_sigmoid(x) - y) / cells;
    }
    (loss / cells, grad)
}

/// Phase two: freezes the encoder, fits the sigmoid linear probe on
/// un-augmented representations, and reports final metrics over the dataset.
pub fn train_probe(
    dataset: &Dataset,
    model: &ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Degenerate("cannot train on an empty dataset".into()));
    }
    let classes = dataset.universe_size();
    if model.num_classes() != classes {
        return Err(Error::InvalidConfig(format!(
            "probe expects {} classes but the dataset has {classes}",
            model.num_classes()
        )));
    }
    let representations = encode(model, &dataset.features);
    let targets = multi_hot(&dataset.labels, classes);
    let n = dataset.len();

    let mut probe = model.probe.clone();
    let mut velocity = probe.zeros_like();
    let batch_samples = config.batch_pairs.min(n);
    let batches_per_epoch = n / batch_samples;
    let total_steps = config.epochs_probe * batches_per_epoch;
    let schedule = LrSchedule::new(config.learning_rate, total_steps, config.warmup_fraction);

    let mut rows = Vec::with_capacity(config.epochs_probe);
    let mut step = 0usize;
    for epoch in 0..config.epochs_probe {
        let order = shuffled_indices(n, mix(&[config.seed, STREAM_PROBE_SHUFFLE, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for b in 0..batches_per_epoch {
            let chunk = &order[b * batch_samples..(b + 1) * batch_samples];
            let mut h = Array2::zeros((chunk.len(), representations.ncols()));
            let mut y = Array2::zeros((chunk.len(), classes));
            for (j, &idx) in chunk.iter().enumerate() {
                h.row_mut(j).assign(&representations.row(idx));
                y.row_mut(j).assign(&targets.row(idx));
            }
            let logits = probe.forward(&h);
            let (loss, grad_logits) = bce_with_logits(&logits, &y);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "probe loss diverged at epoch {epoch}, batch {b}"
                )));
            }
            let grad = DenseLayer {
                weight: h.t().dot(&grad_logits),
                bias: grad_logits.sum_axis(Axis(0)),
            };
            let lr = schedule.lr_at(step);
            sgd_step(
                &mut probe,
                &grad,
                &mut velocity,
                lr,
                config.momentum,
                config.weight_decay,
            );
            epoch_loss += loss;
            last_lr = lr;
            step += 1;
        }
        rows.push(TraceRow {
            epoch,
            phase: Phase::Probe,
            loss: epoch_loss / batches_per_epoch as f64,
            lr: last_lr,
        });
    }

    let trained = ModelParams {
        encoder: model.encoder.clone(),
        projection: model.projection.clone(),
        probe,
    };
    let ks: Vec<usize> = DEFAULT_PRECISION_KS
        .iter()
        .copied()
        .filter(|k| *k <= classes)
        .collect();
    let metrics = evaluate_all(&probe_predictions(&trained, dataset)?, &ks)?;
    Ok((
        trained,
        TrainTrace {
            rows,
            metrics: Some(metrics),
        },
    ))
}

/// Sigmoid probe scores over the whole dataset at threshold 0.5.
pub fn probe_predictions(model: &ModelParams, dataset: &Dataset) -> Result<Predictions> {
    let h = encode(model, &dataset.features);
    let scores = model.probe.forward(&h).mapv(stable_sigmoid);
    Predictions::new(scores, dataset.labels.clone(), 0.5)
}

/// Both phases back to back; the returned trace holds contrastive rows,
/// probe rows, and the final metrics.
pub fn train_two_phase(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainTrace)> {
    let (encoder_model, mut trace) = train_contrastive(dataset, config)?;
    let (full_model, probe_trace) = train_probe(dataset, &encoder_model, config)?;
    trace.rows.extend(probe_trace.rows);
    trace.metrics = probe_trace.metrics;
    Ok((full_model, trace))
}
