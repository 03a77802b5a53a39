//! A small differentiable classifier: a fully connected backbone shared across
//! training stages plus a swappable linear head per stage.
//!
//! The backbone maps `d_in -> hidden widths -> embed_dim`, with a rectifier
//! after every backbone layer; the head is a single linear map `embed_dim -> C`.
//! Gradients are derived analytically (softmax cross-entropy through the
//! rectifier chain) and checked against central finite differences in the
//! test suite. Optimization is Adam with bias correction under a per-stage
//! cosine-annealed learning rate.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// One linear layer, weight is `in_dim x out_dim`, bias `out_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    fn glorot(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = rng_for(seed, &[]);
        let half_width = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((in_dim, out_dim), |_| {
            rng.random_range(-half_width..half_width)
        });
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }
}

/// The transferable part of the model: every layer up to the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneParams {
    layers: Vec<Linear>,
}

impl BackboneParams {
    /// Seeded random initialization (used when no warm-start file is given).
    pub fn new(d_in: usize, hidden: &[usize], embed_dim: usize, seed: u64) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = d_in;
        for (k, &width) in hidden.iter().chain(std::iter::once(&embed_dim)).enumerate() {
            layers.push(Linear::glorot(prev, width, derive_seed(seed, &[0xb0, k as u64])));
            prev = width;
        }
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Linear>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("backbone needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].weight.ncols() != pair[1].weight.nrows() {
                return Err(Error::Shape(format!(
                    "layer output {} does not chain into next layer input {}",
                    pair[0].weight.ncols(),
                    pair[1].weight.nrows()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.weight.ncols() {
                return Err(Error::Shape("bias length must match layer output".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].weight.nrows()
    }

    pub fn embed_dim(&self) -> usize {
        self.layers.last().expect("nonempty").weight.ncols()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.weight.ncols())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Activations after every layer (rectified), input excluded.
    fn activations(&self, batch: &Array2<f64>) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut current = batch.clone();
        for layer in &self.layers {
            let z = current.dot(&layer.weight) + &layer.bias;
            current = z.mapv(|x| x.max(0.0));
            acts.push(current.clone());
        }
        acts
    }
}

/// Per-stage classification layer on top of the embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl HeadParams {
    pub fn num_classes(&self) -> usize {
        self.weight.ncols()
    }
}

/// Fresh head: centered uniform weights with half-width sqrt(6/(D+C)), zero bias.
pub fn new_head(embed_dim: usize, num_classes: usize, seed: u64) -> HeadParams {
    let l = Linear::glorot(embed_dim, num_classes, seed);
    HeadParams {
        weight: l.weight,
        bias: l.bias,
    }
}

fn check_batch(backbone: &BackboneParams, head: &HeadParams, batch: &Array2<f64>) -> Result<()> {
    if batch.ncols() != backbone.d_in() {
        return Err(Error::Shape(format!(
            "batch width {} does not match input dimension {}",
            batch.ncols(),
            backbone.d_in()
        )));
    }
    if head.weight.nrows() != backbone.embed_dim() {
        return Err(Error::Shape(format!(
            "head input {} does not match embedding dimension {}",
            head.weight.nrows(),
            backbone.embed_dim()
        )));
    }
    Ok(())
}

/// Run the network; returns (embeddings, logits).
pub fn forward(
    backbone: &BackboneParams,
    head: &HeadParams,
    batch: &Array2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_batch(backbone, head, batch)?;
    let acts = backbone.activations(batch);
    let emb = acts.last().expect("nonempty backbone").clone();
    let logits = emb.dot(&head.weight) + &head.bias;
    Ok((emb, logits))
}

/// Mean negative log-likelihood of the true classes, with max-subtraction
/// stabilization. Also returns the row-normalized probabilities.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, c) = (logits.nrows(), logits.ncols());
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Invalid(format!(
            "label out of range: {bad} with {c} classes"
        )));
    }
    let mut probs = Array2::zeros((b, c));
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for j in 0..c {
            let e = (row[j] - max).exp();
            probs[(i, j)] = e;
            sum += e;
        }
        for j in 0..c {
            probs[(i, j)] /= sum;
        }
        loss += max + sum.ln() - row[y];
    }
    Ok((loss / b as f64, probs))
}

/// Gradients for every parameter; shapes mirror the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Linear>,
    pub head: Linear,
}

impl Gradients {
    fn zeros_like(backbone: &BackboneParams, head: &HeadParams) -> Self {
        Self {
            layers: backbone
                .layers
                .iter()
                .map(|l| Linear::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            head: Linear::zeros(head.weight.nrows(), head.weight.ncols()),
        }
    }
}

/// Analytic gradients of the mean cross-entropy loss with respect to every
/// backbone and head parameter. Returns the loss alongside.
pub fn backward(
    backbone: &BackboneParams,
    head: &HeadParams,
    batch: &Array2<f64>,
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    check_batch(backbone, head, batch)?;
    let acts = backbone.activations(batch);
    let emb = acts.last().expect("nonempty backbone");
    let logits = emb.dot(&head.weight) + &head.bias;
    let (loss, probs) = cross_entropy(&logits, labels)?;

    let b = batch.nrows() as f64;
    // d(loss)/d(logits) = (p - y) / B
    let mut dlogits = probs;
    for (i, &y) in labels.iter().enumerate() {
        dlogits[(i, y)] -= 1.0;
    }
    dlogits /= b;

    let mut grads = Gradients::zeros_like(backbone, head);
    grads.head.weight = emb.t().dot(&dlogits);
    grads.head.bias = dlogits.sum_axis(Axis(0));

    let mut upstream = dlogits.dot(&head.weight.t());
    for k in (0..backbone.layers.len()).rev() {
        // Rectifier subgradient: zero wherever the activation clamped.
        let dz = &upstream * &acts[k].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
        let input = if k == 0 { batch } else { &acts[k - 1] };
        grads.layers[k].weight = input.t().dot(&dz);
        grads.layers[k].bias = dz.sum_axis(Axis(0));
        if k > 0 {
            upstream = dz.dot(&backbone.layers[k].weight.t());
        }
    }
    Ok((loss, grads))
}

/// Cosine-annealed learning rate at step `t` of a horizon `t_max`.
pub fn cosine_lr(base_lr: f64, t: usize, t_max: usize, eta_min: f64) -> Result<f64> {
    if t > t_max {
        return Err(Error::Invalid(format!(
            "schedule step {t} exceeds horizon {t_max}"
        )));
    }
    if t_max == 0 {
        return Ok(base_lr);
    }
    let progress = t as f64 / t_max as f64;
    Ok(eta_min + (base_lr - eta_min) * (1.0 + (std::f64::consts::PI * progress).cos()) / 2.0)
}

/// Adam accumulators plus the schedule that drives the effective rate.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    m: Gradients,
    v: Gradients,
    /// Completed steps.
    pub step: usize,
    pub base_lr: f64,
    pub t_max: usize,
    pub eta_min: f64,
}

impl OptimizerState {
    pub fn new(
        backbone: &BackboneParams,
        head: &HeadParams,
        base_lr: f64,
        t_max: usize,
        eta_min: f64,
    ) -> Self {
        Self {
            m: Gradients::zeros_like(backbone, head),
            v: Gradients::zeros_like(backbone, head),
            step: 0,
            base_lr,
            t_max,
            eta_min,
        }
    }

    pub fn current_lr(&self) -> f64 {
        cosine_lr(self.base_lr, self.step.min(self.t_max), self.t_max, self.eta_min)
            .expect("step clamped to horizon")
    }
}

fn adam_update(
    param_w: &mut Array2<f64>,
    param_b: &mut Array1<f64>,
    grad: &Linear,
    m: &mut Linear,
    v: &mut Linear,
    lr: f64,
    correction1: f64,
    correction2: f64,
) {
    Zip::from(param_w)
        .and(&grad.weight)
        .and(&mut m.weight)
        .and(&mut v.weight)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        });
    Zip::from(param_b)
        .and(&grad.bias)
        .and(&mut m.bias)
        .and(&mut v.bias)
        .for_each(|p, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
        });
}

/// One Adam step over every parameter; the effective rate comes from the
/// cosine schedule at the pre-step counter.
pub fn adam_step(
    backbone: &mut BackboneParams,
    head: &mut HeadParams,
    grads: &Gradients,
    state: &mut OptimizerState,
) {
    let lr = state.current_lr();
    state.step += 1;
    let correction1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let correction2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    for (k, layer) in backbone.layers.iter_mut().enumerate() {
        adam_update(
            &mut layer.weight,
            &mut layer.bias,
            &grads.layers[k],
            &mut state.m.layers[k],
            &mut state.v.layers[k],
            lr,
            correction1,
            correction2,
        );
    }
    adam_update(
        &mut head.weight,
        &mut head.bias,
        &grads.head,
        &mut state.m.head,
        &mut state.v.head,
        lr,
        correction1,
        correction2,
    );
}

/// Settings for one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    /// Stage index within an iteration (1, 2 or 3); recorded in metrics.
    pub stage: usize,
    pub num_classes: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLosses {
    pub train: f64,
    pub val: f64,
}

pub struct StageOutcome {
    pub backbone: BackboneParams,
    pub head: HeadParams,
    pub history: Vec<EpochLosses>,
}

fn select_rows(x: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((idx.len(), x.ncols()), |(i, j)| x[(idx[i], j)])
}

/// Mean per-sample loss over a dataset, evaluated in batches without updates.
pub fn mean_loss(
    backbone: &BackboneParams,
    head: &HeadParams,
    x: &Array2<f64>,
    labels: &[usize],
    batch_size: usize,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(Error::Shape("empty evaluation set".into()));
    }
    let idx: Vec<usize> = (0..x.nrows()).collect();
    let mut nll_sum = 0.0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let xb = select_rows(x, chunk);
        let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
        let (_, logits) = forward(backbone, head, &xb)?;
        let (loss, _) = cross_entropy(&logits, &yb)?;
        nll_sum += loss * chunk.len() as f64;
    }
    Ok(nll_sum / x.nrows() as f64)
}

/// Train a fresh head (and the incoming backbone) for `epochs` epochs of
/// mini-batch Adam over seeded shuffles. The cosine horizon is the stage's
/// total step count. Validation loss is computed once per epoch.
pub fn train_stage(
    backbone: BackboneParams,
    cfg: &StageConfig,
    train: (&Array2<f64>, &[usize]),
    val: (&Array2<f64>, &[usize]),
) -> Result<StageOutcome> {
    let (x_train, y_train) = train;
    let (x_val, y_val) = val;
    if x_train.nrows() == 0 {
        return Err(Error::Data("empty training data".into()));
    }
    if y_train.len() != x_train.nrows() || y_val.len() != x_val.nrows() {
        return Err(Error::Shape("label count does not match row count".into()));
    }
    if let Some(&bad) = y_train.iter().chain(y_val).find(|&&y| y >= cfg.num_classes) {
        return Err(Error::Invalid(format!(
            "label out of range: {bad} with {} classes",
            cfg.num_classes
        )));
    }

    let mut backbone = backbone;
    let mut head = new_head(
        backbone.embed_dim(),
        cfg.num_classes,
        derive_seed(cfg.seed, &[0x4ead]),
    );
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs == 0 {
        return Ok(StageOutcome {
            backbone,
            head,
            history,
        });
    }

    let n = x_train.nrows();
    let batch_size = cfg.batch_size.max(1);
    let batches_per_epoch = n.div_ceil(batch_size);
    let t_max = cfg.epochs * batches_per_epoch;
    let mut opt = OptimizerState::new(&backbone, &head, cfg.base_lr, t_max, 0.0);

    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, &[0x5f1e, epoch as u64]);
        order.shuffle(&mut rng);
        let mut nll_sum = 0.0;
        for chunk in order.chunks(batch_size) {
            let xb = select_rows(x_train, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();
            let (loss, grads) = backward(&backbone, &head, &xb, &yb)?;
            nll_sum += loss * chunk.len() as f64;
            adam_step(&mut backbone, &mut head, &grads, &mut opt);
        }
        let train_loss = nll_sum / n as f64;
        let val_loss = if x_val.nrows() == 0 {
            f64::NAN
        } else {
            mean_loss(&backbone, &head, x_val, y_val, batch_size)?
        };
        history.push(EpochLosses {
            train: train_loss,
            val: val_loss,
        });
    }

    Ok(StageOutcome {
        backbone,
        head,
        history,
    })
}
