//! Desk-scale model zoo: logistic regression and a two-layer MLP with
//! manual backprop, synthetic blob tasks, label flipping, and retraining.
//!
//! Linear layers fold the bias into the input as a trailing constant-1
//! feature, so a layer's flattened gradient block is exactly the outer
//! product `h x delta` (input-major), which keeps the Kronecker capture
//! identity exact.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gradstore::{
    ActivationStore, ExampleMeta, GradStoreError, GradientDataset, LayerSpec, Split,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("label flipping requires binary labels")]
    NotBinary,
    #[error("training loss became non-finite at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("no training examples remain")]
    EmptyTrainSet,
    #[error("invalid task: {0}")]
    BadTask(String),
    #[error("model/dataset shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Grad(#[from] GradStoreError),
}

pub type Result<T> = std::result::Result<T, TrainerError>;

// --- synthetic tasks ---

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceCluster {
    pub tag: String,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskKind {
    GaussianBlobs { classes: usize, feature_dim: usize, separation: f64 },
    MultiSource { sources: Vec<SourceCluster> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn blobs(
        classes: usize,
        feature_dim: usize,
        separation: f64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        seed: u64,
    ) -> Self {
        Self {
            kind: TaskKind::GaussianBlobs { classes, feature_dim, separation },
            n_train,
            n_val,
            n_test,
            seed,
        }
    }

    /// Multi-source task where source `j` occupies its own orthogonal
    /// feature block: center_j = separation * normalized indicator of
    /// block j. Tags are `src0..src{n-1}`.
    pub fn multi_source_orthogonal(
        n_sources: usize,
        block_dim: usize,
        separation: f64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
        seed: u64,
    ) -> Self {
        let d = n_sources * block_dim;
        let unit = separation / (block_dim as f64).sqrt();
        let sources = (0..n_sources)
            .map(|j| {
                let mut center = vec![0.0; d];
                for c in center.iter_mut().skip(j * block_dim).take(block_dim) {
                    *c = unit;
                }
                SourceCluster { tag: format!("src{j}"), center }
            })
            .collect();
        Self { kind: TaskKind::MultiSource { sources }, n_train, n_val, n_test, seed }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(TrainerError::BadTask("all split counts must be >= 1".into()));
        }
        match &self.kind {
            TaskKind::GaussianBlobs { classes, feature_dim, separation } => {
                if *classes < 2 || *feature_dim == 0 {
                    return Err(TrainerError::BadTask("need >= 2 classes and features".into()));
                }
                if *separation <= 0.0 {
                    return Err(TrainerError::BadTask("separation must be positive".into()));
                }
            }
            TaskKind::MultiSource { sources } => {
                if sources.len() < 2 {
                    return Err(TrainerError::BadTask("multi_source needs >= 2 sources".into()));
                }
                let d = sources[0].center.len();
                if d == 0 || sources.iter().any(|s| s.center.len() != d) {
                    return Err(TrainerError::BadTask("source centers must share a width".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DataSplit {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub example_id: u64,
    pub x: Vec<f64>,
    pub label: usize,
    pub source: String,
    pub split: DataSplit,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub examples: Vec<LabeledExample>,
}

impl LabeledDataset {
    pub fn indices_of(&self, split: DataSplit) -> Vec<usize> {
        (0..self.examples.len()).filter(|&i| self.examples[i].split == split).collect()
    }
}

/// Generates the synthetic dataset: balanced class assignment within each
/// split, unit-variance Gaussian noise around class/source centers,
/// deterministic in the task seed.
pub fn gen_task(task: &SyntheticTask) -> Result<LabeledDataset> {
    task.validate()?;
    let (centers, tags, feature_dim): (Vec<Vec<f64>>, Vec<String>, usize) = match &task.kind {
        TaskKind::GaussianBlobs { classes, feature_dim, separation } => {
            let dirs = sign_directions(*classes, *feature_dim, task.seed);
            let centers = dirs
                .into_iter()
                .map(|u| u.into_iter().map(|x| x * separation).collect())
                .collect();
            (centers, vec!["blobs".to_string(); *classes], *feature_dim)
        }
        TaskKind::MultiSource { sources } => (
            sources.iter().map(|s| s.center.clone()).collect(),
            sources.iter().map(|s| s.tag.clone()).collect(),
            sources[0].center.len(),
        ),
    };
    let k = centers.len();
    let mut examples = Vec::with_capacity(task.n_train + task.n_val + task.n_test);
    let mut next_id = 0u64;
    for (split, count, stream_ix) in [
        (DataSplit::Train, task.n_train, 0u64),
        (DataSplit::Val, task.n_val, 1),
        (DataSplit::Test, task.n_test, 2),
    ] {
        let mut noise = rng::stream(task.seed, "task-data", stream_ix);
        for i in 0..count {
            let class = i % k;
            let x: Vec<f64> = centers[class]
                .iter()
                .map(|&c| c + standard_normal(&mut noise))
                .collect();
            examples.push(LabeledExample {
                example_id: next_id,
                x,
                label: class,
                source: tags[class].clone(),
                split,
                flipped: false,
            });
            next_id += 1;
        }
    }
    Ok(LabeledDataset { feature_dim, n_classes: k, examples })
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    use rand::distributions::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

/// Unit directions on sign patterns `(+/-1, .., +/-1)/sqrt(dim)`, so every
/// feature carries the same share of class signal. Binary tasks get
/// antipodal centers; more classes draw distinct random patterns.
fn sign_directions(k: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut stream = rng::stream(seed, "task-centers", 0);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut seen = std::collections::HashSet::new();
    for c in 0..k {
        if c == 1 && k == 2 {
            let anti = dirs[0].iter().map(|x| -x).collect();
            dirs.push(anti);
            continue;
        }
        loop {
            let pattern: Vec<bool> = (0..dim).map(|_| stream.gen()).collect();
            if seen.insert(pattern.clone()) {
                dirs.push(pattern.iter().map(|&b| if b { scale } else { -scale }).collect());
                break;
            }
        }
    }
    dirs
}

/// Flips the binary label of exactly `round(fraction * n_train)` randomly
/// selected training examples, marking them `flipped`. Validation and test
/// splits are untouched.
pub fn flip_labels(ds: &LabeledDataset, fraction: f64, seed: u64) -> Result<LabeledDataset> {
    if ds.n_classes != 2 || ds.examples.iter().any(|e| e.label > 1) {
        return Err(TrainerError::NotBinary);
    }
    let train = ds.indices_of(DataSplit::Train);
    let k = (fraction * train.len() as f64).round() as usize;
    let k = k.min(train.len());
    let mut stream = rng::stream(seed, "flip", 0);
    let mut chosen = rand::seq::index::sample(&mut stream, train.len(), k).into_vec();
    chosen.sort_unstable();
    let mut out = ds.clone();
    for c in chosen {
        let e = &mut out.examples[train[c]];
        e.label = 1 - e.label;
        e.flipped = true;
    }
    Ok(out)
}

// --- models ---

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Single-logit sigmoid cross-entropy (binary tasks).
    SigmoidBce,
    /// Softmax cross-entropy over `n_classes` logits.
    SoftmaxCe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub n_classes: usize,
}

impl ModelSpec {
    pub fn logistic(feature_dim: usize, n_classes: usize) -> Self {
        Self { feature_dim, hidden: vec![], n_classes }
    }

    pub fn mlp(feature_dim: usize, hidden: usize, n_classes: usize) -> Self {
        Self { feature_dim, hidden: vec![hidden], n_classes }
    }

    fn out_dim(&self) -> usize {
        if self.n_classes == 2 {
            1
        } else {
            self.n_classes
        }
    }

    fn loss(&self) -> LossKind {
        if self.n_classes == 2 {
            LossKind::SigmoidBce
        } else {
            LossKind::SoftmaxCe
        }
    }
}

/// Linear layer with bias folded in: `in_dim` counts the constant-1 input.
/// Weights are input-major, `w[i * out_dim + j]`, matching the flattened
/// gradient layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub layers: Vec<LinearLayer>,
    pub loss: LossKind,
}

impl ModelState {
    /// Fresh parameters: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per layer
    /// from seed-derived streams.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut layers = Vec::new();
        let mut in_features = spec.feature_dim;
        for (l, &h) in spec.hidden.iter().enumerate() {
            layers.push(LinearLayer::random(in_features + 1, h, Activation::Relu, seed, l as u64));
            in_features = h;
        }
        let l = spec.hidden.len() as u64;
        layers.push(LinearLayer::random(in_features + 1, spec.out_dim(), Activation::None, seed, l));
        ModelState { layers, loss: spec.loss() }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| LayerSpec::linear(l, format!("layer{l}"), layer.in_dim, layer.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.forward(x).logits;
        match self.loss {
            LossKind::SigmoidBce => (logits[0] > 0.0) as usize,
            LossKind::SoftmaxCe => logits
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0),
        }
    }

    fn forward(&self, x: &[f64]) -> ForwardTrace {
        let mut aug_inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let mut a = h;
            a.push(1.0);
            let mut z = vec![0.0_f64; layer.out_dim];
            for (i, &ai) in a.iter().enumerate() {
                if ai != 0.0 {
                    let wrow = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    for (zj, &w) in z.iter_mut().zip(wrow) {
                        *zj += ai * w;
                    }
                }
            }
            aug_inputs.push(a);
            h = match layer.activation {
                Activation::None => z.clone(),
                Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            };
            preacts.push(z);
        }
        ForwardTrace { logits: h, aug_inputs, preacts }
    }

    /// Cross-entropy loss of one example.
    pub fn example_loss(&self, x: &[f64], label: usize) -> f64 {
        let logits = self.forward(x).logits;
        match self.loss {
            LossKind::SigmoidBce => sigmoid_ce(logits[0], label),
            LossKind::SoftmaxCe => softmax_ce(&logits, label).0,
        }
    }

    /// Per-example loss gradient, flattened over all layers, plus the
    /// `(h, delta)` pair of every (linear) layer. The gradient block is
    /// computed as the literal products `h_i * delta_j`, so the capture
    /// identity is exact.
    pub fn example_gradient(&self, x: &[f64], label: usize) -> ExampleGradient {
        let trace = self.forward(x);
        let loss;
        let mut delta = match self.loss {
            LossKind::SigmoidBce => {
                loss = sigmoid_ce(trace.logits[0], label);
                vec![sigmoid(trace.logits[0]) - label as f64]
            }
            LossKind::SoftmaxCe => {
                let (l, probs) = softmax_ce(&trace.logits, label);
                loss = l;
                let mut d = probs;
                d[label] -= 1.0;
                d
            }
        };
        let mut blocks: Vec<Vec<f64>> = vec![Vec::new(); self.layers.len()];
        let mut pairs: Vec<(Vec<f64>, Vec<f64>)> =
            vec![(Vec::new(), Vec::new()); self.layers.len()];
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let a = &trace.aug_inputs[l];
            let mut block = Vec::with_capacity(layer.in_dim * layer.out_dim);
            for &ai in a.iter() {
                for &dj in delta.iter() {
                    block.push(ai * dj);
                }
            }
            blocks[l] = block;
            pairs[l] = (a.clone(), delta.clone());
            if l > 0 {
                // d loss / d h_{l-1}: drop the bias input row
                let mut dh = vec![0.0_f64; layer.in_dim - 1];
                for (i, d) in dh.iter_mut().enumerate() {
                    let wrow = &layer.weights[i * layer.out_dim..(i + 1) * layer.out_dim];
                    *d = wrow.iter().zip(&delta).map(|(w, dj)| w * dj).sum();
                }
                let prev = &self.layers[l - 1];
                delta = match prev.activation {
                    Activation::None => dh,
                    Activation::Relu => dh
                        .iter()
                        .zip(&trace.preacts[l - 1])
                        .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
                        .collect(),
                };
            }
        }
        let mut flat = Vec::with_capacity(self.param_count());
        for b in &blocks {
            flat.extend_from_slice(b);
        }
        ExampleGradient { loss, gradient: flat, pairs }
    }
}

struct ForwardTrace {
    logits: Vec<f64>,
    aug_inputs: Vec<Vec<f64>>,
    preacts: Vec<Vec<f64>>,
}

pub struct ExampleGradient {
    pub loss: f64,
    pub gradient: Vec<f64>,
    /// `(h, delta)` per layer, input including the bias constant.
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl LinearLayer {
    fn random(in_dim: usize, out_dim: usize, activation: Activation, seed: u64, layer: u64) -> Self {
        let mut stream = rng::stream(seed, "init", layer);
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| stream.gen_range(-bound..bound)).collect();
        Self { in_dim, out_dim, weights, activation }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_ce(z: f64, label: usize) -> f64 {
    // max(z, 0) - z*y + ln(1 + exp(-|z|))
    z.max(0.0) - z * label as f64 + (-z.abs()).exp().ln_1p()
}

fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = m + sum.ln();
    let probs = exps.iter().map(|e| e / sum).collect();
    (lse - logits[label], probs)
}

// --- training ---

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub optimizer: Sgd,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            optimizer: Sgd { lr: 0.1, momentum: 0.0, weight_decay: 0.0 },
            epochs: 100,
            batch_size: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub accuracy: f64,
    pub mean_cross_entropy: f64,
    pub perplexity: f64,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub model: ModelState,
    pub loss_curve: Vec<f64>,
    pub metrics: TestMetrics,
    pub spec: ModelSpec,
    pub hyper: Hyper,
    pub n_train_used: usize,
}

/// Mean loss gradient over the given examples (flattened over layers).
pub fn batch_gradient(
    model: &ModelState,
    ds: &LabeledDataset,
    indices: &[usize],
) -> (f64, Vec<f64>) {
    let mut acc = vec![0.0_f64; model.param_count()];
    let mut loss = 0.0;
    let inv = 1.0 / indices.len() as f64;
    for &i in indices {
        let e = &ds.examples[i];
        let g = model.example_gradient(&e.x, e.label);
        loss += g.loss * inv;
        for (a, v) in acc.iter_mut().zip(&g.gradient) {
            *a += v * inv;
        }
    }
    (loss, acc)
}

/// Mini-batch SGD, single-threaded and deterministic per seed.
pub fn train(spec: &ModelSpec, ds: &LabeledDataset, hyper: &Hyper) -> Result<TrainRecord> {
    if spec.feature_dim != ds.feature_dim {
        return Err(TrainerError::ShapeMismatch(format!(
            "model expects {} features, dataset has {}",
            spec.feature_dim, ds.feature_dim
        )));
    }
    if spec.n_classes != ds.n_classes {
        return Err(TrainerError::ShapeMismatch(format!(
            "model expects {} classes, dataset has {}",
            spec.n_classes, ds.n_classes
        )));
    }
    let train_ix = ds.indices_of(DataSplit::Train);
    if train_ix.is_empty() {
        return Err(TrainerError::EmptyTrainSet);
    }
    let mut model = ModelState::init(spec, hyper.seed);
    let mut velocity = vec![0.0_f64; model.param_count()];
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    let batch = hyper.batch_size.max(1);
    for epoch in 0..hyper.epochs {
        let mut order = train_ix.clone();
        let mut shuffle_stream = rng::stream(hyper.seed, "shuffle", epoch as u64);
        order.shuffle(&mut shuffle_stream);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let (loss, grad) = batch_gradient(&model, ds, chunk);
            if !loss.is_finite() {
                return Err(TrainerError::DivergedLoss { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            let sgd = &hyper.optimizer;
            let mut offset = 0usize;
            for layer in &mut model.layers {
                for w in &mut layer.weights {
                    let g = grad[offset] + sgd.weight_decay * *w;
                    velocity[offset] = sgd.momentum * velocity[offset] + g;
                    *w -= sgd.lr * velocity[offset];
                    offset += 1;
                }
            }
        }
        loss_curve.push(epoch_loss / train_ix.len() as f64);
    }
    let metrics = evaluate(&model, ds, DataSplit::Test);
    Ok(TrainRecord {
        model,
        loss_curve,
        metrics,
        spec: spec.clone(),
        hyper: hyper.clone(),
        n_train_used: train_ix.len(),
    })
}

/// Accuracy and mean cross-entropy (with its exp as a perplexity analog)
/// over one split.
pub fn evaluate(model: &ModelState, ds: &LabeledDataset, split: DataSplit) -> TestMetrics {
    let ix = ds.indices_of(split);
    if ix.is_empty() {
        return TestMetrics { accuracy: 0.0, mean_cross_entropy: 0.0, perplexity: 1.0, n_test: 0 };
    }
    let mut correct = 0usize;
    let mut ce = 0.0;
    for &i in &ix {
        let e = &ds.examples[i];
        if model.predict(&e.x) == e.label {
            correct += 1;
        }
        ce += model.example_loss(&e.x, e.label);
    }
    let mean_ce = ce / ix.len() as f64;
    TestMetrics {
        accuracy: correct as f64 / ix.len() as f64,
        mean_cross_entropy: mean_ce,
        perplexity: mean_ce.exp(),
        n_test: ix.len(),
    }
}

/// Per-example gradients of the train and validation splits at the trained
/// parameters, as a [`GradientDataset`]; optionally captures `(h, delta)`
/// activation pairs for every linear layer.
pub fn per_example_gradients(
    model: &ModelState,
    ds: &LabeledDataset,
    capture_activations: bool,
) -> Result<(GradientDataset, Option<ActivationStore>)> {
    let rows: Vec<usize> = (0..ds.examples.len())
        .filter(|&i| ds.examples[i].split != DataSplit::Test)
        .collect();
    let computed: Vec<ExampleGradient> = rows
        .par_iter()
        .map(|&i| {
            let e = &ds.examples[i];
            model.example_gradient(&e.x, e.label)
        })
        .collect();
    let total = model.param_count();
    let mut grads = Vec::with_capacity(rows.len() * total);
    let mut pairs = Vec::with_capacity(rows.len());
    for g in computed {
        grads.extend(g.gradient);
        if capture_activations {
            pairs.push(g.pairs);
        }
    }
    let meta = rows
        .iter()
        .map(|&i| {
            let e = &ds.examples[i];
            ExampleMeta {
                example_id: e.example_id,
                label: e.label as i32,
                source: e.source.clone(),
                split: match e.split {
                    DataSplit::Train => Split::Train,
                    DataSplit::Val => Split::Val,
                    DataSplit::Test => unreachable!(),
                },
                flipped: e.flipped,
            }
        })
        .collect();
    let gds = GradientDataset::new(model.layer_specs(), meta, grads)?;
    let store = capture_activations.then(|| ActivationStore {
        linear_layers: (0..model.layers.len()).collect(),
        pairs,
    });
    Ok((gds, store))
}

/// Trains from a fresh initialization on the training examples whose ids are
/// not excluded; same seed policy as [`train`].
pub fn retrain_without(
    ds: &LabeledDataset,
    exclude_ids: &BTreeSet<u64>,
    spec: &ModelSpec,
    hyper: &Hyper,
) -> Result<TrainRecord> {
    let filtered = LabeledDataset {
        feature_dim: ds.feature_dim,
        n_classes: ds.n_classes,
        examples: ds
            .examples
            .iter()
            .filter(|e| e.split != DataSplit::Train || !exclude_ids.contains(&e.example_id))
            .cloned()
            .collect(),
    };
    if filtered.indices_of(DataSplit::Train).is_empty() {
        return Err(TrainerError::EmptyTrainSet);
    }
    train(spec, &filtered, hyper)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_blobs(seed: u64) -> LabeledDataset {
        gen_task(&SyntheticTask::blobs(2, 5, 10.0, 60, 10, 10, seed)).unwrap()
    }

    /// Perceptron oracle: returns true when the data is linearly separable
    /// (reaches zero training mistakes).
    fn perceptron_separates(ds: &LabeledDataset) -> bool {
        let train = ds.indices_of(DataSplit::Train);
        let d = ds.feature_dim + 1;
        let mut w = vec![0.0_f64; d];
        for _ in 0..1000 {
            let mut mistakes = 0;
            for &i in &train {
                let e = &ds.examples[i];
                let y = if e.label == 1 { 1.0 } else { -1.0 };
                let mut z = w[d - 1];
                for (j, &x) in e.x.iter().enumerate() {
                    z += w[j] * x;
                }
                if y * z <= 0.0 {
                    mistakes += 1;
                    for (j, &x) in e.x.iter().enumerate() {
                        w[j] += y * x;
                    }
                    w[d - 1] += y;
                }
            }
            if mistakes == 0 {
                return true;
            }
        }
        false
    }

    #[test]
    fn gen_task_separable_blobs() {
        let ds = gen_task(&SyntheticTask::blobs(2, 5, 10.0, 100, 1, 1, 3)).unwrap();
        assert!(perceptron_separates(&ds));
    }

    #[test]
    fn gen_task_single_train_example() {
        let ds = gen_task(&SyntheticTask::blobs(2, 4, 1.0, 1, 1, 1, 0)).unwrap();
        assert_eq!(ds.indices_of(DataSplit::Train).len(), 1);
    }

    #[test]
    fn gen_task_sources_partition() {
        let task = SyntheticTask::multi_source_orthogonal(6, 3, 4.0, 60, 12, 12, 1);
        let ds = gen_task(&task).unwrap();
        assert_eq!(ds.n_classes, 6);
        let mut seen = std::collections::BTreeMap::new();
        for e in &ds.examples {
            *seen.entry(e.source.clone()).or_insert(0usize) += 1;
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.values().sum::<usize>(), ds.examples.len());
        // balanced within rounding per split
        let train = ds.indices_of(DataSplit::Train);
        let mut counts = vec![0usize; 6];
        for &i in &train {
            counts[ds.examples[i].label] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn gen_task_deterministic() {
        let t = SyntheticTask::blobs(3, 6, 2.0, 20, 5, 5, 9);
        assert_eq!(gen_task(&t).unwrap(), gen_task(&t).unwrap());
    }

    #[test]
    fn flip_labels_counts() {
        let ds = small_blobs(5);
        let none = flip_labels(&ds, 0.0, 1).unwrap();
        assert!(none.examples.iter().all(|e| !e.flipped));
        assert_eq!(none, ds);

        let all = flip_labels(&ds, 1.0, 1).unwrap();
        for (a, b) in all.examples.iter().zip(&ds.examples) {
            if a.split == DataSplit::Train {
                assert_eq!(a.label, 1 - b.label);
                assert!(a.flipped);
            } else {
                assert_eq!(a.label, b.label);
                assert!(!a.flipped);
            }
        }

        let ds50 = gen_task(&SyntheticTask::blobs(2, 4, 5.0, 50, 2, 2, 8)).unwrap();
        let some = flip_labels(&ds50, 0.2, 3).unwrap();
        let flipped = some.examples.iter().filter(|e| e.flipped).count();
        assert_eq!(flipped, 10);
        assert_eq!(some, flip_labels(&ds50, 0.2, 3).unwrap());
    }

    #[test]
    fn flip_labels_rejects_multiclass() {
        let ds = gen_task(&SyntheticTask::blobs(3, 4, 2.0, 9, 3, 3, 0)).unwrap();
        assert!(matches!(flip_labels(&ds, 0.2, 0), Err(TrainerError::NotBinary)));
    }

    #[test]
    fn hand_derived_logistic_gradient() {
        // x = (1, 0), y = 1, all-zero weights: grad = (sigma(0) - 1)(x, 1)
        let mut model = ModelState::init(&ModelSpec::logistic(2, 2), 0);
        model.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let g = model.example_gradient(&[1.0, 0.0], 1);
        assert_eq!(g.gradient, vec![-0.5, 0.0, -0.5]);
    }

    #[test]
    fn zero_input_zero_weight_gradient() {
        let model = ModelState::init(&ModelSpec::logistic(3, 2), 4);
        let g = model.example_gradient(&[0.0, 0.0, 0.0], 0);
        // weight coordinates (all but the bias row) are zero
        for i in 0..3 {
            assert_eq!(g.gradient[i], 0.0);
        }
        assert!(g.gradient[3] != 0.0);
    }

    fn finite_difference_check(spec: &ModelSpec, seed: u64) {
        let mut stream = rng::stream(seed, "fd-test", 0);
        let model = ModelState::init(spec, seed);
        let x: Vec<f64> = (0..spec.feature_dim).map(|_| stream.gen_range(-1.0..1.0)).collect();
        let label = (stream.gen::<u32>() as usize) % spec.n_classes;
        let g = model.example_gradient(&x, label);
        let h = 1e-5;
        let mut offset = 0usize;
        for l in 0..model.layers.len() {
            for w in 0..model.layers[l].weights.len() {
                let mut plus = model.clone();
                plus.layers[l].weights[w] += h;
                let mut minus = model.clone();
                minus.layers[l].weights[w] -= h;
                let fd = (plus.example_loss(&x, label) - minus.example_loss(&x, label)) / (2.0 * h);
                let got = g.gradient[offset];
                assert!(
                    (fd - got).abs() <= 1e-5 * (1.0 + fd.abs().max(got.abs())),
                    "layer {l} weight {w}: fd {fd} vs backprop {got}"
                );
                offset += 1;
            }
        }
    }

    #[test]
    fn backprop_matches_finite_differences() {
        for seed in 0..20 {
            finite_difference_check(&ModelSpec::logistic(4, 2), seed);
            finite_difference_check(&ModelSpec::mlp(4, 6, 3), 100 + seed);
        }
    }

    #[test]
    fn capture_identity_exact() {
        let ds = small_blobs(6);
        let record =
            train(&ModelSpec::mlp(5, 4, 2), &ds, &Hyper { epochs: 5, ..Hyper::default() }).unwrap();
        let (gds, store) = per_example_gradients(&record.model, &ds, true).unwrap();
        let store = store.unwrap();
        for (row, pairs) in (0..gds.n_examples()).zip(&store.pairs) {
            for (l, (h, delta)) in pairs.iter().enumerate() {
                let block = gds.layer_block(row, l);
                let mut k = 0usize;
                for &hi in h {
                    for &dj in delta {
                        assert!((block[k] - hi * dj).abs() <= 1e-10);
                        k += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn lr_zero_keeps_parameters() {
        let ds = small_blobs(7);
        let spec = ModelSpec::logistic(5, 2);
        let hyper = Hyper {
            optimizer: Sgd { lr: 0.0, momentum: 0.9, weight_decay: 0.1 },
            epochs: 3,
            batch_size: 16,
            seed: 11,
        };
        let record = train(&spec, &ds, &hyper).unwrap();
        assert_eq!(record.model, ModelState::init(&spec, 11));
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let ds = small_blobs(8);
        let hyper = Hyper { epochs: 50, seed: 2, ..Hyper::default() };
        let record = train(&ModelSpec::logistic(5, 2), &ds, &hyper).unwrap();
        let train_metrics = evaluate(&record.model, &ds, DataSplit::Train);
        assert!(train_metrics.accuracy >= 0.99, "accuracy {}", train_metrics.accuracy);
        assert!(record.loss_curve.last().unwrap() < &record.loss_curve[0]);
    }

    #[test]
    fn absurd_lr_diverges() {
        // lr 1e6 with unit weight decay multiplies weights by ~1e6 every
        // step until the logits overflow
        let ds = small_blobs(9);
        let hyper = Hyper {
            optimizer: Sgd { lr: 1e6, momentum: 0.0, weight_decay: 1.0 },
            epochs: 30,
            batch_size: 16,
            seed: 3,
        };
        let r = train(&ModelSpec::logistic(5, 2), &ds, &hyper);
        assert!(matches!(r, Err(TrainerError::DivergedLoss { .. })));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_blobs(10);
        let hyper = Hyper { epochs: 10, seed: 5, ..Hyper::default() };
        let a = train(&ModelSpec::mlp(5, 4, 2), &ds, &hyper).unwrap();
        let b = train(&ModelSpec::mlp(5, 4, 2), &ds, &hyper).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_per_example_gradient_equals_batch_gradient() {
        let ds = small_blobs(12);
        let record =
            train(&ModelSpec::logistic(5, 2), &ds, &Hyper { epochs: 5, ..Hyper::default() })
                .unwrap();
        let (gds, _) = per_example_gradients(&record.model, &ds, false).unwrap();
        let train_rows = gds.train_indices();
        let mut mean = vec![0.0_f64; gds.total_dim()];
        for &i in &train_rows {
            for (m, g) in mean.iter_mut().zip(gds.row(i)) {
                *m += g / train_rows.len() as f64;
            }
        }
        let train_ix = ds.indices_of(DataSplit::Train);
        let (_, batch) = batch_gradient(&record.model, &ds, &train_ix);
        for (a, b) in mean.iter().zip(&batch) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn retrain_without_empty_exclusion_matches_train() {
        let ds = small_blobs(13);
        let spec = ModelSpec::logistic(5, 2);
        let hyper = Hyper { epochs: 8, seed: 4, ..Hyper::default() };
        let base = train(&spec, &ds, &hyper).unwrap();
        let again = retrain_without(&ds, &BTreeSet::new(), &spec, &hyper).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn retrain_without_everything_errors() {
        let ds = small_blobs(14);
        let all: BTreeSet<u64> = ds
            .examples
            .iter()
            .filter(|e| e.split == DataSplit::Train)
            .map(|e| e.example_id)
            .collect();
        let r = retrain_without(&ds, &all, &ModelSpec::logistic(5, 2), &Hyper::default());
        assert!(matches!(r, Err(TrainerError::EmptyTrainSet)));
    }
}
