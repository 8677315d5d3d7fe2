//! Semi-supervised training with a knowledge penalty.
//!
//! The objective on a minibatch `B` is
//!
//! ```text
//! mean_{x in B} suploss(f(x), y) + lambda * mean_{x in B} sum_h mu_h (1 - t_h(f(x)))
//! ```
//!
//! where `suploss` is binary cross-entropy over the known label entries only.
//! Optimization is minibatch Adam; the returned model is the snapshot with the
//! best validation macro-F1.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use crate::compiler::ConstraintSet;
use crate::error::{Error, Result};
use crate::harness::metrics::macro_f1;
use crate::knowledge::WeightSet;
use crate::net::{Gradients, Model};

/// Candidate constraint weights for model selection.
pub const LAMBDA_GRID: [f64; 8] = [1e-2, 1e-1, 1.0, 3.0, 5.0, 8.0, 10.0, 1e2];

/// Clamp applied to outputs before taking logs in the cross-entropy.
pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Known0,
    Known1,
    Unknown,
}

impl Label {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Label::Known1
        } else {
            Label::Known0
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Label::Known0 => Some(false),
            Label::Known1 => Some(true),
            Label::Unknown => None,
        }
    }

    fn cell(self) -> &'static str {
        match self {
            Label::Known0 => "0",
            Label::Known1 => "1",
            Label::Unknown => "?",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    class_names: Vec<String>,
    features: Vec<Vec<f64>>,
    labels: Vec<Vec<Label>>,
    split: Split,
}

impl Dataset {
    pub fn new(
        class_names: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<Vec<Label>>,
        split: Split,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} feature rows but {} label rows",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        for (i, (x, y)) in features.iter().zip(&labels).enumerate() {
            if x.len() != dim {
                return Err(Error::InvalidDataset(format!("row {i} has {} features, expected {dim}", x.len())));
            }
            if y.len() != class_names.len() {
                return Err(Error::InvalidDataset(format!(
                    "row {i} has {} labels, expected {}",
                    y.len(),
                    class_names.len()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("row {i} has a non-finite feature")));
            }
            if split != Split::Train && y.iter().all(|l| !l.is_known()) {
                return Err(Error::InvalidDataset(format!(
                    "row {i} is fully unlabeled in a {split:?} split"
                )));
            }
        }
        Ok(Self {
            class_names,
            features,
            labels,
            split,
        })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[Vec<Label>] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn with_split(&self, split: Split) -> Result<Self> {
        Self::new(self.class_names.clone(), self.features.clone(), self.labels.clone(), split)
    }

    /// Same labels, new feature rows (used for adversarial copies).
    pub fn with_features(&self, features: Vec<Vec<f64>>) -> Result<Self> {
        if features.len() != self.len() {
            return Err(Error::Misaligned(format!("{} rows for {} samples", features.len(), self.len())));
        }
        Self::new(self.class_names.clone(), features, self.labels.clone(), self.split)
    }

    /// Number of samples with at least one known label.
    pub fn num_labeled(&self) -> usize {
        self.labels.iter().filter(|y| y.iter().any(|l| l.is_known())).count()
    }

    /// CSV with header `x0..x{d-1}` followed by the class names; label cells are `0`, `1` or `?`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (0..self.input_dim())
            .map(|i| format!("x{i}"))
            .chain(self.class_names.iter().cloned())
            .collect();
        w.write_record(&header)?;
        for (x, y) in self.features.iter().zip(&self.labels) {
            let row: Vec<String> = x
                .iter()
                .map(|v| v.to_string())
                .chain(y.iter().map(|l| l.cell().to_string()))
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, split: Split) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = r.headers()?.clone();
        let dim = header
            .iter()
            .take_while(|h| h.strip_prefix('x').is_some_and(|n| n.parse::<usize>().is_ok()))
            .count();
        for (i, h) in header.iter().take(dim).enumerate() {
            if h != format!("x{i}") {
                return Err(Error::InvalidDataset(format!("feature column {i} is named {h:?}")));
            }
        }
        let class_names: Vec<String> = header.iter().skip(dim).map(str::to_string).collect();
        if dim == 0 || class_names.is_empty() {
            return Err(Error::InvalidDataset("need x0.. feature columns and class columns".into()));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let x = record
                .iter()
                .take(dim)
                .map(|c| {
                    c.parse::<f64>()
                        .map_err(|_| Error::InvalidDataset(format!("row {row}: bad feature {c:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let y = record
                .iter()
                .skip(dim)
                .map(|c| match c {
                    "0" => Ok(Label::Known0),
                    "1" => Ok(Label::Known1),
                    "?" => Ok(Label::Unknown),
                    other => Err(Error::InvalidDataset(format!("row {row}: bad label {other:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            features.push(x);
            labels.push(y);
        }
        Self::new(class_names, features, labels, split)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>, split: Split) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, split)
    }
}

/// Hides labels: `100 - percent_labeled`% of the samples become fully unknown,
/// and in every remaining sample `percent_partial`% of the known positives and
/// of the known negatives (each rounded down) become unknown.
pub fn make_semisupervised(
    dataset: &Dataset,
    percent_labeled: f64,
    percent_partial: f64,
    seed: u64,
) -> Result<Dataset> {
    for p in [percent_labeled, percent_partial] {
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::BadPercent(p));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dataset.len();
    let n_labeled = ((n as f64) * percent_labeled / 100.0).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut keep = vec![false; n];
    for &i in &order[..n_labeled.min(n)] {
        keep[i] = true;
    }

    let mut labels = dataset.labels.clone();
    for (i, row) in labels.iter_mut().enumerate() {
        if !keep[i] {
            row.iter_mut().for_each(|l| *l = Label::Unknown);
            continue;
        }
        for polarity in [Label::Known1, Label::Known0] {
            let mut idx: Vec<usize> = (0..row.len()).filter(|&k| row[k] == polarity).collect();
            let drop = ((idx.len() as f64) * percent_partial / 100.0).floor() as usize;
            idx.shuffle(&mut rng);
            for &k in &idx[..drop] {
                row[k] = Label::Unknown;
            }
        }
    }
    Dataset::new(
        dataset.class_names.clone(),
        dataset.features.clone(),
        labels,
        dataset.split,
    )
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Mean binary cross-entropy over the known entries; 0 when none is known.
pub fn supervised_loss(outputs: &[f64], labels: &[Label]) -> Result<f64> {
    check_len(outputs.len(), labels.len())?;
    let mut sum = 0.0;
    let mut known = 0usize;
    for (&f, &l) in outputs.iter().zip(labels) {
        let Some(y) = l.as_bool() else { continue };
        let f = f.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        sum -= if y { f.ln() } else { (1.0 - f).ln() };
        known += 1;
    }
    Ok(if known == 0 { 0.0 } else { sum / known as f64 })
}

/// Gradient of [`supervised_loss`] with respect to the logits.
fn supervised_grad_logits(outputs: &[f64], labels: &[Label]) -> Vec<f64> {
    let known = labels.iter().filter(|l| l.is_known()).count();
    outputs
        .iter()
        .zip(labels)
        .map(|(&f, &l)| match l.as_bool() {
            // Zero slope where the clamp is active.
            Some(_) if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&f) => 0.0,
            Some(y) => (f - if y { 1.0 } else { 0.0 }) / known as f64,
            None => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Apply the knowledge penalty to fully labeled samples too.
    pub constrain_labeled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            constrain_labeled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::BadConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::BadConfig("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    pub total: f64,
    pub supervised: f64,
    /// Unscaled constraint loss (training weights) averaged over the constrained samples.
    pub constraint: f64,
    pub grads: Gradients,
}

/// Objective and weight gradients on the samples `indices` of `data`.
pub fn total_batch_loss(
    model: &Model,
    data: &Dataset,
    indices: &[usize],
    constraints: &ConstraintSet,
    config: &TrainConfig,
) -> Result<BatchLoss> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_len(constraints.num_classes(), model.num_classes())?;
    check_len(model.num_classes(), data.num_classes())?;

    let constrained = |i: usize| {
        config.constrain_labeled || !data.labels[i].iter().all(|l| l.is_known())
    };
    let n = indices.len() as f64;
    let n_constrained = indices.iter().filter(|&&i| constrained(i)).count();

    let mut grads = Gradients::zeros_like(model);
    let mut supervised = 0.0;
    let mut constraint = 0.0;
    for &i in indices {
        let trace = model.forward(&data.features[i])?;
        let labels = &data.labels[i];
        supervised += supervised_loss(&trace.outputs, labels)?;
        let mut upstream: Vec<f64> = supervised_grad_logits(&trace.outputs, labels)
            .into_iter()
            .map(|g| g / n)
            .collect();

        if constrained(i) {
            let (loss, g_out) = constraints.loss_and_grad(WeightSet::Train, &trace.outputs)?;
            constraint += loss;
            if config.lambda != 0.0 {
                let scale = config.lambda / n_constrained as f64;
                for ((u, g), f) in upstream.iter_mut().zip(&g_out).zip(&trace.outputs) {
                    *u += scale * g * f * (1.0 - f);
                }
            }
        }
        model.accumulate_grad_weights(&trace, &upstream, &mut grads)?;
    }
    let supervised = supervised / n;
    let constraint = if n_constrained == 0 {
        0.0
    } else {
        constraint / n_constrained as f64
    };
    Ok(BatchLoss {
        total: supervised + config.lambda * constraint,
        supervised,
        constraint,
        grads,
    })
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(model: &Model) -> Self {
        let n = model.num_parameters();
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut Model, grads: &Gradients, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let mut k = 0;
        for (layer, g) in model.layers_mut().iter_mut().zip(&grads.layers) {
            let params = layer.weights.iter_mut().chain(layer.biases.iter_mut());
            let gs = g.weights.iter().chain(&g.biases);
            for (p, &gi) in params.zip(gs) {
                self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * gi;
                self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = self.m[k] / bc1;
                let v_hat = self.v[k] / bc2;
                *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                k += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub suploss: f64,
    pub closs: f64,
    pub val_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned snapshot; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        let e = self.best_epoch?;
        self.records.iter().find(|r| r.epoch == e)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean supervised loss and mean constraint loss (training weights) over a dataset.
pub fn dataset_losses(model: &Model, data: &Dataset, constraints: &ConstraintSet) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut sup = 0.0;
    let mut closs = 0.0;
    for (x, y) in data.features.iter().zip(&data.labels) {
        let outputs = model.predict(x)?;
        sup += supervised_loss(&outputs, y)?;
        closs += constraints.sample_loss(WeightSet::Train, &outputs)?;
    }
    let n = data.len() as f64;
    Ok((sup / n, closs / n))
}

/// Minibatch Adam; returns the snapshot with the highest validation macro-F1
/// (earliest epoch on ties).
pub fn train(
    model: &Model,
    train_set: &Dataset,
    val_set: &Dataset,
    constraints: &ConstraintSet,
    config: &TrainConfig,
) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if train_set.split() != Split::Train {
        return Err(Error::InvalidDataset("training data must be tagged Train".into()));
    }
    if val_set.split() != Split::Validation {
        return Err(Error::InvalidDataset("validation data must be tagged Validation".into()));
    }
    if train_set.is_empty() {
        return Err(Error::EmptySet);
    }

    let mut current = model.clone();
    let mut best = model.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut history = TrainHistory::default();
    let mut adam = Adam::new(&current);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let loss = total_batch_loss(&current, train_set, batch, constraints, config)?;
            adam.step(&mut current, &loss.grads, config);
        }
        let (suploss, closs) = dataset_losses(&current, train_set, constraints)?;
        let val_f1 = macro_f1(&current, val_set, 0.5)?;
        debug!(epoch, suploss, closs, val_f1, "epoch");
        history.records.push(EpochRecord {
            epoch,
            suploss,
            closs,
            val_f1,
        });
        if val_f1 > best_f1 {
            best_f1 = val_f1;
            best = current.clone();
            history.best_epoch = Some(epoch);
        }
    }
    Ok((best, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaCandidate {
    pub lambda: f64,
    pub val_f1: f64,
    /// Validation constraint loss with test weights.
    pub val_closs: f64,
}

#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub model: Model,
    pub history: TrainHistory,
    pub candidates: Vec<LambdaCandidate>,
}

/// Trains once per grid value from the same initial model and keeps the one
/// with the best validation macro-F1; ties go to the lower validation
/// constraint loss, then to the smaller lambda.
pub fn select_lambda(
    model: &Model,
    train_set: &Dataset,
    val_set: &Dataset,
    constraints: &ConstraintSet,
    config: &TrainConfig,
    grid: &[f64],
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::BadConfig("empty lambda grid".into()));
    }
    let mut best: Option<(LambdaCandidate, Model, TrainHistory)> = None;
    let mut candidates = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let cfg = TrainConfig { lambda, ..*config };
        let (trained, history) = train(model, train_set, val_set, constraints, &cfg)?;
        let val_f1 = macro_f1(&trained, val_set, 0.5)?;
        let outputs = val_set
            .features()
            .iter()
            .map(|x| trained.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let val_closs = constraints.constraint_loss(WeightSet::Test, &outputs)?.total;
        let cand = LambdaCandidate {
            lambda,
            val_f1,
            val_closs,
        };
        debug!(?cand, "lambda candidate");
        let better = match &best {
            None => true,
            Some((b, _, _)) => {
                cand.val_f1 > b.val_f1
                    || (cand.val_f1 == b.val_f1 && cand.val_closs < b.val_closs)
            }
        };
        candidates.push(cand.clone());
        if better {
            best = Some((cand, trained, history));
        }
    }
    let (cand, model, history) = best.expect("non-empty grid");
    Ok(LambdaSelection {
        lambda: cand.lambda,
        model,
        history,
        candidates,
    })
}
