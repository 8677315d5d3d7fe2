//! Toy world, evaluation with rejection, epsilon sweeps and experiment configs.

pub mod metrics;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{mka, transfer_attack, AttackConfig, AttackResult, ClassPartition};
use crate::compiler::ConstraintSet;
use crate::defense::{knowledge_measure, PairingConfig, RejectionRule};
use crate::error::{Error, Result};
use crate::knowledge::{
    bind_predicates, parse_knowledge_file, BoundKnowledge, MainClasses, TOY_CLASSES, TOY_KNOWLEDGE,
};
use crate::net::{Activation, Model};
use crate::training::{make_semisupervised, Dataset, Label, Split, TrainConfig};
use metrics::{argmax_over, macro_f1_from_predictions, threshold_outputs, true_main_class};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyComponent {
    pub name: String,
    pub mean: Vec<f64>,
    /// Row-major covariance, `mean.len()` squared entries.
    pub cov: Vec<f64>,
    pub count: usize,
    /// Classes that are positive for samples of this component; every other class is negative.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub class_names: Vec<String>,
    pub components: Vec<ToyComponent>,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    /// Share of training samples that keep any label, in percent.
    pub percent_labeled: f64,
    /// Share of known entries hidden in each labeled training sample, in percent.
    pub percent_partial: f64,
    pub seed: u64,
}

fn component(name: &str, mean: [f64; 2], sd: f64, count: usize, labels: &[&str]) -> ToyComponent {
    ToyComponent {
        name: name.into(),
        mean: mean.to_vec(),
        cov: vec![sd * sd, 0.0, 0.0, sd * sd],
        count,
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for ToyConfig {
    /// Two families in the unit square: animals on the left with a cat
    /// sub-cluster, vehicles on the right with a motorbike sub-cluster.
    fn default() -> Self {
        Self {
            class_names: TOY_CLASSES.iter().map(|s| s.to_string()).collect(),
            components: vec![
                component("cat", [0.3, 0.3], 0.06, 400, &["CAT", "ANIMAL"]),
                component("animal", [0.3, 0.7], 0.06, 400, &["ANIMAL"]),
                component("motorbike", [0.7, 0.3], 0.06, 400, &["MOTORBIKE", "VEHICLE"]),
                component("vehicle", [0.7, 0.7], 0.06, 400, &["VEHICLE"]),
            ],
            validation_fraction: 0.25,
            test_fraction: 0.25,
            percent_labeled: 100.0,
            percent_partial: 0.0,
            seed: 0,
        }
    }
}

/// Lower Cholesky factor of a row-major `d x d` matrix; `None` unless positive-definite.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + j] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.components.is_empty() {
            return bad("toy needs at least one component".into());
        }
        let d = self.components[0].mean.len();
        for c in &self.components {
            if c.count == 0 {
                return bad(format!("component {} has count 0", c.name));
            }
            if c.mean.len() != d || c.cov.len() != d * d {
                return bad(format!("component {} has inconsistent dimensions", c.name));
            }
            let symmetric = (0..d).all(|i| (0..d).all(|j| c.cov[i * d + j] == c.cov[j * d + i]));
            if !symmetric || cholesky(&c.cov, d).is_none() {
                return bad(format!("component {} covariance is not positive-definite", c.name));
            }
            if let Some(l) = c.labels.iter().find(|l| !self.class_names.contains(l)) {
                return bad(format!("component {} uses unknown class {l}", c.name));
            }
        }
        let (v, t) = (self.validation_fraction, self.test_fraction);
        if !(v > 0.0 && t > 0.0 && v + t < 1.0) {
            return bad(format!("split fractions {v} and {t} leave no training data"));
        }
        Ok(())
    }
}

/// Seeded draw of train/validation/test splits; only the training split is made semi-supervised.
pub fn gen_toy(config: &ToyConfig) -> Result<(Dataset, Dataset, Dataset)> {
    config.validate()?;
    let d = config.components[0].mean.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rows: Vec<(Vec<f64>, Vec<Label>)> = Vec::new();
    for c in &config.components {
        let l = cholesky(&c.cov, d).expect("validated");
        let y: Vec<Label> = config
            .class_names
            .iter()
            .map(|n| Label::from_bool(c.labels.contains(n)))
            .collect();
        for _ in 0..c.count {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x = (0..d)
                .map(|i| c.mean[i] + (0..=i).map(|k| l[i * d + k] * z[k]).sum::<f64>())
                .collect();
            rows.push((x, y.clone()));
        }
    }
    rows.shuffle(&mut rng);
    let n = rows.len();
    let n_val = ((n as f64) * config.validation_fraction).round() as usize;
    let n_test = ((n as f64) * config.test_fraction).round() as usize;
    let n_train = n - n_val - n_test;
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::BadConfig(format!("{n} samples cannot fill every split")));
    }
    let make = |part: &[(Vec<f64>, Vec<Label>)], split| {
        let (xs, ys) = part.iter().cloned().unzip();
        Dataset::new(config.class_names.clone(), xs, ys, split)
    };
    let train = make(&rows[..n_train], Split::Train)?;
    let val = make(&rows[n_train..n_train + n_val], Split::Validation)?;
    let test = make(&rows[n_train + n_val..], Split::Test)?;
    let train = make_semisupervised(
        &train,
        config.percent_labeled,
        config.percent_partial,
        config.seed.wrapping_add(1),
    )?;
    Ok((train, val, test))
}

/// Toy knowledge bound to the toy classes with ANIMAL and VEHICLE as main classes.
pub fn toy_constraints() -> Result<ConstraintSet> {
    let kb = parse_knowledge_file(TOY_KNOWLEDGE)?;
    let main = MainClasses::Named(vec!["ANIMAL".into(), "VEHICLE".into()]);
    ConstraintSet::new(bind_predicates(&kb, &TOY_CLASSES, &main)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityMetric {
    #[default]
    AccMain,
    MacroF1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epsilon: f64,
    pub macro_f1: f64,
    pub macro_f1_rej: f64,
    pub acc_main: Option<f64>,
    pub acc_main_rej: Option<f64>,
    pub reject_rate_clean: f64,
    pub reject_rate_adv: f64,
    pub mean_measure_clean: f64,
    pub mean_measure_adv: f64,
    pub pairing: Option<f64>,
}

impl EvalReport {
    /// `(without rejection, with rejection)` for the chosen metric.
    pub fn quality(&self, metric: QualityMetric) -> Option<(f64, f64)> {
        match metric {
            QualityMetric::AccMain => Some((self.acc_main?, self.acc_main_rej?)),
            QualityMetric::MacroF1 => Some((self.macro_f1, self.macro_f1_rej)),
        }
    }
}

/// Scores a model on clean and row-aligned perturbed data.
///
/// With `epsilon > 0` a rejected sample counts as correct (the attack was
/// caught); with `epsilon == 0` a rejected sample counts as wrong.
pub fn classification_quality(
    model: &Model,
    rule: &RejectionRule,
    constraints: &ConstraintSet,
    clean: &Dataset,
    adversarial: &Dataset,
    epsilon: f64,
) -> Result<EvalReport> {
    if clean.len() != adversarial.len() || clean.labels() != adversarial.labels() {
        return Err(Error::Misaligned("adversarial set is not row-aligned with the clean set".into()));
    }
    if clean.is_empty() {
        return Err(Error::EmptySet);
    }
    let n = clean.len() as f64;
    let main = constraints.bound().main_classes();
    let eval_outputs = |data: &Dataset| -> Result<Vec<(Vec<f64>, f64)>> {
        data.features()
            .par_iter()
            .map(|x| {
                let f = model.predict(x)?;
                let m = constraints.sample_loss(crate::knowledge::WeightSet::Test, &f)?;
                Ok((f, m))
            })
            .collect()
    };
    let clean_out = eval_outputs(clean)?;
    let adv_out = eval_outputs(adversarial)?;
    let rejected: Vec<bool> = adv_out.iter().map(|(_, m)| rule.rejects(*m)).collect();

    let plain: Vec<Vec<bool>> = adv_out.iter().map(|(f, _)| threshold_outputs(f, 0.5)).collect();
    let with_rej: Vec<Vec<bool>> = plain
        .iter()
        .zip(&rejected)
        .zip(adversarial.labels())
        .map(|((p, &r), y)| match (r, epsilon > 0.0) {
            (false, _) => p.clone(),
            (true, true) => y.iter().map(|l| *l == Label::Known1).collect(),
            (true, false) => vec![false; p.len()],
        })
        .collect();
    let macro_f1 = macro_f1_from_predictions(&plain, adversarial.labels())?;
    let macro_f1_rej = macro_f1_from_predictions(&with_rej, adversarial.labels())?;

    let single_label = !main.is_empty()
        && adversarial.labels().iter().all(|y| true_main_class(y, main).is_ok());
    let (acc_main, acc_main_rej) = if single_label {
        let mut hits = 0usize;
        let mut hits_rej = 0usize;
        for (((f, _), y), &r) in adv_out.iter().zip(adversarial.labels()).zip(&rejected) {
            let ok = argmax_over(f, main) == Some(true_main_class(y, main)?);
            hits += ok as usize;
            hits_rej += if r { (epsilon > 0.0) as usize } else { ok as usize };
        }
        (Some(hits as f64 / n), Some(hits_rej as f64 / n))
    } else {
        (None, None)
    };

    let reject_rate_clean = clean_out.iter().filter(|(_, m)| rule.rejects(*m)).count() as f64 / n;
    Ok(EvalReport {
        epsilon,
        macro_f1,
        macro_f1_rej,
        acc_main,
        acc_main_rej,
        reject_rate_clean,
        reject_rate_adv: rejected.iter().filter(|&&r| r).count() as f64 / n,
        mean_measure_clean: clean_out.iter().map(|(_, m)| m).sum::<f64>() / n,
        mean_measure_adv: adv_out.iter().map(|(_, m)| m).sum::<f64>() / n,
        pairing: None,
    })
}

/// Perturbed copy of a dataset plus the per-sample attack results (`None` where
/// the labels leave no valid positive/negative partition).
#[derive(Debug, Clone)]
pub struct AttackedSet {
    pub adversarial: Dataset,
    pub results: Vec<Option<AttackResult>>,
}

/// Attacks every sample of `data`; transfers from `surrogate` when given.
/// Sample `i` uses seed `config.seed + i`.
pub fn attack_dataset(
    target: &Model,
    surrogate: Option<&Model>,
    constraints: &ConstraintSet,
    data: &Dataset,
    config: &AttackConfig,
    rule: Option<&RejectionRule>,
) -> Result<AttackedSet> {
    config.validate()?;
    let results: Vec<Option<AttackResult>> = data
        .features()
        .par_iter()
        .zip(data.labels().par_iter())
        .enumerate()
        .map(|(i, (x, y))| {
            let Ok(partition) = ClassPartition::from_labels(y, config.restrict_to.as_deref()) else {
                return Ok(None);
            };
            let cfg = AttackConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            let r = match surrogate {
                Some(s) => transfer_attack(s, target, x, &partition, constraints, &cfg, rule)?,
                None => mka(target, x, &partition, constraints, &cfg, rule)?,
            };
            Ok(Some(r))
        })
        .collect::<Result<_>>()?;
    let features = results
        .iter()
        .zip(data.features())
        .map(|(r, x)| r.as_ref().map_or_else(|| x.clone(), |r| r.adversarial.clone()))
        .collect();
    Ok(AttackedSet {
        adversarial: data.with_features(features)?,
        results,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub epsilons: Vec<f64>,
    pub metric: QualityMetric,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            epsilons: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3],
            metric: QualityMetric::AccMain,
        }
    }
}

/// One report per epsilon; the zero row scores unattacked data.
pub fn sweep(
    target: &Model,
    surrogate: Option<&Model>,
    rule: &RejectionRule,
    constraints: &ConstraintSet,
    data: &Dataset,
    epsilons: &[f64],
    template: &AttackConfig,
) -> Result<Vec<EvalReport>> {
    if epsilons.first() != Some(&0.0) || epsilons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::BadConfig("epsilons must start at 0 and increase strictly".into()));
    }
    let mut reports = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let adv = if eps == 0.0 {
            data.clone()
        } else {
            let cfg = AttackConfig {
                epsilon: eps,
                step_size: None,
                ..template.clone()
            };
            attack_dataset(target, surrogate, constraints, data, &cfg, Some(rule))?.adversarial
        };
        reports.push(classification_quality(target, rule, constraints, data, &adv, eps)?);
    }
    Ok(reports)
}

pub fn write_reports_csv<W: Write>(reports: &[EvalReport], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record([
        "epsilon",
        "macro_f1",
        "macro_f1_rej",
        "acc_main",
        "acc_main_rej",
        "reject_rate_clean",
        "reject_rate_adv",
        "mean_measure_clean",
        "mean_measure_adv",
        "pairing",
    ])?;
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean knowledge measure over a set of inputs.
pub fn mean_measure(model: &Model, xs: &[Vec<f64>], constraints: &ConstraintSet) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySet);
    }
    let ms = xs
        .par_iter()
        .map(|x| knowledge_measure(model, x, constraints))
        .collect::<Result<Vec<_>>>()?;
    Ok(ms.iter().sum::<f64>() / ms.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32, 32],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn init(&self, input_dim: usize, num_classes: usize) -> Result<Model> {
        let sizes: Vec<usize> = std::iter::once(input_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(num_classes))
            .collect();
        Model::init(&sizes, self.activation, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    pub target_rate: f64,
    /// Main class names; empty means every class is main.
    pub main_classes: Vec<String>,
    pub pairing: PairingConfig,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            target_rate: 0.10,
            main_classes: Vec::new(),
            pairing: PairingConfig::default(),
        }
    }
}

impl DefenseConfig {
    pub fn main(&self) -> MainClasses {
        if self.main_classes.is_empty() {
            MainClasses::All
        } else {
            MainClasses::Named(self.main_classes.clone())
        }
    }
}

/// Every section of an experiment config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub toy: ToyConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Parses TOML text and applies `section.key=value` overrides in order.
    /// Override values are read as TOML literals, falling back to plain strings.
    pub fn from_toml_with_overrides<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (path, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::BadConfig(format!("override {o:?} is not key=value")))?;
            let value = parse_override_value(raw.trim());
            let keys: Vec<&str> = path.trim().split('.').collect();
            let (last, parents) = keys.split_last().expect("split yields one item");
            let mut cur = &mut table;
            for k in parents {
                cur = cur
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::BadConfig(format!("{k} is not a section")))?;
            }
            cur.insert(last.to_string(), value);
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::BadConfig(e.to_string()))?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides::<&str>(text, &[])
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::BadConfig(e.to_string()))
    }

    pub fn bind(&self, kb: &crate::knowledge::KnowledgeBase, class_names: &[String]) -> Result<BoundKnowledge> {
        bind_predicates(kb, class_names, &self.defense.main())
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key v present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
