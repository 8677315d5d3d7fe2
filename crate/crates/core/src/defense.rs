//! Test-time knowledge measure, threshold rejection and the pairing diagnostic.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::compiler::ConstraintSet;
use crate::error::{Error, Result};
use crate::harness::metrics::argmax_over;
use crate::knowledge::{BoundKnowledge, WeightSet};
use crate::net::Model;

/// Smallest admissible threshold.
pub const TAU_FLOOR: f64 = 1e-12;

/// Weighted violation of the knowledge (test weights) at `x`; lower is better.
pub fn knowledge_measure(model: &Model, x: &[f64], constraints: &ConstraintSet) -> Result<f64> {
    constraints.sample_loss(WeightSet::Test, &model.predict(x)?)
}

/// Linear-interpolation quantile between order statistics (`q` in [0,1]).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    Ok(v[lo] + (h - lo as f64) * (v[hi] - v[lo]))
}

/// Hex SHA-256 over the canonical rendering of formulas, weights and class binding.
pub fn knowledge_fingerprint(bound: &BoundKnowledge) -> String {
    let mut h = Sha256::new();
    for name in bound.class_names() {
        h.update(name.as_bytes());
        h.update(b",");
    }
    h.update(b"\n");
    for wf in bound.base().formulas() {
        h.update(format!("{:e},{:e}:{}\n", wf.weight_train, wf.weight_test, wf.formula).as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRule {
    pub tau: f64,
    pub target_rate: f64,
    pub knowledge_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub reject: bool,
    pub measure: f64,
}

impl RejectionRule {
    /// Threshold at the `1 - target_rate` quantile of `measures`.
    pub fn from_measures(measures: &[f64], target_rate: f64, knowledge_hash: String) -> Result<Self> {
        if !(0.0..1.0).contains(&target_rate) {
            return Err(Error::BadConfig(format!("target rate must be in [0,1), got {target_rate}")));
        }
        let tau = quantile(measures, 1.0 - target_rate)?.max(TAU_FLOOR);
        Ok(Self {
            tau,
            target_rate,
            knowledge_hash,
        })
    }

    pub fn rejects(&self, measure: f64) -> bool {
        measure > self.tau
    }

    pub fn check_knowledge(&self, constraints: &ConstraintSet) -> Result<()> {
        let actual = knowledge_fingerprint(constraints.bound());
        if actual != self.knowledge_hash {
            return Err(Error::BadConfig(format!(
                "rule was calibrated for knowledge {} but got {actual}",
                self.knowledge_hash
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rule: Self = serde_json::from_str(text)?;
        if !(rule.tau > 0.0) {
            return Err(Error::BadConfig(format!("tau must be positive, got {}", rule.tau)));
        }
        Ok(rule)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn calibrate_tau(
    model: &Model,
    validation: &[Vec<f64>],
    constraints: &ConstraintSet,
    target_rate: f64,
) -> Result<RejectionRule> {
    let measures = validation
        .iter()
        .map(|x| knowledge_measure(model, x, constraints))
        .collect::<Result<Vec<_>>>()?;
    RejectionRule::from_measures(&measures, target_rate, knowledge_fingerprint(constraints.bound()))
}

pub fn should_reject(
    rule: &RejectionRule,
    model: &Model,
    constraints: &ConstraintSet,
    x: &[f64],
) -> Result<Decision> {
    let measure = knowledge_measure(model, x, constraints)?;
    Ok(Decision {
        reject: rule.rejects(measure),
        measure,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    pub num_samples: usize,
    /// Expansion of the bounding box on each side, as a fraction of the range.
    pub margin: f64,
    pub seed: u64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            num_samples: 1000,
            margin: 0.25,
            seed: 0,
        }
    }
}

/// Uniform draws from the bounding box of `support` widened by `margin` per side.
pub fn sample_around(support: &[Vec<f64>], config: &PairingConfig) -> Result<Vec<Vec<f64>>> {
    if support.is_empty() {
        return Err(Error::EmptySet);
    }
    if config.num_samples == 0 {
        return Err(Error::BadConfig("pairing num_samples must be >= 1".into()));
    }
    let d = support[0].len();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for x in support {
        for k in 0..d {
            lo[k] = lo[k].min(x[k]);
            hi[k] = hi[k].max(x[k]);
        }
    }
    for k in 0..d {
        let pad = config.margin * (hi[k] - lo[k]);
        lo[k] -= pad;
        hi[k] += pad;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Ok((0..config.num_samples)
        .map(|_| {
            (0..d)
                .map(|k| lo[k] + (hi[k] - lo[k]) * rng.random::<f64>())
                .collect()
        })
        .collect())
}

fn mean_measure(model: &Model, xs: &[Vec<f64>], constraints: &ConstraintSet) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptySet);
    }
    // Running mean: exact when every measure is equal.
    let mut mean = 0.0;
    for (k, x) in xs.iter().enumerate() {
        mean += (knowledge_measure(model, x, constraints)? - mean) / (k + 1) as f64;
    }
    Ok(mean)
}

/// `|mean measure over off_support - mean measure over support|`.
pub fn pairing_between(
    model: &Model,
    off_support: &[Vec<f64>],
    support: &[Vec<f64>],
    constraints: &ConstraintSet,
) -> Result<f64> {
    Ok((mean_measure(model, off_support, constraints)? - mean_measure(model, support, constraints)?).abs())
}

pub fn pairing_score(
    model: &Model,
    train_features: &[Vec<f64>],
    constraints: &ConstraintSet,
    config: &PairingConfig,
) -> Result<f64> {
    let h = sample_around(train_features, config)?;
    pairing_between(model, &h, train_features, constraints)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleLabelView {
    pub main_class: usize,
    pub reject: bool,
    pub measure: f64,
    pub outputs: Vec<f64>,
}

/// Main-class argmax for display, with rejection judged on every class.
pub fn single_label_view(
    rule: &RejectionRule,
    model: &Model,
    constraints: &ConstraintSet,
    x: &[f64],
) -> Result<SingleLabelView> {
    let main = constraints.bound().main_classes();
    let outputs = model.predict(x)?;
    let main_class = argmax_over(&outputs, main).ok_or(Error::NoMainClasses)?;
    let measure = constraints.sample_loss(WeightSet::Test, &outputs)?;
    Ok(SingleLabelView {
        main_class,
        reject: rule.rejects(measure),
        measure,
        outputs,
    })
}
