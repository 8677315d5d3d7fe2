//! Multi-label margin attack with an optional knowledge term.
//!
//! Minimizes `max(l_p, -kappa) - min(l_n, kappa) + alpha * phi_test(f(x'))`
//! over `||x' - x||_2 <= epsilon` by normalized projected gradient descent,
//! where `p` is the weakest remaining positive and `n` the strongest remaining
//! negative class. `alpha = 0` gives the plain black-box objective.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::compiler::ConstraintSet;
use crate::defense::RejectionRule;
use crate::error::{Error, Result};
use crate::harness::metrics::argmax_over;
use crate::knowledge::WeightSet;
use crate::net::{ForwardTrace, Model};
use crate::training::Label;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub epsilon: f64,
    /// Logit clamp; `f64::INFINITY` disables clamping.
    pub kappa: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Defaults to `2.5 * epsilon / iterations`.
    pub step_size: Option<f64>,
    /// Per-coordinate `[lo, hi]` box applied after projection.
    pub bounds: Option<[f64; 2]>,
    pub restrict_to: Option<Vec<usize>>,
    pub single_label_mode: bool,
    /// Start from a uniformly random point on the sphere of radius `epsilon / 2`.
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.5,
            kappa: 2.0,
            alpha: 0.0,
            iterations: 50,
            step_size: None,
            bounds: None,
            restrict_to: None,
            single_label_mode: false,
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(2.5 * self.epsilon / self.iterations as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::BadConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::BadConfig(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::BadConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.iterations == 0 {
            return Err(Error::BadConfig("iterations must be >= 1".into()));
        }
        if let Some([lo, hi]) = self.bounds {
            if !(lo < hi) {
                return Err(Error::BadConfig(format!("empty box [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl ClassPartition {
    pub fn new(positives: Vec<usize>, negatives: Vec<usize>) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidPartition("positives and negatives must both be non-empty".into()));
        }
        if positives.iter().any(|p| negatives.contains(p)) {
            return Err(Error::InvalidPartition("positives and negatives overlap".into()));
        }
        Ok(Self { positives, negatives })
    }

    /// Known positives and known negatives, optionally limited to `restrict_to`.
    pub fn from_labels(labels: &[Label], restrict_to: Option<&[usize]>) -> Result<Self> {
        let allowed = |k: usize| restrict_to.is_none_or(|r| r.contains(&k));
        let pick = |want: Label| (0..labels.len()).filter(|&k| labels[k] == want && allowed(k)).collect();
        Self::new(pick(Label::Known1), pick(Label::Known0))
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn negatives(&self) -> &[usize] {
        &self.negatives
    }

    fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.positives.iter().chain(&self.negatives).copied()
    }
}

/// Weakest non-exhausted positive and strongest non-exhausted negative; ties go to the lower index.
pub fn select_pn(
    logits: &[f64],
    partition: &ClassPartition,
    exhausted_p: &BTreeSet<usize>,
    exhausted_n: &BTreeSet<usize>,
) -> (Option<usize>, Option<usize>) {
    let mut p: Option<usize> = None;
    for &k in &partition.positives {
        if !exhausted_p.contains(&k) && p.is_none_or(|b| logits[k] < logits[b] || (logits[k] == logits[b] && k < b)) {
            p = Some(k);
        }
    }
    let mut n: Option<usize> = None;
    for &k in &partition.negatives {
        if !exhausted_n.contains(&k) && n.is_none_or(|b| logits[k] > logits[b] || (logits[k] == logits[b] && k < b)) {
            n = Some(k);
        }
    }
    (p, n)
}

/// Clamped margin plus `alpha * constraint_loss`. A missing `p` sits at `-kappa`
/// and a missing `n` at `kappa`; with an infinite clamp both contribute 0.
pub fn attack_objective(
    logits: &[f64],
    p: Option<usize>,
    n: Option<usize>,
    kappa: f64,
    alpha: f64,
    constraint_loss: f64,
) -> f64 {
    let bound = if kappa.is_infinite() { 0.0 } else { kappa };
    let lp = p.map_or(-bound, |p| logits[p].max(-kappa));
    let ln = n.map_or(bound, |n| logits[n].min(kappa));
    let margin = lp - ln;
    if alpha == 0.0 {
        margin
    } else {
        margin + alpha * constraint_loss
    }
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Pulls `candidate` into the L2 ball around `origin`, then clips to the box.
pub fn project_l2(origin: &[f64], candidate: &[f64], epsilon: f64, bounds: Option<[f64; 2]>) -> Result<Vec<f64>> {
    if origin.len() != candidate.len() {
        return Err(Error::DimensionMismatch {
            expected: origin.len(),
            actual: candidate.len(),
        });
    }
    let dist = l2_distance(origin, candidate);
    let mut out: Vec<f64> = if dist > epsilon {
        let s = epsilon / dist;
        origin.iter().zip(candidate).map(|(o, c)| o + (c - o) * s).collect()
    } else {
        candidate.to_vec()
    };
    if let Some([lo, hi]) = bounds {
        out.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub constraint_loss: f64,
    pub p: Option<usize>,
    pub n: Option<usize>,
    pub l2: f64,
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub prediction_changed: bool,
    /// `None` when no rejection rule was supplied.
    pub rejected: Option<bool>,
    pub evaded: bool,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub adversarial: Vec<f64>,
    pub objective: f64,
    pub best_iteration: usize,
    pub l2: f64,
    /// Both positives and negatives exhausted.
    pub saturated: bool,
    pub trace: Vec<TraceEntry>,
    pub outcome: Outcome,
}

/// Gradient of the objective with respect to the logits at a forward pass.
fn logit_gradient(
    trace: &ForwardTrace,
    p: Option<usize>,
    n: Option<usize>,
    constraints: &ConstraintSet,
    config: &AttackConfig,
) -> Result<Vec<f64>> {
    let c = trace.logits.len();
    let mut up = vec![0.0; c];
    if let Some(p) = p {
        // Zero slope in the clamped region.
        if trace.logits[p] > -config.kappa {
            up[p] += 1.0;
        }
    }
    if let Some(n) = n {
        if trace.logits[n] < config.kappa {
            up[n] -= 1.0;
        }
    }
    if config.alpha != 0.0 {
        let g = constraints.grad_outputs(WeightSet::Test, &trace.outputs)?;
        for k in 0..c {
            let f = trace.outputs[k];
            up[k] += config.alpha * g[k] * f * (1.0 - f);
        }
    }
    Ok(up)
}

/// Objective and its input gradient at `x` for a fixed `(p, n)`.
pub fn objective_and_grad(
    model: &Model,
    x: &[f64],
    p: Option<usize>,
    n: Option<usize>,
    constraints: &ConstraintSet,
    config: &AttackConfig,
) -> Result<(f64, Vec<f64>)> {
    let trace = model.forward(x)?;
    let closs = constraints.sample_loss(WeightSet::Test, &trace.outputs)?;
    let obj = attack_objective(&trace.logits, p, n, config.kappa, config.alpha, closs);
    let up = logit_gradient(&trace, p, n, constraints, config)?;
    Ok((obj, model.grad_input(&trace, &up)?))
}

/// Thresholded (or, in single-label mode, argmax) prediction over the partition classes.
fn decision(outputs: &[f64], partition: &ClassPartition, single_label: bool) -> Vec<usize> {
    if single_label {
        let classes: Vec<usize> = partition.classes().collect();
        argmax_over(outputs, &classes).into_iter().collect()
    } else {
        partition.classes().filter(|&k| outputs[k] > 0.5).collect()
    }
}

pub fn evaluate_outcome(
    model: &Model,
    constraints: &ConstraintSet,
    rule: Option<&RejectionRule>,
    x: &[f64],
    adversarial: &[f64],
    partition: &ClassPartition,
    single_label: bool,
) -> Result<Outcome> {
    let clean = model.predict(x)?;
    let adv = model.predict(adversarial)?;
    let prediction_changed = decision(&clean, partition, single_label) != decision(&adv, partition, single_label);
    let measure = constraints.sample_loss(WeightSet::Test, &adv)?;
    let rejected = rule.map(|r| r.rejects(measure));
    Ok(Outcome {
        prediction_changed,
        rejected,
        evaded: prediction_changed && rejected != Some(true),
        measure,
    })
}

fn random_start(x: &[f64], config: &AttackConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dir: Vec<f64> = x.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Ok(x.to_vec());
    }
    let r = 0.5 * config.epsilon / norm;
    let cand: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + r * d).collect();
    project_l2(x, &cand, config.epsilon, config.bounds)
}

pub fn mka(
    model: &Model,
    x: &[f64],
    partition: &ClassPartition,
    constraints: &ConstraintSet,
    config: &AttackConfig,
    rule: Option<&RejectionRule>,
) -> Result<AttackResult> {
    config.validate()?;
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: x.len(),
        });
    }
    let c = model.num_classes();
    if partition.classes().any(|k| k >= c) {
        return Err(Error::InvalidPartition(format!("class index out of range for {c} outputs")));
    }
    if let Some([lo, hi]) = config.bounds {
        if x.iter().any(|v| !(lo..=hi).contains(v)) {
            return Err(Error::BadConfig("input lies outside the attack box".into()));
        }
    }

    let step = config.step();
    let mut current = if config.random_start {
        random_start(x, config)?
    } else {
        x.to_vec()
    };
    let mut exhausted_p = BTreeSet::new();
    let mut exhausted_n = BTreeSet::new();
    let fixed_p = if config.single_label_mode {
        select_pn(&model.forward(x)?.logits, partition, &exhausted_p, &exhausted_n).0
    } else {
        None
    };

    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut best = (f64::INFINITY, current.clone(), 0usize);
    let mut saturated = false;

    for iteration in 0..=config.iterations {
        let fwd = model.forward(&current)?;
        let (p, n) = loop {
            let (mut p, n) = select_pn(&fwd.logits, partition, &exhausted_p, &exhausted_n);
            if config.single_label_mode {
                p = fixed_p;
            } else if let Some(pp) = p {
                if fwd.logits[pp] < -config.kappa {
                    exhausted_p.insert(pp);
                    continue;
                }
            }
            if let Some(nn) = n {
                if fwd.logits[nn] > config.kappa {
                    exhausted_n.insert(nn);
                    continue;
                }
            }
            break (p, n);
        };
        let closs = constraints.sample_loss(WeightSet::Test, &fwd.outputs)?;
        let objective = attack_objective(&fwd.logits, p, n, config.kappa, config.alpha, closs);
        trace.push(TraceEntry {
            iteration,
            objective,
            constraint_loss: closs,
            p,
            n,
            l2: l2_distance(x, &current),
            point: current.clone(),
        });
        if objective < best.0 {
            best = (objective, current.clone(), iteration);
        }
        if p.is_none() && n.is_none() {
            saturated = true;
            break;
        }
        if iteration == config.iterations {
            break;
        }
        let up = logit_gradient(&fwd, p, n, constraints, config)?;
        let g = model.grad_input(&fwd, &up)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        let cand: Vec<f64> = current.iter().zip(&g).map(|(v, gi)| v - step * gi / norm).collect();
        current = project_l2(x, &cand, config.epsilon, config.bounds)?;
    }

    let (objective, adversarial, best_iteration) = best;
    let outcome = evaluate_outcome(model, constraints, rule, x, &adversarial, partition, config.single_label_mode)?;
    Ok(AttackResult {
        l2: l2_distance(x, &adversarial),
        adversarial,
        objective,
        best_iteration,
        saturated,
        trace,
        outcome,
    })
}

/// Attacks `surrogate` and judges the resulting point on `target`.
pub fn transfer_attack(
    surrogate: &Model,
    target: &Model,
    x: &[f64],
    partition: &ClassPartition,
    constraints: &ConstraintSet,
    config: &AttackConfig,
    rule: Option<&RejectionRule>,
) -> Result<AttackResult> {
    if surrogate.input_dim() != target.input_dim() || surrogate.num_classes() != target.num_classes() {
        return Err(Error::BadArchitecture("surrogate and target shapes differ".into()));
    }
    let mut result = mka(surrogate, x, partition, constraints, config, None)?;
    result.outcome = evaluate_outcome(
        target,
        constraints,
        rule,
        x,
        &result.adversarial,
        partition,
        config.single_label_mode,
    )?;
    Ok(result)
}
