//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use tnorm_shield::{Formula, Model};

/// Random formula over `names` with depth at most `max_depth`.
pub fn random_formula<R: Rng>(rng: &mut R, names: &[&str], max_depth: usize) -> Formula {
    if max_depth <= 1 || rng.random_bool(0.25) {
        return Formula::pred(names[rng.random_range(0..names.len())]);
    }
    let d = max_depth - 1;
    match rng.random_range(0..4) {
        0 => Formula::not(random_formula(rng, names, d)),
        1 => Formula::and(random_formula(rng, names, d), random_formula(rng, names, d)),
        2 => Formula::or(random_formula(rng, names, d), random_formula(rng, names, d)),
        _ => Formula::implies(random_formula(rng, names, d), random_formula(rng, names, d)),
    }
}

/// Two-valued semantics evaluated on 64 assignments at once; bit `s` of
/// `bits(name)` is the value of `name` in assignment `s`.
pub fn bool_eval_bits(f: &Formula, bits: &dyn Fn(&str) -> u64) -> u64 {
    match f {
        Formula::Pred(n) => bits(n),
        Formula::Not(a) => !bool_eval_bits(a, bits),
        Formula::And(a, b) => bool_eval_bits(a, bits) & bool_eval_bits(b, bits),
        Formula::Or(a, b) => bool_eval_bits(a, bits) | bool_eval_bits(b, bits),
        Formula::Implies(a, b) => !bool_eval_bits(a, bits) | bool_eval_bits(b, bits),
    }
}

/// `||a - b|| / max(||a||, ||b||, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Flat parameter vector in layer order (weights then biases).
pub fn params(model: &Model) -> Vec<f64> {
    model
        .layers()
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
        .collect()
}

pub fn with_params(model: &Model, p: &[f64]) -> Model {
    let mut m = model.clone();
    let mut k = 0;
    for l in m.layers_mut() {
        for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
            *v = p[k];
            k += 1;
        }
    }
    m
}

/// Smallest absolute hidden pre-activation at `x`.
pub fn min_abs_hidden_preactivation(model: &Model, x: &[f64]) -> f64 {
    let t = model.forward(x).unwrap();
    let hidden = t.pre_activations.len().saturating_sub(1);
    t.pre_activations[..hidden]
        .iter()
        .flatten()
        .fold(f64::INFINITY, |m, z| m.min(z.abs()))
}
