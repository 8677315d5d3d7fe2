//! Product T-norm lowering of formulas into polynomial constraint programs.
//!
//! Translation, with `t` the truth degree and `f_i` the i-th classifier output:
//!
//! | formula   | polynomial                   |
//! |-----------|------------------------------|
//! | `P_i`     | `f_i`                        |
//! | `not a`   | `1 - t(a)`                   |
//! | `a and b` | `t(a) * t(b)`                |
//! | `a or b`  | `1 - (1 - t(a)) * (1 - t(b))` |
//! | `a => b`  | `1 - t(a) * (1 - t(b))`      |
//!
//! Programs are stored as a flat tape of `Output`, `OneMinus` and `Product`
//! nodes in topological order, so evaluation is a forward sweep and the
//! gradient a single reverse sweep.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::knowledge::{BoundKnowledge, Formula, WeightSet};

/// Slack tolerated on outputs before clamping into [0, 1].
pub const OUTPUT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Node {
    Output(usize),
    OneMinus(usize),
    Product(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintProgram {
    nodes: Vec<Node>,
    num_classes: usize,
}

impl ConstraintProgram {
    /// Lowers `formula`, resolving predicate names through `resolve`.
    pub fn compile(
        formula: &Formula,
        num_classes: usize,
        resolve: impl Fn(&str) -> Option<usize>,
    ) -> Result<Self> {
        let mut nodes = Vec::new();
        lower(formula, &resolve, &mut nodes)?;
        if let Some(bad) = nodes.iter().find_map(|n| match n {
            Node::Output(i) if *i >= num_classes => Some(*i),
            _ => None,
        }) {
            return Err(Error::DimensionMismatch {
                expected: num_classes,
                actual: bad + 1,
            });
        }
        Ok(Self { nodes, num_classes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn check<T>(&self, outputs: &[T]) -> Result<()> {
        if outputs.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                actual: outputs.len(),
            });
        }
        Ok(())
    }

    fn forward(&self, outputs: &[f64], values: &mut Vec<f64>) {
        values.clear();
        for node in &self.nodes {
            let v = match *node {
                Node::Output(i) => clamp_output(outputs[i]),
                Node::OneMinus(a) => 1.0 - values[a],
                Node::Product(a, b) => values[a] * values[b],
            };
            values.push(v);
        }
    }

    /// Truth degree in [0, 1] of the source formula on `outputs`.
    pub fn truth_degree(&self, outputs: &[f64]) -> Result<f64> {
        self.check(outputs)?;
        let mut values = Vec::with_capacity(self.nodes.len());
        self.forward(outputs, &mut values);
        Ok(*values.last().expect("non-empty program"))
    }

    /// Truth degrees for many samples at once; `columns[i][s]` is output `i` of sample `s`.
    /// Outputs are clamped to [0, 1] without the tolerance check of the scalar path.
    pub fn truth_degree_batch(&self, columns: &[&[f64]]) -> Result<Vec<f64>> {
        self.check(columns)?;
        let n = columns.first().map_or(0, |c| c.len());
        if let Some(bad) = columns.iter().find(|c| c.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: bad.len(),
            });
        }
        const LANES: usize = 256;
        let mut values = vec![0.0; self.nodes.len() * LANES];
        let mut out = Vec::with_capacity(n);
        for start in (0..n).step_by(LANES) {
            let w = LANES.min(n - start);
            for (k, node) in self.nodes.iter().enumerate() {
                let (done, rest) = values.split_at_mut(k * LANES);
                let dst = &mut rest[..w];
                match *node {
                    Node::Output(i) => {
                        for (d, &v) in dst.iter_mut().zip(&columns[i][start..start + w]) {
                            *d = v.clamp(0.0, 1.0);
                        }
                    }
                    Node::OneMinus(a) => {
                        for (d, &v) in dst.iter_mut().zip(&done[a * LANES..a * LANES + w]) {
                            *d = 1.0 - v;
                        }
                    }
                    Node::Product(a, b) => {
                        let (va, vb) = (&done[a * LANES..a * LANES + w], &done[b * LANES..b * LANES + w]);
                        for ((d, &x), &y) in dst.iter_mut().zip(va).zip(vb) {
                            *d = x * y;
                        }
                    }
                }
            }
            let last = (self.nodes.len() - 1) * LANES;
            out.extend_from_slice(&values[last..last + w]);
        }
        Ok(out)
    }

    /// `1 - truth_degree`: zero iff the formula is fully satisfied.
    pub fn formula_loss(&self, outputs: &[f64]) -> Result<f64> {
        Ok(1.0 - self.truth_degree(outputs)?)
    }

    /// Returns the loss `1 - t` and adds `scale * d(1 - t)/d outputs` into `grad`.
    pub fn accumulate_loss_grad(&self, outputs: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        self.check(outputs)?;
        if grad.len() != self.num_classes {
            return Err(Error::DimensionMismatch {
                expected: self.num_classes,
                actual: grad.len(),
            });
        }
        let mut values = Vec::with_capacity(self.nodes.len());
        self.forward(outputs, &mut values);

        let mut adjoint = vec![0.0; self.nodes.len()];
        *adjoint.last_mut().expect("non-empty program") = -scale;
        for (k, node) in self.nodes.iter().enumerate().rev() {
            let a = adjoint[k];
            if a == 0.0 {
                continue;
            }
            match *node {
                Node::Output(i) => grad[i] += a,
                Node::OneMinus(c) => adjoint[c] -= a,
                Node::Product(l, r) => {
                    adjoint[l] += a * values[r];
                    adjoint[r] += a * values[l];
                }
            }
        }
        Ok(1.0 - values[values.len() - 1])
    }

    /// S-expression over node kinds; `names` labels output indices when given.
    pub fn to_sexpr(&self, names: Option<&[String]>) -> String {
        let mut out = String::new();
        self.write_node(self.nodes.len() - 1, names, &mut out);
        out
    }

    fn write_node(&self, k: usize, names: Option<&[String]>, out: &mut String) {
        match self.nodes[k] {
            Node::Output(i) => match names.and_then(|n| n.get(i)) {
                Some(name) => write!(out, "(out {i} {name})").unwrap(),
                None => write!(out, "(out {i})").unwrap(),
            },
            Node::OneMinus(c) => {
                out.push_str("(1- ");
                self.write_node(c, names, out);
                out.push(')');
            }
            Node::Product(l, r) => {
                out.push_str("(* ");
                self.write_node(l, names, out);
                out.push(' ');
                self.write_node(r, names, out);
                out.push(')');
            }
        }
    }
}

fn clamp_output(v: f64) -> f64 {
    debug_assert!(
        v.is_nan() || (-OUTPUT_TOLERANCE..=1.0 + OUTPUT_TOLERANCE).contains(&v),
        "classifier output {v} outside [0, 1]"
    );
    v.clamp(0.0, 1.0)
}

fn lower(
    formula: &Formula,
    resolve: &dyn Fn(&str) -> Option<usize>,
    nodes: &mut Vec<Node>,
) -> Result<usize> {
    let push = |nodes: &mut Vec<Node>, n: Node| {
        nodes.push(n);
        nodes.len() - 1
    };
    Ok(match formula {
        Formula::Pred(name) => {
            let i = resolve(name).ok_or_else(|| Error::UnboundPredicate(vec![name.clone()]))?;
            push(nodes, Node::Output(i))
        }
        Formula::Not(child) => {
            let c = lower(child, resolve, nodes)?;
            push(nodes, Node::OneMinus(c))
        }
        Formula::And(l, r) => {
            let a = lower(l, resolve, nodes)?;
            let b = lower(r, resolve, nodes)?;
            push(nodes, Node::Product(a, b))
        }
        Formula::Or(l, r) => {
            let a = lower(l, resolve, nodes)?;
            let na = push(nodes, Node::OneMinus(a));
            let b = lower(r, resolve, nodes)?;
            let nb = push(nodes, Node::OneMinus(b));
            let p = push(nodes, Node::Product(na, nb));
            push(nodes, Node::OneMinus(p))
        }
        Formula::Implies(l, r) => {
            let a = lower(l, resolve, nodes)?;
            let b = lower(r, resolve, nodes)?;
            let nb = push(nodes, Node::OneMinus(b));
            let p = push(nodes, Node::Product(a, nb));
            push(nodes, Node::OneMinus(p))
        }
    })
}

/// Compiles one formula against a binding.
pub fn compile(formula: &Formula, bound: &BoundKnowledge) -> Result<ConstraintProgram> {
    ConstraintProgram::compile(formula, bound.num_classes(), |name| bound.index_of(name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintLossReport {
    /// Batch mean of the per-sample weighted loss sums.
    pub total: f64,
    /// `(h, batch mean of mu_h * loss_h)` per formula.
    pub per_formula: Vec<(usize, f64)>,
    pub per_sample: Vec<f64>,
}

/// A bound knowledge base with every formula compiled.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    bound: BoundKnowledge,
    programs: Vec<ConstraintProgram>,
}

impl ConstraintSet {
    pub fn new(bound: BoundKnowledge) -> Result<Self> {
        let programs = bound
            .base()
            .formulas()
            .iter()
            .map(|wf| compile(&wf.formula, &bound))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bound, programs })
    }

    pub fn bound(&self) -> &BoundKnowledge {
        &self.bound
    }

    pub fn programs(&self) -> &[ConstraintProgram] {
        &self.programs
    }

    pub fn num_classes(&self) -> usize {
        self.bound.num_classes()
    }

    pub fn gamma(&self, set: WeightSet) -> f64 {
        self.bound.base().gamma(set)
    }

    fn weights(&self, set: WeightSet) -> impl Iterator<Item = f64> + '_ {
        self.bound.base().formulas().iter().map(move |wf| wf.weight(set))
    }

    /// `sum_h mu_h * (1 - t_h(outputs))` for one sample.
    pub fn sample_loss(&self, set: WeightSet, outputs: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (program, mu) in self.programs.iter().zip(self.weights(set)) {
            total += mu * program.formula_loss(outputs)?;
        }
        Ok(total)
    }

    /// Weighted constraint loss averaged over the batch.
    pub fn constraint_loss(&self, set: WeightSet, batch: &[Vec<f64>]) -> Result<ConstraintLossReport> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut per_formula = vec![0.0; self.programs.len()];
        let mut per_sample = Vec::with_capacity(batch.len());
        for outputs in batch {
            let mut sample_total = 0.0;
            for (h, (program, mu)) in self.programs.iter().zip(self.weights(set)).enumerate() {
                let weighted = mu * program.formula_loss(outputs)?;
                per_formula[h] += weighted;
                sample_total += weighted;
            }
            per_sample.push(sample_total);
        }
        let n = batch.len() as f64;
        Ok(ConstraintLossReport {
            total: per_sample.iter().sum::<f64>() / n,
            per_formula: per_formula.into_iter().map(|s| s / n).enumerate().collect(),
            per_sample,
        })
    }

    /// Single-sample weighted loss and its gradient with respect to the outputs.
    pub fn loss_and_grad(&self, set: WeightSet, outputs: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_classes()];
        let mut total = 0.0;
        for (program, mu) in self.programs.iter().zip(self.weights(set)) {
            total += mu * program.accumulate_loss_grad(outputs, mu, &mut grad)?;
        }
        Ok((total, grad))
    }

    pub fn grad_outputs(&self, set: WeightSet, outputs: &[f64]) -> Result<Vec<f64>> {
        self.loss_and_grad(set, outputs).map(|(_, g)| g)
    }
}
