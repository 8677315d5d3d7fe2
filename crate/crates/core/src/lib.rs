//! Knowledge-constrained multi-label classification.
//!
//! First-order domain knowledge over class predicates is compiled into
//! product T-norm polynomials ([`compiler`]), used as a regularizer when
//! training a small sigmoid-output network ([`net`], [`training`]), as a
//! test-time rejection score ([`defense`]), and as an extra term in the
//! multi-label knowledge-driven attack ([`attack`]). The [`harness`] module
//! ties these together on a 2D toy world and computes the evaluation metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod compiler;
pub mod defense;
pub mod error;
pub mod harness;
pub mod knowledge;
pub mod net;
pub mod training;

pub use compiler::{ConstraintLossReport, ConstraintProgram, ConstraintSet};
pub use error::{Error, Result};
pub use knowledge::{
    bind_predicates, boolean_eval, expand_mutual_exclusion, parse_formula, parse_knowledge_file,
    BoundKnowledge, Formula, KnowledgeBase, MainClasses, MutualExclusionEncoding, WeightSet,
    WeightedFormula,
};
pub use net::{Activation, Model};
pub use training::{Dataset, Label, Split, TrainConfig};
