//! Domain knowledge: monadic first-order formulas over class predicates.
//!
//! Every formula is implicitly universally quantified over a single variable
//! ranging over the input space, so the AST only needs the propositional
//! connectives. Knowledge files are parsed by [`parse_knowledge_file`] and
//! bound to classifier output indices with [`bind_predicates`].

mod parser;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use parser::{parse_formula, parse_knowledge_file};

/// Toy knowledge over {CAT, ANIMAL, MOTORBIKE, VEHICLE}.
pub const TOY_KNOWLEDGE: &str = include_str!("../../knowledge/toy.kb");

/// Animal-taxonomy knowledge over 33 classes (7 main, 26 auxiliary).
pub const ANIMALS_KNOWLEDGE: &str = include_str!("../../knowledge/animals.kb");

pub const TOY_CLASSES: [&str; 4] = ["CAT", "ANIMAL", "MOTORBIKE", "VEHICLE"];

/// Class list for [`ANIMALS_KNOWLEDGE`]; the first 7 entries are the main classes.
pub const ANIMALS_CLASSES: [&str; 33] = [
    "ALBATROSS",
    "CHEETAH",
    "TIGER",
    "GIRAFFE",
    "ZEBRA",
    "OSTRICH",
    "PENGUIN",
    "MAMMAL",
    "HAIR",
    "MILK",
    "FEATHERS",
    "BIRD",
    "FLY",
    "LAYEGGS",
    "MEAT",
    "CARNIVORE",
    "POINTEDTEETH",
    "CLAWS",
    "FORWARDEYES",
    "HOOFS",
    "UNGULATE",
    "CUD",
    "EVENTOED",
    "TAWNY",
    "BLACKSTRIPES",
    "LONGLEGS",
    "LONGNECK",
    "DARKSPOTS",
    "WHITE",
    "BLACK",
    "SWIM",
    "BLACKWHITE",
    "GOODFLIER",
];

pub const ANIMALS_MAIN_COUNT: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Pred(String),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn pred(name: impl Into<String>) -> Self {
        Formula::Pred(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(child: Formula) -> Self {
        Formula::Not(Box::new(child))
    }

    pub fn and(left: Formula, right: Formula) -> Self {
        Formula::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: Formula, right: Formula) -> Self {
        Formula::Or(Box::new(left), Box::new(right))
    }

    pub fn implies(premise: Formula, conclusion: Formula) -> Self {
        Formula::Implies(Box::new(premise), Box::new(conclusion))
    }

    /// Left-associated conjunction of a non-empty sequence.
    pub fn and_all(items: impl IntoIterator<Item = Formula>) -> Option<Self> {
        items.into_iter().reduce(Formula::and)
    }

    /// Left-associated disjunction of a non-empty sequence.
    pub fn or_all(items: impl IntoIterator<Item = Formula>) -> Option<Self> {
        items.into_iter().reduce(Formula::or)
    }

    /// Distinct predicate names, sorted.
    pub fn predicates(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.collect_predicates(&mut out);
        out
    }

    fn collect_predicates<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Formula::Pred(name) => {
                out.insert(name.as_str());
            }
            Formula::Not(child) => child.collect_predicates(out),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                l.collect_predicates(out);
                r.collect_predicates(out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Pred(_) => 1,
            Formula::Not(child) => 1 + child.depth(),
            Formula::And(l, r) | Formula::Or(l, r) | Formula::Implies(l, r) => {
                1 + l.depth().max(r.depth())
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Implies(..) => 1,
            Formula::Or(..) => 2,
            Formula::And(..) => 3,
            Formula::Not(_) => 4,
            Formula::Pred(_) => 5,
        }
    }

    fn write_child(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Prints in the knowledge-file syntax with the minimum parentheses needed to
/// re-parse to the same tree (`and`/`or` associate left, `=>` right).
impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let prec = self.precedence();
        match self {
            Formula::Pred(name) => write!(f, "{name}(x)"),
            Formula::Not(child) => {
                f.write_str("not ")?;
                child.write_child(f, child.precedence() < prec)
            }
            Formula::And(l, r) | Formula::Or(l, r) => {
                let op = if matches!(self, Formula::And(..)) { "and" } else { "or" };
                l.write_child(f, l.precedence() < prec)?;
                write!(f, " {op} ")?;
                r.write_child(f, r.precedence() <= prec)
            }
            Formula::Implies(l, r) => {
                l.write_child(f, l.precedence() <= prec)?;
                f.write_str(" => ")?;
                r.write_child(f, r.precedence() < prec)
            }
        }
    }
}

/// Which weight vector to use when aggregating formula losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSet {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFormula {
    pub formula: Formula,
    pub weight_train: f64,
    pub weight_test: f64,
    pub source_line: usize,
}

impl WeightedFormula {
    pub fn weight(&self, set: WeightSet) -> f64 {
        match set {
            WeightSet::Train => self.weight_train,
            WeightSet::Test => self.weight_test,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    formulas: Vec<WeightedFormula>,
}

impl KnowledgeBase {
    pub fn new(formulas: Vec<WeightedFormula>) -> Result<Self> {
        if formulas.is_empty() {
            return Err(Error::EmptyKnowledge);
        }
        for wf in &formulas {
            let ok = |w: f64| w.is_finite() && w > 0.0;
            if !ok(wf.weight_train) || !ok(wf.weight_test) {
                return Err(Error::NonPositiveWeight {
                    line: wf.source_line,
                });
            }
        }
        Ok(Self { formulas })
    }

    pub fn formulas(&self) -> &[WeightedFormula] {
        &self.formulas
    }

    pub fn len(&self) -> usize {
        self.formulas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.formulas.is_empty()
    }

    /// Sum of the formula weights of the given set.
    pub fn gamma(&self, set: WeightSet) -> f64 {
        self.formulas.iter().map(|wf| wf.weight(set)).sum()
    }

    pub fn gamma_train(&self) -> f64 {
        self.gamma(WeightSet::Train)
    }

    pub fn gamma_test(&self) -> f64 {
        self.gamma(WeightSet::Test)
    }

    /// Distinct predicates over all formulas, sorted.
    pub fn predicates(&self) -> BTreeSet<&str> {
        self.formulas
            .iter()
            .flat_map(|wf| wf.formula.predicates())
            .collect()
    }

    /// Copy with every test weight multiplied by `factor`.
    pub fn with_scaled_test_weights(&self, factor: f64) -> Result<Self> {
        let formulas = self
            .formulas
            .iter()
            .map(|wf| WeightedFormula {
                weight_test: wf.weight_test * factor,
                ..wf.clone()
            })
            .collect();
        Self::new(formulas)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MutualExclusionEncoding {
    /// One formula: the disjunction of the rows of the truth table with a single true class.
    TruthTable,
    /// `p_1 or ... or p_n`, plus `p_i => and_{j != i} not p_j` for each i.
    #[default]
    Pairwise,
}

pub fn expand_mutual_exclusion<S: AsRef<str>>(
    classes: &[S],
    encoding: MutualExclusionEncoding,
) -> Result<Vec<Formula>> {
    if classes.len() < 2 {
        return Err(Error::Arity(classes.len()));
    }
    let mut seen = BTreeSet::new();
    for name in classes {
        if !seen.insert(name.as_ref()) {
            return Err(Error::DuplicateClass(name.as_ref().to_string()));
        }
    }

    let others_false = |i: usize| {
        Formula::and_all(
            classes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, name)| Formula::not(Formula::pred(name.as_ref()))),
        )
        .expect("at least one other class")
    };

    let formulas = match encoding {
        MutualExclusionEncoding::TruthTable => {
            let rows = (0..classes.len())
                .map(|i| Formula::and(Formula::pred(classes[i].as_ref()), others_false(i)));
            vec![Formula::or_all(rows).expect("n >= 2")]
        }
        MutualExclusionEncoding::Pairwise => {
            let mut out = Vec::with_capacity(classes.len() + 1);
            out.push(
                Formula::or_all(classes.iter().map(|c| Formula::pred(c.as_ref()))).expect("n >= 2"),
            );
            for (i, name) in classes.iter().enumerate() {
                out.push(Formula::implies(Formula::pred(name.as_ref()), others_false(i)));
            }
            out
        }
    };
    Ok(formulas)
}

/// How to split the bound classes into main and auxiliary ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MainClasses {
    /// Every class is main.
    All,
    /// The first `n` classes in output order.
    First(usize),
    /// An explicit list of class names.
    Named(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundKnowledge {
    base: KnowledgeBase,
    class_names: Vec<String>,
    index_of: BTreeMap<String, usize>,
    main_classes: Vec<usize>,
    auxiliary_classes: Vec<usize>,
}

impl BoundKnowledge {
    pub fn base(&self) -> &KnowledgeBase {
        &self.base
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index_of.get(name).copied()
    }

    pub fn main_classes(&self) -> &[usize] {
        &self.main_classes
    }

    pub fn auxiliary_classes(&self) -> &[usize] {
        &self.auxiliary_classes
    }

    /// Same binding with the test weights multiplied by `factor`.
    pub fn with_scaled_test_weights(&self, factor: f64) -> Result<Self> {
        Ok(Self {
            base: self.base.with_scaled_test_weights(factor)?,
            ..self.clone()
        })
    }
}

pub fn bind_predicates<S: AsRef<str>>(
    base: &KnowledgeBase,
    class_names: &[S],
    main: &MainClasses,
) -> Result<BoundKnowledge> {
    let mut index_of = BTreeMap::new();
    for (i, name) in class_names.iter().enumerate() {
        if index_of.insert(name.as_ref().to_string(), i).is_some() {
            return Err(Error::DuplicateClass(name.as_ref().to_string()));
        }
    }

    let missing: Vec<String> = base
        .predicates()
        .into_iter()
        .filter(|p| !index_of.contains_key(*p))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::UnboundPredicate(missing));
    }

    let c = class_names.len();
    let main_classes: Vec<usize> = match main {
        MainClasses::All => (0..c).collect(),
        MainClasses::First(n) => {
            if *n > c {
                return Err(Error::BadMainClasses(format!("{n} main classes but only {c} classes")));
            }
            (0..*n).collect()
        }
        MainClasses::Named(names) => {
            let mut idx = Vec::with_capacity(names.len());
            for name in names {
                let i = *index_of
                    .get(name)
                    .ok_or_else(|| Error::BadMainClasses(format!("unknown class {name}")))?;
                if idx.contains(&i) {
                    return Err(Error::BadMainClasses(format!("{name} listed twice")));
                }
                idx.push(i);
            }
            idx
        }
    };
    let auxiliary_classes = (0..c).filter(|i| !main_classes.contains(i)).collect();

    Ok(BoundKnowledge {
        base: base.clone(),
        class_names: class_names.iter().map(|s| s.as_ref().to_string()).collect(),
        index_of,
        main_classes,
        auxiliary_classes,
    })
}

/// Classical two-valued semantics, `=>` as material implication.
pub fn boolean_eval(formula: &Formula, assignment: &HashMap<String, bool>) -> Result<bool> {
    eval_with(formula, &|name| assignment.get(name).copied())
}

pub(crate) fn eval_with(formula: &Formula, lookup: &dyn Fn(&str) -> Option<bool>) -> Result<bool> {
    Ok(match formula {
        Formula::Pred(name) => lookup(name).ok_or_else(|| Error::MissingAssignment(name.clone()))?,
        Formula::Not(child) => !eval_with(child, lookup)?,
        Formula::And(l, r) => eval_with(l, lookup)? & eval_with(r, lookup)?,
        Formula::Or(l, r) => eval_with(l, lookup)? | eval_with(r, lookup)?,
        Formula::Implies(l, r) => !eval_with(l, lookup)? | eval_with(r, lookup)?,
    })
}
