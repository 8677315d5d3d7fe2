//! Recursive-descent parser for knowledge files.
//!
//! ```text
//! file     := { line } ;
//! line     := comment | blank | directive | [ weights ":" ] sentence ;
//! weights  := "w=" REAL [ "," REAL ] ;
//! sentence := [ "forall" VAR ":" ] ( formula | "mutual_excl" "(" IDENT { "," IDENT } ")" ) ;
//! formula  := disj [ "=>" formula ] ;
//! disj     := conj { "or" conj } ;
//! conj     := neg { "and" neg } ;
//! neg      := "not" neg | atom ;
//! atom     := IDENT "(" VAR ")" | "(" formula ")" ;
//! ```
//!
//! Each formula occupies one line. `#` starts a comment that runs to the end
//! of the line. `@mutual_excl_encoding truthtable|pairwise` switches the
//! encoding used by every later `mutual_excl` line.

use crate::error::{Error, Result};

use super::{
    expand_mutual_exclusion, Formula, KnowledgeBase, MutualExclusionEncoding, WeightedFormula,
};

const KEYWORDS: [&str; 5] = ["forall", "not", "and", "or", "mutual_excl"];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    LParen,
    RParen,
    Comma,
    Colon,
    Equals,
    Arrow,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str, line: usize) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        let column = i + 1;
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line, column });
        match ch {
            c if c.is_whitespace() => i += 1,
            '#' => break,
            '(' => {
                push(&mut out, Tok::LParen);
                i += 1;
            }
            ')' => {
                push(&mut out, Tok::RParen);
                i += 1;
            }
            ',' => {
                push(&mut out, Tok::Comma);
                i += 1;
            }
            ':' => {
                push(&mut out, Tok::Colon);
                i += 1;
            }
            '=' if chars.get(i + 1) == Some(&'>') => {
                push(&mut out, Tok::Arrow);
                i += 2;
            }
            '=' => {
                push(&mut out, Tok::Equals);
                i += 1;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    i += 1;
                    if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                        i += 1;
                    }
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let literal: String = chars[start..i].iter().collect();
                let value = literal.parse::<f64>().map_err(|_| Error::Syntax {
                    line,
                    column,
                    message: format!("malformed number {literal:?}"),
                })?;
                push(&mut out, Tok::Number(value));
            }
            other => {
                return Err(Error::UnknownToken {
                    line,
                    column,
                    found: other,
                })
            }
        }
    }
    Ok(out)
}

enum Sentence {
    Formula(Formula),
    MutualExclusion(Vec<String>),
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
    end_column: usize,
    /// Variable bound by `forall`, or the first one seen.
    var: Option<String>,
}

impl<'a> Parser<'a> {
    fn new(tokens: &'a [Token], line: usize, end_column: usize) -> Self {
        Self {
            tokens,
            pos: 0,
            line,
            end_column,
            var: None,
        }
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + offset).map(|t| &t.tok)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        let (line, column) = match self.tokens.get(self.pos) {
            Some(t) => (t.line, t.column),
            None => (self.line, self.end_column),
        };
        Err(Error::Syntax {
            line,
            column,
            message: message.into(),
        })
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of line".into(),
            Some(Tok::Ident(s)) => format!("{s:?}"),
            Some(Tok::Number(n)) => format!("number {n}"),
            Some(t) => format!("{t:?}"),
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", self.describe()))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.error(format!("expected {what}, found {}", self.describe())),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Number(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.error(format!("expected a weight, found {}", self.describe())),
        }
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.tokens.len() {
            Ok(())
        } else {
            self.error(format!("unexpected {}", self.describe()))
        }
    }

    /// Zero or more `w=a[,b] :` prefixes; more than one is an error.
    fn weights(&mut self) -> Result<Option<(f64, f64)>> {
        let mut found = None;
        while matches!(self.peek(), Some(Tok::Ident(s)) if s == "w")
            && self.peek_at(1) == Some(&Tok::Equals)
        {
            if found.is_some() {
                return Err(Error::DuplicateDirective { line: self.line });
            }
            self.pos += 2;
            let train = self.number()?;
            let test = if self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                self.number()?
            } else {
                train
            };
            self.expect(Tok::Colon, "':' after weights")?;
            found = Some((train, test));
        }
        Ok(found)
    }

    fn sentence(&mut self) -> Result<Sentence> {
        if self.is_keyword("forall") {
            self.pos += 1;
            let var = self.ident("a variable after 'forall'")?;
            self.var = Some(var);
            self.expect(Tok::Colon, "':' after the quantified variable")?;
        }
        if self.is_keyword("mutual_excl") {
            self.pos += 1;
            self.expect(Tok::LParen, "'(' after mutual_excl")?;
            let mut classes = vec![self.mutex_item()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                classes.push(self.mutex_item()?);
            }
            self.expect(Tok::RParen, "')' closing mutual_excl")?;
            return Ok(Sentence::MutualExclusion(classes));
        }
        self.formula().map(Sentence::Formula)
    }

    /// `NAME` or `NAME(x)` inside a mutual_excl list.
    fn mutex_item(&mut self) -> Result<String> {
        let name = self.ident("a class name")?;
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            self.variable()?;
            self.expect(Tok::RParen, "')'")?;
        }
        Ok(name)
    }

    fn formula(&mut self) -> Result<Formula> {
        let left = self.disjunction()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            let right = self.formula()?;
            return Ok(Formula::implies(left, right));
        }
        Ok(left)
    }

    fn disjunction(&mut self) -> Result<Formula> {
        let mut acc = self.conjunction()?;
        while self.is_keyword("or") {
            self.pos += 1;
            acc = Formula::or(acc, self.conjunction()?);
        }
        Ok(acc)
    }

    fn conjunction(&mut self) -> Result<Formula> {
        let mut acc = self.negation()?;
        while self.is_keyword("and") {
            self.pos += 1;
            acc = Formula::and(acc, self.negation()?);
        }
        Ok(acc)
    }

    fn negation(&mut self) -> Result<Formula> {
        if self.is_keyword("not") {
            self.pos += 1;
            return Ok(Formula::not(self.negation()?));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Formula> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let inner = self.formula()?;
            self.expect(Tok::RParen, "')'")?;
            return Ok(inner);
        }
        let name = self.ident("a predicate or '('")?;
        self.expect(Tok::LParen, "'(' after predicate name")?;
        self.variable()?;
        self.expect(Tok::RParen, "')' after the variable")?;
        Ok(Formula::Pred(name))
    }

    fn variable(&mut self) -> Result<()> {
        let start = self.pos;
        let var = self.ident("a variable")?;
        match &self.var {
            Some(bound) if *bound != var => {
                self.pos = start;
                self.error(format!(
                    "variable {var:?} differs from {bound:?}; formulas are over a single variable"
                ))
            }
            Some(_) => Ok(()),
            None => {
                self.var = Some(var);
                Ok(())
            }
        }
    }
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

/// Parses one formula; an optional `forall x:` prefix is accepted.
pub fn parse_formula(text: &str) -> Result<Formula> {
    let mut tokens = Vec::new();
    let mut last = (1, 1);
    for (i, line) in text.lines().enumerate() {
        tokens.extend(lex(line, i + 1)?);
        last = (i + 1, line.chars().count() + 1);
    }
    let mut parser = Parser::new(&tokens, last.0, last.1);
    match parser.sentence()? {
        Sentence::Formula(f) => {
            parser.finish()?;
            Ok(f)
        }
        Sentence::MutualExclusion(_) => Err(Error::Syntax {
            line: 1,
            column: 1,
            message: "mutual_excl is a knowledge-file macro, not a formula".into(),
        }),
    }
}

pub fn parse_knowledge_file(text: &str) -> Result<KnowledgeBase> {
    let mut encoding = MutualExclusionEncoding::default();
    let mut formulas = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let content = strip_comment(raw);
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(directive) = trimmed.strip_prefix('@') {
            encoding = parse_directive(directive, line_no)?;
            continue;
        }

        let tokens = lex(content, line_no)?;
        let mut parser = Parser::new(&tokens, line_no, content.chars().count() + 1);
        let (weight_train, weight_test) = parser.weights()?.unwrap_or((1.0, 1.0));
        if !(weight_train > 0.0 && weight_test > 0.0) {
            return Err(Error::NonPositiveWeight { line: line_no });
        }
        let sentence = parser.sentence()?;
        parser.finish()?;

        let expanded = match sentence {
            Sentence::Formula(f) => vec![f],
            Sentence::MutualExclusion(classes) => expand_mutual_exclusion(&classes, encoding)?,
        };
        formulas.extend(expanded.into_iter().map(|formula| WeightedFormula {
            formula,
            weight_train,
            weight_test,
            source_line: line_no,
        }));
    }
    KnowledgeBase::new(formulas)
}

fn parse_directive(directive: &str, line: usize) -> Result<MutualExclusionEncoding> {
    let mut parts = directive.split_whitespace();
    let syntax = |message: String| Error::Syntax {
        line,
        column: 1,
        message,
    };
    match (parts.next(), parts.next(), parts.next()) {
        (Some("mutual_excl_encoding"), Some(value), None) => match value {
            "truthtable" => Ok(MutualExclusionEncoding::TruthTable),
            "pairwise" => Ok(MutualExclusionEncoding::Pairwise),
            other => Err(syntax(format!("unknown mutual_excl encoding {other:?}"))),
        },
        _ => Err(syntax(format!("unknown directive @{directive}"))),
    }
}
