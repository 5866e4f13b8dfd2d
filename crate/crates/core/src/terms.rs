//! Wilkinson expansion of fixed-effect expressions into a canonical term list.
//!
//! Intercept handling follows R's `terms()` encoder: a single intercept flag
//! is updated in traversal order, `1` sets it and `0` clears it, and both
//! meanings flip on the right of `-` or under a leading minus. A `1` or `0`
//! contributes no term, which is what makes `1:x` and `1*x` collapse to the
//! intercept while `x*1` keeps `x`.

use std::fmt;

use thiserror::Error;

use crate::formula::{parse_formula, Arg, Expr, Func};

/// A single factor of a term: a variable or a transformed variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Atom {
    Var(String),
    Transform(Func, String),
}

impl Atom {
    pub fn variable(&self) -> &str {
        match self {
            Atom::Var(v) | Atom::Transform(_, v) => v,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Var(v) => f.write_str(v),
            Atom::Transform(func, v) => write!(f, "{func}({v})"),
        }
    }
}

/// A product of distinct atoms. Equality ignores component order.
#[derive(Debug, Clone, Eq)]
pub struct Term {
    components: Vec<Atom>,
}

impl Term {
    /// Deduplicates, keeping first appearances. Panics on an empty list.
    pub fn new(components: Vec<Atom>) -> Term {
        assert!(!components.is_empty(), "a term needs at least one atom");
        let mut out: Vec<Atom> = Vec::with_capacity(components.len());
        for a in components {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        Term { components: out }
    }

    pub fn single(atom: Atom) -> Term {
        Term {
            components: vec![atom],
        }
    }

    pub fn components(&self) -> &[Atom] {
        &self.components
    }

    pub fn order(&self) -> usize {
        self.components.len()
    }

    fn union(&self, other: &Term) -> Term {
        let mut components = self.components.clone();
        for a in &other.components {
            if !components.contains(a) {
                components.push(a.clone());
            }
        }
        Term { components }
    }
}

impl PartialEq for Term {
    fn eq(&self, other: &Term) -> bool {
        self.components.len() == other.components.len()
            && self.components.iter().all(|a| other.components.contains(a))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.components.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

/// Deduplicated terms sorted by order (stable) plus the intercept flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TermList {
    terms: Vec<Term>,
    pub intercept: bool,
}

impl TermList {
    pub fn new(terms: Vec<Term>, intercept: bool) -> TermList {
        let mut unique: Vec<Term> = Vec::with_capacity(terms.len());
        for t in terms {
            if !unique.contains(&t) {
                unique.push(t);
            }
        }
        unique.sort_by_key(Term::order);
        TermList {
            terms: unique,
            intercept,
        }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Equality of term sets and intercept, ignoring order.
    pub fn same_model(&self, other: &TermList) -> bool {
        self.intercept == other.intercept
            && self.terms.len() == other.terms.len()
            && self.terms.iter().all(|t| other.terms.contains(t))
    }

    /// Every distinct atom in first-appearance order.
    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out: Vec<&Atom> = Vec::new();
        for t in &self.terms {
            for a in &t.components {
                if !out.contains(&a) {
                    out.push(a);
                }
            }
        }
        out
    }
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonical_text(self))
    }
}

/// Renders with an explicit intercept: leading `1 +` or trailing `+ 0`.
pub fn canonical_text(tl: &TermList) -> String {
    let body: Vec<String> = tl.terms.iter().map(Term::to_string).collect();
    match (tl.intercept, body.is_empty()) {
        (true, true) => "1".to_string(),
        (false, true) => "0".to_string(),
        (true, false) => format!("1 + {}", body.join(" + ")),
        (false, false) => format!("{} + 0", body.join(" + ")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("random-effect group `{0}` is not allowed in a fixed-effect formula")]
    GroupInFixedContext(String),
    #[error("structural function `{0}` is not allowed in a fixed-effect formula")]
    StructuralCallInFixedContext(String),
    #[error("`{0}` must be applied to a single variable")]
    InvalidTransform(String),
    #[error("numeric literal `{0}` is not a valid term")]
    InvalidLiteral(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lint {
    /// No `1`, `0` or `-1` appears, so the intercept was added implicitly.
    ImplicitIntercept,
    /// The final model has no intercept.
    InterceptRemoved,
    /// The intercept was both added and removed, as in `1 + (-1 + x)`.
    ConflictingIntercept,
    /// `1` or `0` used as an operand of `:`, `*` or `^`; it only affects the
    /// intercept and never forms a product.
    InterceptInProduct(String),
    /// A term listed more than once.
    DuplicateTerm(String),
    /// `- t` where `t` was never added.
    RemovedAbsentTerm(String),
}

impl fmt::Display for Lint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lint::ImplicitIntercept => {
                f.write_str("intercept included implicitly; write `1 +` to make it explicit")
            }
            Lint::InterceptRemoved => f.write_str("intercept removed"),
            Lint::ConflictingIntercept => f.write_str(
                "intercept is both added and removed; the last setting wins and the intercept is removed",
            ),
            Lint::InterceptInProduct(e) => write!(
                f,
                "`{e}` uses an intercept literal inside a product; it only sets the intercept"
            ),
            Lint::DuplicateTerm(t) => write!(f, "term `{t}` appears more than once"),
            Lint::RemovedAbsentTerm(t) => write!(f, "removing `{t}`, which is not in the model"),
        }
    }
}

/// Expands a fixed-effect right-hand side.
pub fn expand(rhs: &Expr) -> Result<TermList, TermError> {
    expand_with_lints(rhs).map(|(tl, _)| tl)
}

pub fn expand_with_lints(rhs: &Expr) -> Result<(TermList, Vec<Lint>), TermError> {
    let mut enc = Encoder {
        intercept: true,
        positive: true,
        settings: Vec::new(),
        lints: Vec::new(),
    };
    let raw = enc.encode(rhs)?;
    let tl = TermList::new(raw, enc.intercept);

    let mut lints = Vec::new();
    if enc.settings.is_empty() {
        lints.push(Lint::ImplicitIntercept);
    }
    if enc.settings.contains(&true) && enc.settings.contains(&false) && !tl.intercept {
        lints.push(Lint::ConflictingIntercept);
    }
    if !tl.intercept {
        lints.push(Lint::InterceptRemoved);
    }
    lints.extend(enc.lints);
    Ok((tl, lints))
}

/// Expands the right-hand side of formula text such as `y ~ a*b`.
pub fn expand_text(text: &str) -> Result<TermList, Box<dyn std::error::Error + Send + Sync>> {
    let f = parse_formula(text)?;
    Ok(expand(&f.rhs)?)
}

struct Encoder {
    intercept: bool,
    /// False on the right of `-` or under a leading minus.
    positive: bool,
    /// Every intercept assignment, in order.
    settings: Vec<bool>,
    lints: Vec<Lint>,
}

impl Encoder {
    fn encode(&mut self, e: &Expr) -> Result<Vec<Term>, TermError> {
        match e {
            Expr::Int(v @ (0 | 1)) => {
                let set = (*v == 1) == self.positive;
                self.intercept = set;
                self.settings.push(set);
                Ok(Vec::new())
            }
            Expr::Int(v) => Err(TermError::InvalidLiteral(*v)),
            Expr::Var(name) => Ok(vec![Term::single(Atom::Var(name.clone()))]),
            Expr::Call { func, args } => {
                if !func.is_transform() {
                    return Err(TermError::StructuralCallInFixedContext(e.to_string()));
                }
                match args.as_slice() {
                    [Arg::Expr(Expr::Var(v))] => {
                        Ok(vec![Term::single(Atom::Transform(*func, v.clone()))])
                    }
                    _ => Err(TermError::InvalidTransform(e.to_string())),
                }
            }
            Expr::Group { .. } => Err(TermError::GroupInFixedContext(e.to_string())),
            Expr::Sum(l, r) => {
                let mut left = self.encode(l)?;
                let right = self.encode(r)?;
                for t in right {
                    if left.contains(&t) {
                        self.lints.push(Lint::DuplicateTerm(t.to_string()));
                    } else {
                        left.push(t);
                    }
                }
                Ok(left)
            }
            Expr::Diff(l, r) => {
                let left = self.encode(l)?;
                let removed = self.negated(r)?;
                Ok(self.delete(left, removed))
            }
            Expr::Neg(inner) => {
                let removed = self.negated(inner)?;
                Ok(self.delete(Vec::new(), removed))
            }
            Expr::Interact(l, r) => {
                self.lint_literal_operand(e, l, r);
                let left = self.encode(l)?;
                let right = self.encode(r)?;
                Ok(product(&left, &right))
            }
            Expr::Cross(l, r) => {
                self.lint_literal_operand(e, l, r);
                let left = self.encode(l)?;
                let right = self.encode(r)?;
                // An empty left operand swallows the whole product; this is
                // the asymmetry between `1*x` and `x*1`.
                if left.is_empty() {
                    return Ok(left);
                }
                let inter = product(&left, &right);
                let mut out = left;
                for t in right.into_iter().chain(inter) {
                    if !out.contains(&t) {
                        out.push(t);
                    }
                }
                Ok(out)
            }
            Expr::Power(base, k) => {
                if matches!(**base, Expr::Int(_)) {
                    self.lints.push(Lint::InterceptInProduct(e.to_string()));
                }
                let left = self.encode(base)?;
                let mut acc = left.clone();
                for _ in 1..*k {
                    acc = product(&left, &acc);
                }
                Ok(acc)
            }
        }
    }

    fn negated(&mut self, e: &Expr) -> Result<Vec<Term>, TermError> {
        self.positive = !self.positive;
        let out = self.encode(e);
        self.positive = !self.positive;
        out
    }

    fn delete(&mut self, left: Vec<Term>, removed: Vec<Term>) -> Vec<Term> {
        for t in &removed {
            if !left.contains(t) {
                self.lints.push(Lint::RemovedAbsentTerm(t.to_string()));
            }
        }
        left.into_iter().filter(|t| !removed.contains(t)).collect()
    }

    fn lint_literal_operand(&mut self, e: &Expr, l: &Expr, r: &Expr) {
        if matches!(l, Expr::Int(_)) || matches!(r, Expr::Int(_)) {
            self.lints.push(Lint::InterceptInProduct(e.to_string()));
        }
    }
}

/// Pairwise unions with the left operand outermost, duplicates dropped.
fn product(left: &[Term], right: &[Term]) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::with_capacity(left.len() * right.len());
    for l in left {
        for r in right {
            let t = l.union(r);
            if !out.contains(&t) {
                out.push(t);
            }
        }
    }
    out
}
