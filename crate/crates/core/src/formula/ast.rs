use std::fmt;

/// Functions that may appear in call position inside a formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Func {
    Us,
    Diag,
    Id,
    Idv,
    Ar1,
    Ar1v,
    At,
    Str,
    Giv,
    Log,
    Sqrt,
    Exp,
}

impl Func {
    pub const ALL: [Func; 12] = [
        Func::Us,
        Func::Diag,
        Func::Id,
        Func::Idv,
        Func::Ar1,
        Func::Ar1v,
        Func::At,
        Func::Str,
        Func::Giv,
        Func::Log,
        Func::Sqrt,
        Func::Exp,
    ];

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Us => "us",
            Func::Diag => "diag",
            Func::Id => "id",
            Func::Idv => "idv",
            Func::Ar1 => "ar1",
            Func::Ar1v => "ar1v",
            Func::At => "at",
            Func::Str => "str",
            Func::Giv => "giv",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
        }
    }

    /// Elementwise transformations of a numeric variable.
    pub fn is_transform(self) -> bool {
        matches!(self, Func::Log | Func::Sqrt | Func::Exp)
    }

    /// Covariance-structure functions and their qualifiers (`at`, `str`).
    pub fn is_structural(self) -> bool {
        !self.is_transform()
    }
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Formula {
    pub lhs: Option<Expr>,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Expr(Expr),
    /// Nested one-sided formula, as in `str(~a + b, ~diag(2):id(50))`.
    Formula(Box<Formula>),
    Str(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(String),
    /// Integer literal. Outside call arguments only 0 and 1 are produced by
    /// the parser.
    Int(u64),
    Sum(Box<Expr>, Box<Expr>),
    Diff(Box<Expr>, Box<Expr>),
    /// Leading unary minus, as in `-1 + x`.
    Neg(Box<Expr>),
    Interact(Box<Expr>, Box<Expr>),
    Cross(Box<Expr>, Box<Expr>),
    Power(Box<Expr>, u32),
    Group {
        effects: Box<Expr>,
        grouping: Box<Expr>,
        correlated: bool,
    },
    Call {
        func: Func,
        args: Vec<Arg>,
    },
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn sum(l: Expr, r: Expr) -> Expr {
        Expr::Sum(Box::new(l), Box::new(r))
    }

    pub fn diff(l: Expr, r: Expr) -> Expr {
        Expr::Diff(Box::new(l), Box::new(r))
    }

    pub fn neg(e: Expr) -> Expr {
        Expr::Neg(Box::new(e))
    }

    pub fn interact(l: Expr, r: Expr) -> Expr {
        Expr::Interact(Box::new(l), Box::new(r))
    }

    pub fn cross(l: Expr, r: Expr) -> Expr {
        Expr::Cross(Box::new(l), Box::new(r))
    }

    pub fn power(base: Expr, k: u32) -> Expr {
        Expr::Power(Box::new(base), k)
    }

    pub fn group(effects: Expr, grouping: Expr, correlated: bool) -> Expr {
        Expr::Group {
            effects: Box::new(effects),
            grouping: Box::new(grouping),
            correlated,
        }
    }

    pub fn call(func: Func, args: Vec<Arg>) -> Expr {
        Expr::Call { func, args }
    }

    /// Flattens a left- or right-nested chain of `+` into its summands.
    /// Differences and negations are kept whole.
    pub fn summands(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::Sum(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    /// Flattens a chain of `:` into its factors.
    pub fn interaction_factors(&self) -> Vec<&Expr> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a Expr>) {
            match e {
                Expr::Interact(l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                other => out.push(other),
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn contains_group(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Group { .. }))
    }

    /// True when any node (including nested formula arguments) satisfies `pred`.
    pub fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Var(_) | Expr::Int(_) => false,
            Expr::Sum(l, r) | Expr::Diff(l, r) | Expr::Interact(l, r) | Expr::Cross(l, r) => {
                l.any(pred) || r.any(pred)
            }
            Expr::Neg(e) | Expr::Power(e, _) => e.any(pred),
            Expr::Group {
                effects, grouping, ..
            } => effects.any(pred) || grouping.any(pred),
            Expr::Call { args, .. } => args.iter().any(|a| match a {
                Arg::Expr(e) => e.any(pred),
                Arg::Formula(f) => f.rhs.any(pred) || f.lhs.as_ref().is_some_and(|l| l.any(pred)),
                Arg::Str(_) => false,
            }),
        }
    }

    /// Binding strength used by the printer; larger binds tighter.
    fn precedence(&self) -> u8 {
        match self {
            Expr::Sum(..) | Expr::Diff(..) | Expr::Neg(..) => 1,
            Expr::Cross(..) => 3,
            Expr::Interact(..) => 4,
            Expr::Power(..) => 5,
            Expr::Var(_) | Expr::Int(_) | Expr::Call { .. } | Expr::Group { .. } => 6,
        }
    }

    fn fmt_operand(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        if self.precedence() < min_prec {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Var(name) => f.write_str(name),
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Sum(l, r) => {
                l.fmt_operand(f, 1)?;
                f.write_str(" + ")?;
                // A bare negation on the right re-parses as a signed operand.
                if matches!(**r, Expr::Neg(_)) {
                    write!(f, "{r}")
                } else {
                    r.fmt_operand(f, 2)
                }
            }
            Expr::Diff(l, r) => {
                l.fmt_operand(f, 1)?;
                f.write_str(" - ")?;
                r.fmt_operand(f, 2)
            }
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.fmt_operand(f, 2)
            }
            Expr::Cross(l, r) => {
                l.fmt_operand(f, 3)?;
                f.write_str("*")?;
                r.fmt_operand(f, 4)
            }
            Expr::Interact(l, r) => {
                l.fmt_operand(f, 4)?;
                f.write_str(":")?;
                r.fmt_operand(f, 5)
            }
            Expr::Power(b, k) => {
                b.fmt_operand(f, 6)?;
                write!(f, "^{k}")
            }
            Expr::Group {
                effects,
                grouping,
                correlated,
            } => {
                let bar = if *correlated { "|" } else { "||" };
                write!(f, "({effects} {bar} {grouping})")
            }
            Expr::Call { func, args } => {
                write!(f, "{func}(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Expr(e) => write!(f, "{e}"),
            Arg::Formula(form) => write!(f, "{form}"),
            Arg::Str(s) => write!(f, "\"{s}\""),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.lhs {
            Some(lhs) => write!(f, "{lhs} ~ {}", self.rhs),
            None => write!(f, "~{}", self.rhs),
        }
    }
}
