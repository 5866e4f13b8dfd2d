//! Model building: formulas plus data to the lowered `y = Xβ + Zb + e` form.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::covariance::CovError;
use crate::data::{Column, DataError, DataTable};
use crate::design::{build_fixed, DesignError, DesignMatrix};
use crate::dialect::{
    default_residual, lower_grouped, lower_residual, lower_structural, residual_sort_keys, Dialect,
    LoweredTerm, Resources,
};
use crate::formula::{parse_formula, parse_one_sided, Arg, Expr, Formula, ParseError};
use crate::terms::{expand_with_lints, Atom, Lint, TermError, TermList};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Term(#[from] TermError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cov(#[from] CovError),
    #[error("`{0}` must be a factor")]
    NotAFactor(String),
    #[error(
        "`{term}`: `||` does not decorrelate the levels of factor `{factor}`; use `|` for a correlated model or numeric indicator columns for independent ones"
    )]
    FactorWithDoubleBar { term: String, factor: String },
    #[error(
        "`{term}`: structure has dimension {structure} but the effects have {effects} columns"
    )]
    StrDimensionMismatch {
        term: String,
        structure: usize,
        effects: usize,
    },
    #[error("factor `{factor}` has no level `{level}`")]
    UnknownLevel { factor: String, level: String },
    #[error("`{term}`: {reason}")]
    Unsupported { term: String, reason: String },
    #[error("`giv({0})` needs a ginverse or pedigree for `{0}`")]
    MissingGinverse(String),
    #[error("residual rows {first} and {second} fall in the same cell")]
    DuplicateResidualCell { first: usize, second: usize },
    #[error("grouped random terms cannot be combined with structural random terms")]
    MixedDialects,
    #[error("the fixed formula needs a response on the left of `~`")]
    MissingResponse,
    #[error("response `{0}` must be a numeric variable or a transformation of one")]
    InvalidResponse(String),
    #[error("no complete rows remain after removing missing values")]
    NoCompleteRows,
}

impl ModelError {
    /// Short machine-readable category.
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::Parse(_) => "E_PARSE",
            ModelError::Data(DataError::Io { .. }) | ModelError::Cov(CovError::Io { .. }) => "E_IO",
            ModelError::Data(_) | ModelError::Design(DesignError::Data(_)) => "E_DATA",
            ModelError::Cov(_) => "E_COVARIANCE",
            ModelError::MixedDialects
            | ModelError::FactorWithDoubleBar { .. }
            | ModelError::Unsupported { .. } => "E_DIALECT",
            _ => "E_MODEL",
        }
    }
}

/// The three formulas of a model: fixed (possibly with inline grouped
/// terms), an optional one-sided random formula and an optional one-sided
/// residual formula.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFormulas {
    pub fixed: Formula,
    pub random: Option<Expr>,
    pub rcov: Option<Expr>,
}

impl ModelFormulas {
    pub fn parse(
        fixed: &str,
        random: Option<&str>,
        rcov: Option<&str>,
    ) -> Result<ModelFormulas, ModelError> {
        Ok(ModelFormulas {
            fixed: parse_formula(fixed)?,
            random: random
                .map(|r| parse_one_sided(r).map(|f| f.rhs))
                .transpose()?,
            rcov: rcov
                .map(|r| parse_one_sided(r).map(|f| f.rhs))
                .transpose()?,
        })
    }
}

/// Separates inline grouped terms from the fixed part of a right-hand side.
/// Returns `None` for the fixed part when nothing but groups remain.
pub fn split_groups(e: &Expr) -> Result<(Option<Expr>, Vec<Expr>), ModelError> {
    match e {
        Expr::Group { .. } => Ok((None, vec![e.clone()])),
        Expr::Sum(l, r) => {
            let (lf, mut lg) = split_groups(l)?;
            let (rf, rg) = split_groups(r)?;
            lg.extend(rg);
            let fixed = match (lf, rf) {
                (Some(a), Some(b)) => Some(Expr::sum(a, b)),
                (a, b) => a.or(b),
            };
            Ok((fixed, lg))
        }
        Expr::Diff(l, r) => {
            if r.contains_group() {
                return Err(ModelError::Unsupported {
                    term: e.to_string(),
                    reason: "random terms cannot be subtracted".into(),
                });
            }
            let (lf, lg) = split_groups(l)?;
            let fixed = match lf {
                Some(a) => Expr::diff(a, (**r).clone()),
                None => Expr::neg((**r).clone()),
            };
            Ok((Some(fixed), lg))
        }
        other if other.contains_group() => Err(ModelError::Unsupported {
            term: other.to_string(),
            reason: "random terms must be added at the top level of the formula".into(),
        }),
        other => Ok((Some(other.clone()), Vec::new())),
    }
}

fn collect_variables(e: &Expr, out: &mut BTreeSet<String>) {
    match e {
        Expr::Var(v) => {
            out.insert(v.clone());
        }
        Expr::Int(_) => {}
        Expr::Sum(l, r) | Expr::Diff(l, r) | Expr::Interact(l, r) | Expr::Cross(l, r) => {
            collect_variables(l, out);
            collect_variables(r, out);
        }
        Expr::Neg(x) | Expr::Power(x, _) => collect_variables(x, out),
        Expr::Group {
            effects, grouping, ..
        } => {
            collect_variables(effects, out);
            collect_variables(grouping, out);
        }
        Expr::Call { args, .. } => {
            for a in args {
                match a {
                    Arg::Expr(x) => collect_variables(x, out),
                    Arg::Formula(f) => {
                        if let Some(l) = &f.lhs {
                            collect_variables(l, out);
                        }
                        collect_variables(&f.rhs, out);
                    }
                    Arg::Str(_) => {}
                }
            }
        }
    }
}

/// Every variable a set of formulas refers to.
pub fn referenced_variables(formulas: &ModelFormulas) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    if let Some(l) = &formulas.fixed.lhs {
        collect_variables(l, &mut out);
    }
    collect_variables(&formulas.fixed.rhs, &mut out);
    for e in formulas.random.iter().chain(&formulas.rcov) {
        collect_variables(e, &mut out);
    }
    out
}

/// A lowered model, rows in model order.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub response: String,
    pub y: Vec<f64>,
    pub fixed: TermList,
    pub x: DesignMatrix,
    pub random: Vec<LoweredTerm>,
    /// Residual blocks; together they cover every row exactly once.
    pub residual: Vec<LoweredTerm>,
    /// Model row k is row `row_order[k]` of the input table.
    pub row_order: Vec<usize>,
    /// Input rows removed for missing values.
    pub dropped_rows: Vec<usize>,
    pub dialect: Option<Dialect>,
    pub lints: Vec<Lint>,
    pub warnings: Vec<String>,
    /// The table after deletion and sorting, aligned with `y`.
    pub table: DataTable,
}

impl ModelSpec {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q_total(&self) -> usize {
        self.random.iter().map(|t| t.design.q_total()).sum()
    }

    /// Random terms followed by residual blocks.
    pub fn variance_terms(&self) -> impl Iterator<Item = &LoweredTerm> {
        self.random.iter().chain(&self.residual)
    }

    pub fn param_count(&self) -> usize {
        self.variance_terms()
            .map(|t| t.structure.param_count())
            .sum()
    }

    /// `term/parameter` labels in parameter order.
    pub fn param_labels(&self) -> Vec<String> {
        self.variance_terms()
            .flat_map(|t| {
                t.structure
                    .param_names()
                    .into_iter()
                    .map(move |p| format!("{}/{p}", t.source))
            })
            .collect()
    }
}

fn response(lhs: &Expr, table: &DataTable) -> Result<Vec<f64>, ModelError> {
    let atom = match lhs {
        Expr::Var(v) => Atom::Var(v.clone()),
        Expr::Call { func, args } if func.is_transform() => match args.as_slice() {
            [Arg::Expr(Expr::Var(v))] => Atom::Transform(*func, v.clone()),
            _ => return Err(ModelError::InvalidResponse(lhs.to_string())),
        },
        _ => return Err(ModelError::InvalidResponse(lhs.to_string())),
    };
    match table.eval_atom(&atom)? {
        Column::Numeric(v) => Ok(v),
        Column::Factor { .. } => Err(ModelError::InvalidResponse(lhs.to_string())),
    }
}

/// Lowers formulas against data. Rows missing any referenced variable are
/// dropped; with a residual formula the remaining rows are sorted by its
/// factors (the `at` factor first, then the product factors as written, the
/// last varying fastest).
pub fn build_model(
    formulas: &ModelFormulas,
    table: &DataTable,
    res: &Resources,
) -> Result<ModelSpec, ModelError> {
    let lhs = formulas
        .fixed
        .lhs
        .as_ref()
        .ok_or(ModelError::MissingResponse)?;
    let (fixed_rhs, inline_groups) = split_groups(&formulas.fixed.rhs)?;

    let mut grouped = inline_groups;
    let mut structural = Vec::new();
    if let Some(r) = &formulas.random {
        for s in r.summands() {
            match s {
                Expr::Group { .. } => grouped.push(s.clone()),
                other if other.contains_group() => {
                    return Err(ModelError::Unsupported {
                        term: other.to_string(),
                        reason: "random terms must be added at the top level of the formula".into(),
                    })
                }
                other => structural.push(other.clone()),
            }
        }
    }
    if !grouped.is_empty() && !structural.is_empty() {
        return Err(ModelError::MixedDialects);
    }
    let dialect = match (grouped.is_empty(), structural.is_empty()) {
        (false, _) => Some(Dialect::Grouped),
        (_, false) => Some(Dialect::Structural),
        _ => None,
    };

    let vars = referenced_variables(formulas);
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    let complete = table.complete_rows(&names)?;
    if complete.is_empty() {
        return Err(ModelError::NoCompleteRows);
    }
    let dropped_rows: Vec<usize> = {
        let keep: BTreeSet<usize> = complete.iter().copied().collect();
        (0..table.n_rows()).filter(|r| !keep.contains(r)).collect()
    };
    let mut work = table.take_rows(&complete).drop_unused_levels();
    let mut row_order = complete;

    if let Some(rcov) = &formulas.rcov {
        let keys = residual_sort_keys(rcov);
        let codes: Vec<&[Option<u32>]> = keys
            .iter()
            .map(|k| work.factor(k).map(|(_, c)| c))
            .collect::<Result<_, _>>()?;
        let mut order: Vec<usize> = (0..work.n_rows()).collect();
        order.sort_by_key(|&i| codes.iter().map(|c| c[i]).collect::<Vec<_>>());
        row_order = order.iter().map(|&i| row_order[i]).collect();
        work = work.take_rows(&order);
    }

    let y = response(lhs, &work)?;
    let fixed_rhs = fixed_rhs.unwrap_or(Expr::Int(1));
    let (fixed, lints) = expand_with_lints(&fixed_rhs)?;
    let x = build_fixed(&fixed, &work)?;

    let mut warnings = Vec::new();
    if !dropped_rows.is_empty() {
        warnings.push(format!(
            "{} rows with missing values removed",
            dropped_rows.len()
        ));
    }
    if x.is_rank_deficient() {
        warnings.push(format!(
            "fixed design is rank deficient (rank {} of {} columns)",
            x.rank(),
            x.ncols()
        ));
    }

    let mut random = Vec::new();
    for g in &grouped {
        random.push(lower_grouped(g, &work, res)?);
    }
    for s in &structural {
        random.push(lower_structural(s, &work, res)?);
    }
    let residual = match &formulas.rcov {
        None => vec![default_residual(work.n_rows())],
        Some(rcov) => lower_residual(rcov, &work)?,
    };
    for r in &residual {
        if r.rewritten {
            warnings.push(format!(
                "residual `{}` had several variance components; rewritten to {} with one scale",
                r.source, r.structure
            ));
        }
    }

    Ok(ModelSpec {
        response: lhs.to_string(),
        y,
        fixed,
        x,
        random,
        residual,
        row_order,
        dropped_rows,
        dialect,
        lints,
        warnings,
        table: work,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::VarStructure;
    use crate::data::Schema;

    fn table() -> DataTable {
        let text =
            "y,x,g,r,c\n1,0.5,a,1,1\n2,,a,2,1\nNA,1,b,1,2\n4,2,b,2,2\n5,3,a,1,3\n6,1,b,2,3\n";
        let mut schema = Schema::new();
        schema.insert("r".into(), crate::data::ColumnType::Factor);
        schema.insert("c".into(), crate::data::ColumnType::Factor);
        DataTable::from_reader(text.as_bytes(), &schema).unwrap()
    }

    #[test]
    fn splits_inline_groups() {
        let f = parse_formula("y ~ 1 + x + (1 | g) + (0 + x || g)").unwrap();
        let (fixed, groups) = split_groups(&f.rhs).unwrap();
        assert_eq!(fixed.unwrap().to_string(), "1 + x");
        assert_eq!(groups.len(), 2);
        let f = parse_formula("y ~ (1 | g) - 1").unwrap();
        assert_eq!(split_groups(&f.rhs).unwrap().0.unwrap().to_string(), "-1");
        let f = parse_formula("y ~ x:(1 | g)");
        assert!(f.is_err() || split_groups(&f.unwrap().rhs).is_err());
    }

    #[test]
    fn listwise_deletion_and_sorting() {
        let m = ModelFormulas::parse("y ~ 1 + x", None, Some("~ar1(c):ar1(r)")).unwrap();
        let spec = build_model(&m, &table(), &Resources::default()).unwrap();
        assert_eq!(spec.dropped_rows, [1, 2]);
        // Sorted by column then row.
        assert_eq!(spec.row_order, [0, 3, 4, 5]);
        assert_eq!(spec.y, [1.0, 4.0, 5.0, 6.0]);
        assert_eq!(spec.residual.len(), 1);
        assert_eq!(spec.residual[0].structure.param_count(), 3);
    }

    #[test]
    fn mixed_dialects_rejected() {
        let m = ModelFormulas::parse("y ~ x + (1 | g)", Some("~idv(g)"), None).unwrap();
        assert_eq!(
            build_model(&m, &table(), &Resources::default()).unwrap_err(),
            ModelError::MixedDialects
        );
    }

    #[test]
    fn default_residual_and_labels() {
        let m = ModelFormulas::parse("y ~ 1 + x", Some("~idv(g)"), None).unwrap();
        let spec = build_model(&m, &table(), &Resources::default()).unwrap();
        assert_eq!(spec.residual[0].structure, VarStructure::IdV(4));
        assert_eq!(spec.param_labels(), ["idv(g)/var", "units/var"]);
        assert_eq!(spec.dialect, Some(Dialect::Structural));
    }

    #[test]
    fn unknown_variable() {
        let m = ModelFormulas::parse("y ~ 1 + zz", None, None).unwrap();
        assert!(matches!(
            build_model(&m, &table(), &Resources::default()),
            Err(ModelError::Data(DataError::UnknownVariable(_)))
        ));
    }
}
