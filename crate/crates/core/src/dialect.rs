//! Lowering of both random-effect dialects to (design block, structure)
//! pairs, and translation between the dialects.
//!
//! Grouped: `(lhs | g)` is `US(q) ⊗ Id(m)`, `(lhs || g)` is `Diag(q) ⊗ Id(m)`.
//! Structural: a `:` product of covariance calls over factors is the
//! Kronecker product of the calls in written order, with the design column of
//! an observation given by its level combination (first factor slowest).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use crate::covariance::{Context, KnownMatrix, Pedigree, VarStructure};
use crate::data::{Column, DataTable};
use crate::design::{build_fixed, grouping, RandomBlock};
use crate::formula::{Arg, Expr, Formula, Func};
use crate::model::ModelError;
use crate::terms::{expand, Atom};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dialect {
    Grouped,
    Structural,
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Grouped => "grouped",
            Dialect::Structural => "structural",
        })
    }
}

impl std::str::FromStr for Dialect {
    type Err = String;
    fn from_str(s: &str) -> Result<Dialect, String> {
        match s {
            "grouped" | "lmer" => Ok(Dialect::Grouped),
            "structural" | "asreml" => Ok(Dialect::Structural),
            other => Err(format!("unknown dialect `{other}`")),
        }
    }
}

/// Known relationship matrices attached to factors by name.
#[derive(Debug, Clone, Default)]
pub struct Resources {
    /// Covariance-scale matrices from inverse triplet files; row k belongs to
    /// factor level k.
    pub ginverse: BTreeMap<String, Arc<KnownMatrix>>,
    /// Pedigrees with their relationship matrix; levels map by id.
    pub pedigree: BTreeMap<String, (Pedigree, Arc<KnownMatrix>)>,
}

impl Resources {
    pub fn add_pedigree(&mut self, factor: &str, pedigree: Pedigree) {
        let a = KnownMatrix {
            label: format!("A({factor})"),
            matrix: pedigree.nrm(),
        };
        self.pedigree
            .insert(factor.to_string(), (pedigree, Arc::new(a)));
    }

    pub fn add_ginverse(&mut self, factor: &str, k: KnownMatrix) {
        self.ginverse.insert(factor.to_string(), Arc::new(k));
    }

    fn has(&self, factor: &str) -> bool {
        self.ginverse.contains_key(factor) || self.pedigree.contains_key(factor)
    }

    /// Structure and level-to-index map for a factor with a known matrix.
    fn known(
        &self,
        factor: &str,
        levels: &[String],
    ) -> Result<Option<(Arc<KnownMatrix>, Vec<usize>)>, ModelError> {
        if let Some((ped, a)) = self.pedigree.get(factor) {
            let map = levels
                .iter()
                .map(|l| {
                    ped.position(l).ok_or_else(|| ModelError::UnknownLevel {
                        factor: factor.to_string(),
                        level: l.clone(),
                    })
                })
                .collect::<Result<_, _>>()?;
            return Ok(Some((a.clone(), map)));
        }
        if let Some(k) = self.ginverse.get(factor) {
            if k.dim() != levels.len() {
                return Err(ModelError::Cov(
                    crate::covariance::CovError::DimensionMismatch {
                        expected: levels.len(),
                        found: k.dim(),
                    },
                ));
            }
            return Ok(Some((k.clone(), (0..levels.len()).collect())));
        }
        Ok(None)
    }
}

/// A lowered random or residual term.
#[derive(Debug, Clone, PartialEq)]
pub struct LoweredTerm {
    pub dialect: Dialect,
    pub source: String,
    pub design: RandomBlock,
    pub structure: VarStructure,
    /// Set when surplus variance components were absorbed into one scale.
    pub rewritten: bool,
}

impl LoweredTerm {
    pub fn summary(&self) -> String {
        format!(
            "{}: {}, {} parameters, {}",
            self.source,
            self.structure,
            self.structure.param_count(),
            self.design
        )
    }
}

struct FactorRef<'a> {
    name: String,
    levels: &'a [String],
    codes: &'a [Option<u32>],
}

fn factor_ref<'a>(e: &Expr, table: &'a DataTable) -> Result<FactorRef<'a>, ModelError> {
    let Expr::Var(name) = e else {
        return Err(ModelError::Unsupported {
            term: e.to_string(),
            reason: "expected a factor name".into(),
        });
    };
    match table.column(name)? {
        Column::Factor { levels, codes } => Ok(FactorRef {
            name: name.clone(),
            levels,
            codes,
        }),
        Column::Numeric(_) => Err(ModelError::NotAFactor(name.clone())),
    }
}

/// Lowers `(effects | grouping)` or `(effects || grouping)`.
pub fn lower_grouped(
    node: &Expr,
    table: &DataTable,
    res: &Resources,
) -> Result<LoweredTerm, ModelError> {
    let Expr::Group {
        effects,
        grouping: gexpr,
        correlated,
    } = node
    else {
        return Err(ModelError::Unsupported {
            term: node.to_string(),
            reason: "not a grouped term".into(),
        });
    };
    let tl = expand(effects)?;
    if !correlated {
        for atom in tl.atoms() {
            if table.eval_atom(atom)?.column_type() == crate::data::ColumnType::Factor {
                return Err(ModelError::FactorWithDoubleBar {
                    term: node.to_string(),
                    factor: atom.to_string(),
                });
            }
        }
    }
    let lhs = build_fixed(&tl, table)?;
    let q = lhs.ncols();
    if q == 0 {
        return Err(ModelError::Unsupported {
            term: node.to_string(),
            reason: "the left-hand side has no effects".into(),
        });
    }
    let g = grouping(gexpr, table)?;

    if let Expr::Var(name) = &**gexpr {
        if res.has(name) {
            if q != 1 || !tl.intercept {
                return Err(ModelError::Unsupported {
                    term: node.to_string(),
                    reason: "a relationship matrix needs an intercept-only term such as `(1 | g)`"
                        .into(),
                });
            }
            let (k, map) = res.known(name, &g.labels)?.expect("resource present");
            let labels = known_labels(&k, res, name, &g.labels);
            let codes: Vec<Option<usize>> = g.codes.iter().map(|c| c.map(|c| map[c])).collect();
            return Ok(LoweredTerm {
                dialect: Dialect::Grouped,
                source: node.to_string(),
                design: RandomBlock::indicator(&codes, labels),
                structure: VarStructure::Giv(k),
                rewritten: false,
            });
        }
    }

    let m = g.labels.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..table.n_rows())
        .map(|i| match g.codes[i] {
            Some(gi) => (0..q).map(|e| (e * m + gi, lhs.values[(i, e)])).collect(),
            None => Vec::new(),
        })
        .collect();
    let design = RandomBlock::from_rows(m, q, &rows, lhs.labels.clone(), g.labels);
    let inner = if *correlated {
        VarStructure::Us(q)
    } else {
        VarStructure::Diag(q)
    };
    Ok(LoweredTerm {
        dialect: Dialect::Grouped,
        source: node.to_string(),
        design,
        structure: VarStructure::Kron(vec![inner, VarStructure::Id(m)]),
        rewritten: false,
    })
}

fn known_labels(k: &KnownMatrix, res: &Resources, factor: &str, levels: &[String]) -> Vec<String> {
    match res.pedigree.get(factor) {
        Some((ped, _)) => ped.records().iter().map(|r| r.id.clone()).collect(),
        None => {
            debug_assert_eq!(k.dim(), levels.len());
            levels.to_vec()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LeafKind {
    Bare,
    Id,
    Idv,
    Diag,
    Us,
    Ar1,
    Ar1v,
    Giv,
}

impl LeafKind {
    fn from_func(f: Func) -> Option<LeafKind> {
        Some(match f {
            Func::Id => LeafKind::Id,
            Func::Idv => LeafKind::Idv,
            Func::Diag => LeafKind::Diag,
            Func::Us => LeafKind::Us,
            Func::Ar1 => LeafKind::Ar1,
            Func::Ar1v => LeafKind::Ar1v,
            Func::Giv => LeafKind::Giv,
            _ => return None,
        })
    }

    fn structure(self, dim: usize) -> VarStructure {
        match self {
            LeafKind::Bare | LeafKind::Id => VarStructure::Id(dim),
            LeafKind::Idv => VarStructure::IdV(dim),
            LeafKind::Diag => VarStructure::Diag(dim),
            LeafKind::Us => VarStructure::Us(dim),
            LeafKind::Ar1 => VarStructure::Ar1(dim),
            LeafKind::Ar1v => VarStructure::Ar1V(dim),
            LeafKind::Giv => unreachable!("giv needs its matrix"),
        }
    }
}

/// One element of a `:` product in the structural dialect.
enum Element<'a> {
    Leaf {
        kind: LeafKind,
        factor: Option<FactorRef<'a>>,
        dim: usize,
    },
    At {
        factor: FactorRef<'a>,
        level: Option<String>,
    },
}

fn parse_element<'a>(
    e: &Expr,
    table: Option<&'a DataTable>,
    allow_dims: bool,
) -> Result<Element<'a>, ModelError> {
    let unsupported = |reason: &str| ModelError::Unsupported {
        term: e.to_string(),
        reason: reason.to_string(),
    };
    let need_table = || table.ok_or_else(|| unsupported("data are needed to resolve factors"));
    match e {
        Expr::Var(_) => {
            let f = factor_ref(e, need_table()?)?;
            Ok(Element::Leaf {
                kind: LeafKind::Bare,
                dim: f.levels.len(),
                factor: Some(f),
            })
        }
        Expr::Call {
            func: Func::At,
            args,
        } => match args.as_slice() {
            [Arg::Expr(fe)] => Ok(Element::At {
                factor: factor_ref(fe, need_table()?)?,
                level: None,
            }),
            [Arg::Expr(fe), Arg::Str(level)] => {
                let factor = factor_ref(fe, need_table()?)?;
                if !factor.levels.contains(level) {
                    return Err(ModelError::UnknownLevel {
                        factor: factor.name,
                        level: level.clone(),
                    });
                }
                Ok(Element::At {
                    factor,
                    level: Some(level.clone()),
                })
            }
            _ => Err(unsupported(
                "expected `at(factor)` or `at(factor, \"level\")`",
            )),
        },
        Expr::Call { func, args } => {
            let kind = LeafKind::from_func(*func)
                .ok_or_else(|| unsupported("not a covariance function"))?;
            match args.as_slice() {
                [Arg::Expr(Expr::Int(d))] if allow_dims && kind != LeafKind::Giv => {
                    Ok(Element::Leaf {
                        kind,
                        factor: None,
                        dim: *d as usize,
                    })
                }
                [Arg::Expr(fe @ Expr::Var(_))] => {
                    let f = factor_ref(fe, need_table()?)?;
                    Ok(Element::Leaf {
                        kind,
                        dim: f.levels.len(),
                        factor: Some(f),
                    })
                }
                _ => Err(unsupported(if allow_dims {
                    "expected a factor or a dimension argument"
                } else {
                    "expected a single factor argument"
                })),
            }
        }
        _ => Err(unsupported(
            "expected a product of covariance functions over factors",
        )),
    }
}

/// Turns per-leaf structures into one structure, single leaves unwrapped.
fn combine(mut leaves: Vec<VarStructure>) -> VarStructure {
    if leaves.len() == 1 {
        leaves.pop().expect("one leaf")
    } else {
        VarStructure::Kron(leaves)
    }
}

/// Lowers one summand of a structural random formula.
pub fn lower_structural(
    term: &Expr,
    table: &DataTable,
    res: &Resources,
) -> Result<LoweredTerm, ModelError> {
    if let Expr::Call {
        func: Func::Str,
        args,
    } = term
    {
        return lower_str(term, args, table);
    }
    let mut leaves = Vec::new();
    let mut mask: Option<Vec<bool>> = None;
    for part in term.interaction_factors() {
        match parse_element(part, Some(table), false)? {
            Element::At { factor, level } => {
                let Some(level) = level else {
                    return Err(ModelError::Unsupported {
                        term: term.to_string(),
                        reason: "`at(f)` without a level is only available in the residual formula"
                            .into(),
                    });
                };
                let k = factor
                    .levels
                    .iter()
                    .position(|l| *l == level)
                    .expect("checked") as u32;
                let keep: Vec<bool> = factor.codes.iter().map(|c| *c == Some(k)).collect();
                mask = Some(match mask {
                    None => keep,
                    Some(m) => m.iter().zip(&keep).map(|(a, b)| *a && *b).collect(),
                });
            }
            Element::Leaf { kind, factor, dim } => {
                leaves.push((kind, factor.expect("factor argument"), dim))
            }
        }
    }
    if leaves.is_empty() {
        return Err(ModelError::Unsupported {
            term: term.to_string(),
            reason: "no covariance function or factor".into(),
        });
    }

    // Known matrices replace the level indexing of their factor.
    let mut structures = Vec::with_capacity(leaves.len());
    let mut maps: Vec<Option<Vec<usize>>> = Vec::with_capacity(leaves.len());
    let mut dims = Vec::with_capacity(leaves.len());
    let all_bare = leaves.iter().all(|(k, _, _)| *k == LeafKind::Bare);
    for (i, (kind, f, dim)) in leaves.iter().enumerate() {
        if *kind == LeafKind::Giv {
            let (k, map) = res
                .known(&f.name, f.levels)?
                .ok_or_else(|| ModelError::MissingGinverse(f.name.clone()))?;
            dims.push(k.dim());
            structures.push(VarStructure::Giv(k));
            maps.push(Some(map));
        } else {
            let kind = if all_bare && i == 0 {
                LeafKind::Idv
            } else {
                *kind
            };
            structures.push(kind.structure(*dim));
            dims.push(*dim);
            maps.push(None);
        }
    }
    let structure = combine(structures);
    let (structure, _) = structure.check_identifiability(Context::Random)?;

    let n = table.n_rows();
    let codes: Vec<Option<usize>> = (0..n)
        .map(|r| {
            let mut idx = 0usize;
            for ((_, f, _), (map, dim)) in leaves.iter().zip(maps.iter().zip(&dims)) {
                let c = f.codes[r]? as usize;
                idx = idx * dim + map.as_ref().map_or(c, |m| m[c]);
            }
            Some(idx)
        })
        .collect();
    let codes: Vec<Option<usize>> = match &mask {
        Some(m) => codes
            .into_iter()
            .zip(m)
            .map(|(c, keep)| if *keep { c } else { None })
            .collect(),
        None => codes,
    };
    let labels = product_labels(
        &leaves.iter().map(|(_, f, _)| f).collect::<Vec<_>>(),
        res,
        &leaves,
    );
    Ok(LoweredTerm {
        dialect: Dialect::Structural,
        source: term.to_string(),
        design: RandomBlock::indicator(&codes, labels),
        structure,
        rewritten: false,
    })
}

fn product_labels(
    factors: &[&FactorRef<'_>],
    res: &Resources,
    leaves: &[(LeafKind, FactorRef<'_>, usize)],
) -> Vec<String> {
    let mut out = vec![String::new()];
    for (f, (kind, _, _)) in factors.iter().zip(leaves) {
        let names: Vec<String> = if *kind == LeafKind::Giv {
            match res.pedigree.get(&f.name) {
                Some((ped, _)) => ped.records().iter().map(|r| r.id.clone()).collect(),
                None => f.levels.to_vec(),
            }
        } else {
            f.levels.to_vec()
        };
        out = out
            .iter()
            .flat_map(|prefix| {
                names.iter().map(move |n| {
                    if prefix.is_empty() {
                        n.clone()
                    } else {
                        format!("{prefix}:{n}")
                    }
                })
            })
            .collect();
    }
    out
}

fn one_sided(arg: &Arg) -> Option<&Expr> {
    match arg {
        Arg::Formula(f) if f.lhs.is_none() => Some(&f.rhs),
        _ => None,
    }
}

/// `str(~effects, ~structure)`: effects in written order, no implicit
/// intercept; each summand is a factor or a factor times numeric variables.
fn lower_str(term: &Expr, args: &[Arg], table: &DataTable) -> Result<LoweredTerm, ModelError> {
    let unsupported = |reason: &str| ModelError::Unsupported {
        term: term.to_string(),
        reason: reason.to_string(),
    };
    let (effects, structure) = match args {
        [a, b] => (
            one_sided(a)
                .ok_or_else(|| unsupported("first argument must be a one-sided formula"))?,
            one_sided(b)
                .ok_or_else(|| unsupported("second argument must be a one-sided formula"))?,
        ),
        _ => return Err(unsupported("expected `str(~effects, ~structure)`")),
    };

    // Each effect: (factor, numeric multipliers).
    let mut blocks: Vec<(FactorRef<'_>, Vec<&[f64]>, String)> = Vec::new();
    for s in effects.summands() {
        let mut factor = None;
        let mut nums = Vec::new();
        for part in s.interaction_factors() {
            let Expr::Var(name) = part else {
                return Err(unsupported(
                    "effects must be factors or factor:numeric products",
                ));
            };
            match table.column(name)? {
                Column::Factor { .. } if factor.is_none() => {
                    factor = Some(factor_ref(part, table)?)
                }
                Column::Factor { .. } => {
                    return Err(unsupported("each effect may contain only one factor"))
                }
                Column::Numeric(v) => nums.push(v.as_slice()),
            }
        }
        let f = factor.ok_or_else(|| unsupported("each effect needs a factor"))?;
        blocks.push((f, nums, s.to_string()));
    }

    let mut leaves = Vec::new();
    for part in structure.interaction_factors() {
        match parse_element(part, Some(table), true)? {
            Element::Leaf { kind, dim, .. } if kind != LeafKind::Giv => {
                leaves.push(kind.structure(dim))
            }
            _ => {
                return Err(unsupported(
                    "the structure must be a product of covariance functions",
                ))
            }
        }
    }
    if structure.summands().len() > 1 || leaves.is_empty() {
        return Err(unsupported(
            "the structure must be a single product of covariance functions",
        ));
    }
    let vs = combine(leaves);
    let total: usize = blocks.iter().map(|(f, _, _)| f.levels.len()).sum();
    if vs.dim() != total {
        return Err(ModelError::StrDimensionMismatch {
            term: term.to_string(),
            structure: vs.dim(),
            effects: total,
        });
    }
    let (vs, _) = vs.check_identifiability(Context::Random)?;

    let same_m = blocks
        .iter()
        .all(|(f, _, _)| f.levels.len() == blocks[0].0.levels.len());
    let n = table.n_rows();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut offset = 0;
    for (f, nums, _) in &blocks {
        for (i, row) in rows.iter_mut().enumerate() {
            if let Some(c) = f.codes[i] {
                let v: f64 = nums.iter().map(|x| x[i]).product();
                row.push((offset + c as usize, v));
            }
        }
        offset += f.levels.len();
    }
    let effect_labels: Vec<String> = blocks.iter().map(|(_, _, s)| s.clone()).collect();
    let design = if same_m {
        RandomBlock::from_rows(
            blocks[0].0.levels.len(),
            blocks.len(),
            &rows,
            effect_labels,
            blocks[0].0.levels.to_vec(),
        )
    } else {
        let labels = blocks
            .iter()
            .flat_map(|(f, _, s)| f.levels.iter().map(move |l| format!("{s}|{l}")))
            .collect();
        RandomBlock::from_rows(total, 1, &rows, vec!["effect".into()], labels)
    };
    Ok(LoweredTerm {
        dialect: Dialect::Structural,
        source: term.to_string(),
        design,
        structure: vs,
        rewritten: false,
    })
}

/// Lowers a residual formula. Without `at`, one term covers every row; with
/// `at(f)`, each level of `f` gets its own block with its own parameters.
/// Each factor of the product is indexed over the contiguous run of its
/// levels observed inside the block, so missing plots keep their lag.
pub fn lower_residual(rhs: &Expr, table: &DataTable) -> Result<Vec<LoweredTerm>, ModelError> {
    let mut at: Option<FactorRef<'_>> = None;
    let mut leaves: Vec<(LeafKind, FactorRef<'_>)> = Vec::new();
    for part in rhs.interaction_factors() {
        match parse_element(part, Some(table), false)? {
            Element::At {
                factor,
                level: None,
            } if at.is_none() => at = Some(factor),
            Element::At { .. } => {
                return Err(ModelError::Unsupported {
                    term: rhs.to_string(),
                    reason: "the residual formula accepts a single `at(factor)`".into(),
                })
            }
            Element::Leaf {
                kind: LeafKind::Giv,
                ..
            } => {
                return Err(ModelError::Unsupported {
                    term: rhs.to_string(),
                    reason: "`giv` is not available in the residual formula".into(),
                })
            }
            Element::Leaf { kind, factor, .. } => leaves.push((kind, factor.expect("factor"))),
        }
    }
    if leaves.is_empty() {
        return Err(ModelError::Unsupported {
            term: rhs.to_string(),
            reason: "the residual formula needs at least one factor".into(),
        });
    }

    let n = table.n_rows();
    let blocks: Vec<(String, Vec<usize>)> = match &at {
        None => vec![(String::new(), (0..n).collect())],
        Some(f) => f
            .levels
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let rows = (0..n).filter(|&i| f.codes[i] == Some(k as u32)).collect();
                (format!("at({}, \"{l}\")", f.name), rows)
            })
            .filter(|(_, rows): &(String, Vec<usize>)| !rows.is_empty())
            .collect(),
    };

    let mut out = Vec::with_capacity(blocks.len());
    for (tag, rows) in blocks {
        let mut structures = Vec::with_capacity(leaves.len());
        let mut ranges = Vec::with_capacity(leaves.len());
        for (kind, f) in &leaves {
            let observed: Vec<u32> = rows.iter().filter_map(|&i| f.codes[i]).collect();
            let lo = *observed.iter().min().expect("complete rows") as usize;
            let hi = *observed.iter().max().expect("complete rows") as usize;
            ranges.push((lo, hi - lo + 1));
            structures.push(kind.structure(hi - lo + 1));
        }
        let mut codes: Vec<Option<usize>> = vec![None; n];
        let mut seen = std::collections::HashMap::new();
        for &i in &rows {
            let mut idx = 0usize;
            for ((_, f), (lo, dim)) in leaves.iter().zip(&ranges) {
                idx = idx * dim + (f.codes[i].expect("complete rows") as usize - lo);
            }
            if let Some(prev) = seen.insert(idx, i) {
                return Err(ModelError::DuplicateResidualCell {
                    first: prev,
                    second: i,
                });
            }
            codes[i] = Some(idx);
        }
        let structure = combine(structures);
        let surplus = structure.variance_components() >= 2;
        let (structure, _) = structure.check_identifiability(Context::Residual)?;
        let cells = structure.dim();
        let source = if tag.is_empty() {
            rhs.to_string()
        } else {
            let rest: Vec<String> = rhs
                .interaction_factors()
                .iter()
                .filter(|p| !matches!(p, Expr::Call { func: Func::At, .. }))
                .map(|p| p.to_string())
                .collect();
            format!("{tag}:{}", rest.join(":"))
        };
        out.push(LoweredTerm {
            dialect: Dialect::Structural,
            source,
            design: RandomBlock::indicator(&codes, (0..cells).map(|c| c.to_string()).collect()),
            structure,
            rewritten: surplus,
        });
    }
    Ok(out)
}

/// Default residual: independent errors with one variance.
pub fn default_residual(n: usize) -> LoweredTerm {
    let codes: Vec<Option<usize>> = (0..n).map(Some).collect();
    LoweredTerm {
        dialect: Dialect::Structural,
        source: "units".into(),
        design: RandomBlock::indicator(&codes, (1..=n).map(|i| i.to_string()).collect()),
        structure: VarStructure::IdV(n),
        rewritten: false,
    }
}

/// Factors used by a residual formula, in sort-key order: the `at` factor
/// first, then the product factors as written.
pub fn residual_sort_keys(rhs: &Expr) -> Vec<String> {
    let mut at = Vec::new();
    let mut rest = Vec::new();
    for part in rhs.interaction_factors() {
        match part {
            Expr::Var(v) => rest.push(v.clone()),
            Expr::Call { func, args } => {
                if let Some(Arg::Expr(Expr::Var(v))) = args.first() {
                    if *func == Func::At {
                        at.push(v.clone());
                    } else {
                        rest.push(v.clone());
                    }
                }
            }
            _ => {}
        }
    }
    at.extend(rest);
    at
}

/// Where a term being translated lives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Random,
    Residual,
}

/// Numeric indicator columns the translated text refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DerivedIndicators {
    pub factor: String,
    pub prefix: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Translation {
    Text {
        text: String,
        derived: Vec<DerivedIndicators>,
    },
    Untranslatable(String),
}

impl Translation {
    fn text(s: String) -> Translation {
        Translation::Text {
            text: s,
            derived: Vec::new(),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Translation::Text { text, .. } => Some(text),
            Translation::Untranslatable(_) => None,
        }
    }
}

impl fmt::Display for Translation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Translation::Text { text, .. } => f.write_str(text),
            Translation::Untranslatable(reason) => write!(f, "untranslatable: {reason}"),
        }
    }
}

/// Prefix of derived indicator columns for `factor`.
pub fn indicator_prefix(factor: &str) -> String {
    format!("__ind_{factor}_")
}

/// Adds the derived indicator columns a translation refers to.
pub fn apply_derived(
    table: DataTable,
    derived: &[DerivedIndicators],
) -> Result<DataTable, ModelError> {
    let mut t = table;
    for d in derived {
        t = t.add_indicator_columns(&d.factor, &d.prefix)?.0;
    }
    Ok(t)
}

/// Translates one random term (or a residual formula) into the other
/// dialect. `table` is needed where levels or column types matter.
pub fn translate(
    term: &Expr,
    from: Dialect,
    role: Role,
    table: Option<&DataTable>,
) -> Result<Translation, ModelError> {
    if role == Role::Residual {
        return Ok(match from {
            Dialect::Grouped => Translation::Untranslatable(
                "the grouped dialect has no residual formula".into(),
            ),
            Dialect::Structural => Translation::Untranslatable(
                "no grouped-dialect residual structure; grouped models assume independent errors with one variance"
                    .into(),
            ),
        });
    }
    match from {
        Dialect::Grouped => grouped_to_structural(term, table),
        Dialect::Structural => structural_to_grouped(term, table),
    }
}

fn is_numeric(table: Option<&DataTable>, name: &str) -> Option<bool> {
    table
        .and_then(|t| t.column(name).ok())
        .map(|c| c.column_type() == crate::data::ColumnType::Numeric)
}

/// If `columns` are exactly the level indicators of a factor of `table`,
/// returns that factor.
fn indicator_source(table: &DataTable, columns: &[&str]) -> Option<String> {
    let cols: Vec<&[f64]> = columns
        .iter()
        .map(|c| table.numeric(c).ok())
        .collect::<Option<_>>()?;
    'factors: for (name, col) in table.columns() {
        let Column::Factor { levels, codes } = col else {
            continue;
        };
        if levels.len() != cols.len() {
            continue;
        }
        for (k, c) in cols.iter().enumerate() {
            for (i, code) in codes.iter().enumerate() {
                let want = match code {
                    Some(code) => f64::from(u8::from(*code as usize == k)),
                    None => continue,
                };
                if c[i] != want {
                    continue 'factors;
                }
            }
        }
        return Some(name.to_string());
    }
    None
}

fn grouped_to_structural(
    term: &Expr,
    table: Option<&DataTable>,
) -> Result<Translation, ModelError> {
    let Expr::Group {
        effects,
        grouping: g,
        correlated,
    } = term
    else {
        return Ok(Translation::Untranslatable(format!(
            "`{term}` is not a grouped random term"
        )));
    };
    let tl = expand(effects)?;
    let gparts: Vec<&Expr> = g.interaction_factors();
    if gparts.iter().any(|p| !matches!(p, Expr::Var(_))) {
        return Ok(Translation::Untranslatable(
            "the grouping must be a factor or an interaction of factors".into(),
        ));
    }
    let gnames: Vec<String> = gparts.iter().map(|p| p.to_string()).collect();

    // (1 | g1:g2:...) is a scaled identity over the level combinations.
    if tl.intercept && tl.is_empty() {
        let mut parts = vec![format!("idv({})", gnames[0])];
        parts.extend(gnames[1..].iter().map(|g| format!("id({g})")));
        return Ok(Translation::text(parts.join(":")));
    }
    if gnames.len() != 1 {
        return Ok(Translation::Untranslatable(
            "only intercept-only terms may use an interaction grouping".into(),
        ));
    }
    let gname = &gnames[0];
    let atoms = tl.atoms();
    if tl.terms().iter().any(|t| t.order() > 1) || atoms.iter().any(|a| !matches!(a, Atom::Var(_)))
    {
        return Ok(Translation::Untranslatable(
            "left-hand side must list plain variables".into(),
        ));
    }
    let names: Vec<&str> = atoms.iter().map(|a| a.variable()).collect();
    let func = if *correlated { "us" } else { "diag" };

    // (0 + f | g) with a factor f.
    if !tl.intercept && names.len() == 1 && is_numeric(table, names[0]) != Some(true) {
        if !correlated {
            return Ok(Translation::Untranslatable(format!(
                "`||` with factor `{}` does not decorrelate; convert the factor to indicator columns first",
                names[0]
            )));
        }
        return Ok(Translation::text(format!("us({}):id({gname})", names[0])));
    }

    // (0 + S1 + ... + St | g) where the S columns indicate a factor.
    if !tl.intercept {
        if let Some(t) = table {
            if let Some(f) = indicator_source(t, &names) {
                return Ok(Translation::text(format!("{func}({f}):id({gname})")));
            }
        }
    }

    // General numeric case through str().
    if let Some(t) = table {
        for n in &names {
            if is_numeric(Some(t), n) != Some(true) {
                return Ok(Translation::Untranslatable(format!(
                    "`{n}` is a factor; only numeric left-hand sides translate through str()"
                )));
            }
        }
    }
    let mut effects = Vec::new();
    if tl.intercept {
        effects.push(gname.clone());
    }
    effects.extend(names.iter().map(|n| format!("{gname}:{n}")));
    let q = effects.len();
    let m = match table.and_then(|t| t.factor(gname).ok()) {
        Some((levels, _)) => levels.len().to_string(),
        None => gname.clone(),
    };
    Ok(Translation::text(format!(
        "str(~{}, ~{func}({q}):id({m}))",
        effects.join(" + ")
    )))
}

fn structural_to_grouped(
    term: &Expr,
    table: Option<&DataTable>,
) -> Result<Translation, ModelError> {
    if term.any(&|e| matches!(e, Expr::Call { func: Func::At, .. })) {
        return Ok(Translation::Untranslatable(
            "`at` qualifiers have no grouped-dialect equivalent".into(),
        ));
    }
    if term.any(&|e| {
        matches!(
            e,
            Expr::Call {
                func: Func::Giv,
                ..
            }
        )
    }) {
        return Ok(Translation::Untranslatable(
            "known relationship matrices have no grouped-dialect equivalent".into(),
        ));
    }
    if term.any(&|e| {
        matches!(
            e,
            Expr::Call {
                func: Func::Ar1 | Func::Ar1v,
                ..
            }
        )
    }) {
        return Ok(Translation::Untranslatable(
            "autoregressive structures have no grouped-dialect equivalent".into(),
        ));
    }
    if let Expr::Call {
        func: Func::Str,
        args,
    } = term
    {
        return Ok(str_to_grouped(term, args));
    }

    let parts = term.interaction_factors();
    let mut kinds = Vec::with_capacity(parts.len());
    let mut names = Vec::with_capacity(parts.len());
    for p in &parts {
        match p {
            Expr::Var(v) => {
                kinds.push(LeafKind::Bare);
                names.push(v.clone());
            }
            Expr::Call { func, args } => match (LeafKind::from_func(*func), args.as_slice()) {
                (Some(k), [Arg::Expr(Expr::Var(v))]) => {
                    kinds.push(k);
                    names.push(v.clone());
                }
                _ => {
                    return Ok(Translation::Untranslatable(format!(
                        "`{p}` is not a covariance function of a factor"
                    )))
                }
            },
            _ => {
                return Ok(Translation::Untranslatable(format!(
                    "`{p}` is not a factor"
                )))
            }
        }
    }

    let scaled: Vec<usize> = kinds
        .iter()
        .enumerate()
        .filter(|(_, k)| !matches!(k, LeafKind::Bare | LeafKind::Id))
        .map(|(i, _)| i)
        .collect();
    match scaled.as_slice() {
        // Scaled identity in any spelling.
        [] | [_] if scaled.first().is_none_or(|&i| kinds[i] == LeafKind::Idv) => {
            Ok(Translation::text(format!("(1 | {})", names.join(":"))))
        }
        [0] if kinds.len() == 2 && kinds[1] == LeafKind::Id => {
            let (f, g) = (&names[0], &names[1]);
            match kinds[0] {
                LeafKind::Us => Ok(Translation::text(format!("(0 + {f} | {g})"))),
                LeafKind::Diag => {
                    let Some(t) = table else {
                        return Ok(Translation::Untranslatable(
                            "data are needed to enumerate the indicator columns".into(),
                        ));
                    };
                    let (levels, _) = t.factor(f)?;
                    let prefix = indicator_prefix(f);
                    let columns: Vec<String> =
                        levels.iter().map(|l| format!("{prefix}{l}")).collect();
                    Ok(Translation::Text {
                        text: format!("(0 + {} || {g})", columns.join(" + ")),
                        derived: vec![DerivedIndicators {
                            factor: f.clone(),
                            prefix,
                            columns,
                        }],
                    })
                }
                _ => Ok(Translation::Untranslatable(format!(
                    "`{term}` has no grouped-dialect equivalent"
                ))),
            }
        }
        _ => Ok(Translation::Untranslatable(format!(
            "`{term}` has no grouped-dialect equivalent"
        ))),
    }
}

fn str_to_grouped(term: &Expr, args: &[Arg]) -> Translation {
    let fail =
        || Translation::Untranslatable(format!("`{term}` has no grouped-dialect equivalent"));
    let (Some(effects), Some(structure)) = (
        args.first().and_then(one_sided),
        args.get(1).and_then(one_sided),
    ) else {
        return fail();
    };
    let mut group: Option<String> = None;
    let mut lhs: Vec<String> = Vec::new();
    let mut intercept = false;
    for (i, s) in effects.summands().into_iter().enumerate() {
        let parts = s.interaction_factors();
        let (g, rest) = match parts.as_slice() {
            [Expr::Var(g)] => (g.clone(), None),
            [Expr::Var(g), Expr::Var(x)] => (g.clone(), Some(x.clone())),
            _ => return fail(),
        };
        if group.get_or_insert_with(|| g.clone()) != &g {
            return fail();
        }
        match rest {
            None if i == 0 => intercept = true,
            None => return fail(),
            Some(x) => lhs.push(x),
        }
    }
    let sparts = structure.interaction_factors();
    let bar = match sparts.as_slice() {
        [Expr::Call { func: Func::Us, .. }, Expr::Call { func: Func::Id, .. }] => "|",
        [Expr::Call {
            func: Func::Diag, ..
        }, Expr::Call { func: Func::Id, .. }] => "||",
        _ => return fail(),
    };
    let mut parts = vec![if intercept { "1" } else { "0" }.to_string()];
    parts.extend(lhs);
    Translation::text(format!(
        "({} {bar} {})",
        parts.join(" + "),
        group.expect("at least one effect")
    ))
}

/// Parses a one-sided or bare term and returns its right-hand side.
pub fn parse_term(text: &str) -> Result<Expr, ModelError> {
    let f: Formula = crate::formula::parse_one_sided(text)?;
    Ok(f.rhs)
}
