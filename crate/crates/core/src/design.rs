//! Fixed-effect design matrices and sparse random-effect design blocks.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use faer::Mat;
use thiserror::Error;

use crate::data::{Column, DataError, DataTable};
use crate::formula::Expr;
use crate::terms::{Term, TermList};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("grouping variable `{0}` must be a factor")]
    NumericGrouping(String),
    #[error("grouping `{0}` has no observed levels")]
    EmptyGroup(String),
    #[error("grouping `{0}` must be a factor or an interaction of factors")]
    InvalidGrouping(String),
}

/// Dense n × p design matrix with column labels and per-term column spans.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: Mat<f64>,
    pub labels: Vec<String>,
    pub spans: Vec<(Term, Range<usize>)>,
    pub intercept: bool,
}

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn span_widths(&self) -> Vec<usize> {
        self.spans.iter().map(|(_, r)| r.len()).collect()
    }

    /// Numerical rank from singular values with the usual `max(n,p)·ε·σ₁`
    /// threshold.
    pub fn rank(&self) -> usize {
        if self.ncols() == 0 || self.nrows() == 0 {
            return 0;
        }
        let sv = match self.values.singular_values() {
            Ok(sv) => sv,
            Err(_) => return 0,
        };
        let top = sv.iter().cloned().fold(0.0, f64::max);
        let tol = self.nrows().max(self.ncols()) as f64 * f64::EPSILON * top;
        sv.iter().filter(|&&s| s > tol).count()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank() < self.ncols()
    }
}

/// Coded columns for one atom.
struct Coded {
    labels: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn code_column(name: &str, col: &Column, full: bool) -> Coded {
    match col {
        Column::Numeric(v) => Coded {
            labels: vec![name.to_string()],
            columns: vec![v.clone()],
        },
        Column::Factor { levels, codes } => {
            let first = usize::from(!full);
            let mut labels = Vec::new();
            let mut columns = Vec::new();
            for (k, level) in levels.iter().enumerate().skip(first) {
                labels.push(format!("{name}{level}"));
                columns.push(
                    codes
                        .iter()
                        .map(|c| match c {
                            Some(c) => f64::from(u8::from(*c as usize == k)),
                            None => f64::NAN,
                        })
                        .collect(),
                );
            }
            Coded { labels, columns }
        }
    }
}

/// Treatment coding: with an intercept every factor drops its first level;
/// without one, the first factor of the first factor-bearing term keeps all
/// levels. Interaction columns are products with the first component varying
/// fastest.
pub fn build_fixed(tl: &TermList, table: &DataTable) -> Result<DesignMatrix, DesignError> {
    let n = table.n_rows();
    let mut labels = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut spans = Vec::new();
    if tl.intercept {
        labels.push("(Intercept)".to_string());
        columns.push(vec![1.0; n]);
    }

    let mut full_coding_used = tl.intercept;
    for term in tl.terms() {
        let start = columns.len();
        let mut acc = Coded {
            labels: vec![String::new()],
            columns: vec![vec![1.0; n]],
        };
        for atom in term.components() {
            let col = table.eval_atom(atom)?;
            let full = !full_coding_used && col.column_type() == crate::data::ColumnType::Factor;
            if full {
                full_coding_used = true;
            }
            let coded = code_column(&atom.to_string(), &col, full);
            let mut next = Coded {
                labels: Vec::new(),
                columns: Vec::new(),
            };
            for (cl, cc) in coded.labels.iter().zip(&coded.columns) {
                for (al, ac) in acc.labels.iter().zip(&acc.columns) {
                    next.labels.push(if al.is_empty() {
                        cl.clone()
                    } else {
                        format!("{al}:{cl}")
                    });
                    next.columns
                        .push(ac.iter().zip(cc).map(|(a, b)| a * b).collect());
                }
            }
            acc = next;
        }
        labels.extend(acc.labels);
        columns.extend(acc.columns);
        spans.push((term.clone(), start..columns.len()));
    }

    let values = Mat::from_fn(n, columns.len(), |i, j| columns[j][i]);
    Ok(DesignMatrix {
        values,
        labels,
        spans,
        intercept: tl.intercept,
    })
}

/// Sparse n × (q·m) random-effect design in CSR form. Column `e·m + g` holds
/// effect `e` for group `g` (effect-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RandomBlock {
    n: usize,
    m: usize,
    q: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    pub effect_labels: Vec<String>,
    pub group_labels: Vec<String>,
}

impl RandomBlock {
    /// `rows[i]` lists the (column, value) entries of row i; zeros are dropped.
    pub fn from_rows(
        m: usize,
        q: usize,
        rows: &[Vec<(usize, f64)>],
        effect_labels: Vec<String>,
        group_labels: Vec<String>,
    ) -> RandomBlock {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in rows {
            let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
            for &(c, v) in r {
                assert!(c < m * q, "column {c} outside block of width {}", m * q);
                *entries.entry(c).or_insert(0.0) += v;
            }
            for (c, v) in entries {
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        RandomBlock {
            n: rows.len(),
            m,
            q,
            row_ptr,
            cols,
            vals,
            effect_labels,
            group_labels,
        }
    }

    /// One indicator per row: `codes[i]` is the column of row i, `None`
    /// leaves the row empty.
    pub fn indicator(codes: &[Option<usize>], labels: Vec<String>) -> RandomBlock {
        let m = labels.len();
        let rows: Vec<Vec<(usize, f64)>> = codes
            .iter()
            .map(|c| c.map(|c| vec![(c, 1.0)]).unwrap_or_default())
            .collect();
        RandomBlock::from_rows(m, 1, &rows, vec!["(Intercept)".into()], labels)
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn group_count(&self) -> usize {
        self.m
    }

    pub fn effects_per_group(&self) -> usize {
        self.q
    }

    pub fn q_total(&self) -> usize {
        self.m * self.q
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Rows with at least one nonzero.
    pub fn active_rows(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.row_ptr[i + 1] > self.row_ptr[i])
            .collect()
    }

    pub fn max_row_nnz(&self) -> usize {
        (0..self.n)
            .map(|i| self.row_ptr[i + 1] - self.row_ptr[i])
            .max()
            .unwrap_or(0)
    }

    pub fn column_labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.q_total());
        for e in &self.effect_labels {
            for g in &self.group_labels {
                out.push(format!("{e}|{g}"));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut z = Mat::zeros(self.n, self.q_total());
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&c, &v) in c.iter().zip(v) {
                z[(i, c)] = v;
            }
        }
        z
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (c, v) = self.row(i);
            out.extend(c.iter().zip(v).map(|(&c, &v)| (i, c, v)));
        }
        out
    }

    /// Zeroes every row where `keep` is false.
    pub fn mask_rows(&self, keep: &[bool]) -> RandomBlock {
        let rows: Vec<Vec<(usize, f64)>> = (0..self.n)
            .map(|i| {
                if keep[i] {
                    let (c, v) = self.row(i);
                    c.iter().copied().zip(v.iter().copied()).collect()
                } else {
                    Vec::new()
                }
            })
            .collect();
        RandomBlock::from_rows(
            self.m,
            self.q,
            &rows,
            self.effect_labels.clone(),
            self.group_labels.clone(),
        )
    }

    /// Rows reordered so that new row i is old row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> RandomBlock {
        let rows: Vec<Vec<(usize, f64)>> = order
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                c.iter().copied().zip(v.iter().copied()).collect()
            })
            .collect();
        RandomBlock::from_rows(
            self.m,
            self.q,
            &rows,
            self.effect_labels.clone(),
            self.group_labels.clone(),
        )
    }
}

impl fmt::Display for RandomBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Z {}×{} (q={}, m={})",
            self.n,
            self.q_total(),
            self.q,
            self.m
        )
    }
}

/// Levels and per-row codes of a grouping factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub name: String,
    pub labels: Vec<String>,
    pub codes: Vec<Option<usize>>,
}

/// Resolves `g` or `g1:g2:...` to a grouping. Interaction levels are the
/// observed combinations ordered with the first factor varying slowest.
pub fn grouping(expr: &Expr, table: &DataTable) -> Result<Grouping, DesignError> {
    let parts = expr.interaction_factors();
    let mut factors = Vec::with_capacity(parts.len());
    for p in &parts {
        let Expr::Var(name) = p else {
            return Err(DesignError::InvalidGrouping(expr.to_string()));
        };
        match table.column(name)? {
            Column::Factor { levels, codes } => factors.push((levels, codes)),
            Column::Numeric(_) => return Err(DesignError::NumericGrouping(name.clone())),
        }
    }
    let n = table.n_rows();
    let keys: Vec<Option<Vec<u32>>> = (0..n)
        .map(|i| factors.iter().map(|(_, c)| c[i]).collect())
        .collect();
    let mut observed: Vec<Vec<u32>> = keys.iter().flatten().cloned().collect();
    observed.sort_unstable();
    observed.dedup();
    if observed.is_empty() {
        return Err(DesignError::EmptyGroup(expr.to_string()));
    }
    let labels = observed
        .iter()
        .map(|k| {
            k.iter()
                .zip(&factors)
                .map(|(&c, (levels, _))| levels[c as usize].as_str())
                .collect::<Vec<_>>()
                .join(":")
        })
        .collect();
    let codes = keys
        .iter()
        .map(|k| {
            k.as_ref()
                .map(|k| observed.binary_search(k).expect("observed key"))
        })
        .collect();
    Ok(Grouping {
        name: expr.to_string(),
        labels,
        codes,
    })
}
