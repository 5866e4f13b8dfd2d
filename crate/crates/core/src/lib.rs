//! Mixed-model formulas in two dialects, lowered to one covariance algebra
//! and fitted by REML.

pub mod corpus;
pub mod covariance;
pub mod data;
pub mod design;
pub mod dialect;
pub mod formula;
pub mod model;
pub mod reml;
pub mod terms;

pub use covariance::{KnownMatrix, Pedigree, SparseTriplets, VarStructure};
pub use data::{Column, ColumnType, DataTable, Schema};
pub use dialect::{translate, Dialect, Resources, Role, Translation};
pub use formula::{parse, parse_formula, Expr, Formula, ParseError};
pub use model::{build_model, ModelError, ModelFormulas, ModelSpec};
pub use reml::{blup, fit, reml_neg2loglik, FitOptions, FitResult, RemlError};
pub use terms::{canonical_text, expand, TermList};
