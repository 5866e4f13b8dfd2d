//! Covariance structures for G and R blocks.
//!
//! Natural parameters are the reported values: variances, covariances and
//! correlations. The optimizer works on an unconstrained scale: logs of
//! variances, `atanh` of correlations, and for `US` the lower Cholesky factor
//! with a log diagonal. Natural order for `US(d)` is the lower triangle by
//! rows: `v11, c21, v22, c31, ...`; for `AR1V` it is `(rho, var)`; a `Kron`
//! concatenates its components.

mod giv;
mod pedigree;

pub use giv::{load_giv, KnownMatrix, SparseTriplets};
pub use pedigree::{Pedigree, PedigreeRecord};

use std::fmt;
use std::sync::Arc;

use faer::{Mat, Side};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CovError {
    #[error("{structure} takes {expected} parameters, got {found}")]
    ParamCountMismatch {
        structure: String,
        expected: usize,
        found: usize,
    },
    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),
    #[error("correlation {0} is outside (-1, 1)")]
    RhoOutOfRange(f64),
    #[error("variance {0} must be positive")]
    NonPositiveVariance(f64),
    #[error(
        "random structure {structure} has {found} variance components; exactly one is identifiable"
    )]
    RandomKronUnidentifiable { structure: String, found: usize },
    #[error("cannot absorb the scale of {0} into a single residual variance")]
    ResidualScaleUnsupported(String),
    #[error("pedigree is cyclic at `{0}`")]
    CyclicPedigree(String),
    #[error("parent `{parent}` of `{child}` is not declared in the pedigree")]
    UnknownParentId { child: String, parent: String },
    #[error("individual `{0}` is declared twice")]
    DuplicateIndividual(String),
    #[error("entries ({row}, {col}) and ({col}, {row}) differ")]
    AsymmetricInput { row: usize, col: usize },
    #[error("duplicate entry ({row}, {col})")]
    DuplicateEntry { row: usize, col: usize },
    #[error("matrix has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid entry at line {line}: {message}")]
    InvalidRecord { line: u64, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

/// Where a structure is used; identifiability rules differ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Context {
    Random,
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarStructure {
    Id(usize),
    IdV(usize),
    Diag(usize),
    Us(usize),
    Ar1(usize),
    Ar1V(usize),
    /// `var · K` with K the inverse of a supplied sparse matrix.
    Giv(Arc<KnownMatrix>),
    /// Left factor varies slowest.
    Kron(Vec<VarStructure>),
}

impl VarStructure {
    pub fn dim(&self) -> usize {
        match self {
            VarStructure::Id(d)
            | VarStructure::IdV(d)
            | VarStructure::Diag(d)
            | VarStructure::Us(d)
            | VarStructure::Ar1(d)
            | VarStructure::Ar1V(d) => *d,
            VarStructure::Giv(k) => k.dim(),
            VarStructure::Kron(cs) => cs.iter().map(VarStructure::dim).product(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            VarStructure::Id(_) => 0,
            VarStructure::IdV(_) | VarStructure::Ar1(_) | VarStructure::Giv(_) => 1,
            VarStructure::Ar1V(_) => 2,
            VarStructure::Diag(d) => *d,
            VarStructure::Us(d) => d * (d + 1) / 2,
            VarStructure::Kron(cs) => cs.iter().map(VarStructure::param_count).sum(),
        }
    }

    /// Number of components carrying a scale.
    pub fn variance_components(&self) -> usize {
        match self {
            VarStructure::Id(_) | VarStructure::Ar1(_) => 0,
            VarStructure::Kron(cs) => cs.iter().map(VarStructure::variance_components).sum(),
            _ => 1,
        }
    }

    pub fn is_variance_type(&self) -> bool {
        self.variance_components() > 0
    }

    /// Parameter labels in natural order.
    pub fn param_names(&self) -> Vec<String> {
        match self {
            VarStructure::Id(_) => vec![],
            VarStructure::IdV(_) | VarStructure::Giv(_) => vec!["var".into()],
            VarStructure::Ar1(_) => vec!["rho".into()],
            VarStructure::Ar1V(_) => vec!["rho".into(), "var".into()],
            VarStructure::Diag(d) => (1..=*d).map(|i| format!("var[{i}]")).collect(),
            VarStructure::Us(d) => {
                let mut out = Vec::new();
                for i in 0..*d {
                    for j in 0..=i {
                        out.push(if i == j {
                            format!("var[{}]", i + 1)
                        } else {
                            format!("cov[{},{}]", i + 1, j + 1)
                        });
                    }
                }
                out
            }
            VarStructure::Kron(cs) => cs
                .iter()
                .flat_map(|c| {
                    let tag = c.to_string();
                    c.param_names()
                        .into_iter()
                        .map(move |p| format!("{tag}.{p}"))
                })
                .collect(),
        }
    }

    /// Natural-order indices of the variance parameters (the ones that can
    /// sit on the zero boundary).
    pub fn variance_param_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        self.collect_variance_indices(0, &mut out);
        out
    }

    fn collect_variance_indices(&self, offset: usize, out: &mut Vec<usize>) {
        match self {
            VarStructure::Id(_) | VarStructure::Ar1(_) => {}
            VarStructure::IdV(_) | VarStructure::Giv(_) => out.push(offset),
            VarStructure::Ar1V(_) => out.push(offset + 1),
            VarStructure::Diag(d) => out.extend(offset..offset + d),
            VarStructure::Us(d) => {
                let mut k = offset;
                for i in 0..*d {
                    k += i;
                    out.push(k);
                    k += 1;
                }
            }
            VarStructure::Kron(cs) => {
                let mut o = offset;
                for c in cs {
                    c.collect_variance_indices(o, out);
                    o += c.param_count();
                }
            }
        }
    }

    fn check_count(&self, params: &[f64]) -> Result<(), CovError> {
        if params.len() != self.param_count() {
            return Err(CovError::ParamCountMismatch {
                structure: self.to_string(),
                expected: self.param_count(),
                found: params.len(),
            });
        }
        Ok(())
    }

    /// Covariance matrix at natural parameters.
    pub fn materialize(&self, params: &[f64]) -> Result<Mat<f64>, CovError> {
        self.check_count(params)?;
        let positive = |v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(CovError::NonPositiveVariance(v))
            }
        };
        let rho = |r: f64| {
            if r > -1.0 && r < 1.0 {
                Ok(r)
            } else {
                Err(CovError::RhoOutOfRange(r))
            }
        };
        match self {
            VarStructure::Id(d) => Ok(Mat::identity(*d, *d)),
            VarStructure::IdV(d) => Ok(scaled_identity(*d, positive(params[0])?)),
            VarStructure::Diag(d) => {
                for &v in params {
                    positive(v)?;
                }
                Ok(Mat::from_fn(
                    *d,
                    *d,
                    |i, j| if i == j { params[i] } else { 0.0 },
                ))
            }
            VarStructure::Us(d) => {
                let m = Mat::from_fn(*d, *d, |i, j| params[tri(i.max(j), i.min(j))]);
                let eig = m
                    .self_adjoint_eigenvalues(Side::Lower)
                    .map_err(|_| CovError::NotPositiveDefinite(self.to_string()))?;
                let scale = eig.iter().fold(0.0f64, |a, &e| a.max(e.abs()));
                if eig.iter().any(|&e| e < -1e-12 * scale.max(1.0)) {
                    return Err(CovError::NotPositiveDefinite(self.to_string()));
                }
                Ok(m)
            }
            VarStructure::Ar1(d) => Ok(ar1_matrix(*d, rho(params[0])?)),
            VarStructure::Ar1V(d) => {
                let s = positive(params[1])?;
                let mut m = ar1_matrix(*d, rho(params[0])?);
                scale_in_place(&mut m, s);
                Ok(m)
            }
            VarStructure::Giv(k) => {
                let mut m = k.matrix.clone();
                scale_in_place(&mut m, positive(params[0])?);
                Ok(m)
            }
            VarStructure::Kron(cs) => {
                let mut acc = Mat::identity(1, 1);
                let mut offset = 0;
                for c in cs {
                    let n = c.param_count();
                    let m = c.materialize(&params[offset..offset + n])?;
                    acc = acc.kron(&m);
                    offset += n;
                }
                Ok(acc)
            }
        }
    }

    /// Maps natural parameters to the unconstrained working scale.
    pub fn to_working(&self, params: &[f64]) -> Result<Vec<f64>, CovError> {
        self.check_count(params)?;
        self.materialize(params)?;
        let log = |v: f64| v.ln();
        Ok(match self {
            VarStructure::Id(_) => vec![],
            VarStructure::IdV(_) | VarStructure::Giv(_) | VarStructure::Diag(_) => {
                params.iter().map(|&v| log(v)).collect()
            }
            VarStructure::Ar1(_) => vec![params[0].atanh()],
            VarStructure::Ar1V(_) => vec![params[0].atanh(), log(params[1])],
            VarStructure::Us(d) => {
                let m = Mat::from_fn(*d, *d, |i, j| params[tri(i.max(j), i.min(j))]);
                let llt = m
                    .llt(Side::Lower)
                    .map_err(|_| CovError::NotPositiveDefinite(self.to_string()))?;
                let l = llt.L();
                let mut w = Vec::with_capacity(params.len());
                for i in 0..*d {
                    for j in 0..=i {
                        w.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
                    }
                }
                w
            }
            VarStructure::Kron(cs) => {
                let mut out = Vec::with_capacity(params.len());
                let mut offset = 0;
                for c in cs {
                    let n = c.param_count();
                    out.extend(c.to_working(&params[offset..offset + n])?);
                    offset += n;
                }
                out
            }
        })
    }

    /// Inverse of [`to_working`](Self::to_working).
    pub fn to_natural(&self, w: &[f64]) -> Vec<f64> {
        assert_eq!(
            w.len(),
            self.param_count(),
            "working vector length for {self}"
        );
        match self {
            VarStructure::Id(_) => vec![],
            VarStructure::IdV(_) | VarStructure::Giv(_) | VarStructure::Diag(_) => {
                w.iter().map(|v| v.exp()).collect()
            }
            VarStructure::Ar1(_) => vec![w[0].tanh()],
            VarStructure::Ar1V(_) => vec![w[0].tanh(), w[1].exp()],
            VarStructure::Us(d) => {
                let l = chol_factor(*d, w);
                let mut out = Vec::with_capacity(w.len());
                for i in 0..*d {
                    for j in 0..=i {
                        out.push((0..=j).map(|k| l[(i, k)] * l[(j, k)]).sum());
                    }
                }
                out
            }
            VarStructure::Kron(cs) => {
                let mut out = Vec::with_capacity(w.len());
                let mut offset = 0;
                for c in cs {
                    let n = c.param_count();
                    out.extend(c.to_natural(&w[offset..offset + n]));
                    offset += n;
                }
                out
            }
        }
    }

    /// Covariance matrix at working parameters. Always valid for finite `w`
    /// (up to floating-point range).
    pub fn materialize_working(&self, w: &[f64]) -> Mat<f64> {
        assert_eq!(
            w.len(),
            self.param_count(),
            "working vector length for {self}"
        );
        match self {
            VarStructure::Us(d) => {
                let l = chol_factor(*d, w);
                &l * l.transpose()
            }
            VarStructure::Kron(cs) => {
                let mut acc = Mat::identity(1, 1);
                let mut offset = 0;
                for c in cs {
                    let n = c.param_count();
                    acc = acc.kron(c.materialize_working(&w[offset..offset + n]));
                    offset += n;
                }
                acc
            }
            _ => {
                let natural = self.to_natural(w);
                match self.materialize(&natural) {
                    Ok(m) => m,
                    // tanh can round to ±1 and exp to 0 or ∞ at extreme w.
                    Err(_) => Mat::from_fn(self.dim(), self.dim(), |_, _| f64::NAN),
                }
            }
        }
    }

    /// Gradient of `⟨T, G(w)⟩ = Σ_ij T_ij G_ij` with respect to the working
    /// parameters, for a symmetric `T` of size `dim × dim`.
    pub fn contract_gradient(&self, w: &[f64], t: &Mat<f64>) -> Vec<f64> {
        assert_eq!(t.nrows(), self.dim());
        match self {
            VarStructure::Id(_) => vec![],
            VarStructure::IdV(d) => {
                let tr: f64 = (0..*d).map(|i| t[(i, i)]).sum();
                vec![w[0].exp() * tr]
            }
            VarStructure::Diag(d) => (0..*d).map(|i| w[i].exp() * t[(i, i)]).collect(),
            VarStructure::Us(d) => {
                let l = chol_factor(*d, w);
                let tl = t * &l;
                let mut out = Vec::with_capacity(w.len());
                for i in 0..*d {
                    for j in 0..=i {
                        let g = 2.0 * tl[(i, j)];
                        out.push(if i == j { g * l[(i, i)] } else { g });
                    }
                }
                out
            }
            VarStructure::Ar1(d) => vec![ar1_rho_gradient(*d, w[0].tanh(), t)],
            VarStructure::Ar1V(d) => {
                let rho = w[0].tanh();
                let s = w[1].exp();
                let c = ar1_matrix(*d, rho);
                vec![s * ar1_rho_gradient(*d, rho, t), s * inner(t, &c)]
            }
            VarStructure::Giv(k) => vec![w[0].exp() * inner(t, &k.matrix)],
            VarStructure::Kron(cs) => {
                let mut mats = Vec::with_capacity(cs.len());
                let mut offset = 0;
                for c in cs {
                    let n = c.param_count();
                    mats.push(c.materialize_working(&w[offset..offset + n]));
                    offset += n;
                }
                let mut out = Vec::with_capacity(w.len());
                let mut offset = 0;
                for (j, c) in cs.iter().enumerate() {
                    let n = c.param_count();
                    if n > 0 {
                        let left = kron_all(&mats[..j]);
                        let right = kron_all(&mats[j + 1..]);
                        let tj = partial_trace(t, &left, c.dim(), &right);
                        out.extend(c.contract_gradient(&w[offset..offset + n], &tj));
                    }
                    offset += n;
                }
                out
            }
        }
    }

    /// Natural starting values: every variance-type component gets `var`,
    /// covariances and correlations start at zero.
    pub fn default_start(&self, var: f64) -> Vec<f64> {
        match self {
            VarStructure::Id(_) => vec![],
            VarStructure::IdV(_) | VarStructure::Giv(_) => vec![var],
            VarStructure::Diag(d) => vec![var; *d],
            VarStructure::Ar1(_) => vec![0.0],
            VarStructure::Ar1V(_) => vec![0.0, var],
            VarStructure::Us(d) => {
                let mut out = Vec::new();
                for i in 0..*d {
                    for j in 0..=i {
                        out.push(if i == j { var } else { 0.0 });
                    }
                }
                out
            }
            VarStructure::Kron(cs) => cs.iter().flat_map(|c| c.default_start(var)).collect(),
        }
    }

    /// Normalizes the scale of a structure. In random context exactly one
    /// variance-type component is required. In residual context a missing
    /// scale is appended as `IdV(1)` and surplus scales are dropped from all
    /// but the first variance-type component. Returns the structure and
    /// whether it was rewritten.
    pub fn check_identifiability(self, context: Context) -> Result<(VarStructure, bool), CovError> {
        let v = self.variance_components();
        match (context, v) {
            (_, 1) => Ok((self, false)),
            (Context::Random, found) => Err(CovError::RandomKronUnidentifiable {
                structure: self.to_string(),
                found,
            }),
            (Context::Residual, 0) => {
                let mut cs = match self {
                    VarStructure::Kron(cs) => cs,
                    other => vec![other],
                };
                cs.push(VarStructure::IdV(1));
                Ok((VarStructure::Kron(cs), true))
            }
            (Context::Residual, _) => {
                let VarStructure::Kron(cs) = self else {
                    unreachable!("a leaf has at most one scale")
                };
                let mut seen = false;
                let mut out = Vec::with_capacity(cs.len());
                for c in cs {
                    if !c.is_variance_type() {
                        out.push(c);
                    } else if !seen {
                        seen = true;
                        out.push(c);
                    } else {
                        out.push(match c {
                            VarStructure::IdV(d) => VarStructure::Id(d),
                            VarStructure::Ar1V(d) => VarStructure::Ar1(d),
                            other => {
                                return Err(CovError::ResidualScaleUnsupported(other.to_string()))
                            }
                        });
                    }
                }
                Ok((VarStructure::Kron(out), true))
            }
        }
    }
}

impl fmt::Display for VarStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarStructure::Id(d) => write!(f, "Id({d})"),
            VarStructure::IdV(d) => write!(f, "IdV({d})"),
            VarStructure::Diag(d) => write!(f, "Diag({d})"),
            VarStructure::Us(d) => write!(f, "US({d})"),
            VarStructure::Ar1(d) => write!(f, "AR1({d})"),
            VarStructure::Ar1V(d) => write!(f, "AR1V({d})"),
            VarStructure::Giv(k) => write!(f, "GIV({}, {})", k.label, k.dim()),
            VarStructure::Kron(cs) => {
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ⊗ ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
        }
    }
}

/// Index of lower-triangle entry (i, j), i ≥ j, in row order.
fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

fn chol_factor(d: usize, w: &[f64]) -> Mat<f64> {
    Mat::from_fn(d, d, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Less => 0.0,
        std::cmp::Ordering::Equal => w[tri(i, i)].exp(),
        std::cmp::Ordering::Greater => w[tri(i, j)],
    })
}

fn scaled_identity(d: usize, s: f64) -> Mat<f64> {
    Mat::from_fn(d, d, |i, j| if i == j { s } else { 0.0 })
}

fn scale_in_place(m: &mut Mat<f64>, s: f64) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= s;
        }
    }
}

pub fn ar1_matrix(d: usize, rho: f64) -> Mat<f64> {
    Mat::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32))
}

/// d⟨T, C(ρ(w))⟩/dw with ρ = tanh w.
fn ar1_rho_gradient(d: usize, rho: f64, t: &Mat<f64>) -> f64 {
    let mut g = 0.0;
    for j in 0..d {
        for i in 0..d {
            let k = i.abs_diff(j);
            if k > 0 {
                g += t[(i, j)] * k as f64 * rho.powi(k as i32 - 1);
            }
        }
    }
    g * (1.0 - rho * rho)
}

fn inner(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    let mut s = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

fn kron_all(mats: &[Mat<f64>]) -> Mat<f64> {
    mats.iter().fold(Mat::identity(1, 1), |acc, m| acc.kron(m))
}

fn nonzeros(m: &Mat<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

/// `T_mid[a,b] = Σ T[(l1,a,r1),(l2,b,r2)] · L[l1,l2] · R[r1,r2]`, the
/// contraction that turns `⟨T, L ⊗ M ⊗ R⟩` into `⟨T_mid, M⟩`.
pub fn partial_trace(t: &Mat<f64>, left: &Mat<f64>, mid: usize, right: &Mat<f64>) -> Mat<f64> {
    let dr = right.nrows();
    let ln = nonzeros(left);
    let rn = nonzeros(right);
    let mut out = Mat::<f64>::zeros(mid, mid);
    for &(l1, l2, lv) in &ln {
        for &(r1, r2, rv) in &rn {
            let w = lv * rv;
            for b in 0..mid {
                let col = (l2 * mid + b) * dr + r2;
                for a in 0..mid {
                    let row = (l1 * mid + a) * dr + r1;
                    out[(a, b)] += w * t[(row, col)];
                }
            }
        }
    }
    out
}
