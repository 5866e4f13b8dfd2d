//! Restricted likelihood for `y = Xβ + Zb + e` and its maximization.
//!
//! `V = Σ_t Z_t G_t Z_tᵀ` over random and residual terms alike. The objective
//! is `-2 log L_R` without the `(n-p) log 2π` constant:
//! `log|V| + log|XᵀV⁻¹X| + yᵀPy`. Its derivative along a working parameter is
//! `⟨Z_tᵀ S Z_t, ∂G_t⟩` with `S = P - Py (Py)ᵀ`.

pub mod optim;

use faer::linalg::solvers::DenseSolveCore;
use faer::linalg::triangular_solve::solve_lower_triangular_in_place;
use faer::{Mat, Par, Side};
use thiserror::Error;

use crate::covariance::CovError;
use crate::dialect::LoweredTerm;
use crate::model::ModelSpec;
use optim::{bfgs, nelder_mead, Stop, Tolerances};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RemlError {
    #[error("V is not positive definite at the given parameters")]
    SingularV,
    #[error("XᵀV⁻¹X is singular; the fixed design is rank deficient")]
    SingularXtVinvX,
    #[error(transparent)]
    Cov(#[from] CovError),
    #[error("expected {expected} parameters, got {found}")]
    ParamCount { expected: usize, found: usize },
    #[error("the fit did not converge")]
    NotConverged,
}

/// Evaluator for one model. Parameters are concatenated per term, random
/// terms first, then residual blocks.
pub struct Reml<'a> {
    spec: &'a ModelSpec,
    terms: Vec<&'a LoweredTerm>,
    /// Active rows of each term's design.
    active: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    n_params: usize,
}

/// Quantities at one parameter value.
#[derive(Debug, Clone)]
pub struct Solution {
    pub neg2ll: f64,
    pub beta: Vec<f64>,
    /// `P y = V⁻¹ (y - Xβ̂)`.
    pub py: Vec<f64>,
}

struct Factored {
    solution: Solution,
    llt: faer::linalg::solvers::Llt<f64>,
    /// `(XᵀV⁻¹X)⁻¹`.
    c_inv: Mat<f64>,
}

impl<'a> Reml<'a> {
    pub fn new(spec: &'a ModelSpec) -> Reml<'a> {
        let terms: Vec<&LoweredTerm> = spec.variance_terms().collect();
        let mut offsets = Vec::with_capacity(terms.len());
        let mut k = 0;
        for t in &terms {
            offsets.push(k);
            k += t.structure.param_count();
        }
        Reml {
            spec,
            active: terms.iter().map(|t| t.design.active_rows()).collect(),
            terms,
            offsets,
            n_params: k,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    fn slice<'b>(&self, t: usize, v: &'b [f64]) -> &'b [f64] {
        let n = self.terms[t].structure.param_count();
        &v[self.offsets[t]..self.offsets[t] + n]
    }

    fn check_len(&self, v: &[f64]) -> Result<(), RemlError> {
        if v.len() != self.n_params {
            return Err(RemlError::ParamCount {
                expected: self.n_params,
                found: v.len(),
            });
        }
        Ok(())
    }

    /// Per-term covariance matrices at natural parameters.
    pub fn matrices_natural(&self, theta: &[f64]) -> Result<Vec<Mat<f64>>, RemlError> {
        self.check_len(theta)?;
        (0..self.terms.len())
            .map(|t| Ok(self.terms[t].structure.materialize(self.slice(t, theta))?))
            .collect()
    }

    pub fn matrices_working(&self, w: &[f64]) -> Vec<Mat<f64>> {
        (0..self.terms.len())
            .map(|t| {
                self.terms[t]
                    .structure
                    .materialize_working(self.slice(t, w))
            })
            .collect()
    }

    pub fn to_working(&self, theta: &[f64]) -> Result<Vec<f64>, RemlError> {
        self.check_len(theta)?;
        let mut out = Vec::with_capacity(self.n_params);
        for t in 0..self.terms.len() {
            out.extend(self.terms[t].structure.to_working(self.slice(t, theta))?);
        }
        Ok(out)
    }

    pub fn to_natural(&self, w: &[f64]) -> Vec<f64> {
        (0..self.terms.len())
            .flat_map(|t| self.terms[t].structure.to_natural(self.slice(t, w)))
            .collect()
    }

    /// Default start: every variance gets `var(y)` split evenly between the
    /// random terms and the residual; correlations start at zero.
    pub fn default_start(&self) -> Vec<f64> {
        let y = &self.spec.y;
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let var = if var > 0.0 { var } else { 1.0 };
        let share = var / (self.spec.random.len() + 1) as f64;
        self.terms
            .iter()
            .flat_map(|t| t.structure.default_start(share))
            .collect()
    }

    /// `V = Σ Z G Zᵀ`, lower triangle filled.
    pub fn assemble_v(&self, gs: &[Mat<f64>]) -> Mat<f64> {
        let n = self.spec.n();
        let mut v = Mat::<f64>::zeros(n, n);
        for (t, g) in gs.iter().enumerate() {
            let z = &self.terms[t].design;
            let rows = &self.active[t];
            for (a, &i) in rows.iter().enumerate() {
                let (ci, vi) = z.row(i);
                for &j in &rows[..=a] {
                    let (cj, vj) = z.row(j);
                    let mut s = 0.0;
                    for (&p, &x) in ci.iter().zip(vi) {
                        for (&q, &y) in cj.iter().zip(vj) {
                            s += x * g[(p, q)] * y;
                        }
                    }
                    v[(i, j)] += s;
                }
            }
        }
        v
    }

    fn factor(&self, gs: &[Mat<f64>]) -> Result<Factored, RemlError> {
        let spec = self.spec;
        let (n, p) = (spec.n(), spec.p());
        let v = self.assemble_v(gs);
        let llt = v.llt(Side::Lower).map_err(|_| RemlError::SingularV)?;
        let l = llt.L();
        let log_det_v: f64 = (0..n).map(|i| 2.0 * l[(i, i)].ln()).sum();

        // [X y] → L⁻¹[X y]
        let mut xy = Mat::<f64>::from_fn(n, p + 1, |i, j| {
            if j < p {
                spec.x.values[(i, j)]
            } else {
                spec.y[i]
            }
        });
        solve_lower_triangular_in_place(l, xy.as_mut(), Par::Seq);
        let xt = xy.subcols(0, p);
        let yt = xy.col(p);
        let c: Mat<f64> = xt.transpose() * xt;
        let r: Mat<f64> = xt.transpose() * yt.as_mat();
        let (log_det_c, beta, c_inv) = if p == 0 {
            (0.0, Vec::new(), Mat::zeros(0, 0))
        } else {
            let c_llt = c.llt(Side::Lower).map_err(|_| RemlError::SingularXtVinvX)?;
            let lc = c_llt.L();
            let log_det_c: f64 = (0..p).map(|i| 2.0 * lc[(i, i)].ln()).sum();
            let c_inv = c_llt.inverse();
            let beta: Mat<f64> = &c_inv * &r;
            (log_det_c, (0..p).map(|i| beta[(i, 0)]).collect(), c_inv)
        };
        let yty: f64 = (0..n).map(|i| yt[i] * yt[i]).sum();
        let rb: f64 = (0..p).map(|i| r[(i, 0)] * beta[i]).sum();
        let neg2ll = log_det_v + log_det_c + (yty - rb);
        if !neg2ll.is_finite() {
            return Err(RemlError::SingularV);
        }

        // Py = V⁻¹(y - Xβ)
        let mut resid = Mat::<f64>::from_fn(n, 1, |i, _| {
            spec.y[i] - (0..p).map(|j| spec.x.values[(i, j)] * beta[j]).sum::<f64>()
        });
        faer::linalg::solvers::Solve::solve_in_place(&llt, resid.as_mut());
        let py = (0..n).map(|i| resid[(i, 0)]).collect();
        Ok(Factored {
            solution: Solution { neg2ll, beta, py },
            llt,
            c_inv,
        })
    }

    /// Objective, estimates and `Py` at given per-term covariance matrices.
    pub fn solve(&self, gs: &[Mat<f64>]) -> Result<Solution, RemlError> {
        self.factor(gs).map(|f| f.solution)
    }

    /// Objective at working parameters; `+inf` where V is not positive definite.
    pub fn value(&self, w: &[f64]) -> f64 {
        match self.factor(&self.matrices_working(w)) {
            Ok(f) => f.solution.neg2ll,
            Err(_) => f64::INFINITY,
        }
    }

    /// Objective at natural parameters.
    pub fn neg2ll(&self, theta: &[f64]) -> Result<f64, RemlError> {
        Ok(self.solve(&self.matrices_natural(theta)?)?.neg2ll)
    }

    /// Objective and its analytic gradient at working parameters.
    pub fn value_and_gradient(&self, w: &[f64]) -> Result<(f64, Vec<f64>), RemlError> {
        let gs = self.matrices_working(w);
        let f = self.factor(&gs)?;
        let spec = self.spec;
        let (n, p) = (spec.n(), spec.p());

        // S = V⁻¹ - W C⁻¹ Wᵀ - Py Pyᵀ with W = V⁻¹X.
        let mut s = f.llt.inverse();
        if p > 0 {
            let w_mat: Mat<f64> = &s * &spec.x.values;
            let wc: Mat<f64> = &w_mat * &f.c_inv;
            let corr: Mat<f64> = &wc * w_mat.transpose();
            s -= &corr;
        }
        let py = &f.solution.py;
        for j in 0..n {
            for i in 0..n {
                s[(i, j)] -= py[i] * py[j];
            }
        }

        let mut grad = Vec::with_capacity(self.n_params);
        for (t, term) in self.terms.iter().enumerate() {
            if term.structure.param_count() == 0 {
                continue;
            }
            let z = &term.design;
            let q = z.q_total();
            let mut zsz = Mat::<f64>::zeros(q, q);
            let rows = &self.active[t];
            for &i in rows {
                let (ci, vi) = z.row(i);
                for &j in rows {
                    let sij = s[(i, j)];
                    let (cj, vj) = z.row(j);
                    for (&a, &x) in ci.iter().zip(vi) {
                        for (&b, &y) in cj.iter().zip(vj) {
                            zsz[(a, b)] += x * sij * y;
                        }
                    }
                }
            }
            grad.extend(term.structure.contract_gradient(self.slice(t, w), &zsz));
        }
        Ok((f.solution.neg2ll, grad))
    }

    /// Central-difference gradient at working parameters.
    pub fn numeric_gradient(&self, w: &[f64], h: f64) -> Vec<f64> {
        (0..w.len())
            .map(|k| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[k] += h;
                b[k] -= h;
                (self.value(&a) - self.value(&b)) / (2.0 * h)
            })
            .collect()
    }

    /// `b̂_t = G_t Z_tᵀ P y` for each random term, concatenated.
    pub fn blups(&self, gs: &[Mat<f64>], py: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (t, term) in self.spec.random.iter().enumerate() {
            let z = &term.design;
            let mut ztpy = vec![0.0; z.q_total()];
            for &i in &self.active[t] {
                let (c, v) = z.row(i);
                for (&c, &v) in c.iter().zip(v) {
                    ztpy[c] += v * py[i];
                }
            }
            let g = &gs[t];
            out.extend(
                (0..z.q_total())
                    .map(|a| (0..z.q_total()).map(|b| g[(a, b)] * ztpy[b]).sum::<f64>()),
            );
        }
        out
    }

    /// `log L_R` including the constant.
    pub fn log_reml(&self, neg2ll: f64) -> f64 {
        let df = (self.spec.n() - self.spec.p()) as f64;
        -0.5 * (neg2ll + df * (2.0 * std::f64::consts::PI).ln())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative objective change for the stall test.
    pub tol: f64,
    /// Step length (working scale) for the stall test.
    pub step_tol: f64,
    /// Gradient infinity norm on the working scale.
    pub gtol: f64,
    /// Natural-scale starting values; the default start when absent.
    pub start: Option<Vec<f64>>,
    /// Evaluation budget of the simplex warm-up; `None` picks
    /// `min(100, 10·(d+1))`.
    pub simplex_budget: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 500,
            tol: 1e-8,
            step_tol: 1e-6,
            gtol: 1e-8,
            start: None,
            simplex_budget: None,
        }
    }
}

/// A variance near zero relative to the response variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryWarning {
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub beta_labels: Vec<String>,
    /// Natural scale.
    pub theta: Vec<f64>,
    pub theta_labels: Vec<String>,
    pub blups: Vec<f64>,
    pub blup_labels: Vec<String>,
    pub log_reml: f64,
    pub neg2ll: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// Infinity norm of the working-scale gradient at the estimate.
    pub gradient_norm: f64,
    pub boundary: Vec<BoundaryWarning>,
}

/// Gradient noise floor accepted when backtracking finds no decrease.
const NO_DESCENT_GTOL: f64 = 1e-3;

/// Maximizes the restricted likelihood: a short simplex warm-up, then BFGS
/// with the analytic gradient.
pub fn fit(spec: &ModelSpec, options: &FitOptions) -> Result<FitResult, RemlError> {
    let reml = Reml::new(spec);
    let start = match &options.start {
        Some(s) => s.clone(),
        None => reml.default_start(),
    };
    let w0 = reml.to_working(&start)?;
    // Surface domain errors at the start rather than as an infinite objective.
    reml.factor(&reml.matrices_working(&w0))?;

    let d = reml.n_params();
    let budget = options
        .simplex_budget
        .unwrap_or_else(|| (10 * (d + 1)).min(100));
    let mut value = |w: &[f64]| reml.value(w);
    let (w1, _, nm_evals) = if budget > d + 1 {
        nelder_mead(&mut value, &w0, 0.5, budget, options.tol)
    } else {
        (w0.clone(), 0.0, 0)
    };
    let mut value = |w: &[f64]| reml.value(w);
    let mut value_grad = |w: &[f64]| {
        reml.value_and_gradient(w)
            .unwrap_or_else(|_| (f64::INFINITY, vec![f64::NAN; d]))
    };
    let min = bfgs(
        &mut value,
        &mut value_grad,
        &w1,
        Tolerances {
            max_iter: options.max_iter,
            ftol: options.tol,
            xtol: options.step_tol,
            gtol: options.gtol,
        },
    );
    let gradient_norm = min.gradient.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let converged =
        min.stop.converged() || (min.stop == Stop::NoDescent && gradient_norm < NO_DESCENT_GTOL);

    let gs = reml.matrices_working(&min.x);
    let sol = reml.solve(&gs)?;
    let theta = reml.to_natural(&min.x);
    let blups = reml.blups(&gs, &sol.py);

    let y_var = {
        let n = spec.y.len() as f64;
        let m = spec.y.iter().sum::<f64>() / n;
        spec.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
    };
    let labels = spec.param_labels();
    let mut boundary = Vec::new();
    for (t, term) in reml.terms.iter().enumerate() {
        for k in term.structure.variance_param_indices() {
            let idx = reml.offsets[t] + k;
            if theta[idx] < 1e-8 * y_var.max(f64::MIN_POSITIVE) {
                boundary.push(BoundaryWarning {
                    parameter: labels[idx].clone(),
                    value: theta[idx],
                });
            }
        }
    }

    Ok(FitResult {
        beta: sol.beta,
        beta_labels: spec.x.labels.clone(),
        theta,
        theta_labels: labels,
        blups,
        blup_labels: spec
            .random
            .iter()
            .flat_map(|t| {
                t.design
                    .column_labels()
                    .into_iter()
                    .map(move |c| format!("{}/{c}", t.source))
            })
            .collect(),
        log_reml: reml.log_reml(sol.neg2ll),
        neg2ll: sol.neg2ll,
        converged,
        iterations: min.iterations,
        evaluations: min.evaluations + nm_evals,
        gradient_norm,
        boundary,
    })
}

/// `-2 log L_R` (without constant) at natural parameters.
pub fn reml_neg2loglik(spec: &ModelSpec, theta: &[f64]) -> Result<f64, RemlError> {
    Reml::new(spec).neg2ll(theta)
}

/// BLUPs at a converged fit.
pub fn blup(spec: &ModelSpec, fit: &FitResult) -> Result<Vec<f64>, RemlError> {
    if !fit.converged {
        return Err(RemlError::NotConverged);
    }
    let reml = Reml::new(spec);
    let gs = reml.matrices_natural(&fit.theta)?;
    let sol = reml.solve(&gs)?;
    Ok(reml.blups(&gs, &sol.py))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DataTable, Schema};
    use crate::dialect::Resources;
    use crate::model::{build_model, ModelFormulas};

    fn one_way() -> DataTable {
        // Three groups, four observations each.
        let ys = [
            [9.8, 10.4, 10.1, 9.9],
            [12.2, 11.7, 12.5, 12.0],
            [8.1, 8.9, 8.4, 8.6],
        ];
        let mut s = String::from("y,g\n");
        for (k, row) in ys.iter().enumerate() {
            for y in row {
                s.push_str(&format!("{y},g{k}\n"));
            }
        }
        DataTable::from_reader(s.as_bytes(), &Schema::new()).unwrap()
    }

    fn spec(fixed: &str, random: Option<&str>) -> ModelSpec {
        let m = ModelFormulas::parse(fixed, random, None).unwrap();
        build_model(&m, &one_way(), &Resources::default()).unwrap()
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let s = spec("y ~ 1", Some("~idv(g)"));
        let r = Reml::new(&s);
        for w in [[0.3, -1.0], [-2.0, 0.5], [1.0, 1.0]] {
            let (_, g) = r.value_and_gradient(&w).unwrap();
            let fd = r.numeric_gradient(&w, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn one_way_blups_shrink_group_means() {
        let s = spec("y ~ 1", Some("~idv(g)"));
        let fit = fit(&s, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let (sg, se) = (fit.theta[0], fit.theta[1]);
        let mean: f64 = s.y.iter().sum::<f64>() / 12.0;
        let shrink = 4.0 * sg / (4.0 * sg + se);
        for k in 0..3 {
            let gm: f64 = s.y[4 * k..4 * k + 4].iter().sum::<f64>() / 4.0;
            assert!((fit.blups[k] - shrink * (gm - mean)).abs() < 1e-10);
        }
        assert_eq!(blup(&s, &fit).unwrap().len(), 3);
    }

    #[test]
    fn zero_variance_block_has_zero_blups() {
        let s = spec("y ~ 1", Some("~idv(g)"));
        let r = Reml::new(&s);
        let gs = vec![Mat::zeros(3, 3), Mat::<f64>::identity(12, 12)];
        let sol = r.solve(&gs).unwrap();
        assert!(r.blups(&gs, &sol.py).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn not_positive_definite_is_infinite() {
        let s = spec("y ~ 1", None);
        let r = Reml::new(&s);
        assert_eq!(
            r.solve(&[Mat::zeros(12, 12)]).unwrap_err(),
            RemlError::SingularV
        );
        assert!(r.value(&[-800.0]).is_infinite());
    }
}
