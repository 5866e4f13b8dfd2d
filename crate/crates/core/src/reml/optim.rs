//! Minimizers for smooth objectives that may return `+inf` outside their
//! domain: a Nelder–Mead warm-up followed by BFGS with backtracking.

/// Why a minimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    /// Infinity norm of the gradient fell below `gtol`.
    Gradient,
    /// Relative objective change and step length both fell below tolerance
    /// on two consecutive iterations.
    Stalled,
    /// Backtracking found no decrease; the gradient is at its noise floor.
    NoDescent,
    MaxIterations,
}

impl Stop {
    pub fn converged(self) -> bool {
        matches!(self, Stop::Gradient | Stop::Stalled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub max_iter: usize,
    /// Relative objective change.
    pub ftol: f64,
    /// Infinity norm of the step.
    pub xtol: f64,
    /// Infinity norm of the gradient.
    pub gtol: f64,
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nelder–Mead with standard coefficients, stopping after `budget`
/// evaluations or when the simplex values agree to `ftol`. Returns the best
/// vertex and its value.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    budget: usize,
    ftol: f64,
) -> (Vec<f64>, f64, usize) {
    let d = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    let f0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), f0));
    if d == 0 {
        return (x0.to_vec(), f0, evals);
    }
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    while evals < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[d].1;
        if worst.is_finite() && (worst - best).abs() <= ftol * (best.abs() + ftol) {
            break;
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|(x, _)| x[j]).sum::<f64>() / d as f64)
            .collect();
        let toward = |t: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, x)| c + t * (x - c))
                .collect()
        };
        let xr = toward(-1.0, &simplex[d].0);
        let fr = eval(&xr, &mut evals);
        if fr < simplex[0].1 {
            let xe = toward(-2.0, &simplex[d].0);
            let fe = eval(&xe, &mut evals);
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[d].1 {
                let xc = toward(-0.5, &simplex[d].0);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = toward(0.5, &simplex[d].0);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < simplex[d].1.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = best
                        .iter()
                        .zip(&v.0)
                        .map(|(b, x)| b + 0.5 * (x - b))
                        .collect();
                    let fx = eval(&x, &mut evals);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

/// BFGS on the inverse Hessian with Armijo backtracking. `fg` returns the
/// value and gradient; `f` the value alone (used during backtracking).
pub fn bfgs(
    f: &mut dyn FnMut(&[f64]) -> f64,
    fg: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    tol: Tolerances,
) -> Minimum {
    const C1: f64 = 1e-4;
    const MAX_STEP: f64 = 4.0;
    let d = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut g) = fg(&x);
    let mut evaluations = 1;
    let identity = |d: usize| {
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            h[i * d + i] = 1.0;
        }
        h
    };
    let mut h = identity(d);
    let mut fresh = true;
    let mut iterations = 0;
    // Consecutive iterations meeting the stall test; one alone can be an
    // artifact of a badly scaled first step.
    let mut stalls = 0;

    let stop = loop {
        if norm_inf(&g) < tol.gtol {
            break Stop::Gradient;
        }
        if iterations >= tol.max_iter {
            break Stop::MaxIterations;
        }
        iterations += 1;

        let mut dir: Vec<f64> = (0..d)
            .map(|i| -(0..d).map(|j| h[i * d + j] * g[j]).sum::<f64>())
            .collect();
        if dot(&dir, &g) >= 0.0 {
            h = identity(d);
            fresh = true;
            dir = g.iter().map(|v| -v).collect();
        }
        let big = norm_inf(&dir);
        if big > MAX_STEP {
            dir.iter_mut().for_each(|v| *v *= MAX_STEP / big);
        }
        let slope = dot(&dir, &g);

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + alpha * b).collect();
            let ft = f(&trial);
            evaluations += 1;
            if ft.is_finite() && ft <= fx + C1 * alpha * slope {
                accepted = Some(trial);
                break;
            }
            alpha *= 0.5;
        }
        let Some(xn) = accepted else {
            if !fresh {
                h = identity(d);
                fresh = true;
                continue;
            }
            break Stop::NoDescent;
        };

        let (fn_, gn) = fg(&xn);
        evaluations += 1;
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        let rel_change = (fx - fn_).abs() / fx.abs().max(1.0);
        let step = norm_inf(&s);
        x = xn;
        fx = fn_;
        g = gn;

        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            if fresh {
                let scale = sy / dot(&yv, &yv);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| h[i * d + j] * yv[j]).sum())
                .collect();
            let yhy = dot(&yv, &hy);
            for i in 0..d {
                for j in 0..d {
                    h[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
        }

        if rel_change < tol.ftol && step < tol.xtol {
            stalls += 1;
            if stalls >= 2 {
                break Stop::Stalled;
            }
        } else {
            stalls = 0;
        }
    };
    Minimum {
        x,
        f: fx,
        gradient: g,
        iterations,
        evaluations,
        stop,
    }
}
