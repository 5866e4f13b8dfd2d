//! Acceptance suite. Each criterion prints one PASS/FAIL line; the process
//! exits non-zero when any fails.

use std::collections::{BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use faer::Mat;
use mixedform_core::corpus::{self, default_dir, CorpusEntry};
use mixedform_core::covariance::{ar1_matrix, load_giv, PedigreeRecord};
use mixedform_core::formula::parse_one_sided;
use mixedform_core::reml::Reml;
use mixedform_core::{
    build_model, canonical_text, expand, fit, reml_neg2loglik, DataTable, FitOptions,
    ModelFormulas, ModelSpec, Pedigree, Resources, SparseTriplets, VarStructure,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------------------------------------------------------------------------
// Shared state

/// Loaded tables and fitted log-likelihoods reused across criteria.
struct Ctx {
    entries: HashMap<String, CorpusEntry>,
    met: DataTable,
    met_fits: Mutex<HashMap<String, f64>>,
}

fn ctx() -> &'static Ctx {
    static C: OnceLock<Ctx> = OnceLock::new();
    C.get_or_init(|| {
        let dir = default_dir();
        let entries: HashMap<String, CorpusEntry> = corpus::list(&dir)
            .unwrap()
            .into_iter()
            .map(|n| {
                let e = corpus::load(&dir, &n).unwrap();
                (n, e)
            })
            .collect();
        let met = entries["met"]
            .table
            .clone()
            .add_indicator_columns("site", "")
            .unwrap()
            .0;
        Ctx {
            entries,
            met,
            met_fits: Mutex::new(HashMap::new()),
        }
    })
}

fn table(name: &str) -> &'static DataTable {
    &ctx().entries[name].table
}

fn spec_with(
    t: &DataTable,
    fixed: &str,
    random: Option<&str>,
    rcov: Option<&str>,
    res: &Resources,
) -> Result<ModelSpec, String> {
    let f = ModelFormulas::parse(fixed, random, rcov).map_err(|e| e.to_string())?;
    build_model(&f, t, res).map_err(|e| format!("{fixed} {random:?}: {e}"))
}

fn spec(t: &DataTable, fixed: &str, random: Option<&str>, rcov: Option<&str>) -> ModelSpec {
    spec_with(t, fixed, random, rcov, &Resources::default()).unwrap()
}

const SITES: &str = "S1 + S2 + S3 + S4 + S5 + S6 + S7";

/// One MET random term in either dialect: inline when grouped.
fn met_spec(random: &str) -> ModelSpec {
    if random.starts_with('(') {
        spec(
            &ctx().met,
            &format!("yield ~ 0 + site + {random}"),
            None,
            None,
        )
    } else {
        spec(&ctx().met, "yield ~ 0 + site", Some(random), None)
    }
}

/// Converged MET fit, memoized by random term.
fn met_log_reml(random: &str) -> Result<f64, String> {
    if let Some(v) = ctx().met_fits.lock().unwrap().get(random) {
        return Ok(*v);
    }
    let f = fit(&met_spec(random), &FitOptions::default()).map_err(|e| e.to_string())?;
    ensure!(f.converged, "{random} did not converge");
    ctx()
        .met_fits
        .lock()
        .unwrap()
        .insert(random.to_string(), f.log_reml);
    Ok(f.log_reml)
}

fn max_abs_diff(a: &Mat<f64>, b: &Mat<f64>) -> f64 {
    assert_eq!((a.nrows(), a.ncols()), (b.nrows(), b.ncols()));
    let mut worst = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// 1

fn term_set(text: &str) -> Result<(BTreeSet<String>, bool, String), String> {
    let f = parse_one_sided(text).map_err(|e| e.to_string())?;
    let tl = expand(&f.rhs).map_err(|e| e.to_string())?;
    let set = tl.terms().iter().map(|t| t.to_string()).collect();
    Ok((set, tl.intercept, canonical_text(&tl)))
}

fn simplification() -> Outcome {
    let start = Instant::now();
    let (set, intercept, text) = term_set("~ (0 + x1 + x2 + x3)^3")?;
    let expected: BTreeSet<String> = ["x1", "x2", "x3", "x1:x2", "x1:x3", "x2:x3", "x1:x2:x3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    ensure!(set == expected && !intercept, "cube gave {text}");
    ensure!(
        text == "x1 + x2 + x3 + x1:x2 + x1:x3 + x2:x3 + x1:x2:x3 + 0",
        "cube canonical {text}"
    );
    let cases: [(&str, &[&str], bool); 6] = [
        ("~ 1:x", &[], true),
        ("~ 1*x", &[], true),
        ("~ x*1", &["x"], true),
        ("~ -1:x", &[], false),
        ("~ 1 + (-1 + x)", &["x"], false),
        ("~ x", &["x"], true),
    ];
    for (src, terms, int) in cases {
        let (set, intercept, text) = term_set(src)?;
        let want: BTreeSet<String> = terms.iter().map(|s| s.to_string()).collect();
        ensure!(set == want && intercept == int, "{src} gave {text}");
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 1.0, "took {secs:.3}s");
    Ok("cube and six intercept cases exact".into())
}

// ---------------------------------------------------------------------------
// 2

fn design_dimensions() -> Outcome {
    let trees = spec(
        table("trees"),
        "log(Volume) ~ 1 + log(Height) + log(Girth)",
        None,
        None,
    );
    ensure!(
        (trees.x.nrows(), trees.x.ncols()) == (31, 3),
        "trees X {}x{}",
        trees.x.nrows(),
        trees.x.ncols()
    );
    let herb = spec(
        table("herbicide"),
        "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
        None,
        None,
    );
    let mut spans = vec![usize::from(herb.x.intercept)];
    spans.extend(herb.x.span_widths());
    ensure!(
        (herb.x.nrows(), herb.x.ncols()) == (135, 31) && spans == [1, 4, 8, 2, 16],
        "herbicide X {}x{} spans {spans:?}",
        herb.x.nrows(),
        herb.x.ncols()
    );
    let g = spec(table("gilmour"), "yield ~ 0 + rep + (1 | gen)", None, None);
    ensure!(
        (g.x.nrows(), g.x.ncols()) == (330, 3),
        "gilmour X {}x{}",
        g.x.nrows(),
        g.x.ncols()
    );
    let z = &g.random[0].design;
    ensure!(
        (z.nrows(), z.q_total()) == (330, 107),
        "gilmour Z {}x{}",
        z.nrows(),
        z.q_total()
    );
    Ok("31x3, 135x31 [1,4,8,2,16], 330x3, 330x107".into())
}

// ---------------------------------------------------------------------------
// 3

/// Normal equations by Gaussian elimination with partial pivoting, then two
/// rounds of refinement on the residual.
fn ols(x: &Mat<f64>, y: &[f64]) -> Vec<f64> {
    let solve = |rhs: &[f64]| -> Vec<f64> {
        let p = x.ncols();
        let mut a = vec![vec![0.0; p + 1]; p];
        for r in 0..x.nrows() {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += x[(r, i)] * x[(r, j)];
                }
                a[i][p] += x[(r, i)] * rhs[r];
            }
        }
        for k in 0..p {
            let piv = (k..p)
                .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
                .unwrap();
            a.swap(k, piv);
            for i in k + 1..p {
                let f = a[i][k] / a[k][k];
                for j in k..=p {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        let mut b = vec![0.0; p];
        for k in (0..p).rev() {
            let s: f64 = (k + 1..p).map(|j| a[k][j] * b[j]).sum();
            b[k] = (a[k][p] - s) / a[k][k];
        }
        b
    };
    let fitted = |b: &[f64]| -> Vec<f64> {
        (0..x.nrows())
            .map(|r| (0..x.ncols()).map(|j| x[(r, j)] * b[j]).sum())
            .collect()
    };
    let mut b = solve(y);
    for _ in 0..2 {
        let r: Vec<f64> = y.iter().zip(fitted(&b)).map(|(a, f)| a - f).collect();
        let db = solve(&r);
        b.iter_mut().zip(&db).for_each(|(v, d)| *v += d);
    }
    b
}

fn ols_oracle() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for (name, formula) in [
        ("trees", "log(Volume) ~ 1 + log(Height) + log(Girth)"),
        (
            "herbicide",
            "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
        ),
    ] {
        let s = spec(table(name), formula, None, None);
        let b = ols(&s.x.values, &s.y);
        let rss: f64 = (0..s.n())
            .map(|r| {
                let f: f64 = (0..s.p()).map(|j| s.x.values[(r, j)] * b[j]).sum();
                (s.y[r] - f).powi(2)
            })
            .sum();
        let sigma2 = rss / (s.n() - s.p()) as f64;
        let f = fit(&s, &FitOptions::default()).map_err(|e| e.to_string())?;
        ensure!(f.converged, "{name} did not converge");
        let beta_rel = f
            .beta
            .iter()
            .zip(&b)
            .map(|(a, c)| (a - c).abs() / c.abs())
            .fold(0.0, f64::max);
        let s2_rel = (f.theta[0] - sigma2).abs() / sigma2;
        ensure!(
            beta_rel < 1e-8 && s2_rel < 1e-8,
            "{name}: beta rel {beta_rel:.2e}, sigma2 rel {s2_rel:.2e}"
        );
        worst = (worst.0.max(beta_rel), worst.1.max(s2_rel));
    }
    Ok(format!(
        "max beta rel {:.1e}, sigma2 rel {:.1e}",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------------------
// 4

fn us_params(vars: &[f64], rho: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..vars.len() {
        for j in 0..i {
            out.push(rho * (vars[i] * vars[j]).sqrt());
        }
        out.push(vars[i]);
    }
    out
}

fn dialect_equivalence() -> Outcome {
    let vars = [0.5, 0.7, 0.9, 1.1, 1.3, 0.6, 1.0];
    let mut us = us_params(&vars, 0.4);
    us.push(0.25);
    let mut diag = vars.to_vec();
    diag.push(0.25);
    let groups: Vec<(Vec<String>, Vec<f64>)> = vec![
        (
            vec![
                "(1 | site:geno)".into(),
                "idv(site):id(geno)".into(),
                "id(site):idv(geno)".into(),
                "site:geno".into(),
            ],
            vec![0.8, 0.3],
        ),
        (
            vec![
                "(0 + site | geno)".into(),
                "us(site):id(geno)".into(),
                format!("(0 + {SITES} | geno)"),
            ],
            us,
        ),
        (
            vec![
                format!("(0 + {SITES} || geno)"),
                "diag(site):id(geno)".into(),
            ],
            diag,
        ),
    ];
    let mut v_worst = 0.0f64;
    let mut ll_worst = 0.0f64;
    for (specs, theta) in &groups {
        let vs: Vec<Mat<f64>> = specs
            .iter()
            .map(|s| {
                let spec = met_spec(s);
                let r = Reml::new(&spec);
                r.assemble_v(&r.matrices_natural(theta).unwrap())
            })
            .collect();
        let n = vs[0].nrows();
        for (s, v) in specs.iter().zip(&vs).skip(1) {
            // Only the lower triangle is filled.
            let mut d = 0.0f64;
            for j in 0..n {
                for i in j..n {
                    d = d.max((v[(i, j)] - vs[0][(i, j)]).abs());
                }
            }
            ensure!(d <= 1e-12, "{s}: V differs by {d:.2e}");
            v_worst = v_worst.max(d);
        }
        let lls: Vec<f64> = specs
            .iter()
            .map(|s| met_log_reml(s))
            .collect::<Result<_, _>>()?;
        for (s, ll) in specs.iter().zip(&lls).skip(1) {
            let d = (ll - lls[0]).abs();
            ensure!(
                d <= 1e-6,
                "{s}: logREML {ll:.9} vs {} {:.9}",
                specs[0],
                lls[0]
            );
            ll_worst = ll_worst.max(d);
        }
    }
    Ok(format!(
        "V max diff {v_worst:.1e}, logREML max diff {ll_worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 5

fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
    let (m, n) = (b.nrows(), b.ncols());
    Mat::from_fn(a.nrows() * m, a.ncols() * n, |i, j| {
        a[(i / m, j / n)] * b[(i % m, j % n)]
    })
}

/// Matrix of a single structure from its natural parameters, written out
/// directly.
fn component(s: &VarStructure, p: &[f64]) -> Mat<f64> {
    match *s {
        VarStructure::Id(d) => Mat::from_fn(d, d, |i, j| f64::from(u8::from(i == j))),
        VarStructure::IdV(d) => Mat::from_fn(d, d, |i, j| if i == j { p[0] } else { 0.0 }),
        VarStructure::Diag(d) => Mat::from_fn(d, d, |i, j| if i == j { p[i] } else { 0.0 }),
        VarStructure::Us(d) => Mat::from_fn(d, d, |i, j| {
            let (r, c) = (i.max(j), i.min(j));
            p[r * (r + 1) / 2 + c]
        }),
        VarStructure::Ar1(d) => Mat::from_fn(d, d, |i, j| p[0].powi(i.abs_diff(j) as i32)),
        VarStructure::Ar1V(d) => Mat::from_fn(d, d, |i, j| p[1] * p[0].powi(i.abs_diff(j) as i32)),
        _ => unreachable!(),
    }
}

fn random_component(rng: &mut ChaCha8Rng) -> VarStructure {
    let d = rng.random_range(1..=4);
    match rng.random_range(0..6) {
        0 => VarStructure::Id(d),
        1 => VarStructure::IdV(d),
        2 => VarStructure::Diag(d),
        3 => VarStructure::Us(d),
        4 => VarStructure::Ar1(d),
        _ => VarStructure::Ar1V(d),
    }
}

/// Log-determinant by a plain Cholesky factorization.
fn cholesky_det(m: &Mat<f64>) -> f64 {
    let n = m.nrows();
    let mut l = vec![vec![0.0; n]; n];
    let mut det = 1.0;
    for j in 0..n {
        let s: f64 = (0..j).map(|k| l[j][k] * l[j][k]).sum();
        l[j][j] = (m[(j, j)] - s).sqrt();
        det *= l[j][j] * l[j][j];
        for i in j + 1..n {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = (m[(i, j)] - s) / l[j][j];
        }
    }
    det
}

fn kronecker_ar1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut kron_worst = 0.0f64;
    for _ in 0..200 {
        let parts: Vec<VarStructure> = (0..rng.random_range(2..=3))
            .map(|_| random_component(&mut rng))
            .collect();
        let k = VarStructure::Kron(parts.clone());
        let w: Vec<f64> = (0..k.param_count())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let theta = k.to_natural(&w);
        let got = k.materialize(&theta).map_err(|e| e.to_string())?;
        let mut at = 0;
        let mut want = Mat::from_fn(1, 1, |_, _| 1.0);
        for c in &parts {
            let m = c.param_count();
            want = kron(&want, &component(c, &theta[at..at + m]));
            at += m;
        }
        let d = max_abs_diff(&got, &want);
        ensure!(
            d <= 1e-14 * want.norm_max().max(1.0),
            "{k}: differs by {d:.2e}"
        );
        kron_worst = kron_worst.max(d);
    }

    for d in 1..=8 {
        let m = VarStructure::Ar1(d).materialize(&[0.0]).unwrap();
        ensure!(
            max_abs_diff(&m, &Mat::identity(d, d)) == 0.0,
            "AR1({d}) at rho 0 is not I"
        );
    }
    let mut det_worst = 0.0f64;
    for _ in 0..50 {
        let d = rng.random_range(1..=12);
        let rho: f64 = rng.random_range(-0.95..0.95);
        let m = VarStructure::Ar1(d).materialize(&[rho]).unwrap();
        ensure!(max_abs_diff(&m, &ar1_matrix(d, rho)) == 0.0, "AR1 entries");
        let det = cholesky_det(&m);
        let want = (1.0 - rho * rho).powi(d as i32 - 1);
        ensure!(
            (det - want).abs() <= 1e-8,
            "AR1({d}, {rho}) det {det} vs {want}"
        );
        det_worst = det_worst.max((det - want).abs());
    }

    // Three residual spellings as functions of (var_gen, rho_col, rho_row, sigma2).
    let t = table("gilmour");
    let spellings = [
        "ar1v(colf):ar1(rowf)",
        "ar1(colf):ar1v(rowf)",
        "ar1(colf):ar1(rowf)",
    ];
    let specs: Vec<ModelSpec> = spellings
        .iter()
        .map(|r| {
            spec(
                t,
                "yield ~ 0 + rep",
                Some("~idv(gen)"),
                Some(&format!("~{r}")),
            )
        })
        .collect();
    let layouts: Vec<Vec<usize>> = specs
        .iter()
        .map(|s| {
            let labels = s.param_labels();
            let find = |f: &dyn Fn(&str) -> bool| {
                (1..labels.len())
                    .find(|&i| f(&labels[i]))
                    .unwrap_or_else(|| panic!("{labels:?}"))
            };
            vec![
                0,
                find(&|l| l.contains("(15).rho")),
                find(&|l| l.contains("(22).rho")),
                find(&|l| l.ends_with(".var")),
            ]
        })
        .collect();
    let mut ll_worst = 0.0f64;
    for _ in 0..20 {
        let values = [
            rng.random_range(0.05..2.0),
            rng.random_range(-0.9..0.9),
            rng.random_range(-0.9..0.9),
            rng.random_range(0.05..2.0),
        ];
        let lls: Vec<f64> = specs
            .iter()
            .zip(&layouts)
            .map(|(s, idx)| {
                let mut theta = vec![0.0; 4];
                for (k, &i) in idx.iter().enumerate() {
                    theta[i] = values[k];
                }
                reml_neg2loglik(s, &theta).map(|v| -0.5 * v)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for (sp, ll) in spellings.iter().zip(&lls).skip(1) {
            let d = (ll - lls[0]).abs();
            ensure!(d <= 1e-10, "{sp} at {values:?}: {ll} vs {}", lls[0]);
            ll_worst = ll_worst.max(d);
        }
    }
    Ok(format!(
        "kron max diff {kron_worst:.1e}, det max diff {det_worst:.1e}, rcov max diff {ll_worst:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// 6

fn invert(m: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut a = *m;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for k in 0..4 {
        let piv = (k..4)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        inv.swap(k, piv);
        let d = a[k][k];
        for j in 0..4 {
            a[k][j] /= d;
            inv[k][j] /= d;
        }
        for i in 0..4 {
            if i != k {
                let f = a[i][k];
                for j in 0..4 {
                    a[i][j] -= f * a[k][j];
                    inv[i][j] -= f * inv[k][j];
                }
            }
        }
    }
    inv
}

fn pedigree_oracle() -> Outcome {
    let ped = Pedigree::new(vec![
        PedigreeRecord::new("sire", None, None),
        PedigreeRecord::new("dam", None, None),
        PedigreeRecord::new("kid1", Some("sire"), Some("dam")),
        PedigreeRecord::new("kid2", Some("sire"), Some("dam")),
    ])
    .map_err(|e| e.to_string())?;
    let a = ped.nrm();
    let pos = |id: &str| ped.position(id).unwrap();
    ensure!(a[(pos("kid1"), pos("kid2"))] == 0.5, "full sibs");
    ensure!(a[(pos("sire"), pos("kid1"))] == 0.5, "parent-offspring");
    ensure!(a[(pos("dam"), pos("kid2"))] == 0.5, "parent-offspring");
    ensure!(a[(pos("sire"), pos("sire"))] == 1.0, "founder diagonal");
    ensure!(a[(pos("sire"), pos("dam"))] == 0.0, "unrelated founders");

    let order = ["sire", "dam", "kid1", "kid2"];
    let hand = [
        [1.0, 0.0, 0.5, 0.5],
        [0.0, 1.0, 0.5, 0.5],
        [0.5, 0.5, 1.0, 0.5],
        [0.5, 0.5, 0.5, 1.0],
    ];
    for (i, r) in order.iter().enumerate() {
        for (j, c) in order.iter().enumerate() {
            ensure!(a[(pos(r), pos(c))] == hand[i][j], "A[{r},{c}]");
        }
    }
    let inv = invert(&hand);
    let entries = (0..4)
        .flat_map(|i| (0..=i).map(move |j| (i, j)))
        .filter(|&(i, j)| inv[i][j] != 0.0)
        .map(|(i, j)| (i, j, inv[i][j]))
        .collect();
    let trip = SparseTriplets::new(entries, Some(4)).map_err(|e| e.to_string())?;
    let k = load_giv(&trip, "fullsib").map_err(|e| e.to_string())?;
    let sigma2 = 1.7;
    let got = VarStructure::Giv(Arc::new(k))
        .materialize(&[sigma2])
        .map_err(|e| e.to_string())?;
    let want = Mat::from_fn(4, 4, |i, j| sigma2 * hand[i][j]);
    let giv_diff = max_abs_diff(&got, &want);
    ensure!(
        giv_diff <= 1e-10,
        "GIV differs from sigma2 A by {giv_diff:.2e}"
    );

    let entry = &ctx().entries["gilmour"];
    let mut with_ped = Resources::default();
    with_ped.add_pedigree("gen", entry.pedigree().unwrap().unwrap());
    let mut with_giv = Resources::default();
    let trip = entry.ginverse().unwrap().unwrap();
    with_giv.add_ginverse("gen", load_giv(&trip, "gen").map_err(|e| e.to_string())?);
    let a = spec_with(
        &entry.table,
        "yield ~ 0 + rep + (1 | gen)",
        None,
        None,
        &with_ped,
    )?;
    let b = spec_with(
        &entry.table,
        "yield ~ 0 + rep",
        Some("~giv(gen)"),
        None,
        &with_giv,
    )?;
    let fa = fit(&a, &FitOptions::default()).map_err(|e| e.to_string())?;
    let fb = fit(&b, &FitOptions::default()).map_err(|e| e.to_string())?;
    ensure!(fa.converged && fb.converged, "fits did not converge");
    let d = (fa.log_reml - fb.log_reml).abs();
    ensure!(
        d <= 1e-8,
        "pedigree {} vs ginverse {}",
        fa.log_reml,
        fb.log_reml
    );
    Ok(format!(
        "GIV diff {giv_diff:.1e}, logREML {:.6} both ways (diff {d:.1e})",
        fa.log_reml
    ))
}

// ---------------------------------------------------------------------------
// 7

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = (0.0f64, String::new());
    let mut count = 0;
    let mut names: Vec<&String> = ctx().entries.keys().collect();
    names.sort();
    for name in names {
        let entry = &ctx().entries[name];
        for m in &entry.manifest.models {
            let mut res = Resources::default();
            if m.random.as_deref().is_some_and(|r| r.contains("giv(")) {
                let trip = entry.ginverse().unwrap().unwrap();
                let factor = entry.manifest.relationship_factor.as_deref().unwrap();
                res.add_ginverse(factor, load_giv(&trip, factor).unwrap());
            }
            let s = spec_with(
                &entry.table,
                &m.fixed,
                m.random.as_deref(),
                m.rcov.as_deref(),
                &res,
            )?;
            let r = Reml::new(&s);
            let w0 = r
                .to_working(&r.default_start())
                .map_err(|e| e.to_string())?;
            let mut points = 0;
            while points < 10 {
                let w: Vec<f64> = w0.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect();
                let Ok((_, analytic)) = r.value_and_gradient(&w) else {
                    continue;
                };
                let numeric = r.numeric_gradient(&w, 1e-5);
                let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
                let rel = norm(&diff) / norm(&numeric);
                let label = format!("{name}/{}", m.name);
                ensure!(rel <= 1e-4, "{label}: relative error {rel:.2e} at {w:?}");
                if rel > worst.0 {
                    worst = (rel, label);
                }
                points += 1;
            }
            count += 1;
        }
    }
    Ok(format!(
        "{count} models x 10 points, worst {:.1e} ({})",
        worst.0, worst.1
    ))
}

// ---------------------------------------------------------------------------
// 8

fn nesting() -> Outcome {
    let chick = &ctx().entries["chick"];
    let ll = |model: &str| -> Result<f64, String> {
        let m = chick.manifest.model(model).unwrap();
        let s = spec(
            &chick.table,
            &m.fixed,
            m.random.as_deref(),
            m.rcov.as_deref(),
        );
        let f = fit(&s, &FitOptions::default()).map_err(|e| e.to_string())?;
        ensure!(f.converged, "chick {model} did not converge");
        Ok(f.log_reml)
    };
    let (us, diag) = (ll("us")?, ll("diag")?);
    ensure!(us >= diag - 1e-9, "chick US {us} < diag {diag}");
    let met_diag = met_log_reml("diag(site):id(geno)")?;
    let met_idv = met_log_reml("(1 | site:geno)")?;
    ensure!(met_diag >= met_idv, "MET diag {met_diag} < idv {met_idv}");
    Ok(format!(
        "chick US {us:.4} >= diag {diag:.4}; MET diag {met_diag:.4} >= idv {met_idv:.4}"
    ))
}

// ---------------------------------------------------------------------------
// 9

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_mixedform"))
        .args(args)
        .current_dir(default_dir())
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn json(run: &Run) -> Result<Value, String> {
    serde_json::from_str(&run.stdout).map_err(|e| format!("invalid JSON ({e}): {}", run.stdout))
}

fn is_int(v: &Value) -> bool {
    v.as_u64().is_some()
}

fn cli_end_to_end() -> Outcome {
    // parse
    let r = cli(&[
        "parse",
        "--formula",
        "y ~ (0 + x1 + x2 + x3)^3",
        "--format",
        "json",
    ]);
    ensure!(r.code == 0, "parse exit {}: {}", r.code, r.stderr);
    let v = json(&r)?;
    ensure!(
        v["canonical"] == "x1 + x2 + x3 + x1:x2 + x1:x3 + x2:x3 + x1:x2:x3 + 0"
            && v["response"] == "y"
            && v["intercept"] == "removed"
            && v["random"].is_array()
            && v["warnings"].is_array(),
        "parse JSON {v}"
    );
    let r = cli(&["parse", "--formula", "y ~ x + a | b"]);
    ensure!(
        r.code == 1 && r.stderr.starts_with("E_PARSE: BarOutsideParentheses"),
        "bar outside parentheses: exit {} {}",
        r.code,
        r.stderr
    );
    let r = cli(&[
        "parse",
        "--formula",
        "yield ~ 0 + rep",
        "--random",
        "~idv(gen)",
        "--rcov",
        "~ar1(colf):ar1(rowf)",
        "--data",
        "gilmour.csv",
        "--schema",
        "colf=factor",
        "--schema",
        "rowf=factor",
        "--format",
        "json",
    ]);
    ensure!(r.code == 0, "gilmour parse exit {}: {}", r.code, r.stderr);
    let v = json(&r)?;
    ensure!(
        v["residual"][0]["parameters"] == 3 && v["parameters"] == 4 && v["n"] == 330,
        "gilmour parse JSON {v}"
    );

    // fit
    let trees = [
        "fit",
        "--formula",
        "log(Volume) ~ 1 + log(Height) + log(Girth)",
        "--data",
        "trees.csv",
        "--format",
        "json",
    ];
    let r = cli(&trees);
    ensure!(r.code == 0, "trees fit exit {}: {}", r.code, r.stderr);
    let v = json(&r)?;
    let obj = v.as_object().ok_or("fit report is not an object")?;
    for key in [
        "version",
        "response",
        "n",
        "p",
        "q_total",
        "dropped_rows",
        "beta",
        "theta",
        "logREML",
        "converged",
        "iterations",
        "gradient_norm",
        "boundary",
        "warnings",
    ] {
        ensure!(obj.contains_key(key), "fit report lacks `{key}`");
    }
    ensure!(
        v["version"].is_string()
            && v["n"] == 31
            && v["p"] == 3
            && v["q_total"] == 0
            && is_int(&v["iterations"])
            && v["dropped_rows"].as_array().is_some_and(|a| a.is_empty())
            && v["beta"]
                .as_object()
                .is_some_and(|b| b.len() == 3 && b.values().all(Value::is_number))
            && v["theta"].as_object().is_some_and(|t| t.len() == 1)
            && v["logREML"].is_number()
            && v["converged"] == true
            && v["gradient_norm"].is_number()
            && v["boundary"].is_array()
            && v["warnings"].is_array(),
        "fit JSON {v}"
    );
    let again = cli(&trees);
    ensure!(again.stdout == r.stdout, "repeated fit output differs");

    let r = cli(&[
        "fit",
        "--formula",
        "yield ~ 0 + rep",
        "--random",
        "~idv(gen)",
        "--data",
        "gilmour.csv",
        "--max-iter",
        "1",
        "--format",
        "json",
    ]);
    ensure!(r.code == 2, "non-convergence exit {}", r.code);
    ensure!(json(&r)?["converged"] == false, "unconverged report");

    let r = cli(&["fit", "--formula", "y ~ x", "--data", "nope.csv"]);
    ensure!(
        r.code == 1 && r.stderr.starts_with("E_IO: nope.csv"),
        "missing file: exit {} {}",
        r.code,
        r.stderr
    );
    ensure!(
        r.stderr.lines().count() == 1,
        "error is one line: {}",
        r.stderr
    );

    // translate
    for (args, want) in [
        (
            vec!["(1 | site:geno)", "--from", "grouped", "--to", "structural"],
            "idv(site):id(geno)",
        ),
        (
            vec![
                "us(site):id(geno)",
                "--from",
                "structural",
                "--to",
                "grouped",
            ],
            "(0 + site | geno)",
        ),
    ] {
        let r = cli(&[&["translate"], args.as_slice()].concat());
        ensure!(
            r.code == 0 && r.stdout.trim_end() == want,
            "{}: {} (exit {})",
            args[0],
            r.stdout,
            r.code
        );
    }
    let r = cli(&[
        "translate",
        "at(site):ar1(colf):ar1(rowf)",
        "--from",
        "structural",
        "--to",
        "grouped",
        "--rcov",
    ]);
    ensure!(
        r.code == 0 && r.stdout.starts_with("untranslatable: "),
        "rcov translation: {} (exit {})",
        r.stdout,
        r.code
    );
    let r = cli(&[
        "translate",
        "us(site):id(geno)",
        "--from",
        "structural",
        "--to",
        "grouped",
        "--format",
        "json",
    ]);
    let v = json(&r)?;
    ensure!(
        v["source"] == "us(site):id(geno)"
            && v["from"] == "structural"
            && v["to"] == "grouped"
            && v["role"] == "random"
            && v["translation"] == "(0 + site | geno)"
            && v["derived"].is_array(),
        "translate JSON {v}"
    );
    Ok("parse, fit, translate reports and exit codes as expected".into())
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("simplification golden suite", simplification),
        ("design dimensions", design_dimensions),
        ("OLS oracle", ols_oracle),
        ("dialect equivalence", dialect_equivalence),
        ("Kronecker and AR1", kronecker_ar1),
        ("pedigree oracle", pedigree_oracle),
        ("gradient check", gradient_check),
        ("nesting monotonicity", nesting),
        ("CLI end to end", cli_end_to_end),
    ];
    // Keep panic messages out of the report lines; they are folded into FAIL.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(format!("panic: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} ({name}): {tag} {detail} [{secs:.1}s]", i + 1);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
}
