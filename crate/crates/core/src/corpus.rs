//! Bundled datasets: manifests, loading, dimension checks, and the seeded
//! generators for the synthetic entries.
//!
//! Each entry is `<name>.csv` plus `<name>.json` in one directory. Synthetic
//! entries are regenerated byte for byte from their recorded seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use faer::{Mat, Side};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{ar1_matrix, Pedigree, PedigreeRecord, SparseTriplets};
use crate::data::{Column, ColumnType, DataError, DataTable, Schema};
use crate::design::build_fixed;
use crate::model::ModelError;
use crate::terms::expand;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{entry}: {what} is {found}, manifest says {expected}")]
    Dimension {
        entry: String,
        what: String,
        expected: usize,
        found: usize,
    },
}

/// One model of an entry, in either dialect.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub name: String,
    pub dialect: String,
    pub fixed: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rcov: Option<String>,
}

/// Expected `rows × cols` of a fixed design.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignDims {
    pub formula: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Golden {
    pub formula: String,
    pub canonical: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub description: String,
    /// `public` for snapshots of published datasets, `synthetic` otherwise.
    pub origin: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: String,
    #[serde(default)]
    pub pedigree: Option<String>,
    #[serde(default)]
    pub ginverse: Option<String>,
    /// Factor the pedigree or ginverse belongs to.
    #[serde(default)]
    pub relationship_factor: Option<String>,
    #[serde(default)]
    pub schema: BTreeMap<String, String>,
    pub rows: usize,
    #[serde(default)]
    pub levels: BTreeMap<String, usize>,
    #[serde(default)]
    pub designs: Vec<DesignDims>,
    #[serde(default)]
    pub golden: Vec<Golden>,
    #[serde(default)]
    pub models: Vec<ModelEntry>,
    /// Generating parameters of synthetic entries.
    #[serde(default)]
    pub truth: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn schema(&self) -> Result<Schema, CorpusError> {
        self.schema
            .iter()
            .map(|(k, v)| {
                v.parse::<ColumnType>()
                    .map(|t| (k.clone(), t))
                    .map_err(|message| CorpusError::Manifest {
                        path: self.name.clone(),
                        message,
                    })
            })
            .collect()
    }

    pub fn model(&self, name: &str) -> Option<&ModelEntry> {
        self.models.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusEntry {
    pub manifest: Manifest,
    pub table: DataTable,
    pub dir: PathBuf,
}

impl CorpusEntry {
    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn pedigree(&self) -> Result<Option<Pedigree>, CorpusError> {
        self.manifest
            .pedigree
            .as_ref()
            .map(|f| {
                Pedigree::read_csv(self.path(f)).map_err(|e| CorpusError::Io {
                    path: f.clone(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    pub fn ginverse(&self) -> Result<Option<SparseTriplets>, CorpusError> {
        self.manifest
            .ginverse
            .as_ref()
            .map(|f| {
                SparseTriplets::read_csv(self.path(f)).map_err(|e| CorpusError::Io {
                    path: f.clone(),
                    message: e.to_string(),
                })
            })
            .transpose()
    }

    /// Checks rows, factor level counts and fixed design sizes against the
    /// manifest.
    pub fn verify_dimensions(&self) -> Result<(), CorpusError> {
        let m = &self.manifest;
        let mismatch = |what: String, expected, found| CorpusError::Dimension {
            entry: m.name.clone(),
            what,
            expected,
            found,
        };
        if self.table.n_rows() != m.rows {
            return Err(mismatch("rows".into(), m.rows, self.table.n_rows()));
        }
        for (factor, &count) in &m.levels {
            let (levels, _) = self.table.factor(factor)?;
            if levels.len() != count {
                return Err(mismatch(format!("levels of {factor}"), count, levels.len()));
            }
        }
        for d in &m.designs {
            let f = crate::formula::parse_formula(&d.formula).map_err(ModelError::from)?;
            let tl = expand(&f.rhs).map_err(ModelError::from)?;
            let x = build_fixed(&tl, &self.table).map_err(ModelError::from)?;
            if x.nrows() != d.rows {
                return Err(mismatch(
                    format!("rows of X for {}", d.formula),
                    d.rows,
                    x.nrows(),
                ));
            }
            if x.ncols() != d.cols {
                return Err(mismatch(
                    format!("columns of X for {}", d.formula),
                    d.cols,
                    x.ncols(),
                ));
            }
        }
        Ok(())
    }
}

/// The corpus shipped with the source tree.
pub fn default_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| CorpusError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load(dir: &Path, name: &str) -> Result<CorpusEntry, CorpusError> {
    let manifest = read_manifest(&dir.join(format!("{name}.json")))?;
    let table = DataTable::read_csv(dir.join(&manifest.data), &manifest.schema()?)?;
    Ok(CorpusEntry {
        manifest,
        table,
        dir: dir.to_path_buf(),
    })
}

/// Names of every entry in `dir`, sorted.
pub fn list(dir: &Path) -> Result<Vec<String>, CorpusError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    names.sort();
    Ok(names)
}

/// Files of a generated entry, keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub manifest: Manifest,
    pub files: BTreeMap<String, String>,
}

impl Generated {
    pub fn write(&self, dir: &Path) -> Result<(), CorpusError> {
        let io = |p: &Path, e: std::io::Error| CorpusError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let mut all = self.files.clone();
        all.insert(
            format!("{}.json", self.manifest.name),
            manifest_json(&self.manifest),
        );
        for (name, text) in &all {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| io(&p, e))?;
        }
        Ok(())
    }
}

pub fn manifest_json(m: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(m).expect("manifest serializes");
    s.push('\n');
    s
}

fn csv_text(table: &DataTable) -> String {
    let mut buf = Vec::new();
    table.write_csv(&mut buf).expect("in-memory CSV");
    String::from_utf8(buf).expect("UTF-8 CSV")
}

/// Rounds to 4 decimals so the CSV stays readable; the value is what the
/// file holds, so nothing downstream sees the unrounded draw.
fn round4(v: f64) -> f64 {
    (v * 1e4).round() / 1e4
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn factor(values: Vec<String>) -> Column {
    Column::factor_from_strings(&values.into_iter().map(Some).collect::<Vec<_>>())
}

fn schema_map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn models(list: &[(&str, &str, &str, Option<&str>, Option<&str>)]) -> Vec<ModelEntry> {
    list.iter()
        .map(|(name, dialect, fixed, random, rcov)| ModelEntry {
            name: name.to_string(),
            dialect: dialect.to_string(),
            fixed: fixed.to_string(),
            random: random.map(str::to_string),
            rcov: rcov.map(str::to_string),
        })
        .collect()
}

fn golden(pairs: &[(&str, &str)]) -> Vec<Golden> {
    pairs
        .iter()
        .map(|(f, c)| Golden {
            formula: f.to_string(),
            canonical: c.to_string(),
        })
        .collect()
}

/// Two-way factorial in five blocks: 9 populations × 3 herbicides per block.
pub fn generate_herbicide(seed: u64) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_eff: Vec<f64> = (0..5).map(|_| 0.15 * normal(&mut rng)).collect();
    let pop_eff: Vec<f64> = (0..9).map(|_| 0.4 * normal(&mut rng)).collect();
    let herb_eff = [0.0, -0.6, -1.1];
    let mut inter = [[0.0; 3]; 9];
    for row in inter.iter_mut() {
        for v in row.iter_mut() {
            *v = 0.2 * normal(&mut rng);
        }
    }
    let (mut w, mut b, mut p, mut h) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (bi, be) in block_eff.iter().enumerate() {
        for (pi, pe) in pop_eff.iter().enumerate() {
            for (hi, he) in herb_eff.iter().enumerate() {
                let root = 3.0 + be + pe + he + inter[pi][hi] + 0.25 * normal(&mut rng);
                w.push(round4(root.max(0.05).powi(2)));
                b.push(format!("B{}", bi + 1));
                p.push(format!("P{}", pi + 1));
                h.push(["A", "B", "C"][hi].to_string());
            }
        }
    }
    let table = DataTable::new(vec![
        ("Weight".into(), Column::Numeric(w)),
        ("Block".into(), factor(b)),
        ("Population".into(), factor(p)),
        ("Herbicide".into(), factor(h)),
    ])
    .expect("consistent columns");

    let manifest = Manifest {
        name: "herbicide".into(),
        description: "Randomized complete block factorial: 5 blocks, 9 populations, 3 herbicides; synthetic weights".into(),
        origin: "synthetic".into(),
        seed: Some(seed),
        data: "herbicide.csv".into(),
        pedigree: None,
        ginverse: None,
        relationship_factor: None,
        schema: BTreeMap::new(),
        rows: 135,
        levels: [("Block", 5), ("Population", 9), ("Herbicide", 3)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        designs: vec![DesignDims {
            formula: "sqrt(Weight) ~ 1 + Block + Population*Herbicide".into(),
            rows: 135,
            cols: 31,
        }],
        golden: golden(&[(
            "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
            "1 + Block + Population + Herbicide + Population:Herbicide",
        )]),
        models: models(&[(
            "anova",
            "fixed",
            "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
            None,
            None,
        )]),
        truth: BTreeMap::from([
            ("residual_sd_sqrt_scale".to_string(), serde_json::json!(0.25)),
            ("herbicide_effects".to_string(), serde_json::json!(herb_eff)),
        ]),
    };
    Generated {
        files: BTreeMap::from([("herbicide.csv".to_string(), csv_text(&table))]),
        manifest,
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn chol(m: &Mat<f64>) -> Mat<f64> {
    m.llt(Side::Lower)
        .expect("positive definite")
        .L()
        .to_owned()
}

fn correlated(l: &Mat<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let z: Vec<f64> = (0..l.nrows()).map(|_| normal(rng)).collect();
    (0..l.nrows())
        .map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum())
        .collect()
}

/// Sparse inverse of the relationship matrix by Henderson's rules; `a`
/// supplies the inbreeding coefficients of the parents.
fn henderson_inverse(pedigree: &Pedigree, a: &Mat<f64>) -> Mat<f64> {
    let n = pedigree.len();
    let mut inv = Mat::<f64>::zeros(n, n);
    let parent = |p: &Option<String>| p.as_deref().and_then(|id| pedigree.position(id));
    for (i, r) in pedigree.records().iter().enumerate() {
        let known: Vec<usize> = [parent(&r.sire), parent(&r.dam)]
            .into_iter()
            .flatten()
            .collect();
        let inbreeding = |p: usize| a[(p, p)] - 1.0;
        let d = match known.as_slice() {
            [] => 1.0,
            [p] => 0.75 - 0.25 * inbreeding(*p),
            [s, d] => 0.5 - 0.25 * (inbreeding(*s) + inbreeding(*d)),
            _ => unreachable!("two parents at most"),
        };
        let w = 1.0 / d;
        let mut coef = vec![(i, 1.0)];
        coef.extend(known.iter().map(|&p| (p, -0.5)));
        for &(j, cj) in &coef {
            for &(k, ck) in &coef {
                inv[(j, k)] += w * cj * ck;
            }
        }
    }
    inv
}

/// Variety trial on a 22 × 15 grid with three column blocks, a pedigree over
/// the 107 varieties and AR1 × AR1 errors.
pub fn generate_gilmour(seed: u64) -> Generated {
    const ROWS: usize = 22;
    const COLS: usize = 15;
    const GENS: usize = 107;
    const FOUNDERS: usize = 27;
    let (sigma_g, sigma_e, rho_c, rho_r): (f64, f64, f64, f64) = (0.5, 0.3, 0.4, 0.6);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let gen_name = |k: usize| format!("G{:03}", k + 1);
    let mut records = Vec::with_capacity(GENS);
    for k in 0..GENS {
        if k < FOUNDERS {
            records.push(PedigreeRecord::new(&gen_name(k), None, None));
        } else {
            let s = rng.random_range(0..k);
            let mut d = rng.random_range(0..k);
            while d == s {
                d = rng.random_range(0..k);
            }
            records.push(PedigreeRecord::new(
                &gen_name(k),
                Some(&gen_name(s)),
                Some(&gen_name(d)),
            ));
        }
    }
    let pedigree = Pedigree::new(records).expect("acyclic by construction");
    let a = pedigree.nrm();
    let a_inv = henderson_inverse(&pedigree, &a);
    let g: Vec<f64> = correlated(&chol(&a), &mut rng)
        .into_iter()
        .map(|v| v * sigma_g.sqrt())
        .collect();

    // Three replicated varieties appear twice per block.
    let mut order: Vec<usize> = (0..GENS).collect();
    order.shuffle(&mut rng);
    let doubled = &order[..3];
    let mut plots = vec![0usize; ROWS * COLS];
    for block in 0..3 {
        let mut entries: Vec<usize> = (0..GENS).chain(doubled.iter().copied()).collect();
        entries.shuffle(&mut rng);
        let mut k = 0;
        for c in block * 5..block * 5 + 5 {
            for r in 0..ROWS {
                plots[c * ROWS + r] = entries[k];
                k += 1;
            }
        }
    }

    // Errors are Kron(AR1(col), AR1(row)) in rows-within-columns order.
    let lc = chol(&ar1_matrix(COLS, rho_c));
    let lr = chol(&ar1_matrix(ROWS, rho_r));
    let z: Vec<f64> = (0..ROWS * COLS).map(|_| normal(&mut rng)).collect();
    let mut e = vec![0.0; ROWS * COLS];
    for c in 0..COLS {
        for r in 0..ROWS {
            let mut s = 0.0;
            for c2 in 0..=c {
                for r2 in 0..=r {
                    s += lc[(c, c2)] * lr[(r, r2)] * z[c2 * ROWS + r2];
                }
            }
            e[c * ROWS + r] = sigma_e.sqrt() * s;
        }
    }
    let rep_means = [4.0, 4.3, 3.8];

    let (mut y, mut gen, mut rep) = (Vec::new(), Vec::new(), Vec::new());
    let (mut col, mut row, mut colf, mut rowf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    // Written in field order, rows within columns.
    for c in 0..COLS {
        for r in 0..ROWS {
            let k = c * ROWS + r;
            let block = c / 5;
            y.push(round4(rep_means[block] + g[plots[k]] + e[k]));
            gen.push(gen_name(plots[k]));
            rep.push(format!("R{}", block + 1));
            col.push((c + 1) as f64);
            row.push((r + 1) as f64);
            colf.push((c + 1).to_string());
            rowf.push((r + 1).to_string());
        }
    }
    let table = DataTable::new(vec![
        ("yield".into(), Column::Numeric(y)),
        ("gen".into(), factor(gen)),
        ("rep".into(), factor(rep)),
        ("col".into(), Column::Numeric(col)),
        ("row".into(), Column::Numeric(row)),
        ("colf".into(), factor(colf)),
        ("rowf".into(), factor(rowf)),
    ])
    .expect("consistent columns");

    let mut ped_csv = Vec::new();
    pedigree.write_csv(&mut ped_csv).expect("in-memory CSV");
    let mut ginv_csv = Vec::new();
    SparseTriplets::from_dense(&a_inv)
        .write_csv(&mut ginv_csv)
        .expect("in-memory CSV");

    let manifest = Manifest {
        name: "gilmour".into(),
        description: "Near-RCB variety trial on a 22 x 15 grid, 3 column blocks, 107 varieties (3 with 6 replicates); synthetic yields".into(),
        origin: "synthetic".into(),
        seed: Some(seed),
        data: "gilmour.csv".into(),
        pedigree: Some("gilmour_pedigree.csv".into()),
        ginverse: Some("gilmour_ginverse.csv".into()),
        relationship_factor: Some("gen".into()),
        schema: schema_map(&[("colf", "factor"), ("rowf", "factor")]),
        rows: 330,
        levels: [("gen", GENS), ("rep", 3), ("colf", COLS), ("rowf", ROWS)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        designs: vec![DesignDims {
            formula: "yield ~ 0 + rep".into(),
            rows: 330,
            cols: 3,
        }],
        golden: golden(&[("yield ~ 0 + rep", "rep + 0")]),
        models: models(&[
            ("idv", "structural", "yield ~ 0 + rep", Some("~idv(gen)"), None),
            ("grouped", "grouped", "yield ~ 0 + rep + (1 | gen)", None, None),
            ("fixed", "fixed", "yield ~ 0 + rep", None, None),
            (
                "ar1xar1",
                "structural",
                "yield ~ 0 + rep",
                Some("~idv(gen)"),
                Some("~ar1(colf):ar1(rowf)"),
            ),
            (
                "ar1v_ar1",
                "structural",
                "yield ~ 0 + rep",
                Some("~idv(gen)"),
                Some("~ar1v(colf):ar1(rowf)"),
            ),
            (
                "ar1_ar1v",
                "structural",
                "yield ~ 0 + rep",
                Some("~idv(gen)"),
                Some("~ar1(colf):ar1v(rowf)"),
            ),
            ("giv", "structural", "yield ~ 0 + rep", Some("~giv(gen)"), None),
        ]),
        truth: BTreeMap::from([
            ("var_gen".to_string(), serde_json::json!(sigma_g)),
            ("var_residual".to_string(), serde_json::json!(sigma_e)),
            ("rho_col".to_string(), serde_json::json!(rho_c)),
            ("rho_row".to_string(), serde_json::json!(rho_r)),
            ("rep_means".to_string(), serde_json::json!(rep_means)),
        ]),
    };
    Generated {
        files: BTreeMap::from([
            ("gilmour.csv".to_string(), csv_text(&table)),
            (
                "gilmour_pedigree.csv".to_string(),
                String::from_utf8(ped_csv).expect("UTF-8"),
            ),
            (
                "gilmour_ginverse.csv".to_string(),
                String::from_utf8(ginv_csv).expect("UTF-8"),
            ),
        ]),
        manifest,
    }
}

/// Plot counts per site and their grids (rows × columns).
pub const MET_GRIDS: [(usize, usize); 7] = [
    (18, 14),
    (23, 17),
    (18, 16),
    (20, 15),
    (19, 16),
    (18, 17),
    (22, 13),
];
pub const MET_GENOTYPES: usize = 240;

/// Per-site genetic variances of the generating model.
pub fn met_site_variances() -> Vec<f64> {
    (0..7).map(|k| 0.5 + k as f64 / 6.0).collect()
}

/// Seven-site trial with every genotype at every site plus replicated
/// extras (p-rep), site-by-genotype effects drawn from `Σ ⊗ I` with
/// correlation 0.5, independent errors.
pub fn generate_met(seed: u64) -> Generated {
    const RHO: f64 = 0.5;
    const VAR_E: f64 = 0.25;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars = met_site_variances();
    let sigma = Mat::from_fn(7, 7, |i, j| {
        let c = (vars[i] * vars[j]).sqrt();
        if i == j {
            c
        } else {
            RHO * c
        }
    });
    let l = chol(&sigma);
    let effects: Vec<Vec<f64>> = (0..MET_GENOTYPES)
        .map(|_| correlated(&l, &mut rng))
        .collect();
    let site_means: Vec<f64> = (0..7).map(|k| 5.0 + 0.3 * k as f64).collect();

    let gen_name = |k: usize| format!("V{:03}", k + 1);
    let (mut y, mut site, mut gen) = (Vec::new(), Vec::new(), Vec::new());
    let (mut row, mut col, mut rowf, mut colf) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (s, &(nr, nc)) in MET_GRIDS.iter().enumerate() {
        let plots = nr * nc;
        let mut entries: Vec<usize> = (0..MET_GENOTYPES).collect();
        let mut extra: Vec<usize> = (0..MET_GENOTYPES).collect();
        extra.shuffle(&mut rng);
        entries.extend_from_slice(&extra[..plots - MET_GENOTYPES]);
        entries.shuffle(&mut rng);
        for c in 0..nc {
            for r in 0..nr {
                let g = entries[c * nr + r];
                let v = site_means[s] + effects[g][s] + VAR_E.sqrt() * normal(&mut rng);
                y.push(round4(v));
                site.push(format!("S{}", s + 1));
                gen.push(gen_name(g));
                row.push((r + 1) as f64);
                col.push((c + 1) as f64);
                rowf.push((r + 1).to_string());
                colf.push((c + 1).to_string());
            }
        }
    }
    let n = y.len();
    let table = DataTable::new(vec![
        ("yield".into(), Column::Numeric(y)),
        ("site".into(), factor(site)),
        ("geno".into(), factor(gen)),
        ("row".into(), Column::Numeric(row)),
        ("col".into(), Column::Numeric(col)),
        ("rowf".into(), factor(rowf)),
        ("colf".into(), factor(colf)),
    ])
    .expect("consistent columns");

    let manifest = Manifest {
        name: "met".into(),
        description: "Seven-site multi-environment trial, 240 genotypes, p-rep allocation on per-site grids; synthetic yields".into(),
        origin: "synthetic".into(),
        seed: Some(seed),
        data: "met.csv".into(),
        pedigree: None,
        ginverse: None,
        relationship_factor: None,
        schema: schema_map(&[("rowf", "factor"), ("colf", "factor")]),
        rows: n,
        levels: [("site", 7), ("geno", MET_GENOTYPES)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        designs: vec![DesignDims {
            formula: "yield ~ 0 + site".into(),
            rows: n,
            cols: 7,
        }],
        golden: golden(&[("yield ~ 0 + site", "site + 0")]),
        models: models(&[
            ("idv", "structural", "yield ~ 0 + site", Some("~idv(site):id(geno)"), None),
            ("site_gen", "grouped", "yield ~ 0 + site + (1 | site:geno)", None, None),
            ("diag", "structural", "yield ~ 0 + site", Some("~diag(site):id(geno)"), None),
            ("us", "structural", "yield ~ 0 + site", Some("~us(site):id(geno)"), None),
            ("us_grouped", "grouped", "yield ~ 0 + site + (0 + site | geno)", None, None),
            (
                "spatial",
                "structural",
                "yield ~ 0 + site",
                Some("~us(site):id(geno) + at(site, \"S1\"):idv(rowf)"),
                Some("~at(site):ar1(colf):ar1(rowf)"),
            ),
        ]),
        truth: BTreeMap::from([
            ("site_variances".to_string(), serde_json::json!(vars)),
            ("site_correlation".to_string(), serde_json::json!(RHO)),
            ("var_residual".to_string(), serde_json::json!(VAR_E)),
            ("site_means".to_string(), serde_json::json!(site_means)),
        ]),
    };
    Generated {
        files: BTreeMap::from([("met.csv".to_string(), csv_text(&table))]),
        manifest,
    }
}

/// Manifests of the public snapshots, which are shipped as data only.
pub fn public_manifests() -> Vec<Manifest> {
    let trees = Manifest {
        name: "trees".into(),
        description: "Girth, height and volume of 31 felled black cherry trees".into(),
        origin: "public".into(),
        seed: None,
        data: "trees.csv".into(),
        pedigree: None,
        ginverse: None,
        relationship_factor: None,
        schema: BTreeMap::new(),
        rows: 31,
        levels: BTreeMap::new(),
        designs: vec![DesignDims {
            formula: "log(Volume) ~ 1 + log(Height) + log(Girth)".into(),
            rows: 31,
            cols: 3,
        }],
        golden: golden(&[(
            "log(Volume) ~ 1 + log(Height) + log(Girth)",
            "1 + log(Height) + log(Girth)",
        )]),
        models: models(&[(
            "loglog",
            "fixed",
            "log(Volume) ~ 1 + log(Height) + log(Girth)",
            None,
            None,
        )]),
        truth: BTreeMap::new(),
    };
    let chick = Manifest {
        name: "chick".into(),
        description: "Body weights of 50 chicks on 4 diets, measured up to 12 times".into(),
        origin: "public".into(),
        seed: None,
        data: "chick.csv".into(),
        pedigree: None,
        ginverse: None,
        relationship_factor: None,
        schema: schema_map(&[("Chick", "factor"), ("Diet", "factor")]),
        rows: 578,
        levels: [("Chick", 50), ("Diet", 4)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect(),
        designs: vec![DesignDims {
            formula: "weight ~ 1 + Time + Diet".into(),
            rows: 578,
            cols: 5,
        }],
        golden: golden(&[("weight ~ 1 + Time + Diet", "1 + Time + Diet")]),
        models: models(&[
            (
                "us",
                "grouped",
                "weight ~ 1 + Time + Diet + (1 + Time | Chick)",
                None,
                None,
            ),
            (
                "diag",
                "grouped",
                "weight ~ 1 + Time + Diet + (1 + Time || Chick)",
                None,
                None,
            ),
            (
                "us_str",
                "structural",
                "weight ~ 1 + Time + Diet",
                Some("~str(~Chick + Chick:Time, ~us(2):id(50))"),
                None,
            ),
            (
                "diag_str",
                "structural",
                "weight ~ 1 + Time + Diet",
                Some("~str(~Chick + Chick:Time, ~diag(2):id(50))"),
                None,
            ),
        ]),
        truth: BTreeMap::new(),
    };
    vec![trees, chick]
}

pub const DEFAULT_SEED: u64 = 1;

/// Every synthetic entry at `seed`.
pub fn generate_all(seed: u64) -> Vec<Generated> {
    vec![
        generate_herbicide(seed),
        generate_gilmour(seed),
        generate_met(seed),
    ]
}

/// Regenerates synthetic entries and rewrites the public manifests into `dir`.
pub fn write_corpus(dir: &Path, seed: u64) -> Result<(), CorpusError> {
    for g in generate_all(seed) {
        g.write(dir)?;
    }
    for m in public_manifests() {
        let p = dir.join(format!("{}.json", m.name));
        std::fs::write(&p, manifest_json(&m)).map_err(|e| CorpusError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(generate_met(1), generate_met(1));
        assert_eq!(generate_gilmour(7), generate_gilmour(7));
        assert_ne!(
            generate_herbicide(1).files["herbicide.csv"],
            generate_herbicide(2).files["herbicide.csv"]
        );
    }

    #[test]
    fn met_layout() {
        let g = generate_met(1);
        let t =
            DataTable::from_reader(g.files["met.csv"].as_bytes(), &g.manifest.schema().unwrap())
                .unwrap();
        assert_eq!(t.n_rows(), 2127);
        assert_eq!(t.factor("site").unwrap().0.len(), 7);
        assert_eq!(t.factor("geno").unwrap().0.len(), 240);
        let plots: Vec<usize> = MET_GRIDS.iter().map(|(r, c)| r * c).collect();
        assert_eq!(plots, [252, 391, 288, 300, 304, 306, 286]);
    }

    #[test]
    fn gilmour_replication() {
        let g = generate_gilmour(1);
        let t = DataTable::from_reader(
            g.files["gilmour.csv"].as_bytes(),
            &g.manifest.schema().unwrap(),
        )
        .unwrap();
        let (levels, codes) = t.factor("gen").unwrap();
        let mut counts = vec![0; levels.len()];
        for c in codes.iter().flatten() {
            counts[*c as usize] += 1;
        }
        assert_eq!(counts.iter().filter(|&&c| c == 6).count(), 3);
        assert_eq!(counts.iter().filter(|&&c| c == 3).count(), 104);
    }
}
