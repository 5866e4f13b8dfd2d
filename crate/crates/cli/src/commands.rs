use std::fmt::Write as _;
use std::path::Path;

use mixedform_core::corpus::{self, CorpusError};
use mixedform_core::covariance::{load_giv, CovError};
use mixedform_core::data::ColumnType;
use mixedform_core::dialect::{apply_derived, parse_term, LoweredTerm};
use mixedform_core::formula::parse_one_sided;
use mixedform_core::model::{split_groups, ModelSpec};
use mixedform_core::terms::{expand_with_lints, Lint};
use mixedform_core::{
    build_model, canonical_text, fit as fit_model, parse_formula, translate as translate_term,
    Column, DataTable, Dialect, FitOptions, ModelError, ModelFormulas, ParseError, Pedigree,
    RemlError, Resources, Role, Schema, SparseTriplets, Translation,
};
use serde_json::{json, Map, Value};

use crate::json::{labeled, number, render};
use crate::{DialectArg, FitArgs, Format, GenerateArgs, ModelArgs, TranslateArgs};

pub struct Output {
    pub stdout: String,
    /// Diagnostics, one per line.
    pub stderr: Vec<String>,
    pub code: u8,
}

impl Output {
    fn ok(stdout: String) -> Output {
        Output {
            stdout,
            stderr: Vec::new(),
            code: 0,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    /// A parse error with the text it came from.
    Parse {
        error: ParseError,
        source: String,
    },
    Model(ModelError),
    Reml(RemlError),
    Corpus(CorpusError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Parse { .. } => "E_PARSE",
            CliError::Model(e) => e.code(),
            CliError::Reml(RemlError::Cov(_)) => "E_COVARIANCE",
            CliError::Reml(_) => "E_MODEL",
            CliError::Corpus(CorpusError::Io { .. }) => "E_IO",
            CliError::Corpus(_) => "E_DATA",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Parse { error, source } => {
                write!(f, "{}: {error} in `{source}`", error.kind())
            }
            CliError::Model(ModelError::Parse(error)) => write!(f, "{}: {error}", error.kind()),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::Reml(e) => write!(f, "{e}"),
            CliError::Corpus(e) => write!(f, "{e}"),
        }
    }
}

impl CliError {
    /// Source line and caret for parse errors, printed after the error line.
    pub fn context(&self) -> Option<String> {
        match self {
            CliError::Parse { error, source } => error.caret(source),
            _ => None,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Model(e)
    }
}

impl From<RemlError> for CliError {
    fn from(e: RemlError) -> Self {
        CliError::Reml(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Corpus(e)
    }
}

fn parse_fixed(text: &str) -> Result<mixedform_core::Formula, CliError> {
    parse_formula(text).map_err(|error| CliError::Parse {
        error,
        source: text.to_string(),
    })
}

fn parse_side(text: &str) -> Result<mixedform_core::Expr, CliError> {
    parse_one_sided(text)
        .map(|f| f.rhs)
        .map_err(|error| CliError::Parse {
            error,
            source: text.to_string(),
        })
}

fn key_value<'a>(flag: &str, s: &'a str) -> Result<(&'a str, &'a str), CliError> {
    s.split_once('=')
        .filter(|(k, v)| !k.is_empty() && !v.is_empty())
        .ok_or_else(|| CliError::Usage(format!("--{flag} expects NAME=VALUE, got `{s}`")))
}

fn schema(overrides: &[String]) -> Result<Schema, CliError> {
    let mut s = Schema::new();
    for o in overrides {
        let (col, ty) = key_value("schema", o)?;
        let ty: ColumnType = ty.parse().map_err(CliError::Usage)?;
        s.insert(col.to_string(), ty);
    }
    Ok(s)
}

fn load_table(path: &Path, overrides: &[String]) -> Result<DataTable, CliError> {
    let schema = schema(overrides)?;
    DataTable::read_csv(path, &schema).map_err(|e| CliError::Model(e.into()))
}

fn resources(args: &ModelArgs) -> Result<Resources, CliError> {
    let cov = |e: CovError| CliError::Model(e.into());
    let mut res = Resources::default();
    for p in &args.pedigree {
        let (factor, path) = key_value("pedigree", p)?;
        res.add_pedigree(factor, Pedigree::read_csv(path).map_err(cov)?);
    }
    for g in &args.ginverse {
        let (factor, path) = key_value("ginverse", g)?;
        let triplets = SparseTriplets::read_csv(path).map_err(cov)?;
        res.add_ginverse(factor, load_giv(&triplets, path).map_err(cov)?);
    }
    Ok(res)
}

fn formulas(args: &ModelArgs, fixed: &str) -> Result<ModelFormulas, CliError> {
    Ok(ModelFormulas {
        fixed: parse_fixed(fixed)?,
        random: args.random.as_deref().map(parse_side).transpose()?,
        rcov: args.rcov.as_deref().map(parse_side).transpose()?,
    })
}

/// Column used as a stand-in response when only random or residual
/// formulas are given to `parse`.
const PLACEHOLDER_RESPONSE: &str = "__mixedform_response";

fn term_json(t: &LoweredTerm) -> Value {
    json!({
        "term": t.source,
        "dialect": t.dialect.to_string(),
        "structure": t.structure.to_string(),
        "parameters": t.structure.param_count(),
        "columns": t.design.q_total(),
    })
}

fn term_line(t: &LoweredTerm) -> String {
    let k = t.structure.param_count();
    let noun = if k == 1 { "parameter" } else { "parameters" };
    format!(
        "  {} [{}]: {}, {k} {noun}",
        t.source, t.dialect, t.structure
    )
}

pub fn parse(args: &ModelArgs) -> Result<Output, CliError> {
    if args.formula.is_none() && args.random.is_none() && args.rcov.is_none() {
        return Err(CliError::Usage(
            "give at least one of --formula, --random, --rcov".into(),
        ));
    }
    let mut text = String::new();
    let mut report = Map::new();
    let mut lints: Vec<String> = Vec::new();

    let fixed = args.formula.as_deref().map(parse_fixed).transpose()?;
    let random = args.random.as_deref().map(parse_side).transpose()?;
    let rcov = args.rcov.as_deref().map(parse_side).transpose()?;

    let mut group_terms = Vec::new();
    if let Some(f) = &fixed {
        let (rest, groups) = split_groups(&f.rhs)?;
        group_terms = groups;
        let (tl, found) = match &rest {
            Some(rhs) => expand_with_lints(rhs).map_err(ModelError::from)?,
            None => {
                // Only grouped terms: the intercept is implicit.
                let one = parse_one_sided("~ 1").expect("literal parses").rhs;
                let (tl, _) = expand_with_lints(&one).map_err(ModelError::from)?;
                (tl, vec![Lint::ImplicitIntercept])
            }
        };
        let canonical = canonical_text(&tl);
        let intercept = if !tl.intercept {
            "removed"
        } else if found.contains(&Lint::ImplicitIntercept) {
            "implicit"
        } else {
            "explicit"
        };
        if let Some(lhs) = &f.lhs {
            writeln!(text, "response: {lhs}").unwrap();
            report.insert("response".into(), json!(lhs.to_string()));
        }
        writeln!(text, "canonical: {canonical}").unwrap();
        writeln!(text, "intercept: {intercept}").unwrap();
        report.insert("canonical".into(), json!(canonical));
        report.insert("intercept".into(), json!(intercept));
        lints.extend(found.iter().map(ToString::to_string));
    }

    let mut random_terms: Vec<(String, Dialect)> = group_terms
        .iter()
        .map(|g| (g.to_string(), Dialect::Grouped))
        .collect();
    if let Some(r) = &random {
        for s in r.summands() {
            let d = if matches!(s, mixedform_core::Expr::Group { .. }) {
                Dialect::Grouped
            } else {
                Dialect::Structural
            };
            random_terms.push((s.to_string(), d));
        }
    }
    if random_terms.iter().any(|(_, d)| *d == Dialect::Grouped)
        && random_terms.iter().any(|(_, d)| *d == Dialect::Structural)
    {
        return Err(ModelError::MixedDialects.into());
    }

    match &args.data {
        None => {
            if !random_terms.is_empty() {
                writeln!(text, "random:").unwrap();
            }
            for (t, d) in &random_terms {
                writeln!(text, "  {t} [{d}]").unwrap();
            }
            if let Some(r) = &rcov {
                writeln!(text, "residual:\n  {r}").unwrap();
            }
            report.insert(
                "random".into(),
                Value::Array(
                    random_terms
                        .iter()
                        .map(|(t, d)| json!({"term": t, "dialect": d.to_string()}))
                        .collect(),
                ),
            );
            if let Some(r) = &rcov {
                report.insert("residual".into(), json!([{"term": r.to_string()}]));
            }
        }
        Some(path) => {
            let mut table = load_table(path, &args.schema)?;
            let fixed_text = match &args.formula {
                Some(f) if fixed.as_ref().is_some_and(|f| f.lhs.is_some()) => f.clone(),
                Some(f) => format!("{PLACEHOLDER_RESPONSE} {f}"),
                None => format!("{PLACEHOLDER_RESPONSE} ~ 1"),
            };
            if !table.has_column(PLACEHOLDER_RESPONSE) {
                let zeros = Column::Numeric(vec![0.0; table.n_rows()]);
                table = table
                    .with_column(PLACEHOLDER_RESPONSE, zeros)
                    .map_err(ModelError::from)?;
            }
            let spec = build_model(&formulas(args, &fixed_text)?, &table, &resources(args)?)?;
            writeln!(
                text,
                "n: {}, p: {}, q: {}",
                spec.n(),
                spec.p(),
                spec.q_total()
            )
            .unwrap();
            if !spec.random.is_empty() {
                writeln!(text, "random:").unwrap();
            }
            for t in &spec.random {
                writeln!(text, "{}", term_line(t)).unwrap();
            }
            writeln!(text, "residual:").unwrap();
            for t in &spec.residual {
                writeln!(text, "{}", term_line(t)).unwrap();
            }
            writeln!(text, "variance parameters: {}", spec.param_count()).unwrap();
            report.insert("n".into(), json!(spec.n()));
            report.insert("p".into(), json!(spec.p()));
            report.insert("q_total".into(), json!(spec.q_total()));
            report.insert(
                "random".into(),
                Value::Array(spec.random.iter().map(term_json).collect()),
            );
            report.insert(
                "residual".into(),
                Value::Array(spec.residual.iter().map(term_json).collect()),
            );
            report.insert("parameters".into(), json!(spec.param_count()));
            lints.extend(spec.warnings.iter().cloned());
        }
    }

    for l in &lints {
        writeln!(text, "warning: {l}").unwrap();
    }
    report.insert("warnings".into(), json!(lints));
    Ok(Output::ok(match args.format {
        Format::Text => text,
        Format::Json => render(&Value::Object(report)),
    }))
}

fn fit_report(spec: &ModelSpec, fit: &mixedform_core::FitResult) -> Value {
    let mut dropped: Vec<usize> = spec.dropped_rows.iter().map(|r| r + 1).collect();
    dropped.sort_unstable();
    json!({
        "version": env!("CARGO_PKG_VERSION"),
        "response": spec.response,
        "n": spec.n(),
        "p": spec.p(),
        "q_total": spec.q_total(),
        "dropped_rows": dropped,
        "beta": labeled(&fit.beta_labels, &fit.beta),
        "theta": labeled(&fit.theta_labels, &fit.theta),
        "logREML": number(fit.log_reml),
        "converged": fit.converged,
        "iterations": fit.iterations,
        "gradient_norm": number(fit.gradient_norm),
        "boundary": fit.boundary.iter().map(|b| b.parameter.clone()).collect::<Vec<_>>(),
        "warnings": spec.warnings,
    })
}

fn fit_text(spec: &ModelSpec, fit: &mixedform_core::FitResult) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "n = {}, p = {}, q = {}, dropped rows = {}",
        spec.n(),
        spec.p(),
        spec.q_total(),
        spec.dropped_rows.len()
    )
    .unwrap();
    writeln!(s, "logREML = {}", number(fit.log_reml)).unwrap();
    writeln!(
        s,
        "converged = {} after {} iterations",
        fit.converged, fit.iterations
    )
    .unwrap();
    let width = fit
        .beta_labels
        .iter()
        .chain(&fit.theta_labels)
        .map(|l| l.chars().count())
        .max()
        .unwrap_or(0);
    writeln!(s, "fixed effects:").unwrap();
    for (l, v) in fit.beta_labels.iter().zip(&fit.beta) {
        writeln!(s, "  {l:<width$}  {}", number(*v)).unwrap();
    }
    writeln!(s, "variance parameters:").unwrap();
    for (l, v) in fit.theta_labels.iter().zip(&fit.theta) {
        writeln!(s, "  {l:<width$}  {}", number(*v)).unwrap();
    }
    s
}

pub fn fit(args: &FitArgs) -> Result<Output, CliError> {
    let m = &args.model;
    let fixed = m
        .formula
        .as_deref()
        .ok_or_else(|| CliError::Usage("fit requires --formula".into()))?;
    let path = m
        .data
        .as_deref()
        .ok_or_else(|| CliError::Usage("fit requires --data".into()))?;
    let forms = formulas(m, fixed)?;
    let table = load_table(path, &m.schema)?;
    let spec = build_model(&forms, &table, &resources(m)?)?;
    let options = FitOptions {
        max_iter: args.max_iter,
        tol: args.tol,
        start: args.start.clone(),
        ..FitOptions::default()
    };
    let fit = fit_model(&spec, &options)?;
    let mut stderr: Vec<String> = spec
        .warnings
        .iter()
        .map(|w| format!("warning: {w}"))
        .collect();
    stderr.extend(fit.boundary.iter().map(|b| {
        format!(
            "warning: {} is at the boundary ({:e})",
            b.parameter, b.value
        )
    }));
    if !fit.converged {
        stderr.push(format!(
            "warning: not converged after {} iterations (gradient norm {:e})",
            fit.iterations, fit.gradient_norm
        ));
    }
    let stdout = match m.format {
        Format::Json => render(&fit_report(&spec, &fit)),
        Format::Text => fit_text(&spec, &fit),
    };
    Ok(Output {
        stdout,
        stderr,
        code: if fit.converged { 0 } else { 2 },
    })
}

fn dialect(d: DialectArg) -> Dialect {
    match d {
        DialectArg::Grouped => Dialect::Grouped,
        DialectArg::Structural => Dialect::Structural,
    }
}

pub fn translate(args: &TranslateArgs) -> Result<Output, CliError> {
    let from = dialect(args.from);
    let to = dialect(args.to);
    let role = if args.rcov {
        Role::Residual
    } else {
        Role::Random
    };
    let term = parse_term(&args.term).map_err(|e| match e {
        ModelError::Parse(error) => CliError::Parse {
            error,
            source: args.term.clone(),
        },
        other => CliError::Model(other),
    })?;
    let table = args
        .data
        .as_deref()
        .map(|p| load_table(p, &args.schema))
        .transpose()?;
    let result = if from == to {
        Translation::Text {
            text: term.to_string(),
            derived: Vec::new(),
        }
    } else {
        translate_term(&term, from, role, table.as_ref())?
    };
    let mut stderr = Vec::new();
    if let (Translation::Text { derived, .. }, Some(t)) = (&result, &table) {
        // Confirms the derived columns can be built from this table.
        apply_derived(t.clone(), derived)?;
    }
    if let Translation::Text { derived, .. } = &result {
        for d in derived {
            stderr.push(format!(
                "note: uses indicator columns of `{}`: {}",
                d.factor,
                d.columns.join(", ")
            ));
        }
    }
    let stdout = match args.format {
        Format::Text => format!("{result}\n"),
        Format::Json => {
            let mut v = json!({
                "source": args.term,
                "from": from.to_string(),
                "to": to.to_string(),
                "role": if args.rcov { "residual" } else { "random" },
            });
            let obj = v.as_object_mut().expect("object literal");
            match &result {
                Translation::Text { text, derived } => {
                    obj.insert("translation".into(), json!(text));
                    obj.insert(
                        "derived".into(),
                        Value::Array(
                            derived
                                .iter()
                                .map(|d| json!({"factor": d.factor, "columns": d.columns}))
                                .collect(),
                        ),
                    );
                }
                Translation::Untranslatable(reason) => {
                    obj.insert("translation".into(), Value::Null);
                    obj.insert("untranslatable".into(), json!(reason));
                }
            }
            render(&v)
        }
    };
    Ok(Output {
        stdout,
        stderr,
        code: 0,
    })
}

pub fn generate(args: &GenerateArgs) -> Result<Output, CliError> {
    corpus::write_corpus(&args.out, args.seed)?;
    let names = corpus::list(&args.out)?;
    Ok(Output::ok(format!(
        "wrote {} entries to {}: {}\n",
        names.len(),
        args.out.display(),
        names.join(", ")
    )))
}
