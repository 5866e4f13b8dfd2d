//! Fixtures shared by the benchmarks.

use mixedform_core::corpus::{self, default_dir};
use mixedform_core::{build_model, ModelSpec, Resources};

/// Lowers a named model from a corpus entry.
pub fn corpus_model(entry: &str, model: &str) -> ModelSpec {
    let e = corpus::load(&default_dir(), entry).expect("corpus entry");
    let m = e
        .manifest
        .model(model)
        .unwrap_or_else(|| panic!("{entry} has no model `{model}`"));
    let formulas =
        mixedform_core::ModelFormulas::parse(&m.fixed, m.random.as_deref(), m.rcov.as_deref())
            .expect("manifest formulas parse");
    build_model(&formulas, &e.table, &Resources::default()).expect("manifest model lowers")
}

/// Formulas of increasing size for the parser benchmarks.
pub const FORMULAS: [(&str, &str); 4] = [
    ("simple", "log(Volume) ~ 1 + log(Height) + log(Girth)"),
    (
        "factorial",
        "sqrt(Weight) ~ 1 + Block + Population*Herbicide",
    ),
    ("cube", "y ~ (0 + x1 + x2 + x3)^3"),
    ("power5", "y ~ (a + b + c + d + e)^5 - a:b:c:d:e"),
];
