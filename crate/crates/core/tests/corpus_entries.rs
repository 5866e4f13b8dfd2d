use mixedform_core::corpus::{self, default_dir, generate_all, manifest_json, public_manifests};
use mixedform_core::{canonical_text, expand, parse_formula};

#[test]
fn every_entry_loads_with_stated_dimensions() {
    let dir = default_dir();
    let names = corpus::list(&dir).unwrap();
    assert_eq!(names, ["chick", "gilmour", "herbicide", "met", "trees"]);
    for name in names {
        let entry = corpus::load(&dir, &name).unwrap();
        entry
            .verify_dimensions()
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn stated_dimensions_are_the_published_ones() {
    let dir = default_dir();
    let rows = |n: &str| corpus::load(&dir, n).unwrap().manifest.rows;
    assert_eq!(rows("trees"), 31);
    assert_eq!(rows("herbicide"), 135);
    assert_eq!(rows("gilmour"), 330);
    assert_eq!(rows("met"), 2127);
    let gilmour = corpus::load(&dir, "gilmour").unwrap().manifest;
    assert_eq!(gilmour.levels["gen"], 107);
    assert_eq!(gilmour.levels["rowf"], 22);
    assert_eq!(gilmour.levels["colf"], 15);
    assert_eq!(gilmour.levels["rep"], 3);
    let met = corpus::load(&dir, "met").unwrap().manifest;
    assert_eq!(met.levels["site"], 7);
    assert_eq!(met.levels["geno"], 240);
}

#[test]
fn wrong_stated_dimension_is_reported() {
    let mut entry = corpus::load(&default_dir(), "trees").unwrap();
    entry.manifest.designs[0].cols = 4;
    assert!(entry.verify_dimensions().is_err());
    entry.manifest.rows = 30;
    assert!(entry.verify_dimensions().is_err());
}

#[test]
fn golden_canonical_expansions() {
    let dir = default_dir();
    for name in corpus::list(&dir).unwrap() {
        let entry = corpus::load(&dir, &name).unwrap();
        for g in &entry.manifest.golden {
            let f = parse_formula(&g.formula).unwrap();
            assert_eq!(
                canonical_text(&expand(&f.rhs).unwrap()),
                g.canonical,
                "{name}"
            );
        }
    }
}

#[test]
fn shipped_files_match_their_generators() {
    let dir = default_dir();
    for g in generate_all(corpus::DEFAULT_SEED) {
        for (file, text) in &g.files {
            let shipped = std::fs::read_to_string(dir.join(file)).unwrap();
            assert!(shipped == *text, "{file} differs from its generator");
        }
        let manifest = std::fs::read_to_string(dir.join(format!("{}.json", g.manifest.name)));
        assert_eq!(manifest.unwrap(), manifest_json(&g.manifest));
    }
    for m in public_manifests() {
        let shipped = std::fs::read_to_string(dir.join(format!("{}.json", m.name))).unwrap();
        assert_eq!(shipped, manifest_json(&m));
    }
}

#[test]
fn write_then_load_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    corpus::write_corpus(tmp.path(), 5).unwrap();
    for name in ["herbicide", "gilmour", "met"] {
        let entry = corpus::load(tmp.path(), name).unwrap();
        entry.verify_dimensions().unwrap();
        assert_eq!(entry.manifest.seed, Some(5));
    }
    let a = corpus::load(tmp.path(), "met").unwrap().table;
    let b = corpus::load(&default_dir(), "met").unwrap().table;
    assert_ne!(a, b, "a different seed gives different values");
}

#[test]
fn pedigree_and_ginverse_describe_the_same_relationships() {
    use faer::Mat;
    let entry = corpus::load(&default_dir(), "gilmour").unwrap();
    let a = entry.pedigree().unwrap().unwrap().nrm();
    let a_inv = entry.ginverse().unwrap().unwrap().to_dense();
    let prod: Mat<f64> = &a * &a_inv;
    let n = prod.nrows();
    for i in 0..n {
        for j in 0..n {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((prod[(i, j)] - expected).abs() < 1e-10, "({i},{j})");
        }
    }
}
