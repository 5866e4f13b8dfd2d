use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use super::CovError;

/// Covariance-scale matrix `K` of a GIV structure.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownMatrix {
    pub label: String,
    pub matrix: Mat<f64>,
}

impl KnownMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Lower-triangle sparse entries, 0-based, no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTriplets {
    pub dim: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseTriplets {
    /// Accepts entries from either triangle and stores them in the lower one.
    /// `dim` defaults to the largest index seen.
    pub fn new(
        entries: Vec<(usize, usize, f64)>,
        dim: Option<usize>,
    ) -> Result<SparseTriplets, CovError> {
        let mut lower: BTreeMap<(usize, usize), (f64, bool)> = BTreeMap::new();
        for (r, c, v) in entries {
            let key = (r.max(c), r.min(c));
            let mirrored = r < c;
            match lower.get(&key) {
                None => {
                    lower.insert(key, (v, mirrored));
                }
                Some(&(old, was_mirrored)) if was_mirrored != mirrored && r != c => {
                    if old != v {
                        return Err(CovError::AsymmetricInput {
                            row: key.0,
                            col: key.1,
                        });
                    }
                }
                Some(_) => return Err(CovError::DuplicateEntry { row: r, col: c }),
            }
        }
        let seen = lower.keys().map(|&(r, _)| r + 1).max().unwrap_or(0);
        let dim = dim.unwrap_or(seen);
        if seen > dim {
            return Err(CovError::DimensionMismatch {
                expected: dim,
                found: seen,
            });
        }
        Ok(SparseTriplets {
            dim,
            entries: lower
                .into_iter()
                .map(|((r, c), (v, _))| (r, c, v))
                .collect(),
        })
    }

    /// Nonzero lower-triangle entries of a dense symmetric matrix.
    pub fn from_dense(m: &Mat<f64>) -> SparseTriplets {
        let mut entries = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..=i {
                if m[(i, j)] != 0.0 {
                    entries.push((i, j, m[(i, j)]));
                }
            }
        }
        SparseTriplets {
            dim: m.nrows(),
            entries,
        }
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// Reads `row,col,value` with 1-based indices and a header row.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<SparseTriplets, CovError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CovError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        SparseTriplets::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<SparseTriplets, CovError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CovError::InvalidRecord {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let bad = |message: String| CovError::InvalidRecord { line, message };
            if rec.len() != 3 {
                return Err(bad(format!("expected 3 fields, found {}", rec.len())));
            }
            let index = |s: &str| -> Result<usize, CovError> {
                match s.trim().parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(bad(format!("`{s}` is not a 1-based index"))),
                }
            };
            let value: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("`{}` is not a number", &rec[2])))?;
            entries.push((index(&rec[0])?, index(&rec[1])?, value));
        }
        SparseTriplets::new(entries, None)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "value"])?;
        for &(r, c, v) in &self.entries {
            w.write_record([(r + 1).to_string(), (c + 1).to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Inverts the supplied sparse matrix once; the GIV structure then
/// materializes as `var · K`.
pub fn load_giv(triplets: &SparseTriplets, label: &str) -> Result<KnownMatrix, CovError> {
    let m = triplets.to_dense();
    let llt = m
        .llt(Side::Lower)
        .map_err(|_| CovError::NotPositiveDefinite(format!("ginverse `{label}`")))?;
    let mut k = llt.inverse();
    // Symmetrize away rounding.
    for i in 0..k.nrows() {
        for j in 0..i {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(KnownMatrix {
        label: label.to_string(),
        matrix: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_triplets() {
        let t =
            SparseTriplets::from_reader("row,col,value\n1,1,1\n2,2,1\n3,3,1\n".as_bytes()).unwrap();
        let k = load_giv(&t, "I").unwrap();
        assert_eq!(k.matrix, Mat::<f64>::identity(3, 3));
    }

    #[test]
    fn symmetric_and_duplicate_checks() {
        assert!(SparseTriplets::new(
            vec![(0, 1, 0.5), (1, 0, 0.5), (0, 0, 1.0), (1, 1, 1.0)],
            None
        )
        .is_ok());
        assert_eq!(
            SparseTriplets::new(vec![(0, 1, 0.5), (1, 0, 0.4)], None),
            Err(CovError::AsymmetricInput { row: 1, col: 0 })
        );
        assert!(matches!(
            SparseTriplets::new(vec![(1, 0, 0.5), (1, 0, 0.5)], None),
            Err(CovError::DuplicateEntry { .. })
        ));
        let not_pd =
            SparseTriplets::new(vec![(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)], None).unwrap();
        assert!(matches!(
            load_giv(&not_pd, "x"),
            Err(CovError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let t = SparseTriplets::new(vec![(0, 0, 1.0 / 3.0), (2, 1, -0.1), (2, 2, 2.5)], Some(3))
            .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(SparseTriplets::from_reader(buf.as_slice()).unwrap(), t);
    }
}
