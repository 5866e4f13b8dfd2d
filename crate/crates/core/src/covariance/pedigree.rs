use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use faer::Mat;

use super::CovError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PedigreeRecord {
    pub id: String,
    pub sire: Option<String>,
    pub dam: Option<String>,
}

impl PedigreeRecord {
    pub fn new(id: &str, sire: Option<&str>, dam: Option<&str>) -> PedigreeRecord {
        PedigreeRecord {
            id: id.to_string(),
            sire: sire.map(str::to_string),
            dam: dam.map(str::to_string),
        }
    }
}

/// Validated pedigree: ids unique, every parent declared, no cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct Pedigree {
    records: Vec<PedigreeRecord>,
    /// Parent indices into `records`.
    parents: Vec<[Option<usize>; 2]>,
    /// Record indices with parents before offspring.
    topo: Vec<usize>,
}

fn unknown_parent(token: &str) -> bool {
    let t = token.trim();
    t.is_empty() || t == "0" || t == "NA"
}

impl Pedigree {
    pub fn new(records: Vec<PedigreeRecord>) -> Result<Pedigree, CovError> {
        let mut index: HashMap<&str, usize> = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.id.as_str(), i).is_some() {
                return Err(CovError::DuplicateIndividual(r.id.clone()));
            }
        }
        let mut parents = Vec::with_capacity(records.len());
        for r in &records {
            let lookup = |p: &Option<String>| -> Result<Option<usize>, CovError> {
                match p {
                    None => Ok(None),
                    Some(p) => index.get(p.as_str()).copied().map(Some).ok_or_else(|| {
                        CovError::UnknownParentId {
                            child: r.id.clone(),
                            parent: p.clone(),
                        }
                    }),
                }
            };
            parents.push([lookup(&r.sire)?, lookup(&r.dam)?]);
        }

        // Depth-first post-order; state 1 = on stack, 2 = done.
        let n = records.len();
        let mut state = vec![0u8; n];
        let mut topo = Vec::with_capacity(n);
        for root in 0..n {
            if state[root] != 0 {
                continue;
            }
            let mut stack = vec![(root, 0usize)];
            state[root] = 1;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                if *next < 2 {
                    let p = parents[node][*next];
                    *next += 1;
                    if let Some(p) = p {
                        match state[p] {
                            0 => {
                                state[p] = 1;
                                stack.push((p, 0));
                            }
                            1 => return Err(CovError::CyclicPedigree(records[p].id.clone())),
                            _ => {}
                        }
                    }
                } else {
                    state[node] = 2;
                    topo.push(node);
                    stack.pop();
                }
            }
        }
        Ok(Pedigree {
            records,
            parents,
            topo,
        })
    }

    /// Reads `id,sire,dam` with a header row; `0`, `NA` or empty marks an
    /// unknown parent.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Pedigree, CovError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CovError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Pedigree::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Pedigree, CovError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CovError::InvalidRecord {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            if rec.len() != 3 {
                return Err(CovError::InvalidRecord {
                    line: rec.position().map_or(0, |p| p.line()),
                    message: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            let parent = |s: &str| (!unknown_parent(s)).then(|| s.trim().to_string());
            records.push(PedigreeRecord {
                id: rec[0].trim().to_string(),
                sire: parent(&rec[1]),
                dam: parent(&rec[2]),
            });
        }
        Pedigree::new(records)
    }

    pub fn records(&self) -> &[PedigreeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.records.iter().position(|r| r.id == id)
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "sire", "dam"])?;
        for r in &self.records {
            w.write_record([
                r.id.as_str(),
                r.sire.as_deref().unwrap_or("0"),
                r.dam.as_deref().unwrap_or("0"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Numerator relationship matrix by the tabular method, indexed in
    /// declaration order.
    pub fn nrm(&self) -> Mat<f64> {
        let n = self.records.len();
        // Work in topological positions so every parent has a smaller index.
        let mut pos = vec![0usize; n];
        for (k, &i) in self.topo.iter().enumerate() {
            pos[i] = k;
        }
        let par: Vec<[Option<usize>; 2]> = self
            .topo
            .iter()
            .map(|&i| self.parents[i].map(|p| p.map(|p| pos[p])))
            .collect();
        let mut a = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            let [s, d] = par[i];
            for j in 0..i {
                let from = |p: Option<usize>| p.map_or(0.0, |p| a[(j, p)]);
                let v = 0.5 * (from(s) + from(d));
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, i)] = 1.0
                + match (s, d) {
                    (Some(s), Some(d)) => 0.5 * a[(s, d)],
                    _ => 0.0,
                };
        }
        Mat::from_fn(n, n, |i, j| a[(pos[i], pos[j])])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_sibs() -> Pedigree {
        Pedigree::new(vec![
            PedigreeRecord::new("S", None, None),
            PedigreeRecord::new("D", None, None),
            PedigreeRecord::new("O1", Some("S"), Some("D")),
            PedigreeRecord::new("O2", Some("S"), Some("D")),
        ])
        .unwrap()
    }

    #[test]
    fn full_sibs_share_half() {
        let a = full_sibs().nrm();
        assert_eq!(a[(2, 3)], 0.5);
        assert_eq!(a[(0, 2)], 0.5);
        assert_eq!(a[(0, 1)], 0.0);
        assert_eq!(a[(2, 2)], 1.0);
    }

    #[test]
    fn offspring_declared_before_parents() {
        let p = Pedigree::new(vec![
            PedigreeRecord::new("C", Some("P"), None),
            PedigreeRecord::new("P", None, None),
        ])
        .unwrap();
        let a = p.nrm();
        assert_eq!(a[(0, 1)], 0.5);
        assert_eq!(a[(0, 0)], 1.0);
    }

    #[test]
    fn inbred_offspring_diagonal() {
        // Z is the offspring of half-sibs X and Y.
        let p = Pedigree::new(vec![
            PedigreeRecord::new("S", None, None),
            PedigreeRecord::new("D1", None, None),
            PedigreeRecord::new("D2", None, None),
            PedigreeRecord::new("X", Some("S"), Some("D1")),
            PedigreeRecord::new("Y", Some("S"), Some("D2")),
            PedigreeRecord::new("Z", Some("X"), Some("Y")),
        ])
        .unwrap();
        let a = p.nrm();
        assert_eq!(a[(3, 4)], 0.25);
        assert_eq!(a[(5, 5)], 1.125);
    }

    #[test]
    fn invalid_pedigrees() {
        assert_eq!(
            Pedigree::new(vec![PedigreeRecord::new("A", Some("A"), None)]),
            Err(CovError::CyclicPedigree("A".into()))
        );
        assert!(matches!(
            Pedigree::new(vec![
                PedigreeRecord::new("A", Some("B"), None),
                PedigreeRecord::new("B", None, Some("A")),
            ]),
            Err(CovError::CyclicPedigree(_))
        ));
        assert!(matches!(
            Pedigree::new(vec![PedigreeRecord::new("A", Some("Q"), None)]),
            Err(CovError::UnknownParentId { .. })
        ));
    }

    #[test]
    fn csv_unknown_tokens() {
        let p = Pedigree::from_reader("id,sire,dam\nA,0,\nB,NA,0\nC,A,B\n".as_bytes()).unwrap();
        assert_eq!(p.records()[0].sire, None);
        assert_eq!(p.nrm()[(2, 0)], 0.5);
    }
}
