//! Typed tables loaded from CSV.
//!
//! Missing values are stored as NaN in numeric columns and as `None` codes in
//! factor columns; rows are only dropped when a model is built.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::formula::Func;
use crate::terms::Atom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColumnType {
    Numeric,
    Factor,
}

impl std::str::FromStr for ColumnType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "numeric" => Ok(ColumnType::Numeric),
            "factor" => Ok(ColumnType::Factor),
            other => Err(format!("unknown column type `{other}`")),
        }
    }
}

pub type Schema = BTreeMap<String, ColumnType>;

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<f64>),
    Factor {
        levels: Vec<String>,
        codes: Vec<Option<u32>>,
    },
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Factor { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column_type(&self) -> ColumnType {
        match self {
            Column::Numeric(_) => ColumnType::Numeric,
            Column::Factor { .. } => ColumnType::Factor,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Column::Numeric(v) => v[row].is_nan(),
            Column::Factor { codes, .. } => codes[row].is_none(),
        }
    }

    /// Builds a factor from raw strings; `None` marks a missing value.
    pub fn factor_from_strings<S: AsRef<str>>(values: &[Option<S>]) -> Column {
        let mut distinct: Vec<&str> = values.iter().flatten().map(AsRef::as_ref).collect();
        distinct.sort_unstable();
        distinct.dedup();
        let levels = order_levels(distinct.into_iter().map(str::to_string).collect());
        let index: HashMap<&str, u32> = levels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i as u32))
            .collect();
        let codes = values
            .iter()
            .map(|v| v.as_ref().map(|s| index[s.as_ref()]))
            .collect();
        Column::Factor { levels, codes }
    }

    /// Decodes a factor back to its strings.
    pub fn factor_strings(&self) -> Option<Vec<Option<&str>>> {
        match self {
            Column::Factor { levels, codes } => Some(
                codes
                    .iter()
                    .map(|c| c.map(|c| levels[c as usize].as_str()))
                    .collect(),
            ),
            Column::Numeric(_) => None,
        }
    }

    fn take(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&r| v[r]).collect()),
            Column::Factor { levels, codes } => Column::Factor {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        }
    }
}

/// Level order: numeric order when every level parses as a number
/// (so `2` precedes `10` and AR1 neighbours stay adjacent), otherwise
/// lexicographic.
fn order_levels(mut levels: Vec<String>) -> Vec<String> {
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    match numeric {
        Some(keys) => {
            let mut pairs: Vec<(f64, String)> = keys.into_iter().zip(levels).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            pairs.into_iter().map(|(_, l)| l).collect()
        }
        None => {
            levels.sort();
            levels
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("column `{column}` declared numeric but line {line} holds `{value}`")]
    SchemaMismatch {
        column: String,
        line: u64,
        value: String,
    },
    #[error("schema names column `{0}`, which is not in the file")]
    UnknownSchemaColumn(String),
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("table has no data rows")]
    EmptyTable,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("cannot apply `{func}` to factor `{column}`")]
    TransformOnFactor { func: String, column: String },
    #[error("`{func}({column})` is undefined at row {row} (value {value})")]
    DomainError {
        func: String,
        column: String,
        row: usize,
        value: f64,
    },
    #[error("column `{0}` must be a factor")]
    NotAFactor(String),
    #[error("column `{0}` must be numeric")]
    NotNumeric(String),
    #[error("column `{column}` has length {found}, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },
}

pub fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t == "NA"
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataTable {
    n_rows: usize,
    names: Vec<String>,
    columns: Vec<Column>,
}

impl DataTable {
    pub fn new(columns: Vec<(String, Column)>) -> Result<DataTable, DataError> {
        let n_rows = columns.first().map_or(0, |(_, c)| c.len());
        let mut table = DataTable {
            n_rows,
            ..Default::default()
        };
        for (name, col) in columns {
            table.push_column(name, col)?;
        }
        Ok(table)
    }

    pub fn read_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<DataTable, DataError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        DataTable::from_reader(file, schema)
    }

    pub fn from_reader<R: Read>(reader: R, schema: &Schema) -> Result<DataTable, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let malformed = |e: csv::Error| DataError::MalformedCsv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        };
        let header: Vec<String> = rdr
            .headers()
            .map_err(malformed)?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        for name in schema.keys() {
            if !header.contains(name) {
                return Err(DataError::UnknownSchemaColumn(name.clone()));
            }
        }

        let mut raw: Vec<Vec<String>> = vec![Vec::new(); header.len()];
        let mut lines: Vec<u64> = Vec::new();
        for record in rdr.records() {
            let record = record.map_err(malformed)?;
            lines.push(record.position().map_or(0, |p| p.line()));
            for (col, field) in raw.iter_mut().zip(record.iter()) {
                col.push(field.trim().to_string());
            }
        }
        if lines.is_empty() {
            return Err(DataError::EmptyTable);
        }

        let mut columns = Vec::with_capacity(header.len());
        for (name, values) in header.into_iter().zip(raw) {
            let parsed: Vec<Option<f64>> = values
                .iter()
                .map(|v| {
                    if is_missing_token(v) {
                        Some(f64::NAN)
                    } else {
                        v.parse::<f64>().ok()
                    }
                })
                .collect();
            let wanted = schema.get(&name).copied().unwrap_or_else(|| {
                if parsed.iter().all(Option::is_some) {
                    ColumnType::Numeric
                } else {
                    ColumnType::Factor
                }
            });
            let column = match wanted {
                ColumnType::Numeric => {
                    if let Some(i) = parsed.iter().position(Option::is_none) {
                        return Err(DataError::SchemaMismatch {
                            column: name,
                            line: lines[i],
                            value: values[i].clone(),
                        });
                    }
                    Column::Numeric(parsed.into_iter().flatten().collect())
                }
                ColumnType::Factor => {
                    let vals: Vec<Option<&str>> = values
                        .iter()
                        .map(|v| (!is_missing_token(v)).then_some(v.as_str()))
                        .collect();
                    Column::factor_from_strings(&vals)
                }
            };
            columns.push((name, column));
        }
        DataTable::new(columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| DataError::UnknownVariable(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &Column)> {
        self.names.iter().map(String::as_str).zip(&self.columns)
    }

    pub fn numeric(&self, name: &str) -> Result<&[f64], DataError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Factor { .. } => Err(DataError::NotNumeric(name.to_string())),
        }
    }

    pub fn factor(&self, name: &str) -> Result<(&[String], &[Option<u32>]), DataError> {
        match self.column(name)? {
            Column::Factor { levels, codes } => Ok((levels, codes)),
            Column::Numeric(_) => Err(DataError::NotAFactor(name.to_string())),
        }
    }

    /// Appends a column, or replaces an existing one of the same name.
    pub fn with_column(mut self, name: &str, column: Column) -> Result<DataTable, DataError> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            if column.len() != self.n_rows {
                return Err(DataError::LengthMismatch {
                    column: name.to_string(),
                    expected: self.n_rows,
                    found: column.len(),
                });
            }
            self.columns[i] = column;
            Ok(self)
        } else {
            self.push_column(name.to_string(), column)?;
            Ok(self)
        }
    }

    fn push_column(&mut self, name: String, column: Column) -> Result<(), DataError> {
        if self.names.contains(&name) {
            return Err(DataError::DuplicateColumn(name));
        }
        if column.len() != self.n_rows {
            return Err(DataError::LengthMismatch {
                column: name,
                expected: self.n_rows,
                found: column.len(),
            });
        }
        self.names.push(name);
        self.columns.push(column);
        Ok(())
    }

    /// Rows with no missing value in any of `names`.
    pub fn complete_rows(&self, names: &[&str]) -> Result<Vec<usize>, DataError> {
        let cols: Vec<&Column> = names
            .iter()
            .map(|n| self.column(n))
            .collect::<Result<_, _>>()?;
        Ok((0..self.n_rows)
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect())
    }

    /// New table holding `rows` in the given order. Factor levels are kept.
    pub fn take_rows(&self, rows: &[usize]) -> DataTable {
        DataTable {
            n_rows: rows.len(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c.take(rows)).collect(),
        }
    }

    /// Removes factor levels that no row uses, keeping level order.
    pub fn drop_unused_levels(self) -> DataTable {
        let columns = self
            .columns
            .into_iter()
            .map(|c| match c {
                Column::Factor { levels, codes } => {
                    let mut used = vec![false; levels.len()];
                    for c in codes.iter().flatten() {
                        used[*c as usize] = true;
                    }
                    let mut remap = vec![0u32; levels.len()];
                    let mut kept = Vec::new();
                    for (k, level) in levels.into_iter().enumerate() {
                        if used[k] {
                            remap[k] = kept.len() as u32;
                            kept.push(level);
                        }
                    }
                    Column::Factor {
                        levels: kept,
                        codes: codes.iter().map(|c| c.map(|c| remap[c as usize])).collect(),
                    }
                }
                numeric => numeric,
            })
            .collect();
        DataTable {
            n_rows: self.n_rows,
            names: self.names,
            columns,
        }
    }

    /// Evaluates a term atom: plain variables are returned as stored,
    /// transformations are applied elementwise to numeric columns.
    pub fn eval_atom(&self, atom: &Atom) -> Result<Column, DataError> {
        match atom {
            Atom::Var(name) => Ok(self.column(name)?.clone()),
            Atom::Transform(func, name) => {
                let values = match self.column(name)? {
                    Column::Numeric(v) => v,
                    Column::Factor { .. } => {
                        return Err(DataError::TransformOnFactor {
                            func: func.to_string(),
                            column: name.clone(),
                        })
                    }
                };
                let mut out = Vec::with_capacity(values.len());
                for (row, &v) in values.iter().enumerate() {
                    let r = match func {
                        Func::Log if v > 0.0 => v.ln(),
                        Func::Sqrt if v >= 0.0 => v.sqrt(),
                        Func::Exp => v.exp(),
                        Func::Log | Func::Sqrt if v.is_nan() => f64::NAN,
                        Func::Log | Func::Sqrt => {
                            return Err(DataError::DomainError {
                                func: func.to_string(),
                                column: name.clone(),
                                row,
                                value: v,
                            })
                        }
                        other => unreachable!("`{other}` is not a transformation"),
                    };
                    out.push(r);
                }
                Ok(Column::Numeric(out))
            }
        }
    }

    /// Adds one numeric 0/1 column per level of `factor`, named
    /// `{prefix}{level}`. Returns the new column names in level order.
    pub fn add_indicator_columns(
        self,
        factor: &str,
        prefix: &str,
    ) -> Result<(DataTable, Vec<String>), DataError> {
        let (levels, codes) = self.factor(factor)?;
        let levels = levels.to_vec();
        let codes = codes.to_vec();
        let mut table = self;
        let mut names = Vec::with_capacity(levels.len());
        for (k, level) in levels.iter().enumerate() {
            let name = format!("{prefix}{level}");
            let col = codes
                .iter()
                .map(|c| match c {
                    Some(c) => f64::from(u8::from(*c as usize == k)),
                    None => f64::NAN,
                })
                .collect();
            table = table.with_column(&name, Column::Numeric(col))?;
            names.push(name);
        }
        Ok((table, names))
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        let mut record: Vec<String> = Vec::with_capacity(self.names.len());
        for r in 0..self.n_rows {
            record.clear();
            for c in &self.columns {
                record.push(match c {
                    Column::Numeric(v) if v[r].is_nan() => "NA".to_string(),
                    Column::Numeric(v) => format_number(v[r]),
                    Column::Factor { levels, codes } => {
                        codes[r].map_or_else(|| "NA".to_string(), |c| levels[c as usize].clone())
                    }
                });
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest text that parses back to the same value.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

impl fmt::Display for DataTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} rows:", self.n_rows)?;
        for (name, col) in self.columns() {
            match col {
                Column::Numeric(_) => write!(f, " {name}<num>")?,
                Column::Factor { levels, .. } => write!(f, " {name}<factor:{}>", levels.len())?,
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<DataTable, DataError> {
        DataTable::from_reader(text.as_bytes(), &Schema::new())
    }

    #[test]
    fn infers_types_and_orders_levels() {
        let t = table("y,g,row\n1.5,b,10\n2,a,2\nNA,b,1\n").unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.column("y").unwrap().column_type(), ColumnType::Numeric);
        assert!(t.numeric("y").unwrap()[2].is_nan());
        let (levels, codes) = t.factor("g").unwrap();
        assert_eq!(levels, ["a", "b"]);
        assert_eq!(codes, [Some(1), Some(0), Some(1)]);
        assert_eq!(t.complete_rows(&["y", "g"]).unwrap(), [0, 1]);
        let sub = t.take_rows(&[0, 2]).drop_unused_levels();
        assert_eq!(
            sub.factor("g").unwrap(),
            (&["b".to_string()][..], &[Some(0), Some(0)][..])
        );
    }

    #[test]
    fn schema_forces_factor_with_numeric_level_order() {
        let schema = Schema::from([("row".to_string(), ColumnType::Factor)]);
        let t = DataTable::from_reader("row\n10\n2\n1\n".as_bytes(), &schema).unwrap();
        let (levels, _) = t.factor("row").unwrap();
        assert_eq!(levels, ["1", "2", "10"]);
    }

    #[test]
    fn errors() {
        assert_eq!(table("a,b\n"), Err(DataError::EmptyTable));
        assert!(matches!(
            table("a,b\n1,2\n3\n"),
            Err(DataError::MalformedCsv { line: 3, .. })
        ));
        let schema = Schema::from([("a".to_string(), ColumnType::Numeric)]);
        assert!(matches!(
            DataTable::from_reader("a\n1\nx\n".as_bytes(), &schema),
            Err(DataError::SchemaMismatch { line: 3, .. })
        ));
        let t = table("a,g\n-1,u\n").unwrap();
        assert!(matches!(
            t.eval_atom(&Atom::Transform(Func::Log, "a".into())),
            Err(DataError::DomainError { row: 0, .. })
        ));
        assert!(matches!(
            t.eval_atom(&Atom::Transform(Func::Sqrt, "g".into())),
            Err(DataError::TransformOnFactor { .. })
        ));
        assert!(matches!(
            t.eval_atom(&Atom::Var("zz".into())),
            Err(DataError::UnknownVariable(_))
        ));
    }

    #[test]
    fn factor_round_trip_and_csv_round_trip() {
        let src = "g,x\nS2,1\nS1,0.25\n,3\n";
        let t = table(src).unwrap();
        let strings = t.column("g").unwrap().factor_strings().unwrap();
        assert_eq!(strings, [Some("S2"), Some("S1"), None]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out.clone()).unwrap(),
            "g,x\nS2,1\nS1,0.25\nNA,3\n"
        );
        assert_eq!(table(std::str::from_utf8(&out).unwrap()).unwrap(), t);
    }

    #[test]
    fn indicator_columns() {
        let t = table("site\nS2\nS1\nS2\n").unwrap();
        let (t, names) = t.add_indicator_columns("site", "__ind_site_").unwrap();
        assert_eq!(names, ["__ind_site_S1", "__ind_site_S2"]);
        assert_eq!(t.numeric("__ind_site_S2").unwrap(), [1.0, 0.0, 1.0]);
    }
}
