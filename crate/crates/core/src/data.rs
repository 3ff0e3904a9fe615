//! Dataset loading, validation, and quantile recoding.
//!
//! A [`Dataset`] is a column store typed against a [`Schema`]: nominal
//! columns hold labels, numeric columns hold `f64`. [`load_dataset`] reads
//! a headered CSV file and checks every cell against the schema.
//! [`recode_quartiles`] converts numeric variables flagged with `recode=`
//! into nominal class variables using nearest-rank quantile edges; the
//! returned [`Recoder`] can replay the same edges on held-out rows so that
//! evaluation data never influences the class boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::schema::{Schema, VarKind, VarRole, VariableSpec};

/// One cell of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Label(String),
    Number(f64),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Label(s) => f.write_str(s),
            Value::Number(x) => write!(f, "{}", x),
        }
    }
}

/// Column storage: labels for nominal variables, numbers otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Labels(Vec<String>),
    Numbers(Vec<f64>),
}

impl ColumnData {
    fn len(&self) -> usize {
        match self {
            ColumnData::Labels(v) => v.len(),
            ColumnData::Numbers(v) => v.len(),
        }
    }
}

/// A schema-typed table of survey rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    n: usize,
}

impl Dataset {
    /// Builds a dataset from pre-typed columns, checking lengths and kinds.
    pub fn from_columns(schema: Schema, columns: Vec<ColumnData>) -> Result<Dataset> {
        if columns.len() != schema.len() {
            return Err(Error::Invalid(format!(
                "expected {} columns, got {}",
                schema.len(),
                columns.len()
            )));
        }
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        for (v, c) in schema.vars().iter().zip(&columns) {
            if c.len() != n {
                return Err(Error::Invalid(format!(
                    "column '{}' has {} rows, expected {}",
                    v.name,
                    c.len(),
                    n
                )));
            }
            match (&v.kind, c) {
                (VarKind::Nominal { .. }, ColumnData::Labels(_)) => {}
                (VarKind::Discrete | VarKind::Continuous, ColumnData::Numbers(_)) => {}
                _ => {
                    return Err(Error::Invalid(format!(
                        "column '{}' storage does not match its declared kind",
                        v.name
                    )))
                }
            }
        }
        let ds = Dataset { schema, columns, n };
        ds.validate_cells()?;
        Ok(ds)
    }

    fn validate_cells(&self) -> Result<()> {
        for (j, v) in self.schema.vars().iter().enumerate() {
            match (&v.kind, &self.columns[j]) {
                (VarKind::Nominal { levels }, ColumnData::Labels(cells)) => {
                    for (i, cell) in cells.iter().enumerate() {
                        if !levels.contains(cell) {
                            return Err(Error::Parse {
                                row: i + 2,
                                column: v.name.clone(),
                                message: format!("label '{}' is not a declared level", cell),
                            });
                        }
                    }
                }
                (VarKind::Discrete, ColumnData::Numbers(cells)) => {
                    for (i, &x) in cells.iter().enumerate() {
                        if !x.is_finite() || x.fract() != 0.0 {
                            return Err(Error::Parse {
                                row: i + 2,
                                column: v.name.clone(),
                                message: format!("'{}' is not an integer", x),
                            });
                        }
                        if v.role == VarRole::Response && x < 0.0 {
                            return Err(Error::Parse {
                                row: i + 2,
                                column: v.name.clone(),
                                message: "response counts must be nonnegative".to_string(),
                            });
                        }
                    }
                }
                (VarKind::Continuous, ColumnData::Numbers(cells)) => {
                    for (i, &x) in cells.iter().enumerate() {
                        if !x.is_finite() {
                            return Err(Error::Parse {
                                row: i + 2,
                                column: v.name.clone(),
                                message: "value is not finite".to_string(),
                            });
                        }
                    }
                }
                _ => unreachable!("storage checked in from_columns"),
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        let idx = self
            .schema
            .index_of(name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        Ok(&self.columns[idx])
    }

    pub fn numbers(&self, name: &str) -> Result<&[f64]> {
        match self.column(name)? {
            ColumnData::Numbers(v) => Ok(v),
            ColumnData::Labels(_) => Err(Error::Invalid(format!(
                "column '{}' is nominal, expected numeric",
                name
            ))),
        }
    }

    pub fn labels(&self, name: &str) -> Result<&[String]> {
        match self.column(name)? {
            ColumnData::Labels(v) => Ok(v),
            ColumnData::Numbers(_) => Err(Error::Invalid(format!(
                "column '{}' is numeric, expected nominal",
                name
            ))),
        }
    }

    /// The response column as counts.
    pub fn response(&self) -> &[f64] {
        match &self.columns[self.schema.response_index()] {
            ColumnData::Numbers(v) => v,
            ColumnData::Labels(_) => unreachable!("response is numeric by schema validation"),
        }
    }

    pub fn value(&self, row: usize, name: &str) -> Result<Value> {
        Ok(match self.column(name)? {
            ColumnData::Labels(v) => Value::Label(v[row].clone()),
            ColumnData::Numbers(v) => Value::Number(v[row]),
        })
    }

    /// Extracts the given rows (in the given order) into a new dataset.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnData::Labels(v) => {
                    ColumnData::Labels(rows.iter().map(|&i| v[i].clone()).collect())
                }
                ColumnData::Numbers(v) => ColumnData::Numbers(rows.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        Dataset {
            schema: self.schema.clone(),
            columns,
            n: rows.len(),
        }
    }

    /// Renders the dataset as headered CSV, columns in schema order.
    pub fn render_csv(&self) -> String {
        let mut out = String::new();
        let names: Vec<&str> = self.schema.vars().iter().map(|v| v.name.as_str()).collect();
        out.push_str(&names.join(","));
        out.push('\n');
        for i in 0..self.n {
            let mut cells = Vec::with_capacity(self.columns.len());
            for c in &self.columns {
                match c {
                    ColumnData::Labels(v) => cells.push(v[i].clone()),
                    ColumnData::Numbers(v) => cells.push(format!("{}", v[i])),
                }
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Reads a headered CSV file and validates it against the schema.
///
/// Every schema variable must appear in the header; extra CSV columns are
/// ignored with a log message. Empty cells and `NA` are missing values.
pub fn load_dataset<P: AsRef<Path>>(path: P, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(format!(
                "{}: {}",
                path.as_ref().display(),
                e
            ))),
            _ => Error::Invalid(e.to_string()),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Invalid(e.to_string()))?
        .clone();
    let mut field_of = Vec::with_capacity(schema.len());
    for v in schema.vars() {
        let pos = headers
            .iter()
            .position(|h| h == v.name)
            .ok_or_else(|| Error::UnknownColumn(v.name.clone()))?;
        field_of.push(pos);
    }
    for h in headers.iter() {
        if schema.index_of(h).is_none() {
            log::info!("ignoring CSV column '{}' not present in the schema", h);
        }
    }

    let mut columns: Vec<ColumnData> = schema
        .vars()
        .iter()
        .map(|v| match v.kind {
            VarKind::Nominal { .. } => ColumnData::Labels(Vec::new()),
            _ => ColumnData::Numbers(Vec::new()),
        })
        .collect();

    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        for (j, v) in schema.vars().iter().enumerate() {
            let raw = record.get(field_of[j]).ok_or_else(|| Error::Parse {
                row,
                column: v.name.clone(),
                message: "record is shorter than the header".to_string(),
            })?;
            if raw.is_empty() || raw == "NA" {
                return Err(Error::MissingValue {
                    row,
                    column: v.name.clone(),
                });
            }
            match &mut columns[j] {
                ColumnData::Labels(cells) => cells.push(raw.to_string()),
                ColumnData::Numbers(cells) => {
                    let x: f64 = raw.parse().map_err(|_| Error::Parse {
                        row,
                        column: v.name.clone(),
                        message: format!("'{}' is not a number", raw),
                    })?;
                    cells.push(x);
                }
            }
        }
    }

    Dataset::from_columns(schema.clone(), columns)
}

/// Nearest-rank quantile: the sorted value at rank `ceil(p * n)`.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = (p * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Fitted quantile edges for the variables a schema flags with `recode=`.
///
/// For `bins` classes the edges are the nearest-rank quantiles at
/// `i / bins` for `i = 1 .. bins-1`; a value lands in the first class
/// whose edge it does not exceed, so ties go to the lower class.
#[derive(Debug, Clone, PartialEq)]
pub struct Recoder {
    /// Variable name -> (class count, interior edges, strictly increasing).
    edges: BTreeMap<String, (usize, Vec<f64>)>,
}

impl Recoder {
    /// A recoder with no edges; applying it is the identity.
    pub fn empty() -> Recoder {
        Recoder {
            edges: BTreeMap::new(),
        }
    }

    /// Computes edges for every `recode=` variable from the given rows.
    pub fn fit(dataset: &Dataset) -> Result<Recoder> {
        let mut edges = BTreeMap::new();
        for v in dataset.schema().vars() {
            let bins = match v.recode {
                Some(b) => b,
                None => continue,
            };
            if !v.kind.is_numeric() {
                return Err(Error::Invalid(format!(
                    "cannot recode non-numeric variable '{}'",
                    v.name
                )));
            }
            let values = dataset.numbers(&v.name)?;
            let mut sorted = values.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut distinct = sorted.clone();
            distinct.dedup();
            if distinct.len() < bins {
                return Err(Error::Degenerate(format!(
                    "variable '{}' has {} distinct values, fewer than {} classes",
                    v.name,
                    distinct.len(),
                    bins
                )));
            }
            let cut: Vec<f64> = (1..bins)
                .map(|i| nearest_rank(&sorted, i as f64 / bins as f64))
                .collect();
            if cut.windows(2).any(|w| w[0] >= w[1])
                || *sorted.last().unwrap() <= *cut.last().unwrap()
            {
                return Err(Error::Degenerate(format!(
                    "degenerate quantiles for variable '{}': edges {:?} do not split the data",
                    v.name, cut
                )));
            }
            edges.insert(v.name.clone(), (bins, cut));
        }
        Ok(Recoder { edges })
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// The interior edges fitted for one variable, if it was recoded.
    pub fn edges_of(&self, name: &str) -> Option<&[f64]> {
        self.edges.get(name).map(|(_, e)| e.as_slice())
    }

    fn class_of(cut: &[f64], x: f64) -> usize {
        cut.iter().position(|&e| x <= e).unwrap_or(cut.len())
    }

    /// Replays the fitted edges, replacing each recoded column with a
    /// nominal class column (`q1`, `q2`, ...) and updating the schema.
    pub fn apply(&self, dataset: &Dataset) -> Result<Dataset> {
        let mut schema = dataset.schema().clone();
        let mut columns = dataset.columns.clone();
        for (name, (bins, cut)) in &self.edges {
            let idx = schema
                .index_of(name)
                .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
            let values = dataset.numbers(name)?;
            let labels: Vec<String> = values
                .iter()
                .map(|&x| format!("q{}", Self::class_of(cut, x) + 1))
                .collect();
            let levels: Vec<String> = (1..=*bins).map(|i| format!("q{}", i)).collect();
            let spec = VariableSpec {
                name: name.clone(),
                kind: VarKind::Nominal { levels },
                role: schema.var(idx).role,
                recode: None,
            };
            schema = schema.replace(idx, spec)?;
            columns[idx] = ColumnData::Labels(labels);
        }
        Dataset::from_columns(schema, columns)
    }
}

/// Fits quantile edges on `dataset` and applies them to it.
///
/// Returns the recoded dataset together with the fitted [`Recoder`] so the
/// same boundaries can be replayed on held-out rows.
pub fn recode_quartiles(dataset: &Dataset) -> Result<(Dataset, Recoder)> {
    let recoder = Recoder::fit(dataset)?;
    let recoded = recoder.apply(dataset)?;
    Ok((recoded, recoder))
}
