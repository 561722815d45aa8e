//! Observations, covariate partitioning and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MteError, Result};

/// A random sample of `(Y, D, X)` with `X = (X^C, X^D)`.
///
/// Covariate matrices are stored row-major. The design row of observation
/// `i` is its continuous covariates followed by its discrete codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    y: Vec<f64>,
    d: Vec<bool>,
    x_cont: Vec<f64>,
    x_disc: Vec<i64>,
    n_cont: usize,
    n_disc: usize,
    names: Vec<String>,
}

impl Sample {
    /// Builds a validated sample. `x_cont` is `n × n_cont` and `x_disc` is
    /// `n × n_disc`, both row-major; `names` labels the continuous columns
    /// first, then the discrete ones.
    pub fn new(
        y: Vec<f64>,
        d: Vec<bool>,
        x_cont: Vec<f64>,
        n_cont: usize,
        x_disc: Vec<i64>,
        n_disc: usize,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(MteError::EmptySample("sample has no rows".into()));
        }
        if d.len() != n || x_cont.len() != n * n_cont || x_disc.len() != n * n_disc {
            return Err(MteError::InvalidSample(format!(
                "row count mismatch: y={}, d={}, x_cont={}/{}, x_disc={}/{}",
                n,
                d.len(),
                x_cont.len(),
                n_cont,
                x_disc.len(),
                n_disc
            )));
        }
        if names.len() != n_cont + n_disc {
            return Err(MteError::InvalidSample(format!(
                "expected {} covariate names, got {}",
                n_cont + n_disc,
                names.len()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(MteError::InvalidSample(format!("non-finite outcome at row {i}")));
        }
        if let Some(k) = x_cont.iter().position(|v| !v.is_finite()) {
            return Err(MteError::InvalidSample(format!(
                "non-finite continuous covariate at row {}",
                k / n_cont.max(1)
            )));
        }
        Ok(Self { y, d, x_cont, x_disc, n_cont, n_disc, names })
    }

    /// Convenience constructor with generated covariate names.
    pub fn from_parts(
        y: Vec<f64>,
        d: Vec<bool>,
        x_cont: Vec<f64>,
        n_cont: usize,
        x_disc: Vec<i64>,
        n_disc: usize,
    ) -> Result<Self> {
        let names = (0..n_cont)
            .map(|k| format!("xc{}", k + 1))
            .chain((0..n_disc).map(|k| format!("xd{}", k + 1)))
            .collect();
        Self::new(y, d, x_cont, n_cont, x_disc, n_disc, names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_cont(&self) -> usize {
        self.n_cont
    }

    pub fn n_disc(&self) -> usize {
        self.n_disc
    }

    /// Number of covariates, i.e. the length of a design row.
    pub fn dim(&self) -> usize {
        self.n_cont + self.n_disc
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn d(&self) -> &[bool] {
        &self.d
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn cont_row(&self, i: usize) -> &[f64] {
        &self.x_cont[i * self.n_cont..(i + 1) * self.n_cont]
    }

    pub fn disc_row(&self, i: usize) -> &[i64] {
        &self.x_disc[i * self.n_disc..(i + 1) * self.n_disc]
    }

    pub fn cont_column(&self, k: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.x_cont[i * self.n_cont + k]).collect()
    }

    /// Design row `X_i` (continuous then discrete, as reals).
    pub fn design_row(&self, i: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.dim());
        self.write_design_row(i, &mut row);
        row
    }

    pub(crate) fn write_design_row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.cont_row(i));
        out.extend(self.disc_row(i).iter().map(|&v| v as f64));
    }

    /// Full design matrix, row-major `n × dim`.
    pub fn design(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim());
        let mut row = Vec::with_capacity(self.dim());
        for i in 0..self.len() {
            self.write_design_row(i, &mut row);
            out.extend_from_slice(&row);
        }
        out
    }

    /// Column means of the design matrix.
    pub fn design_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.dim()];
        let mut row = Vec::with_capacity(self.dim());
        for i in 0..self.len() {
            self.write_design_row(i, &mut row);
            for (m, v) in means.iter_mut().zip(&row) {
                *m += v;
            }
        }
        let n = self.len() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    pub fn count_treated(&self) -> usize {
        self.d.iter().filter(|&&t| t).count()
    }

    /// Errors unless both treatment arms have at least one row.
    pub fn require_both_arms(&self) -> Result<()> {
        let treated = self.count_treated();
        if treated == 0 {
            return Err(MteError::InvalidSample("no treated observations".into()));
        }
        if treated == self.len() {
            return Err(MteError::InvalidSample("no untreated observations".into()));
        }
        Ok(())
    }

    /// New sample made of the given rows, in the given order (repeats allowed).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(rows.len());
        let mut d = Vec::with_capacity(rows.len());
        let mut x_cont = Vec::with_capacity(rows.len() * self.n_cont);
        let mut x_disc = Vec::with_capacity(rows.len() * self.n_disc);
        for &i in rows {
            y.push(self.y[i]);
            d.push(self.d[i]);
            x_cont.extend_from_slice(self.cont_row(i));
            x_disc.extend_from_slice(self.disc_row(i));
        }
        Self::new(y, d, x_cont, self.n_cont, x_disc, self.n_disc, self.names.clone())
    }
}

/// Rows sharing one value of the discrete covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub key: Vec<i64>,
    pub row_indices: Vec<usize>,
}

impl Cell {
    pub fn len(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }
}

/// Groups rows by their discrete covariate values. Cells come back sorted by
/// key and each cell lists its rows in ascending order; duplicated covariate
/// rows land in the same cell.
pub fn split_cells(sample: &Sample) -> Vec<Cell> {
    let mut groups: BTreeMap<&[i64], Vec<usize>> = BTreeMap::new();
    for i in 0..sample.len() {
        groups.entry(sample.disc_row(i)).or_default().push(i);
    }
    groups
        .into_iter()
        .map(|(key, row_indices)| Cell { key: key.to_vec(), row_indices })
        .collect()
}

/// Column mapping for CSV ingestion.
///
/// ```json
/// {
///   "outcome": "wage",
///   "treatment": "headstart",
///   "continuous": ["income78"],
///   "discrete": ["female", "black"],
///   "treated_label": "1",
///   "untreated_label": "0"
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnConfig {
    pub outcome: String,
    pub treatment: String,
    #[serde(default)]
    pub continuous: Vec<String>,
    #[serde(default)]
    pub discrete: Vec<String>,
    #[serde(default = "default_treated")]
    pub treated_label: String,
    #[serde(default = "default_untreated")]
    pub untreated_label: String,
}

fn default_treated() -> String {
    "1".into()
}

fn default_untreated() -> String {
    "0".into()
}

impl ColumnConfig {
    pub fn new(outcome: &str, treatment: &str, continuous: &[&str], discrete: &[&str]) -> Self {
        Self {
            outcome: outcome.into(),
            treatment: treatment.into(),
            continuous: continuous.iter().map(|s| s.to_string()).collect(),
            discrete: discrete.iter().map(|s| s.to_string()).collect(),
            treated_label: default_treated(),
            untreated_label: default_untreated(),
        }
    }
}

/// Outcome of a CSV load besides the sample itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// Original values of each discrete column, indexed by dense code.
    pub discrete_levels: Vec<Vec<String>>,
}

fn is_missing(field: &str) -> bool {
    matches!(field.trim(), "" | "NA" | "na" | "NaN" | "nan" | ".")
}

/// Reads a CSV with a header row into a validated [`Sample`].
///
/// Rows with a missing value in any mapped column are dropped (listwise
/// deletion). Discrete columns are recoded to dense codes `0..k` following
/// the numeric order of their values, or the lexical order when a column is
/// not numeric.
pub fn load_csv(path: &Path, config: &ColumnConfig) -> Result<(Sample, LoadReport)> {
    if !path.exists() {
        return Err(MteError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input file not found: {}", path.display()),
        )));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| MteError::ColumnNotFound(name.to_string()))
    };
    let outcome_col = find(&config.outcome)?;
    let treatment_col = find(&config.treatment)?;
    let cont_cols = config.continuous.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let disc_cols = config.discrete.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let mapped: Vec<usize> = [outcome_col, treatment_col]
        .into_iter()
        .chain(cont_cols.iter().copied())
        .chain(disc_cols.iter().copied())
        .collect();

    let mut y = Vec::new();
    let mut d = Vec::new();
    let mut x_cont = Vec::new();
    let mut disc_raw: Vec<Vec<String>> = Vec::new();
    let mut rows_read = 0;
    let mut rows_dropped = 0;

    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        rows_read += 1;
        if mapped.iter().any(|&c| record.get(c).is_none_or(is_missing)) {
            rows_dropped += 1;
            continue;
        }
        let parse = |col: usize, what: &str| -> Result<f64> {
            let raw = &record[col];
            raw.parse::<f64>().map_err(|_| {
                MteError::InvalidSample(format!(
                    "row {}: {what} value {raw:?} is not numeric",
                    row_no + 1
                ))
            })
        };
        let t = &record[treatment_col];
        let treated = if t == config.treated_label {
            true
        } else if t == config.untreated_label {
            false
        } else {
            return Err(MteError::NonBinaryTreatment { row: row_no + 1, value: t.to_string() });
        };
        y.push(parse(outcome_col, "outcome")?);
        d.push(treated);
        for &c in &cont_cols {
            x_cont.push(parse(c, "continuous covariate")?);
        }
        disc_raw.push(disc_cols.iter().map(|&c| record[c].to_string()).collect());
    }
    if y.is_empty() {
        return Err(MteError::EmptySample(format!(
            "no rows left after dropping {rows_dropped} rows with missing values"
        )));
    }
    if rows_dropped > 0 {
        log::info!("{rows_dropped} row(s) dropped for missing values");
    }

    let (x_disc, discrete_levels) = recode_discrete(&disc_raw, disc_cols.len());
    let names = config.continuous.iter().chain(&config.discrete).cloned().collect();
    let sample = Sample::new(
        y,
        d,
        x_cont,
        cont_cols.len(),
        x_disc,
        disc_cols.len(),
        names,
    )?;
    Ok((sample, LoadReport { rows_read, rows_dropped, discrete_levels }))
}

fn recode_discrete(raw: &[Vec<String>], n_disc: usize) -> (Vec<i64>, Vec<Vec<String>>) {
    let mut levels = Vec::with_capacity(n_disc);
    let mut codes: Vec<BTreeMap<String, i64>> = Vec::with_capacity(n_disc);
    for k in 0..n_disc {
        let distinct: BTreeSet<&str> = raw.iter().map(|r| r[k].as_str()).collect();
        let mut values: Vec<&str> = distinct.into_iter().collect();
        let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
        if let Some(nums) = numeric {
            let mut paired: Vec<(f64, &str)> = nums.into_iter().zip(values.iter().copied()).collect();
            paired.sort_by(|a, b| a.0.total_cmp(&b.0));
            values = paired.into_iter().map(|(_, v)| v).collect();
        }
        codes.push(values.iter().enumerate().map(|(c, v)| (v.to_string(), c as i64)).collect());
        levels.push(values.iter().map(|v| v.to_string()).collect());
    }
    let mut x_disc = Vec::with_capacity(raw.len() * n_disc);
    for row in raw {
        for (k, v) in row.iter().enumerate() {
            x_disc.push(codes[k][v]);
        }
    }
    (x_disc, levels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ten_rows() -> String {
        let mut s = String::from("y,d,inc,female\n");
        for i in 0..10 {
            s.push_str(&format!("{},{},{},{}\n", i as f64 * 0.5, i % 2, 10.0 + i as f64, i % 3 % 2));
        }
        s
    }

    #[test]
    fn loads_all_valid_rows() {
        let f = write_csv(&ten_rows());
        let cfg = ColumnConfig::new("y", "d", &["inc"], &["female"]);
        let (s, report) = load_csv(f.path(), &cfg).unwrap();
        assert_eq!(s.len(), 10);
        assert_eq!(report.rows_dropped, 0);
        assert_eq!(s.names(), &["inc".to_string(), "female".to_string()]);
        assert_eq!(s.design_row(3), vec![13.0, 0.0]);
    }

    #[test]
    fn drops_row_with_empty_outcome() {
        let mut text = ten_rows();
        text = text.replacen("1.5,1,13,0", ",1,13,0", 1);
        let f = write_csv(&text);
        let cfg = ColumnConfig::new("y", "d", &["inc"], &["female"]);
        let (s, report) = load_csv(f.path(), &cfg).unwrap();
        assert_eq!(s.len(), 9);
        assert_eq!(report.rows_dropped, 1);
    }

    #[test]
    fn rejects_non_binary_treatment() {
        let text = ten_rows().replacen("1.5,1,13", "1.5,2,13", 1);
        let f = write_csv(&text);
        let cfg = ColumnConfig::new("y", "d", &["inc"], &["female"]);
        let err = load_csv(f.path(), &cfg).unwrap_err();
        assert!(err.to_string().contains("non-binary treatment"), "{err}");
    }

    #[test]
    fn missing_file_and_unknown_column() {
        let cfg = ColumnConfig::new("y", "d", &["inc"], &[]);
        assert!(matches!(
            load_csv(Path::new("/nonexistent/file.csv"), &cfg),
            Err(MteError::Io(_))
        ));
        let f = write_csv(&ten_rows());
        let cfg = ColumnConfig::new("y", "d", &["income"], &[]);
        let err = load_csv(f.path(), &cfg).unwrap_err();
        assert_eq!(err.to_string(), "column not found: income");
    }

    #[test]
    fn all_rows_missing_is_an_error() {
        let f = write_csv("y,d,inc\n,1,2\nNA,0,3\n");
        let cfg = ColumnConfig::new("y", "d", &["inc"], &[]);
        assert!(matches!(load_csv(f.path(), &cfg), Err(MteError::EmptySample(_))));
    }

    #[test]
    fn custom_treatment_labels_and_recoding() {
        let f = write_csv("y,t,edu\n1,yes,12\n2,no,16\n3,yes,12\n4,no,9\n");
        let mut cfg = ColumnConfig::new("y", "t", &[], &["edu"]);
        cfg.treated_label = "yes".into();
        cfg.untreated_label = "no".into();
        let (s, report) = load_csv(f.path(), &cfg).unwrap();
        assert_eq!(s.d(), &[true, false, true, false]);
        assert_eq!(report.discrete_levels[0], vec!["9", "12", "16"]);
        assert_eq!((0..4).map(|i| s.disc_row(i)[0]).collect::<Vec<_>>(), vec![1, 2, 1, 0]);
    }

    #[test]
    fn load_is_deterministic() {
        let f = write_csv(&ten_rows());
        let cfg = ColumnConfig::new("y", "d", &["inc"], &["female"]);
        assert_eq!(load_csv(f.path(), &cfg).unwrap(), load_csv(f.path(), &cfg).unwrap());
    }

    #[test]
    fn no_discrete_covariates_gives_one_cell() {
        let s = Sample::from_parts(vec![1.0, 2.0, 3.0], vec![true, false, true], vec![0.1, 0.2, 0.3], 1, vec![], 0)
            .unwrap();
        let cells = split_cells(&s);
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].row_indices, vec![0, 1, 2]);
        assert!(cells[0].key.is_empty());
    }

    #[test]
    fn two_cells_of_two() {
        let s = Sample::from_parts(vec![0.0; 4], vec![true, false, true, false], vec![], 0, vec![0, 0, 1, 1], 1)
            .unwrap();
        let cells = split_cells(&s);
        assert_eq!(cells.len(), 2);
        assert!(cells.iter().all(|c| c.len() == 2));
        assert_eq!(cells[1].key, vec![1]);
    }

    #[test]
    fn sixteen_cells_from_four_binaries() {
        // enumerate every combination of four binary covariates, twice over
        let mut disc = Vec::new();
        for rep in 0..2 {
            for code in 0..16i64 {
                let _ = rep;
                disc.extend((0..4).map(|b| (code >> b) & 1));
            }
        }
        let n = disc.len() / 4;
        let s = Sample::from_parts(vec![0.0; n], vec![true; n], vec![], 0, disc, 4).unwrap();
        let cells = split_cells(&s);
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|c| c.len() == 2));
        for c in &cells {
            for &i in &c.row_indices {
                assert_eq!(s.disc_row(i), c.key.as_slice());
            }
        }
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Sample::from_parts(vec![], vec![], vec![], 0, vec![], 0).is_err());
        assert!(Sample::from_parts(vec![f64::NAN], vec![true], vec![], 0, vec![], 0).is_err());
        assert!(Sample::from_parts(vec![1.0], vec![true], vec![f64::INFINITY], 1, vec![], 0).is_err());
        assert!(Sample::from_parts(vec![1.0, 2.0], vec![true], vec![], 0, vec![], 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn cells_partition_rows(codes in proptest::collection::vec(0i64..3, 1..60)) {
            let n = codes.len() / 2 * 2;
            proptest::prop_assume!(n >= 2);
            let disc = codes[..n].to_vec();
            let rows = n / 2;
            let s = Sample::from_parts(vec![0.0; rows], vec![false; rows], vec![], 0, disc, 2).unwrap();
            let cells = split_cells(&s);
            let mut seen: Vec<usize> = cells.iter().flat_map(|c| c.row_indices.clone()).collect();
            proptest::prop_assert_eq!(seen.len(), rows);
            seen.sort_unstable();
            proptest::prop_assert_eq!(seen, (0..rows).collect::<Vec<_>>());
            for c in &cells {
                for &i in &c.row_indices {
                    proptest::prop_assert_eq!(s.disc_row(i), c.key.as_slice());
                }
            }
        }
    }
}
