use std::path::{Path, PathBuf};

use dmft_core::data::{synthetic, whiten, SyntheticSpec};
use dmft_core::{DmftError, SampleSet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("{path}: line {line}: {message}")]
    MalformedCsv { path: PathBuf, line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input gram is not positive semidefinite (min eigenvalue {0:e})")]
    NonPsdGram(f64),

    #[error(transparent)]
    Solver(DmftError),
}

impl From<DmftError> for LoadError {
    fn from(e: DmftError) -> Self {
        match e {
            DmftError::NonPsdGram { min_eigenvalue } => LoadError::NonPsdGram(min_eigenvalue),
            DmftError::ShapeMismatch(msg) => LoadError::DimensionMismatch(msg),
            other => LoadError::Solver(other),
        }
    }
}

/// Where the samples come from. CSV files hold one sample per row; the
/// first `n_train` rows are trained on and the rest are test points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic(SyntheticSpec),
    Csv {
        inputs: PathBuf,
        targets: PathBuf,
        #[serde(default)]
        n_train: Option<usize>,
        #[serde(default)]
        whiten: bool,
    },
    Gram {
        gram: PathBuf,
        targets: PathBuf,
        #[serde(default)]
        n_train: Option<usize>,
    },
}

impl DataSpec {
    pub(crate) fn resolve_paths(&mut self, base: &Path) {
        match self {
            DataSpec::Synthetic(_) => {}
            DataSpec::Csv { inputs, targets, .. } => {
                *inputs = base.join(&*inputs);
                *targets = base.join(&*targets);
            }
            DataSpec::Gram { gram, targets, .. } => {
                *gram = base.join(&*gram);
                *targets = base.join(&*targets);
            }
        }
    }

    pub fn validate(&self) -> Result<(), LoadError> {
        if let DataSpec::Synthetic(s) = self {
            if s.n_train == 0 || s.dim == 0 {
                return Err(LoadError::DimensionMismatch("synthetic data needs n_train > 0 and dim > 0".into()));
            }
        }
        Ok(())
    }

    /// Seed of the synthetic generator, if any.
    pub fn seed(&self) -> Option<u64> {
        match self {
            DataSpec::Synthetic(s) => Some(s.seed),
            _ => None,
        }
    }
}

pub fn load_data(spec: &DataSpec) -> Result<SampleSet, LoadError> {
    match spec {
        DataSpec::Synthetic(s) => Ok(synthetic(s)?),
        DataSpec::Csv { inputs, targets, n_train, whiten: white } => {
            let x = read_matrix(inputs)?;
            let y = read_targets(targets)?;
            let p = split(*n_train, &y, x.nrows())?;
            let x = if *white { whiten(&x)? } else { x };
            Ok(SampleSet::from_inputs(x, p, y)?)
        }
        DataSpec::Gram { gram, targets, n_train } => {
            let k = read_matrix(gram)?;
            if k.nrows() != k.ncols() {
                return Err(LoadError::DimensionMismatch(format!("gram {} is {}x{}", gram.display(), k.nrows(), k.ncols())));
            }
            let y = read_targets(targets)?;
            let p = split(*n_train, &y, k.nrows())?;
            Ok(SampleSet::from_gram(k, p, y)?)
        }
    }
}

fn split(n_train: Option<usize>, y: &DVector<f64>, rows: usize) -> Result<usize, LoadError> {
    let p = n_train.unwrap_or(y.len());
    if p != y.len() {
        return Err(LoadError::DimensionMismatch(format!("n_train = {p} but {} targets were given", y.len())));
    }
    if p == 0 || p > rows {
        return Err(LoadError::DimensionMismatch(format!("{p} training targets for {rows} samples")));
    }
    Ok(p)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, LoadError> {
    let malformed = |line: usize, message: String| LoadError::MalformedCsv { path: path.to_path_buf(), line, message };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| malformed(0, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(i + 1, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        let row = record
            .iter()
            .map(|field| field.parse::<f64>().map_err(|_| malformed(line, format!("'{field}' is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return Err(malformed(line, format!("expected {first} columns, found {}", row.len())));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(malformed(0, "no data rows".into()));
    }
    Ok(rows)
}

fn read_matrix(path: &Path) -> Result<DMatrix<f64>, LoadError> {
    let rows = read_rows(path)?;
    let cols = rows[0].len();
    Ok(DMatrix::from_row_iterator(rows.len(), cols, rows.into_iter().flatten()))
}

fn read_targets(path: &Path) -> Result<DVector<f64>, LoadError> {
    let rows = read_rows(path)?;
    if rows[0].len() != 1 {
        return Err(LoadError::DimensionMismatch(format!(
            "targets file {} must have one value per line, found {} columns",
            path.display(),
            rows[0].len()
        )));
    }
    Ok(DVector::from_iterator(rows.len(), rows.into_iter().map(|r| r[0])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn scaled_basis_vectors_give_the_identity_gram() {
        let dir = tempfile::tempdir().unwrap();
        let d = 4.0_f64.sqrt();
        let inputs = write(dir.path(), "x.csv", &format!("{d},0,0,0\n0,{d},0,0\n"));
        let targets = write(dir.path(), "y.csv", "1\n-1\n");
        let set = load_data(&DataSpec::Csv { inputs, targets, n_train: None, whiten: false }).unwrap();
        assert!((set.input_gram() - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-15);
        assert_eq!(set.n_train(), 2);
    }

    #[test]
    fn duplicate_rows_are_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = write(dir.path(), "x.csv", "# two copies\n1,2,3\n1,2,3\n0.5,0,1\n");
        let targets = write(dir.path(), "y.csv", "1\n1\n");
        let set = load_data(&DataSpec::Csv { inputs, targets, n_train: Some(2), whiten: false }).unwrap();
        let k = set.input_gram();
        assert_eq!(k.row(0), k.row(1));
        assert_eq!(set.n_test(), 1);
    }

    #[test]
    fn whitening_gives_an_identity_gram() {
        let spec = SyntheticSpec { n_train: 6, dim: 30, seed: 4, whiten: false, ..SyntheticSpec::default() };
        let raw = synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let x = raw.inputs().unwrap();
        let text: String = x.row_iter().map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",") + "\n").collect();
        let inputs = write(dir.path(), "x.csv", &text);
        let targets = write(dir.path(), "y.csv", &raw.targets().iter().map(|v| format!("{v:e}\n")).collect::<String>());
        let set = load_data(&DataSpec::Csv { inputs, targets, n_train: None, whiten: true }).unwrap();
        let err = (set.input_gram() - DMatrix::<f64>::identity(6, 6)).norm() / 6.0_f64.sqrt();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn malformed_files_report_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = write(dir.path(), "x.csv", "1,2\n3,oops\n");
        let targets = write(dir.path(), "y.csv", "1\n2\n");
        match load_data(&DataSpec::Csv { inputs, targets, n_train: None, whiten: false }) {
            Err(LoadError::MalformedCsv { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let ragged = write(dir.path(), "r.csv", "1,2\n3\n");
        let targets = write(dir.path(), "y2.csv", "1\n2\n");
        assert!(matches!(
            load_data(&DataSpec::Csv { inputs: ragged, targets, n_train: None, whiten: false }),
            Err(LoadError::MalformedCsv { .. })
        ));
    }

    #[test]
    fn target_counts_must_match() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = write(dir.path(), "x.csv", "1,0\n0,1\n");
        let targets = write(dir.path(), "y.csv", "1\n2\n3\n");
        assert!(matches!(
            load_data(&DataSpec::Csv { inputs, targets, n_train: None, whiten: false }),
            Err(LoadError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn indefinite_grams_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let gram = write(dir.path(), "k.csv", "1,2\n2,1\n");
        let targets = write(dir.path(), "y.csv", "1\n");
        assert!(matches!(load_data(&DataSpec::Gram { gram, targets, n_train: None }), Err(LoadError::NonPsdGram(_))));
    }

    #[test]
    fn relative_paths_resolve_against_the_config_directory() {
        let mut spec = DataSpec::Gram { gram: "k.csv".into(), targets: "sub/y.csv".into(), n_train: None };
        spec.resolve_paths(Path::new("/exp"));
        assert_eq!(spec, DataSpec::Gram { gram: "/exp/k.csv".into(), targets: "/exp/sub/y.csv".into(), n_train: None });
    }
}
