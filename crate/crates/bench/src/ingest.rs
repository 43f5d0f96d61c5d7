//! CSV dataset ingestion.
//!
//! Files have a header row, numeric feature columns and one numeric target
//! column. Parse errors report the 1-based file line and column.

use std::path::Path;

use distgp_core::Dataset;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{BenchError, Result};

/// Which column holds the regression target.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TargetColumn {
    #[default]
    Last,
    Index(usize),
    Name(String),
}

/// Per-column z-score parameters fitted on the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // constant columns are centred but not scaled
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
    (mean, std)
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Self {
        let (x_mean, x_std) = (0..data.dim()).map(|j| mean_std(data.x.column(j).iter().copied())).unzip();
        let (y_mean, y_std) = mean_std(data.y.iter().copied());
        Standardization {
            x_mean,
            x_std,
            y_mean,
            y_std,
        }
    }

    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        let x = self.apply_x(&data.x);
        let y = data.y.map(|v| (v - self.y_mean) / self.y_std);
        Ok(Dataset::new(x, y)?)
    }

    pub fn apply_x(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.x_mean[j]) / self.x_std[j])
    }

    /// Maps standardized target values back to data units.
    pub fn restore_y(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.y_std + self.y_mean)
    }

    pub fn restore_variance(&self, v: &DVector<f64>) -> DVector<f64> {
        v * (self.y_std * self.y_std)
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub train: Dataset,
    pub test: Dataset,
    pub standardization: Option<Standardization>,
    pub feature_names: Vec<String>,
    pub target_name: String,
}

/// Reads every row of a CSV file into a dataset.
pub fn read_csv(path: &Path, target: &TargetColumn) -> Result<(Dataset, Vec<String>, String)> {
    let file = std::fs::File::open(path).map_err(|e| BenchError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let ncols = headers.len();
    if ncols < 2 {
        return Err(BenchError::Parse {
            row: 1,
            column: ncols.max(1),
            message: "need at least one feature column and a target column".into(),
        });
    }
    let target_ix = match target {
        TargetColumn::Last => ncols - 1,
        TargetColumn::Index(i) if *i < ncols => *i,
        TargetColumn::Index(i) => {
            return Err(BenchError::Config(format!("target column {i} out of range for {ncols} columns")))
        }
        TargetColumn::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| BenchError::Config(format!("no column named `{name}`")))?,
    };

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let line = r + 2;
        let record = record?;
        if record.len() != ncols {
            return Err(BenchError::Parse {
                row: line,
                column: record.len().min(ncols) + 1,
                message: format!("expected {ncols} fields, found {}", record.len()),
            });
        }
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| BenchError::Parse {
                row: line,
                column: c + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if c == target_ix {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if targets.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    let n = targets.len();
    let x = DMatrix::from_row_slice(n, ncols - 1, &features);
    let target_name = headers[target_ix].clone();
    let feature_names = headers
        .into_iter()
        .enumerate()
        .filter(|(i, _)| *i != target_ix)
        .map(|(_, h)| h)
        .collect();
    Ok((Dataset::new(x, DVector::from_vec(targets))?, feature_names, target_name))
}

/// Reads a CSV file, shuffles it with `seed`, splits off `split_ratio` of the
/// rows for training, and optionally standardizes both parts with statistics
/// of the training part.
pub fn ingest_csv(
    path: &Path,
    target: &TargetColumn,
    split_ratio: f64,
    seed: u64,
    standardize: bool,
) -> Result<Ingested> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(BenchError::Config(format!("split ratio {split_ratio} must lie in (0, 1)")));
    }
    let (data, feature_names, target_name) = read_csv(path, target)?;
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * split_ratio).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(BenchError::EmptyDataset);
    }
    let train = data.subset(&order[..n_train])?;
    let test = data.subset(&order[n_train..])?;
    let (train, test, standardization) = if standardize {
        let s = Standardization::fit(&train);
        (s.apply(&train)?, s.apply(&test)?, Some(s))
    } else {
        (train, test, None)
    };
    Ok(Ingested {
        train,
        test,
        standardization,
        feature_names,
        target_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn ten_rows() -> tempfile::NamedTempFile {
        let mut s = String::from("a,b,y\n");
        for i in 0..10 {
            s.push_str(&format!("{},{},{}\n", i, 2 * i + 1, (i * i) as f64 * 0.5));
        }
        write(&s)
    }

    #[test]
    fn split_sizes() {
        let f = ten_rows();
        let d = ingest_csv(f.path(), &TargetColumn::Last, 0.8, 1, false).unwrap();
        assert_eq!(d.train.len(), 8);
        assert_eq!(d.test.len(), 2);
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.target_name, "y");
    }

    #[test]
    fn standardized_training_moments() {
        let f = ten_rows();
        let d = ingest_csv(f.path(), &TargetColumn::Name("y".into()), 0.8, 3, true).unwrap();
        for j in 0..2 {
            let col = d.train.x.column(j);
            let mean = col.mean();
            let std = (col.map(|v| (v - mean) * (v - mean)).sum() / col.len() as f64).sqrt();
            assert!(mean.abs() <= 1e-12);
            assert!((std - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn target_round_trip() {
        let f = ten_rows();
        let raw = ingest_csv(f.path(), &TargetColumn::Last, 0.8, 5, false).unwrap();
        let std = ingest_csv(f.path(), &TargetColumn::Last, 0.8, 5, true).unwrap();
        let back = std.standardization.unwrap().restore_y(&std.train.y);
        assert!((back - raw.train.y).amax() <= 1e-12);
    }

    #[test]
    fn parse_error_location() {
        let f = write("a,y\n1,2\n3,oops\n");
        match read_csv(f.path(), &TargetColumn::Last) {
            Err(BenchError::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        let f = write("a,y\n");
        assert!(matches!(read_csv(f.path(), &TargetColumn::Last), Err(BenchError::EmptyDataset)));
    }

    #[test]
    fn target_by_index() {
        let f = write("y,a\n5,1\n6,2\n");
        let (d, names, target) = read_csv(f.path(), &TargetColumn::Index(0)).unwrap();
        assert_eq!(d.y.as_slice(), &[5.0, 6.0]);
        assert_eq!(names, vec!["a"]);
        assert_eq!(target, "y");
    }
}
