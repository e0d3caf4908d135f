//! LibSVM / SVMlight text: `label idx:val idx:val ...` with 1-based indices.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{io_err, DataError, Dataset};
use crate::tensor::{Scalar, Tensor};

struct Parsed<T> {
    labels: Vec<f64>,
    data: Vec<T>,
}

fn parse_file<T: Scalar>(path: &Path, feature_count: usize) -> Result<Parsed<T>, DataError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label_tok = tokens.next().expect("non-empty line has a token");
        let label: f64 = label_tok.parse().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("bad label {label_tok:?}"),
        })?;
        let start = data.len();
        data.resize(start + feature_count, T::zero());
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| DataError::Parse {
                line: line_no,
                message: format!("expected idx:val, got {tok:?}"),
            })?;
            let index: usize = idx.parse().map_err(|_| DataError::Parse {
                line: line_no,
                message: format!("bad feature index {idx:?}"),
            })?;
            let value: f64 = val.parse().map_err(|_| DataError::Parse {
                line: line_no,
                message: format!("bad feature value {val:?}"),
            })?;
            if index == 0 || index > feature_count {
                return Err(DataError::IndexOutOfRange {
                    line: line_no,
                    index,
                    feature_count,
                });
            }
            data[start + index - 1] = T::from_f64(value);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(DataError::TooFewSamples { needed: 1, have: 0 });
    }
    Ok(Parsed { labels, data })
}

fn build<T: Scalar>(
    path: &Path,
    parsed: Parsed<T>,
    feature_count: usize,
    label_values: Vec<f64>,
) -> Result<Dataset<T>, DataError> {
    let class_count = label_values.len();
    let classes = parsed
        .labels
        .iter()
        .map(|l| {
            label_values
                .iter()
                .position(|v| v == l)
                .ok_or_else(|| DataError::InvalidLabel {
                    path: path.to_path_buf(),
                    label: *l as u64,
                    classes: class_count,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let samples = Tensor::new(vec![classes.len(), feature_count], parsed.data)?;
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut ds = Dataset::from_class_indices(name, samples, &classes, class_count)?;
    ds.label_values = label_values;
    Ok(ds)
}

/// Loads a LibSVM file into a dense `[m, feature_count]` matrix.
///
/// Distinct label values are sorted ascending and mapped to class indices
/// `0..`; the mapping is kept in [`Dataset::label_values`] so a matching
/// test file can be loaded with [`load_libsvm_with_labels`].
pub fn load_libsvm<T: Scalar>(
    path: &Path,
    feature_count: usize,
    class_count: usize,
) -> Result<Dataset<T>, DataError> {
    let parsed = parse_file::<T>(path, feature_count)?;
    let mut values: Vec<f64> = parsed.labels.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() > class_count {
        return Err(DataError::TooManyClasses {
            found: values.len(),
            classes: class_count,
        });
    }
    // declared classes with no samples get placeholder label values
    while values.len() < class_count {
        let next = values.last().copied().unwrap_or(0.0) + 1.0;
        values.push(next);
    }
    build(path, parsed, feature_count, values)
}

/// Loads a LibSVM file with a label mapping fitted on another split.
pub fn load_libsvm_with_labels<T: Scalar>(
    path: &Path,
    feature_count: usize,
    label_values: &[f64],
) -> Result<Dataset<T>, DataError> {
    let parsed = parse_file::<T>(path, feature_count)?;
    build(path, parsed, feature_count, label_values.to_vec())
}

/// Writes a dataset in LibSVM format, omitting zero features. Values use the
/// shortest representation that parses back to the same bits.
pub fn write_libsvm<T: Scalar>(path: &Path, ds: &Dataset<T>) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for i in 0..ds.len() {
        let class = ds.class_of(i);
        let label = ds.label_values.get(class).copied().unwrap_or(class as f64);
        let mut line = format!("{label}");
        for (j, v) in ds.samples.row(i).iter().enumerate() {
            if *v != T::zero() {
                line.push_str(&format!(" {}:{}", j + 1, v));
            }
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn sparse_line_to_dense_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svm");
        fs::write(&p, "1 3:0.5\n0 1:2 4:-1\n").unwrap();
        let ds: Dataset = load_libsvm(&p, 4, 2).unwrap();
        assert_eq!(ds.samples.row(0), &[0.0, 0.0, 0.5, 0.0]);
        assert_eq!(ds.samples.row(1), &[2.0, 0.0, 0.0, -1.0]);
        assert_eq!(ds.label_values, vec![0.0, 1.0]);
        assert_eq!((ds.class_of(0), ds.class_of(1)), (1, 0));
    }

    #[test]
    fn plus_minus_one_labels_remap() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svm");
        fs::write(&p, "+1 1:1\n-1 2:1\n# comment only\n\n-1 1:3\n").unwrap();
        let ds: Dataset = load_libsvm(&p, 2, 2).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.label_values, vec![-1.0, 1.0]);
        assert_eq!(ds.class_of(0), 1);
        let t = dir.path().join("t.svm");
        fs::write(&t, "-1 1:1\n").unwrap();
        let test: Dataset = load_libsvm_with_labels(&t, 2, &ds.label_values).unwrap();
        assert_eq!(test.class_of(0), 0);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.svm");
        fs::write(&p, "1 1:1\n1 5:1\n").unwrap();
        assert!(matches!(
            load_libsvm::<f64>(&p, 4, 2),
            Err(DataError::IndexOutOfRange {
                line: 2,
                index: 5,
                ..
            })
        ));
        fs::write(&p, "1 1:1\n\n1 2=3\n").unwrap();
        assert!(matches!(
            load_libsvm::<f64>(&p, 4, 2),
            Err(DataError::Parse { line: 3, .. })
        ));
        fs::write(&p, "1 0:1\n").unwrap();
        assert!(matches!(
            load_libsvm::<f64>(&p, 4, 2),
            Err(DataError::IndexOutOfRange { .. })
        ));
        fs::write(&p, "1 1:1\n2 1:1\n3 1:1\n").unwrap();
        assert!(matches!(
            load_libsvm::<f64>(&p, 4, 2),
            Err(DataError::TooManyClasses {
                found: 3,
                classes: 2
            })
        ));
    }
}
