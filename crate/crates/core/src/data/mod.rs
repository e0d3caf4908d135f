//! Labeled datasets, their on-disk loaders, and a synthetic generator.
//!
//! Loaders are meant to run on rank 0 only; the root then scatters shards.
//! Reading is sequential, there is no parallel ingestion.

pub mod cifar;
pub mod idx;
pub mod libsvm;
mod registry;
mod synthetic;

pub use cifar::load_cifar10_binary;
pub use idx::load_idx;
pub use libsvm::{load_libsvm, load_libsvm_with_labels};
pub use registry::{load_named, DatasetTag};
pub use synthetic::synthetic_blobs;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, header implies {expected} bytes but file has {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: size {size} is not a multiple of the {record}-byte record")]
    RecordMisaligned {
        path: PathBuf,
        size: u64,
        record: usize,
    },
    #[error("{path}: label {label} outside 0..{classes}")]
    InvalidLabel {
        path: PathBuf,
        label: u64,
        classes: usize,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: feature index {index} outside 1..={feature_count}")]
    IndexOutOfRange {
        line: usize,
        index: usize,
        feature_count: usize,
    },
    #[error("found {found} distinct labels but only {classes} classes were declared")]
    TooManyClasses { found: usize, classes: usize },
    #[error("label row {row} is not one-hot")]
    NotOneHot { row: usize },
    #[error("dataset needs at least {needed} samples, has {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("unknown dataset tag {0:?}")]
    UnknownDataset(String),
    #[error("dataset {0} is already normalized with different statistics")]
    NormalizationConflict(String),
    #[error(transparent)]
    Shape(#[from] TensorError),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> DataError {
    let path = path.into();
    move |source| DataError::Io { path, source }
}

/// Per-feature statistics fitted on a training split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Normalization {
    None,
    /// Bytes divided by 255 into `[0, 1]`.
    PixelScale,
    /// Zero mean, unit variance under the recorded statistics.
    Standardized(FeatureStats),
}

/// A labeled sample matrix with one-hot labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T = f64> {
    pub name: String,
    /// `[m, ...sample_shape]`.
    pub samples: Tensor<T>,
    /// `[m, class_count]`, exactly one 1 per row.
    pub labels: Tensor<T>,
    pub class_count: usize,
    pub normalization: Normalization,
    /// Original label values in class-index order, when labels were remapped.
    pub label_values: Vec<f64>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        name: impl Into<String>,
        samples: Tensor<T>,
        labels: Tensor<T>,
        class_count: usize,
    ) -> Result<Self, DataError> {
        if class_count < 2 {
            return Err(DataError::TooManyClasses {
                found: class_count,
                classes: 2,
            });
        }
        if labels.shape() != [samples.rows(), class_count] {
            return Err(TensorError::ShapeMismatch {
                op: "Dataset::new",
                left: samples.shape().to_vec(),
                right: labels.shape().to_vec(),
            }
            .into());
        }
        for row in 0..labels.rows() {
            let r = labels.row(row);
            let ones = r.iter().filter(|&&v| v == T::one()).count();
            let zeros = r.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != class_count - 1 {
                return Err(DataError::NotOneHot { row });
            }
        }
        Ok(Self {
            name: name.into(),
            samples,
            labels,
            class_count,
            normalization: Normalization::None,
            label_values: Vec::new(),
        })
    }

    /// Builds one-hot labels from class indices.
    pub fn from_class_indices(
        name: impl Into<String>,
        samples: Tensor<T>,
        classes: &[usize],
        class_count: usize,
    ) -> Result<Self, DataError> {
        if classes.len() != samples.rows() {
            return Err(DataError::CountMismatch {
                images: samples.rows(),
                labels: classes.len(),
            });
        }
        let labels = one_hot(classes, class_count)?;
        Self::new(name, samples, labels, class_count)
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.samples.shape()[1..]
    }

    pub fn feature_count(&self) -> usize {
        self.samples.row_len()
    }

    /// Class index of sample `i`.
    pub fn class_of(&self, i: usize) -> usize {
        self.labels
            .row(i)
            .iter()
            .position(|&v| v == T::one())
            .expect("labels are one-hot")
    }

    /// Collapses the sample shape into a single feature axis.
    pub fn flatten_features(mut self) -> Self {
        let (m, f) = (self.len(), self.feature_count());
        self.samples = self.samples.reshape(&[m, f]).expect("same element count");
        self
    }

    /// Contiguous subset `offset..offset + len`.
    pub fn slice(&self, offset: usize, len: usize) -> Result<Self, DataError> {
        Ok(Self {
            name: self.name.clone(),
            samples: self.samples.slice_rows(offset, len)?,
            labels: self.labels.slice_rows(offset, len)?,
            class_count: self.class_count,
            normalization: self.normalization.clone(),
            label_values: self.label_values.clone(),
        })
    }

    /// Splits off the last `tail` samples, returning `(head, tail)`.
    pub fn split_tail(&self, tail: usize) -> Result<(Self, Self), DataError> {
        if tail == 0 || tail >= self.len() {
            return Err(DataError::TooFewSamples {
                needed: tail + 1,
                have: self.len(),
            });
        }
        let head = self.len() - tail;
        Ok((self.slice(0, head)?, self.slice(head, tail)?))
    }

    /// Fits per-feature mean/std and standardizes in place. Calling it again
    /// on a standardized dataset returns the recorded statistics unchanged.
    pub fn standardize(&mut self) -> FeatureStats {
        if let Normalization::Standardized(stats) = &self.normalization {
            return stats.clone();
        }
        let (m, f) = (self.len(), self.feature_count());
        let mut mean = vec![0.0; f];
        for i in 0..m {
            for (acc, &v) in mean.iter_mut().zip(self.samples.row(i)) {
                *acc += v.to_f64();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; f];
        for i in 0..m {
            for ((acc, &v), mu) in var.iter_mut().zip(self.samples.row(i)).zip(&mean) {
                let d = v.to_f64() - mu;
                *acc += d * d;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / m as f64).sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let stats = FeatureStats { mean, std };
        self.apply_stats(&stats);
        stats
    }

    /// Applies statistics fitted elsewhere (normally the train split).
    pub fn apply_standardization(&mut self, stats: &FeatureStats) -> Result<(), DataError> {
        match &self.normalization {
            Normalization::Standardized(existing) if existing == stats => Ok(()),
            Normalization::Standardized(_) => {
                Err(DataError::NormalizationConflict(self.name.clone()))
            }
            _ => {
                self.apply_stats(stats);
                Ok(())
            }
        }
    }

    fn apply_stats(&mut self, stats: &FeatureStats) {
        let f = self.feature_count();
        for row in self.samples.data_mut().chunks_mut(f) {
            for ((v, mu), sd) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
                *v = T::from_f64((v.to_f64() - mu) / sd);
            }
        }
        self.normalization = Normalization::Standardized(stats.clone());
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            name: self.name.clone(),
            samples: self.samples.cast(),
            labels: self.labels.cast(),
            class_count: self.class_count,
            normalization: self.normalization.clone(),
            label_values: self.label_values.clone(),
        }
    }
}

/// One-hot `[classes.len(), class_count]` label matrix.
pub fn one_hot<T: Scalar>(classes: &[usize], class_count: usize) -> Result<Tensor<T>, DataError> {
    let mut data = vec![T::zero(); classes.len() * class_count];
    for (i, &c) in classes.iter().enumerate() {
        if c >= class_count {
            return Err(DataError::InvalidLabel {
                path: PathBuf::new(),
                label: c as u64,
                classes: class_count,
            });
        }
        data[i * class_count + c] = T::one();
    }
    Ok(Tensor::new(vec![classes.len(), class_count], data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        let samples =
            Tensor::new(vec![4, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        Dataset::from_class_indices("tiny", samples, &[0, 1, 0, 1], 2).unwrap()
    }

    #[test]
    fn rejects_non_one_hot_labels() {
        let samples = Tensor::<f64>::zeros(&[2, 1]);
        let labels = Tensor::new(vec![2, 2], vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            Dataset::new("x", samples, labels, 2),
            Err(DataError::NotOneHot { row: 0 })
        ));
    }

    #[test]
    fn standardize_is_idempotent_and_recorded() {
        let mut d = tiny();
        let stats = d.standardize();
        let once = d.clone();
        assert_eq!(d.standardize(), stats);
        assert_eq!(d, once);
        let col0: Vec<f64> = (0..4).map(|i| d.samples.row(i)[0]).collect();
        let mean: f64 = col0.iter().sum::<f64>() / 4.0;
        let var: f64 = col0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_split_uses_train_statistics() {
        let mut train = tiny();
        let stats = train.standardize();
        let mut test = tiny().slice(0, 2).unwrap();
        test.apply_standardization(&stats).unwrap();
        assert_eq!(test.samples.row(0), train.samples.row(0));
        test.apply_standardization(&stats).unwrap();
        assert_eq!(test.samples.row(0), train.samples.row(0));
        let other = FeatureStats {
            mean: vec![0.0, 0.0],
            std: vec![2.0, 2.0],
        };
        assert!(test.apply_standardization(&other).is_err());
    }

    #[test]
    fn split_tail_sizes() {
        let (head, tail) = tiny().split_tail(1).unwrap();
        assert_eq!((head.len(), tail.len()), (3, 1));
        assert_eq!(tail.samples.row(0), &[4.0, 40.0]);
        assert!(tiny().split_tail(4).is_err());
    }
}
