use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{cifar, idx, libsvm, synthetic_blobs, DataError, Dataset};
use crate::tensor::Scalar;

/// Samples held out from the end of the HIGGS file for testing.
pub const HIGGS_TEST_SAMPLES: usize = 100_000;

/// Dataset selector with the conventional file names under a data directory:
///
/// | tag | files |
/// |-----|-------|
/// | `mnist` | `train-images-idx3-ubyte`, `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte`, `t10k-labels-idx1-ubyte` |
/// | `cifar10` | `data_batch_1.bin` .. `data_batch_5.bin`, `test_batch.bin` (directly or under `cifar-10-batches-bin/`) |
/// | `adult` | `a9a`, `a9a.t` (LibSVM, 123 features) |
/// | `acoustic` | `acoustic_scale`, `acoustic_scale.t` (LibSVM, 50 features) |
/// | `higgs` | `HIGGS` (LibSVM, 28 features; last 100,000 rows are the test split) |
/// | `synthetic[:m[:features[:classes]]]` | generated, no files |
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DatasetTag {
    Mnist,
    Cifar10,
    Adult,
    Acoustic,
    Higgs,
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
    },
}

impl FromStr for DatasetTag {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        let head = parts.next().unwrap_or_default();
        let tag = match head {
            "mnist" => DatasetTag::Mnist,
            "cifar10" => DatasetTag::Cifar10,
            "adult" => DatasetTag::Adult,
            "acoustic" => DatasetTag::Acoustic,
            "higgs" => DatasetTag::Higgs,
            "synthetic" => {
                let mut nums = [1000usize, 2, 2];
                for slot in nums.iter_mut() {
                    match parts.next() {
                        Some(p) => {
                            *slot = p.parse().map_err(|_| DataError::UnknownDataset(s.into()))?
                        }
                        None => break,
                    }
                }
                DatasetTag::Synthetic {
                    samples: nums[0],
                    features: nums[1],
                    classes: nums[2],
                }
            }
            _ => return Err(DataError::UnknownDataset(s.into())),
        };
        if parts.next().is_some() {
            return Err(DataError::UnknownDataset(s.into()));
        }
        Ok(tag)
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetTag::Mnist => f.write_str("mnist"),
            DatasetTag::Cifar10 => f.write_str("cifar10"),
            DatasetTag::Adult => f.write_str("adult"),
            DatasetTag::Acoustic => f.write_str("acoustic"),
            DatasetTag::Higgs => f.write_str("higgs"),
            DatasetTag::Synthetic {
                samples,
                features,
                classes,
            } => write!(f, "synthetic:{samples}:{features}:{classes}"),
        }
    }
}

fn cifar_dir(dir: &Path) -> PathBuf {
    let nested = dir.join("cifar-10-batches-bin");
    if nested.join("data_batch_1.bin").exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn tabular<T: Scalar>(
    train: &Path,
    test: &Path,
    features: usize,
    classes: usize,
) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let mut tr = libsvm::load_libsvm::<T>(train, features, classes)?;
    let mut te = libsvm::load_libsvm_with_labels::<T>(test, features, &tr.label_values)?;
    let stats = tr.standardize();
    te.apply_standardization(&stats)?;
    Ok((tr, te))
}

/// Loads the train and test splits for a tag. Tabular sets are standardized
/// with train-split statistics; image sets are pixel-scaled. Synthetic sets
/// hold out one fifth of `samples` extra for testing.
pub fn load_named<T: Scalar>(
    tag: &DatasetTag,
    data_dir: &Path,
    seed: u64,
) -> Result<(Dataset<T>, Dataset<T>), DataError> {
    let (mut train, mut test) = match tag {
        DatasetTag::Mnist => (
            idx::load_idx(
                &data_dir.join("train-images-idx3-ubyte"),
                &data_dir.join("train-labels-idx1-ubyte"),
            )?,
            idx::load_idx(
                &data_dir.join("t10k-images-idx3-ubyte"),
                &data_dir.join("t10k-labels-idx1-ubyte"),
            )?,
        ),
        DatasetTag::Cifar10 => {
            let dir = cifar_dir(data_dir);
            let batches: Vec<PathBuf> = (1..=5)
                .map(|i| dir.join(format!("data_batch_{i}.bin")))
                .collect();
            (
                cifar::load_cifar10_binary(&batches)?,
                cifar::load_cifar10_binary(&[dir.join("test_batch.bin")])?,
            )
        }
        DatasetTag::Adult => tabular(&data_dir.join("a9a"), &data_dir.join("a9a.t"), 123, 2)?,
        DatasetTag::Acoustic => tabular(
            &data_dir.join("acoustic_scale"),
            &data_dir.join("acoustic_scale.t"),
            50,
            3,
        )?,
        DatasetTag::Higgs => {
            let all = libsvm::load_libsvm::<T>(&data_dir.join("HIGGS"), 28, 2)?;
            let (mut tr, mut te) = all.split_tail(HIGGS_TEST_SAMPLES)?;
            let stats = tr.standardize();
            te.apply_standardization(&stats)?;
            (tr, te)
        }
        DatasetTag::Synthetic {
            samples,
            features,
            classes,
        } => {
            let held_out = (samples / 5).max(*classes);
            let all = synthetic_blobs::<T>(samples + held_out, *features, *classes, seed)?;
            all.split_tail(held_out)?
        }
    };
    let name = tag.to_string();
    train.name = name.clone();
    test.name = name;
    Ok((train, test))
}
