//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue bytes (row-major 32x32 planes).

use std::fs;
use std::path::{Path, PathBuf};

use super::{io_err, DataError, Dataset, Normalization};
use crate::tensor::{Scalar, Tensor};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = SIDE * SIDE * CHANNELS;
pub const RECORD_LEN: usize = PIXELS + 1;
pub const CLASSES: usize = 10;

/// Number of records in a batch file, from its size alone.
pub fn record_count(path: &Path) -> Result<usize, DataError> {
    let size = fs::metadata(path).map_err(io_err(path))?.len();
    if size % RECORD_LEN as u64 != 0 {
        return Err(DataError::RecordMisaligned {
            path: path.to_path_buf(),
            size,
            record: RECORD_LEN,
        });
    }
    Ok((size / RECORD_LEN as u64) as usize)
}

/// Loads batches in order as `[n, 32, 32, 3]` (channels last) scaled to
/// `[0, 1]`. Use [`Dataset::flatten_features`] for the 3072-wide DNN input.
pub fn load_cifar10_binary<T: Scalar, P: AsRef<Path>>(
    paths: &[P],
) -> Result<Dataset<T>, DataError> {
    let mut total = 0;
    for p in paths {
        total += record_count(p.as_ref())?;
    }
    if total == 0 {
        return Err(DataError::TooFewSamples { needed: 1, have: 0 });
    }
    let scale = T::from_f64(1.0 / 255.0);
    let mut data = Vec::with_capacity(total * PIXELS);
    let mut classes = Vec::with_capacity(total);
    let plane = SIDE * SIDE;
    for p in paths {
        let path = p.as_ref();
        let bytes = fs::read(path).map_err(io_err(path))?;
        for rec in bytes.chunks_exact(RECORD_LEN) {
            let label = rec[0];
            if label as usize >= CLASSES {
                return Err(DataError::InvalidLabel {
                    path: PathBuf::from(path),
                    label: label as u64,
                    classes: CLASSES,
                });
            }
            classes.push(label as usize);
            let px = &rec[1..];
            for i in 0..plane {
                for c in 0..CHANNELS {
                    data.push(T::from_f64(px[c * plane + i] as f64) * scale);
                }
            }
        }
    }
    let samples = Tensor::new(vec![total, SIDE, SIDE, CHANNELS], data)?;
    let mut ds = Dataset::from_class_indices("cifar10", samples, &classes, CLASSES)?;
    ds.normalization = Normalization::PixelScale;
    Ok(ds)
}

/// Writes a batch file from labels and channel-planar pixel records.
pub fn write_batch(path: &Path, labels: &[u8], pixels: &[u8]) -> Result<(), DataError> {
    assert_eq!(
        pixels.len(),
        labels.len() * PIXELS,
        "one 3072-byte image per label"
    );
    let mut bytes = Vec::with_capacity(labels.len() * RECORD_LEN);
    for (l, img) in labels.iter().zip(pixels.chunks_exact(PIXELS)) {
        bytes.push(*l);
        bytes.extend_from_slice(img);
    }
    fs::write(path, bytes).map_err(io_err(path))
}
