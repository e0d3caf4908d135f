//! IDX files as used by MNIST: big-endian magic `0x0000_08NN` where the low
//! byte is the number of dimensions, followed by one u32 per dimension.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{io_err, DataError, Dataset, Normalization};
use crate::tensor::{Scalar, Tensor};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const MNIST_CLASSES: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: u32,
    pub dims: Vec<usize>,
}

impl IdxHeader {
    pub fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn payload_len(&self) -> u64 {
        self.dims.iter().map(|&d| d as u64).product()
    }
}

fn parse(path: &Path, bytes: &[u8], expected: u32) -> Result<IdxHeader, DataError> {
    let truncated = |need: u64| DataError::Truncated {
        path: path.to_path_buf(),
        expected: need,
        actual: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(4));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found: magic,
        });
    }
    let ndims = (magic & 0xFF) as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(truncated(header_len as u64));
    }
    let dims = bytes[4..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let header = IdxHeader { magic, dims };
    let need = header.header_len() as u64 + header.payload_len();
    if (bytes.len() as u64) < need {
        return Err(truncated(need));
    }
    Ok(header)
}

/// Reads only the header of an IDX file.
pub fn read_header(path: &Path) -> Result<IdxHeader, DataError> {
    use std::io::Read;
    let mut f = fs::File::open(path).map_err(io_err(path))?;
    let size = f.metadata().map_err(io_err(path))?.len();
    let mut head = [0u8; 4];
    f.read_exact(&mut head).map_err(|_| DataError::Truncated {
        path: path.to_path_buf(),
        expected: 4,
        actual: size,
    })?;
    let ndims = head[3] as usize;
    let mut rest = vec![0u8; 4 * ndims];
    f.read_exact(&mut rest).map_err(|_| DataError::Truncated {
        path: path.to_path_buf(),
        expected: 4 + 4 * ndims as u64,
        actual: size,
    })?;
    let magic = u32::from_be_bytes(head);
    if magic != IMAGES_MAGIC && magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected: IMAGES_MAGIC,
            found: magic,
        });
    }
    let dims = rest
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let header = IdxHeader { magic, dims };
    let need = header.header_len() as u64 + header.payload_len();
    if size < need {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected: need,
            actual: size,
        });
    }
    Ok(header)
}

/// Loads an image/label IDX pair as `[n, rows, cols, 1]` images scaled to
/// `[0, 1]` with 10 one-hot classes.
pub fn load_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>, DataError> {
    let img_bytes = fs::read(images).map_err(io_err(images))?;
    let lbl_bytes = fs::read(labels).map_err(io_err(labels))?;
    let ih = parse(images, &img_bytes, IMAGES_MAGIC)?;
    let lh = parse(labels, &lbl_bytes, LABELS_MAGIC)?;
    let (n, rows, cols) = (ih.dims[0], ih.dims[1], ih.dims[2]);
    if lh.dims[0] != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: lh.dims[0],
        });
    }
    let scale = T::from_f64(1.0 / 255.0);
    let pixels = &img_bytes[ih.header_len()..ih.header_len() + n * rows * cols];
    let data: Vec<T> = pixels
        .iter()
        .map(|&b| T::from_f64(b as f64) * scale)
        .collect();
    let classes: Vec<usize> = lbl_bytes[lh.header_len()..lh.header_len() + n]
        .iter()
        .map(|&b| {
            if (b as usize) < MNIST_CLASSES {
                Ok(b as usize)
            } else {
                Err(DataError::InvalidLabel {
                    path: labels.to_path_buf(),
                    label: b as u64,
                    classes: MNIST_CLASSES,
                })
            }
        })
        .collect::<Result<_, _>>()?;
    if n == 0 {
        return Err(DataError::TooFewSamples { needed: 1, have: 0 });
    }
    let samples = Tensor::new(vec![n, rows, cols, 1], data)?;
    let mut ds = Dataset::from_class_indices("mnist", samples, &classes, MNIST_CLASSES)?;
    ds.normalization = Normalization::PixelScale;
    Ok(ds)
}

/// Writes an images file; `pixels.len()` must equal `count * rows * cols`.
pub fn write_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<(), DataError> {
    assert_eq!(
        pixels.len() % (rows * cols),
        0,
        "pixel buffer is not whole images"
    );
    let count = pixels.len() / (rows * cols);
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let mut head = IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [count, rows, cols] {
        head.extend_from_slice(&(d as u32).to_be_bytes());
    }
    f.write_all(&head).map_err(io_err(path))?;
    f.write_all(pixels).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

pub fn write_labels(path: &Path, labels: &[u8]) -> Result<(), DataError> {
    let mut bytes = LABELS_MAGIC.to_be_bytes().to_vec();
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    fs::write(path, bytes).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_set() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let pixels: Vec<u8> = (0..3 * 4)
            .map(|i| (i * 20) as u8)
            .chain([255])
            .take(12)
            .collect();
        write_images(&ip, 2, 2, &pixels).unwrap();
        write_labels(&lp, &[3, 9, 0]).unwrap();
        let ds: Dataset = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.samples.shape(), &[3, 2, 2, 1]);
        assert_eq!(ds.class_of(1), 9);
        assert_eq!(ds.samples.data()[1], 20.0 / 255.0);
        assert_eq!(read_header(&ip).unwrap().dims, vec![3, 2, 2]);
    }

    #[test]
    fn full_white_pixel_scales_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_images(&ip, 1, 1, &[255]).unwrap();
        write_labels(&lp, &[1]).unwrap();
        let ds: Dataset = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.samples.data(), &[1.0]);
    }

    #[test]
    fn error_contracts() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_images(&ip, 2, 2, &[0; 8]).unwrap();
        write_labels(&lp, &[1, 2, 3]).unwrap();
        assert!(matches!(
            load_idx::<f64>(&ip, &lp),
            Err(DataError::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
        assert!(matches!(
            load_idx::<f64>(&lp, &ip),
            Err(DataError::BadMagic { .. })
        ));

        let bytes = fs::read(&ip).unwrap();
        fs::write(&ip, &bytes[..bytes.len() - 1]).unwrap();
        write_labels(&lp, &[1, 2]).unwrap();
        assert!(matches!(
            load_idx::<f64>(&ip, &lp),
            Err(DataError::Truncated { .. })
        ));
        assert!(matches!(read_header(&ip), Err(DataError::Truncated { .. })));

        write_images(&ip, 1, 1, &[0]).unwrap();
        write_labels(&lp, &[10]).unwrap();
        assert!(matches!(
            load_idx::<f64>(&ip, &lp),
            Err(DataError::InvalidLabel { label: 10, .. })
        ));
    }
}
