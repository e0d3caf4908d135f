use super::{tags, CommError, Communicator};
use crate::data::Dataset;
use crate::tensor::{Scalar, Tensor};
use crate::train::{partition_indices, Shard};

fn encode_meta(fields: &[usize]) -> Vec<u8> {
    fields
        .iter()
        .flat_map(|&v| (v as u64).to_le_bytes())
        .collect()
}

fn decode_meta(bytes: &[u8]) -> Result<Vec<usize>, CommError> {
    if !bytes.len().is_multiple_of(8) {
        return Err(CommError::BadScatter(format!(
            "metadata of {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect())
}

impl Communicator {
    /// Splits the root's dataset into contiguous shards and hands rank `r`
    /// the `r`-th. Non-root ranks pass `None`.
    ///
    /// Shard metadata travels as little-endian u64 fields:
    /// `total, offset, len, classes, ndims, dims...`.
    pub fn scatter_shards<T: Scalar>(
        &self,
        root: usize,
        dataset: Option<&Dataset<T>>,
    ) -> Result<Shard<T>, CommError> {
        if root >= self.size {
            return Err(CommError::InvalidRank {
                rank: root,
                size: self.size,
            });
        }
        if self.rank != root {
            return self.receive_shard(root);
        }
        let Some(ds) = dataset else {
            self.abort();
            return Err(CommError::BadScatter("root has no dataset".into()));
        };
        let m = ds.len();
        let parts = match partition_indices(m, self.size) {
            Ok(p) => p,
            Err(_) => {
                self.abort();
                return Err(CommError::DatasetTooSmall {
                    samples: m,
                    ranks: self.size,
                });
            }
        };
        let sample_shape = ds.sample_shape().to_vec();
        let mut mine = None;
        for (r, &(offset, len)) in parts.iter().enumerate() {
            let samples = ds
                .samples
                .slice_rows(offset, len)
                .expect("partition within bounds");
            let labels = ds
                .labels
                .slice_rows(offset, len)
                .expect("partition within bounds");
            if r == root {
                mine = Some(Shard {
                    samples,
                    labels,
                    global_offset: offset,
                    total: m,
                    class_count: ds.class_count,
                });
                continue;
            }
            let mut meta = vec![m, offset, len, ds.class_count, sample_shape.len()];
            meta.extend_from_slice(&sample_shape);
            self.send_tagged(r, tags::SCATTER_META, encode_meta(&meta))?;
            self.send_tagged(r, tags::SCATTER_SAMPLES, samples.into_data())?;
            self.send_tagged(r, tags::SCATTER_LABELS, labels.into_data())?;
        }
        Ok(mine.expect("root owns a partition"))
    }

    fn receive_shard<T: Scalar>(&self, root: usize) -> Result<Shard<T>, CommError> {
        let meta = decode_meta(&self.recv_tagged::<u8>(root, tags::SCATTER_META)?)?;
        let bad = |m: &str| CommError::BadScatter(m.to_string());
        if meta.len() < 5 || meta.len() != 5 + meta[4] {
            return Err(bad("metadata field count"));
        }
        let (total, offset, len, classes) = (meta[0], meta[1], meta[2], meta[3]);
        let mut shape = vec![len];
        shape.extend_from_slice(&meta[5..]);
        let samples: Vec<T> = self.recv_tagged(root, tags::SCATTER_SAMPLES)?;
        let labels: Vec<T> = self.recv_tagged(root, tags::SCATTER_LABELS)?;
        let samples = Tensor::new(shape, samples).map_err(|e| bad(&e.to_string()))?;
        let labels = Tensor::new(vec![len, classes], labels).map_err(|e| bad(&e.to_string()))?;
        Ok(Shard {
            samples,
            labels,
            global_offset: offset,
            total,
            class_count: classes,
        })
    }
}
