use std::hash::{DefaultHasher, Hasher};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ArchitectureSpec, ModelError};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = f64> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

/// Trainable state of a network, one entry per trainable layer in order.
///
/// The flat form is layer-major with each layer's weights before its biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet<T = f64> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(arch: &ArchitectureSpec) -> Self {
        Self {
            layers: arch
                .param_shapes()
                .into_iter()
                .map(|s| LayerParams {
                    weights: Tensor::zeros(&s.weights),
                    biases: Tensor::zeros(&s.biases),
                })
                .collect(),
        }
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(l.biases.data());
        }
        out
    }

    pub fn unflatten(arch: &ArchitectureSpec, flat: &[T]) -> Result<Self, ModelError> {
        let mut p = Self::zeros(arch);
        p.assign_flat(flat)?;
        Ok(p)
    }

    /// Overwrites every scalar from a flat vector of the same layout.
    pub fn assign_flat(&mut self, flat: &[T]) -> Result<(), ModelError> {
        if flat.len() != self.len() {
            return Err(ModelError::ParamLength {
                expected: self.len(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            for t in [&mut l.weights, &mut l.biases] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        Ok(())
    }

    /// Hash of the exact bit patterns of every scalar in flat order.
    pub fn bit_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for l in &self.layers {
            for v in l.weights.data().iter().chain(l.biases.data()) {
                h.write_u64(v.bits());
            }
        }
        h.finish()
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .flatten()
                .iter()
                .zip(other.flatten())
                .all(|(a, b)| a.bits() == b.bits())
    }

    /// In-place `self -= lr * grads`.
    pub fn sgd_update(&mut self, grads: &Self, lr: T) -> Result<(), ModelError> {
        if self.layers.len() != grads.layers.len() {
            return Err(ModelError::ParamLength {
                expected: self.len(),
                got: grads.len(),
            });
        }
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (pt, gt) in [(&mut p.weights, &g.weights), (&mut p.biases, &g.biases)] {
                if pt.shape() != gt.shape() {
                    return Err(ModelError::ParamLength {
                        expected: pt.len(),
                        got: gt.len(),
                    });
                }
                for (x, &d) in pt.data_mut().iter_mut().zip(gt.data()) {
                    *x -= lr * d;
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weights: l.weights.cast(),
                    biases: l.biases.cast(),
                })
                .collect(),
        }
    }
}

/// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases zero.
/// Draws come from one ChaCha8 stream seeded by `seed`, in flat order.
pub fn init_params<T: Scalar>(arch: &ArchitectureSpec, seed: u64) -> ParameterSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = arch
        .param_shapes()
        .into_iter()
        .map(|s| {
            let a = 1.0 / (s.fan_in() as f64).sqrt();
            LayerParams {
                weights: Tensor::from_fn(&s.weights, |_| T::from_f64(rng.gen_range(-a..a))),
                biases: Tensor::zeros(&s.biases),
            }
        })
        .collect();
    ParameterSet { layers }
}

/// `params - lr * grads`, elementwise.
pub fn sgd_step<T: Scalar>(
    params: &ParameterSet<T>,
    grads: &ParameterSet<T>,
    lr: T,
) -> Result<ParameterSet<T>, ModelError> {
    let mut next = params.clone();
    next.sgd_update(grads, lr)?;
    Ok(next)
}

/// Writes `count u64 LE | tag length u64 LE | tag UTF-8 | count x f64 LE`.
pub fn write_checkpoint<T: Scalar>(
    w: &mut impl Write,
    arch_tag: &str,
    params: &ParameterSet<T>,
) -> Result<(), ModelError> {
    let flat = params.flatten();
    let mut buf = Vec::with_capacity(16 + arch_tag.len() + flat.len() * 8);
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(arch_tag.len() as u64).to_le_bytes());
    buf.extend_from_slice(arch_tag.as_bytes());
    for v in flat {
        buf.extend_from_slice(&v.to_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint, returning the architecture tag and flat values.
pub fn read_checkpoint(r: &mut impl Read) -> Result<(String, Vec<f64>), ModelError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| ModelError::Checkpoint(m.to_string());
    let u64_at = |off: usize| -> Result<u64, ModelError> {
        bytes
            .get(off..off + 8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
            .ok_or_else(|| bad("truncated header"))
    };
    let count = u64_at(0)? as usize;
    let tag_len = u64_at(8)? as usize;
    let tag_end = 16usize
        .checked_add(tag_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| bad("truncated tag"))?;
    let tag =
        String::from_utf8(bytes[16..tag_end].to_vec()).map_err(|_| bad("tag is not UTF-8"))?;
    let body = &bytes[tag_end..];
    if count.checked_mul(8) != Some(body.len()) {
        return Err(bad("value count does not match payload length"));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((tag, values))
}
