use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DataError, Dataset};
use crate::tensor::{Scalar, Tensor};

/// Minimum distance between any two cluster means, in units of the
/// per-feature standard deviation (which is 1).
pub const MEAN_SEPARATION: f64 = 6.0;

fn cluster_means(features: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if classes <= features {
        // scaled basis vectors are pairwise MEAN_SEPARATION apart
        let scale = MEAN_SEPARATION / 2f64.sqrt();
        return (0..classes)
            .map(|k| {
                (0..features)
                    .map(|j| if j == k { scale } else { 0.0 })
                    .collect()
            })
            .collect();
    }
    let half_width = MEAN_SEPARATION * classes as f64;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(classes);
    while means.len() < classes {
        let cand: Vec<f64> = (0..features)
            .map(|_| rng.gen_range(-half_width..half_width))
            .collect();
        let far = means.iter().all(|m| {
            m.iter()
                .zip(&cand)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
                >= MEAN_SEPARATION
        });
        if far {
            means.push(cand);
        }
    }
    means
}

/// Isotropic unit-variance Gaussian clusters, one per class, with means at
/// least 6 standard deviations apart. Sample `i` belongs to class
/// `i % classes`, so class sizes differ by at most one.
pub fn synthetic_blobs<T: Scalar>(
    m: usize,
    features: usize,
    classes: usize,
    seed: u64,
) -> Result<Dataset<T>, DataError> {
    if m < classes {
        return Err(DataError::TooFewSamples {
            needed: classes,
            have: m,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = cluster_means(features, classes, &mut rng);
    let mut data = Vec::with_capacity(m * features);
    let mut labels = Vec::with_capacity(m);
    for i in 0..m {
        let k = i % classes;
        labels.push(k);
        for mu in &means[k] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(T::from_f64(mu + z));
        }
    }
    let samples = Tensor::new(vec![m, features], data)?;
    Dataset::from_class_indices("synthetic", samples, &labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a: Dataset = synthetic_blobs(100, 2, 2, 9).unwrap();
        let b: Dataset = synthetic_blobs(100, 2, 2, 9).unwrap();
        let c: Dataset = synthetic_blobs(100, 2, 2, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_histogram() {
        let d: Dataset = synthetic_blobs(103, 3, 5, 1).unwrap();
        let mut hist = [0usize; 5];
        for i in 0..d.len() {
            hist[d.class_of(i)] += 1;
        }
        let (lo, hi) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
        assert!(hi - lo <= 1, "{hist:?}");
    }

    #[test]
    fn means_are_separated_when_classes_exceed_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let means = cluster_means(2, 6, &mut rng);
        for i in 0..6 {
            for j in i + 1..6 {
                let d: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= MEAN_SEPARATION);
            }
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(synthetic_blobs::<f64>(2, 2, 3, 0).is_err());
    }
}
