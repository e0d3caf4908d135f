use super::{Scalar, Tensor};

/// Central-difference gradient estimate of `f` at `x`.
///
/// Every coordinate is perturbed by `±eps` in turn; `f` must be deterministic.
pub fn finite_difference_grad<T: Scalar>(
    mut f: impl FnMut(&Tensor<T>) -> T,
    x: &Tensor<T>,
    eps: T,
) -> Tensor<T> {
    let mut probe = x.clone();
    let two_eps = eps + eps;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((up - down) / two_eps);
    }
    Tensor::new(x.shape().to_vec(), grad).expect("same shape as x")
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired elements.
///
/// The floor keeps near-zero gradients from dominating through round-off.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len(), "compared slices differ in length");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
