use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    backward, batch_loss, forward, init_params, ArchitectureSpec, ModelError, ParameterSet,
};
use crate::tensor::{finite_difference_grad, max_relative_error, Tensor};

/// Largest relative difference between backprop and central-difference
/// gradients of the batch loss, over every parameter of `arch`, on a random
/// batch of `batch` inputs in [0, 1) with random labels. Differences below
/// `floor` in magnitude are measured absolutely.
pub fn network_gradient_error(
    arch: &ArchitectureSpec,
    batch: usize,
    seed: u64,
    floor: f64,
) -> Result<f64, ModelError> {
    let params: ParameterSet = init_params(arch, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut shape = vec![batch];
    shape.extend_from_slice(arch.input_shape());
    let x = Tensor::from_fn(&shape, |_| rng.gen_range(0.0..1.0));
    let classes = arch.classes();
    let label: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
    let y = Tensor::from_fn(&[batch, classes], |i| {
        f64::from(u8::from(label[i / classes] == i % classes))
    });

    let trace = forward(arch, &params, &x)?;
    let analytic = backward(arch, &params, &trace, &y)?.flatten();
    let flat = Tensor::new(vec![params.len()], params.flatten())?;
    let mut failure = None;
    let numeric = finite_difference_grad(
        |v| {
            let loss = ParameterSet::unflatten(arch, v.data())
                .and_then(|q| batch_loss(&forward(arch, &q, &x)?, &y));
            loss.unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &flat,
        1e-5,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_relative_error(&analytic, numeric.data(), floor))
}
