use super::{Activation, ArchitectureSpec, Layer, LayerParams, ModelError, ParameterSet};
use crate::tensor::{
    add_row_bias, column_sums, conv2d_same, conv2d_same_backward, matmul, matmul_at_b, maxpool_2x2,
    maxpool_2x2_backward, relu, relu_backward, sigmoid, sigmoid_backward, softmax, transpose,
    PoolMap, Scalar, Tensor, TensorError,
};

/// Activations retained by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct Trace<T = f64> {
    /// `activations[i]` is the batch input of layer `i`; the final entry is
    /// the softmax output.
    pub activations: Vec<Tensor<T>>,
    pool_maps: Vec<Option<PoolMap>>,
}

impl<T: Scalar> Trace<T> {
    pub fn probs(&self) -> &Tensor<T> {
        self.activations
            .last()
            .expect("trace holds the network output")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }
}

fn batch_shape(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(sample.len() + 1);
    s.push(batch);
    s.extend_from_slice(sample);
    s
}

fn affine<T: Scalar>(x: &Tensor<T>, p: &LayerParams<T>) -> Result<Tensor<T>, TensorError> {
    let mut z = matmul(x, &p.weights)?;
    add_row_bias(&mut z, &p.biases)?;
    Ok(z)
}

fn activate<T: Scalar>(z: &Tensor<T>, a: Activation) -> Tensor<T> {
    match a {
        Activation::Sigmoid => sigmoid(z),
        Activation::Relu => relu(z),
        Activation::Identity => z.clone(),
    }
}

/// Runs a batch through the network. Any batch whose per-sample element
/// count equals the architecture's input size is accepted and reshaped.
pub fn forward<T: Scalar>(
    arch: &ArchitectureSpec,
    params: &ParameterSet<T>,
    batch: &Tensor<T>,
) -> Result<Trace<T>, ModelError> {
    if batch.row_len() != arch.input_len() {
        return Err(TensorError::ShapeMismatch {
            op: "forward",
            left: batch.shape().to_vec(),
            right: arch.input_shape().to_vec(),
        }
        .into());
    }
    if params.layers.len() != arch.param_shapes().len() {
        return Err(ModelError::ParamLength {
            expected: arch.param_count(),
            got: params.len(),
        });
    }
    let b = batch.rows();
    let mut x = batch.clone().reshape(&batch_shape(b, arch.input_shape()))?;
    let mut activations = Vec::with_capacity(arch.layers().len() + 1);
    let mut pool_maps = Vec::with_capacity(arch.layers().len());
    let mut trainable = params.layers.iter();
    for (i, layer) in arch.layers().iter().enumerate() {
        let (next, map) = match layer {
            Layer::Dense { activation, .. } => {
                let p = trainable.next().expect("checked layer count");
                (activate(&affine(&x, p)?, *activation), None)
            }
            Layer::SoftmaxOutput { .. } => {
                let p = trainable.next().expect("checked layer count");
                (softmax(&affine(&x, p)?)?, None)
            }
            Layer::Conv5x5 { .. } => {
                let p = trainable.next().expect("checked layer count");
                (relu(&conv2d_same(&x, &p.weights, &p.biases)?), None)
            }
            Layer::MaxPool2x2 => {
                let (y, map) = maxpool_2x2(&x)?;
                (y, Some(map))
            }
            Layer::Flatten => (
                x.clone().reshape(&batch_shape(b, arch.shape_at(i + 1)))?,
                None,
            ),
        };
        activations.push(std::mem::replace(&mut x, next));
        pool_maps.push(map);
    }
    activations.push(x);
    Ok(Trace {
        activations,
        pool_maps,
    })
}

/// Gradients of the mean cross-entropy loss with respect to every weight
/// and bias, for one-hot `labels` matching the traced batch.
pub fn backward<T: Scalar>(
    arch: &ArchitectureSpec,
    params: &ParameterSet<T>,
    trace: &Trace<T>,
    labels: &Tensor<T>,
) -> Result<ParameterSet<T>, ModelError> {
    let probs = trace.probs();
    if labels.shape() != probs.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "backward",
            left: probs.shape().to_vec(),
            right: labels.shape().to_vec(),
        }
        .into());
    }
    let inv_b = T::one() / T::from_f64(probs.rows() as f64);
    let delta: Vec<T> = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| (p - y) * inv_b)
        .collect();
    let mut grad = Tensor::new(probs.shape().to_vec(), delta)?;

    let mut grads: Vec<Option<LayerParams<T>>> = vec![None; params.layers.len()];
    let mut pi = params.layers.len();
    for (i, layer) in arch.layers().iter().enumerate().rev() {
        let input = &trace.activations[i];
        let output = &trace.activations[i + 1];
        let need_input_grad = i > 0;
        grad = match layer {
            Layer::Dense { .. } | Layer::SoftmaxOutput { .. } => {
                pi -= 1;
                let dz = match layer {
                    Layer::Dense {
                        activation: Activation::Sigmoid,
                        ..
                    } => sigmoid_backward(output, &grad),
                    Layer::Dense {
                        activation: Activation::Relu,
                        ..
                    } => relu_backward(output, &grad),
                    _ => grad,
                };
                let p = &params.layers[pi];
                grads[pi] = Some(LayerParams {
                    weights: matmul_at_b(input, &dz)?,
                    biases: column_sums(&dz),
                });
                if need_input_grad {
                    matmul(&dz, &transpose(&p.weights)?)?
                } else {
                    dz
                }
            }
            Layer::Conv5x5 { .. } => {
                pi -= 1;
                let dz = relu_backward(output, &grad);
                let (dx, dk, db) = conv2d_same_backward(input, &params.layers[pi].weights, &dz)?;
                grads[pi] = Some(LayerParams {
                    weights: dk,
                    biases: db,
                });
                dx
            }
            Layer::MaxPool2x2 => {
                let map = trace.pool_maps[i]
                    .as_ref()
                    .expect("pool layer recorded a map");
                maxpool_2x2_backward(&grad, map)?
            }
            Layer::Flatten => grad.reshape(input.shape())?,
        };
    }
    Ok(ParameterSet {
        layers: grads
            .into_iter()
            .map(|g| g.expect("every trainable layer visited"))
            .collect(),
    })
}

/// Mean cross-entropy of a traced batch.
pub fn batch_loss<T: Scalar>(trace: &Trace<T>, labels: &Tensor<T>) -> Result<T, ModelError> {
    Ok(crate::tensor::cross_entropy(trace.probs(), labels)?)
}

/// Predicted class per row, ties going to the lowest class index.
pub fn predict<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    (0..probs.rows())
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_architecture, init_params};
    use crate::tensor::{finite_difference_grad, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_arch() -> ArchitectureSpec {
        ArchitectureSpec::new(
            "toy-2-2-2",
            vec![2],
            vec![
                Layer::Dense {
                    units: 2,
                    activation: Activation::Sigmoid,
                },
                Layer::SoftmaxOutput { classes: 2 },
            ],
        )
        .unwrap()
    }

    #[test]
    fn zero_net_gives_uniform_probabilities() {
        let arch = build_architecture("mnist-dnn").unwrap();
        let p = ParameterSet::<f64>::zeros(&arch);
        let x = Tensor::filled(&[3, 28, 28, 1], 0.5);
        let t = forward(&arch, &p, &x).unwrap();
        assert!(t.probs().data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn toy_net_hand_computed() {
        let arch = toy_arch();
        let mut p = ParameterSet::<f64>::zeros(&arch);
        // W1 = [[1, -1], [0.5, 2]], b1 = [0, 1]; W2 = [[1, 0], [0, 1]], b2 = [0, 0]
        p.assign_flat(&[1.0, -1.0, 0.5, 2.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0])
            .unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let t = forward(&arch, &p, &x).unwrap();
        // z1 = [1 + 1, -1 + 4 + 1] = [2, 4]
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let (h0, h1) = (s(2.0), s(4.0));
        let e0 = h0.exp();
        let e1 = h1.exp();
        let want = [e0 / (e0 + e1), e1 / (e0 + e1)];
        for (g, w) in t.probs().data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn batch_equals_stacked_singles() {
        let arch = build_architecture("acoustic-dnn").unwrap();
        let p: ParameterSet = init_params(&arch, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_fn(&[5, 50], |_| rng.gen_range(-1.0..1.0));
        let batched = forward(&arch, &p, &x).unwrap();
        for i in 0..5 {
            let single = forward(&arch, &p, &x.slice_rows(i, 1).unwrap()).unwrap();
            for (a, b) in single.probs().data().iter().zip(batched.probs().row(i)) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let arch = build_architecture("adult-dnn").unwrap();
        let p: ParameterSet = init_params(&arch, 0);
        assert!(forward(&arch, &p, &Tensor::zeros(&[2, 122])).is_err());
        let t = forward(&arch, &p, &Tensor::zeros(&[2, 123])).unwrap();
        assert!(backward(&arch, &p, &t, &Tensor::zeros(&[3, 2])).is_err());
    }

    #[test]
    fn toy_gradients_match_finite_differences() {
        let arch = toy_arch();
        let p: ParameterSet = init_params(&arch, 9);
        let x = Tensor::new(vec![3, 2], vec![0.3, -1.2, 2.0, 0.1, -0.5, 0.7]).unwrap();
        let y = Tensor::new(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let t = forward(&arch, &p, &x).unwrap();
        let g = backward(&arch, &p, &t, &y).unwrap().flatten();
        let flat = Tensor::new(vec![p.len()], p.flatten()).unwrap();
        let fd = finite_difference_grad(
            |v| {
                let q = ParameterSet::unflatten(&arch, v.data()).unwrap();
                batch_loss(&forward(&arch, &q, &x).unwrap(), &y).unwrap()
            },
            &flat,
            1e-5,
        );
        assert!(max_relative_error(&g, fd.data(), 1e-6) < 1e-4);
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let arch = toy_arch();
        let p: ParameterSet = init_params(&arch, 2);
        let x = Tensor::new(vec![2, 2], vec![0.3, -1.2, 2.0, 0.1]).unwrap();
        let y = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let xx = x.select_rows(&[0, 1, 0, 1]).unwrap();
        let yy = y.select_rows(&[0, 1, 0, 1]).unwrap();
        let g1 = backward(&arch, &p, &forward(&arch, &p, &x).unwrap(), &y).unwrap();
        let g2 = backward(&arch, &p, &forward(&arch, &p, &xx).unwrap(), &yy).unwrap();
        let err = max_relative_error(&g1.flatten(), &g2.flatten(), 1e-12);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn saturated_correct_prediction_has_tiny_gradient() {
        let arch = toy_arch();
        let mut p = ParameterSet::<f64>::zeros(&arch);
        // logits [40, -40] regardless of the hidden layer
        p.assign_flat(&[
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 40.0, -40.0,
        ])
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![0.2, 0.4]).unwrap();
        let y = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let g = backward(&arch, &p, &forward(&arch, &p, &x).unwrap(), &y).unwrap();
        let norm = g.flatten().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
    }

    #[test]
    fn predict_ties_to_lowest_index() {
        let probs = Tensor::new(
            vec![2, 3],
            vec![0.2, 0.4, 0.4, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        )
        .unwrap();
        assert_eq!(predict(&probs), vec![1, 0]);
    }
}
