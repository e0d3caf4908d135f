use super::{Scalar, Tensor, TensorError};

/// Spatial extent of every convolution window.
pub const CONV_WINDOW: usize = 5;
const PAD: usize = CONV_WINDOW / 2;

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize), TensorError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a 2-D tensor",
        }),
    }
}

fn dims4<T: Scalar>(
    t: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize, usize, usize), TensorError> {
    match t.shape() {
        [b, h, w, c] => Ok((*b, *h, *w, *c)),
        s => Err(TensorError::InvalidShape {
            op,
            shape: s.to_vec(),
            reason: "expected a 4-D batch x height x width x channels tensor",
        }),
    }
}

/// Matrix product `a[r x k] * b[k x c]`.
///
/// Each output element accumulates its k products in ascending k order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (r, k) = dims2(a, "matmul")?;
    let (k2, c) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); r * c];
    matmul_into(a.data(), b.data(), &mut out, r, k, c);
    Tensor::new(vec![r, c], out)
}

fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * c..(p + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `aᵀ * b` for `a[k x r]`, `b[k x c]`, without materializing the transpose.
pub fn matmul_at_b<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (k, r) = dims2(a, "matmul_at_b")?;
    let (k2, c) = dims2(b, "matmul_at_b")?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul_at_b",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![T::zero(); r * c];
    let (ad, bd) = (a.data(), b.data());
    for p in 0..k {
        let arow = &ad[p * r..(p + 1) * r];
        let brow = &bd[p * c..(p + 1) * c];
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * c..(i + 1) * c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![r, c], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (r, c) = dims2(a, "transpose")?;
    let src = a.data();
    let mut out = vec![T::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Adds `bias[c]` to every row of a tensor whose trailing extent is `c`.
pub fn add_row_bias<T: Scalar>(t: &mut Tensor<T>, bias: &Tensor<T>) -> Result<(), TensorError> {
    let c = *t.shape().last().unwrap_or(&0);
    if bias.shape() != [c] {
        return Err(TensorError::ShapeMismatch {
            op: "add_row_bias",
            left: t.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let b = bias.data();
    for row in t.data_mut().chunks_mut(c) {
        for (x, &bv) in row.iter_mut().zip(b) {
            *x += bv;
        }
    }
    Ok(())
}

/// Sums over every axis except the trailing one, in row order.
pub fn column_sums<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let c = *t.shape().last().expect("tensor has at least one axis");
    let mut out = vec![T::zero(); c];
    for row in t.data().chunks(c) {
        for (o, &x) in out.iter_mut().zip(row) {
            *o += x;
        }
    }
    Tensor::new(vec![c], out).expect("trailing extent is positive")
}

/// Unrolls every 5x5 zero-padded window into one row of `[b*h*w, 25*cin]`.
/// Column index is `(ky * 5 + kx) * cin + ci`.
fn im2col<T: Scalar>(x: &[T], b: usize, h: usize, w: usize, cin: usize) -> Vec<T> {
    let kw = CONV_WINDOW * CONV_WINDOW * cin;
    let mut cols = vec![T::zero(); b * h * w * kw];
    for n in 0..b {
        for y in 0..h {
            for xo in 0..w {
                let row = ((n * h + y) * w + xo) * kw;
                for ky in 0..CONV_WINDOW {
                    let iy = y + ky;
                    if iy < PAD || iy - PAD >= h {
                        continue;
                    }
                    let iy = iy - PAD;
                    for kx in 0..CONV_WINDOW {
                        let ix = xo + kx;
                        if ix < PAD || ix - PAD >= w {
                            continue;
                        }
                        let ix = ix - PAD;
                        let src = ((n * h + iy) * w + ix) * cin;
                        let dst = row + (ky * CONV_WINDOW + kx) * cin;
                        cols[dst..dst + cin].copy_from_slice(&x[src..src + cin]);
                    }
                }
            }
        }
    }
    cols
}

/// Inverse scatter of [`im2col`]: accumulates column gradients into the input.
fn col2im<T: Scalar>(cols: &[T], b: usize, h: usize, w: usize, cin: usize) -> Vec<T> {
    let kw = CONV_WINDOW * CONV_WINDOW * cin;
    let mut x = vec![T::zero(); b * h * w * cin];
    for n in 0..b {
        for y in 0..h {
            for xo in 0..w {
                let row = ((n * h + y) * w + xo) * kw;
                for ky in 0..CONV_WINDOW {
                    let iy = y + ky;
                    if iy < PAD || iy - PAD >= h {
                        continue;
                    }
                    let iy = iy - PAD;
                    for kx in 0..CONV_WINDOW {
                        let ix = xo + kx;
                        if ix < PAD || ix - PAD >= w {
                            continue;
                        }
                        let ix = ix - PAD;
                        let dst = ((n * h + iy) * w + ix) * cin;
                        let src = row + (ky * CONV_WINDOW + kx) * cin;
                        for c in 0..cin {
                            x[dst + c] += cols[src + c];
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_conv<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    op: &'static str,
) -> Result<(usize, usize, usize, usize, usize), TensorError> {
    let (b, h, w, cin) = dims4(input, op)?;
    let (kh, kw, kcin, cout) = dims4(kernels, op)?;
    if kh != CONV_WINDOW || kw != CONV_WINDOW {
        return Err(TensorError::InvalidShape {
            op,
            shape: kernels.shape().to_vec(),
            reason: "kernels must be 5x5",
        });
    }
    if kcin != cin {
        return Err(TensorError::ChannelMismatch {
            op,
            input: cin,
            kernel: kcin,
        });
    }
    Ok((b, h, w, cin, cout))
}

/// Stride-1 5x5 convolution with SAME zero padding.
///
/// `input` is `[batch, h, w, cin]`, `kernels` is `[5, 5, cin, cout]`,
/// `bias` is `[cout]`. Output is `[batch, h, w, cout]`.
pub fn conv2d_same<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let (b, h, w, cin, cout) = check_conv(input, kernels, "conv2d_same")?;
    if bias.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_same",
            left: kernels.shape().to_vec(),
            right: bias.shape().to_vec(),
        });
    }
    let k = CONV_WINDOW * CONV_WINDOW * cin;
    let rows = b * h * w;
    let cols = im2col(input.data(), b, h, w, cin);
    let mut out = vec![T::zero(); rows * cout];
    matmul_into(&cols, kernels.data(), &mut out, rows, k, cout);
    let mut out = Tensor::new(vec![b, h, w, cout], out)?;
    add_row_bias(&mut out, bias)?;
    Ok(out)
}

/// `(d_input, d_kernels, d_bias)`.
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

/// Gradients of [`conv2d_same`] given the upstream gradient of its output.
pub fn conv2d_same_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>, TensorError> {
    let (b, h, w, cin, cout) = check_conv(input, kernels, "conv2d_same_backward")?;
    if grad_out.shape() != [b, h, w, cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_same_backward",
            left: input.shape().to_vec(),
            right: grad_out.shape().to_vec(),
        });
    }
    let k = CONV_WINDOW * CONV_WINDOW * cin;
    let rows = b * h * w;
    let cols = Tensor::new(vec![rows, k], im2col(input.data(), b, h, w, cin))?;
    let g = Tensor::new(vec![rows, cout], grad_out.data().to_vec())?;
    let d_kernels = matmul_at_b(&cols, &g)?.reshape(kernels.shape())?;
    let d_bias = column_sums(&g);
    let w_t = transpose(&Tensor::new(vec![k, cout], kernels.data().to_vec())?)?;
    let d_cols = matmul(&g, &w_t)?;
    let d_input = Tensor::new(input.shape().to_vec(), col2im(d_cols.data(), b, h, w, cin))?;
    Ok((d_input, d_kernels, d_bias))
}

/// Winner positions recorded by [`maxpool_2x2`] for gradient routing.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolMap {
    pub input_shape: Vec<usize>,
    /// Flat input index of the maximum for each output element.
    pub argmax: Vec<usize>,
}

/// 2x2 max pooling with stride 2. Odd spatial extents use ceil division and
/// the truncated edge blocks only consider in-bounds elements.
pub fn maxpool_2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolMap), TensorError> {
    let (b, h, w, c) = dims4(input, "maxpool_2x2")?;
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut argmax = Vec::with_capacity(b * oh * ow * c);
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((n * h + 2 * oy) * w + 2 * ox) * c + ch;
                    let mut best = x[best_idx];
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let idx = ((n * h + y) * w + xx) * c + ch;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![b, oh, ow, c], out)?,
        PoolMap {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_2x2_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    map: &PoolMap,
) -> Result<Tensor<T>, TensorError> {
    if grad_out.len() != map.argmax.len() {
        return Err(TensorError::ShapeMismatch {
            op: "maxpool_2x2_backward",
            left: grad_out.shape().to_vec(),
            right: map.input_shape.clone(),
        });
    }
    let mut d = Tensor::zeros(&map.input_shape);
    let dd = d.data_mut();
    for (&g, &idx) in grad_out.data().iter().zip(&map.argmax) {
        dd[idx] += g;
    }
    Ok(d)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through relu, expressed in terms of the relu output.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("shapes match")
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Gradient through sigmoid, expressed in terms of the sigmoid output.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let data = output
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&y, &g)| g * y * (T::one() - y))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("shapes match")
}

/// Row-wise softmax of a `[batch, classes]` tensor with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (_, c) = dims2(logits, "softmax")?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Mean over the batch of `-ln p[true class]`, probabilities clamped to 1e-12.
pub fn cross_entropy<T: Scalar>(probs: &Tensor<T>, labels: &Tensor<T>) -> Result<T, TensorError> {
    let (b, c) = dims2(probs, "cross_entropy")?;
    if labels.shape() != [b, c] {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            left: probs.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    let floor = T::from_f64(1e-12);
    let mut total = T::zero();
    for (prow, lrow) in probs.data().chunks(c).zip(labels.data().chunks(c)) {
        for (&p, &y) in prow.iter().zip(lrow) {
            if y != T::zero() {
                total -= y * p.max(floor).ln();
            }
        }
    }
    Ok(total / T::from_f64(b as f64))
}
