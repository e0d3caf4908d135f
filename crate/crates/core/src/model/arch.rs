use std::fmt;

use super::ModelError;
use crate::tensor::CONV_WINDOW;

/// Hidden-unit nonlinearity of a dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Dense {
        units: usize,
        activation: Activation,
    },
    /// 5x5 stride-1 SAME convolution followed by relu.
    Conv5x5 {
        out_channels: usize,
    },
    MaxPool2x2,
    Flatten,
    /// Dense logits followed by softmax; always the last layer.
    SoftmaxOutput {
        classes: usize,
    },
}

impl Layer {
    pub fn is_trainable(&self) -> bool {
        matches!(
            self,
            Layer::Dense { .. } | Layer::Conv5x5 { .. } | Layer::SoftmaxOutput { .. }
        )
    }
}

/// Shapes of one trainable layer's weights and biases.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub weights: Vec<usize>,
    pub biases: Vec<usize>,
}

impl ParamShape {
    pub fn fan_in(&self) -> usize {
        self.weights[..self.weights.len() - 1].iter().product()
    }

    pub fn len(&self) -> usize {
        self.weights.iter().product::<usize>() + self.biases.iter().product::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Declarative layer topology. Construction validates that layer shapes
/// chain and that a single softmax output closes the network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitectureSpec {
    tag: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    /// `shapes[i]` is the per-sample input shape of layer `i`; the last entry
    /// is the output shape.
    shapes: Vec<Vec<usize>>,
}

pub const ARCHITECTURE_TAGS: [&str; 7] = [
    "adult-dnn",
    "acoustic-dnn",
    "mnist-dnn",
    "mnist-cnn",
    "cifar10-dnn",
    "cifar10-cnn",
    "higgs-dnn",
];

fn dense_stack(widths: &[usize]) -> (Vec<usize>, Vec<Layer>) {
    let (input, rest) = widths.split_first().expect("at least input and output");
    let (classes, hidden) = rest.split_last().expect("at least input and output");
    let mut layers: Vec<Layer> = hidden
        .iter()
        .map(|&units| Layer::Dense {
            units,
            activation: Activation::Sigmoid,
        })
        .collect();
    layers.push(Layer::SoftmaxOutput { classes: *classes });
    (vec![*input], layers)
}

fn cnn(
    input: [usize; 3],
    convs: [usize; 2],
    dense: usize,
    classes: usize,
) -> (Vec<usize>, Vec<Layer>) {
    (
        input.to_vec(),
        vec![
            Layer::Conv5x5 {
                out_channels: convs[0],
            },
            Layer::MaxPool2x2,
            Layer::Conv5x5 {
                out_channels: convs[1],
            },
            Layer::MaxPool2x2,
            Layer::Flatten,
            Layer::Dense {
                units: dense,
                activation: Activation::Sigmoid,
            },
            Layer::SoftmaxOutput { classes },
        ],
    )
}

/// The network for a dataset/algorithm tag. Dense hidden layers use sigmoid.
pub fn build_architecture(name: &str) -> Result<ArchitectureSpec, ModelError> {
    let (input, layers) = match name {
        "adult-dnn" => dense_stack(&[123, 200, 100, 2]),
        "acoustic-dnn" => dense_stack(&[50, 200, 100, 3]),
        "mnist-dnn" => dense_stack(&[784, 200, 100, 10]),
        "cifar10-dnn" => dense_stack(&[3072, 200, 100, 10]),
        "higgs-dnn" => dense_stack(&[28, 1024, 2]),
        "mnist-cnn" => cnn([28, 28, 1], [32, 64], 1024, 10),
        "cifar10-cnn" => cnn([32, 32, 3], [32, 64], 1024, 10),
        other => return Err(ModelError::UnknownArchitecture(other.to_string())),
    };
    ArchitectureSpec::new(name, input, layers)
}

impl ArchitectureSpec {
    pub fn new(
        tag: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
    ) -> Result<Self, ModelError> {
        let invalid = |msg: String| Err(ModelError::InvalidArchitecture(msg));
        if input_shape.is_empty() || input_shape.contains(&0) {
            return invalid(format!("input shape {input_shape:?} has a zero extent"));
        }
        let softmax_count = layers
            .iter()
            .filter(|l| matches!(l, Layer::SoftmaxOutput { .. }))
            .count();
        if softmax_count != 1 || !matches!(layers.last(), Some(Layer::SoftmaxOutput { .. })) {
            return invalid("exactly one SoftmaxOutput is required and it must be last".into());
        }
        let mut shapes = vec![input_shape.clone()];
        for (i, layer) in layers.iter().enumerate() {
            let cur = shapes.last().unwrap();
            let next = match (layer, cur.as_slice()) {
                (Layer::Dense { units, .. }, [_]) if *units > 0 => vec![*units],
                (Layer::SoftmaxOutput { classes }, [_]) if *classes >= 2 => vec![*classes],
                (Layer::Conv5x5 { out_channels }, [h, w, _]) if *out_channels > 0 => {
                    vec![*h, *w, *out_channels]
                }
                (Layer::MaxPool2x2, [h, w, c]) => vec![h.div_ceil(2), w.div_ceil(2), *c],
                (Layer::Flatten, s) => vec![s.iter().product()],
                _ => return invalid(format!("layer {i} ({layer:?}) cannot follow shape {cur:?}")),
            };
            shapes.push(next);
        }
        Ok(Self {
            tag: tag.into(),
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Per-sample input shape of layer `i`, or the output shape for
    /// `i == layers().len()`.
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn param_shapes(&self) -> Vec<ParamShape> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| {
                let input = &self.shapes[i];
                match layer {
                    Layer::Dense { units, .. } => Some(ParamShape {
                        weights: vec![input[0], *units],
                        biases: vec![*units],
                    }),
                    Layer::SoftmaxOutput { classes } => Some(ParamShape {
                        weights: vec![input[0], *classes],
                        biases: vec![*classes],
                    }),
                    Layer::Conv5x5 { out_channels } => Some(ParamShape {
                        weights: vec![CONV_WINDOW, CONV_WINDOW, input[2], *out_channels],
                        biases: vec![*out_channels],
                    }),
                    _ => None,
                }
            })
            .collect()
    }

    /// Length of the flattened parameter vector.
    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(ParamShape::len).sum()
    }

    /// Multiply-accumulate count of one forward pass for one sample.
    pub fn forward_macs(&self) -> usize {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let (input, output) = (&self.shapes[i], &self.shapes[i + 1]);
                match layer {
                    Layer::Dense { .. } | Layer::SoftmaxOutput { .. } => input[0] * output[0],
                    Layer::Conv5x5 { .. } => {
                        output.iter().product::<usize>() * CONV_WINDOW * CONV_WINDOW * input[2]
                    }
                    _ => 0,
                }
            })
            .sum()
    }

    /// Widths of the layers seen as a stack: the flattened input followed by
    /// the output width of every trainable layer.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_len()];
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.is_trainable() {
                w.push(self.shapes[i + 1].iter().product());
            }
        }
        w
    }

    /// Same topology with every dense hidden layer using `activation`.
    pub fn with_hidden_activation(&self, activation: Activation) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { units, .. } => Layer::Dense {
                    units: *units,
                    activation,
                },
                other => other.clone(),
            })
            .collect();
        Self::new(self.tag.clone(), self.input_shape.clone(), layers).expect("same shapes")
    }

    /// Same topology with dense hidden widths and conv channel counts divided
    /// by `divisor` (at least 2 each). Input and output widths are kept.
    pub fn narrowed(&self, divisor: usize) -> Self {
        let shrink = |n: usize| (n / divisor).max(2);
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Dense { units, activation } => Layer::Dense {
                    units: shrink(*units),
                    activation: *activation,
                },
                Layer::Conv5x5 { out_channels } => Layer::Conv5x5 {
                    out_channels: shrink(*out_channels),
                },
                other => other.clone(),
            })
            .collect();
        Self::new(
            format!("{}/{divisor}", self.tag),
            self.input_shape.clone(),
            layers,
        )
        .expect("narrowing keeps shapes chained")
    }
}

impl fmt::Display for ArchitectureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}", self.tag, self.input_shape)?;
        for l in &self.layers {
            match l {
                Layer::Dense { units, activation } => {
                    write!(f, " -> dense({units}, {activation:?})")?
                }
                Layer::Conv5x5 { out_channels } => write!(f, " -> conv5x5({out_channels})")?,
                Layer::MaxPool2x2 => write!(f, " -> maxpool2x2")?,
                Layer::Flatten => write!(f, " -> flatten")?,
                Layer::SoftmaxOutput { classes } => write!(f, " -> softmax({classes})")?,
            }
        }
        Ok(())
    }
}
