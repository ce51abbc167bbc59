//! Plaintext forward pass used as the equivalence oracle.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ApproxRelu, Conv, ConvKind, Fc, LayerSpec, ModelSpec, Shape};
use crate::error::{Error, Result};

/// Dense `channels x height x width` tensor, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values for {shape}", shape.len()),
                found: format!("{}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn at(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.shape.height + r) * self.shape.width + c]
    }

    fn at_mut(&mut self, ch: usize, r: usize, c: usize) -> &mut f64 {
        let idx = (ch * self.shape.height + r) * self.shape.width + c;
        &mut self.data[idx]
    }
}

fn conv_layer(input: &Tensor, conv: &Conv) -> Result<Tensor> {
    if conv.padding != 0 {
        return Err(Error::PaddingUnsupported);
    }
    let out_shape = conv.output_shape(input.shape)?;
    let rows = match conv.kind {
        ConvKind::TwoD => conv.kernel,
        ConvKind::OneD => 1,
    };
    let mut out = Tensor::zeros(out_shape);
    for o in 0..conv.ch_out {
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                let mut acc = 0.0;
                for i in 0..conv.ch_in {
                    for j in 0..rows {
                        for k in 0..conv.kernel {
                            acc += input.at(i, r * conv.stride + j, c * conv.stride + k)
                                * conv.weight(o, i, j, k);
                        }
                    }
                }
                *out.at_mut(o, r, c) = acc + conv.bias[o];
            }
        }
    }
    Ok(out)
}

fn avgpool_layer(input: &Tensor, kernel: usize) -> Result<Tensor> {
    let s = input.shape;
    if kernel == 0 || !s.height.is_multiple_of(kernel) || !s.width.is_multiple_of(kernel) {
        return Err(Error::NonDivisibleDims {
            kernel,
            width: s.width,
            height: s.height,
        });
    }
    let out_shape = Shape::new(s.channels, s.height / kernel, s.width / kernel);
    let area = (kernel * kernel) as f64;
    let mut out = Tensor::zeros(out_shape);
    for ch in 0..s.channels {
        for r in 0..out_shape.height {
            for c in 0..out_shape.width {
                let mut acc = 0.0;
                for j in 0..kernel {
                    for k in 0..kernel {
                        acc += input.at(ch, r * kernel + j, c * kernel + k);
                    }
                }
                *out.at_mut(ch, r, c) = acc / area;
            }
        }
    }
    Ok(out)
}

/// Floating-point summation order of dense-layer dot products. Both compute
/// the same real number; they round differently once values grow large.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SumOrder {
    /// `sum_i W[o][i] * x[i]` in index order.
    #[default]
    Natural,
    /// The grouping of the rotated-diagonal construction: for output `t`, the
    /// padded row is cut into `ceil(n / m)` blocks starting at `t + b*m`;
    /// each block sums `m` terms starting at its own column, wrapping at the
    /// padded width; block sums are added in order, then the bias.
    Diagonal,
}

fn fc_layer(input: &Tensor, fc: &Fc, order: SumOrder) -> Result<Tensor> {
    if input.data.len() != fc.dat_in {
        return Err(Error::ShapeMismatch {
            expected: format!("{} inputs", fc.dat_in),
            found: format!("{}", input.data.len()),
        });
    }
    let x = &input.data;
    let data = (0..fc.dat_out)
        .map(|o| match order {
            SumOrder::Natural => {
                let dot: f64 = (0..fc.dat_in).map(|i| fc.weight(o, i) * x[i]).sum();
                dot + fc.bias[o]
            }
            SumOrder::Diagonal => {
                let m = fc.dat_out;
                let blocks = fc.dat_in.div_ceil(m);
                let padded = blocks * m;
                let mut total = 0.0;
                for b in 0..blocks {
                    let start = o + b * m;
                    let mut acc = 0.0;
                    for step in 0..m {
                        let col = (start + step) % padded;
                        acc += if col < fc.dat_in { fc.weight(o, col) * x[col] } else { 0.0 };
                    }
                    total += acc;
                }
                total + fc.bias[o]
            }
        })
        .collect();
    Ok(Tensor {
        shape: Shape::new(1, 1, fc.dat_out),
        data,
    })
}

fn map(input: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: input.shape,
        data: input.data.iter().map(|&x| f(x)).collect(),
    }
}

/// One layer of the plaintext forward pass.
pub fn reference_layer(input: &Tensor, layer: &LayerSpec) -> Result<Tensor> {
    reference_layer_with(input, layer, SumOrder::Natural)
}

pub fn reference_layer_with(input: &Tensor, layer: &LayerSpec, order: SumOrder) -> Result<Tensor> {
    match layer {
        LayerSpec::Conv(c) => conv_layer(input, c),
        LayerSpec::AvgPool2d { kernel } => avgpool_layer(input, *kernel),
        LayerSpec::Square => Ok(map(input, |x| x * x)),
        LayerSpec::ApproxRelu(p) => {
            let p: ApproxRelu = *p;
            Ok(map(input, move |x| p.eval(x)))
        }
        LayerSpec::Flatten => Ok(Tensor {
            shape: Shape::new(1, 1, input.shape.len()),
            data: input.data.clone(),
        }),
        LayerSpec::Fc(f) => fc_layer(input, f, order),
    }
}

/// Output of every layer, in order.
pub fn reference_trace(m: &ModelSpec, input: &Tensor) -> Result<Vec<Tensor>> {
    reference_trace_with(m, input, SumOrder::Natural)
}

pub fn reference_trace_with(m: &ModelSpec, input: &Tensor, order: SumOrder) -> Result<Vec<Tensor>> {
    if input.shape != m.input {
        return Err(Error::ShapeMismatch {
            expected: format!("{}", m.input),
            found: format!("{}", input.shape),
        });
    }
    let mut cur = input.clone();
    let mut out = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        cur = reference_layer_with(&cur, layer, order)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// Exact plaintext inference; returns the final layer's values flattened.
pub fn reference_infer(m: &ModelSpec, input: &Tensor) -> Result<Vec<f64>> {
    reference_infer_with(m, input, SumOrder::Natural)
}

pub fn reference_infer_with(m: &ModelSpec, input: &Tensor, order: SumOrder) -> Result<Vec<f64>> {
    let trace = reference_trace_with(m, input, order)?;
    Ok(trace.last().map_or_else(|| input.data.clone(), |t| t.data.clone()))
}
