//! CNN architecture description, structural validation and depth accounting.

mod builtin;
mod reference;

pub use builtin::{builtin, BUILTIN_NAMES};
pub use reference::{
    reference_infer, reference_infer_with, reference_layer, reference_layer_with, reference_trace,
    reference_trace_with, SumOrder, Tensor,
};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backend::HeParams;
use crate::error::{Error, Result};
use crate::layers::LayoutState;
use crate::packing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    TwoD,
    OneD,
}

/// Convolution weights are `[out][in][row][col]` row-major (`row` is absent
/// for 1-D kernels).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub kind: ConvKind,
    pub ch_in: usize,
    pub ch_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv {
    pub fn kernel_rows(&self) -> usize {
        match self.kind {
            ConvKind::TwoD => self.kernel,
            ConvKind::OneD => 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.ch_out * self.ch_in * self.kernel_rows() * self.kernel
    }

    pub fn weight(&self, o: usize, i: usize, j: usize, k: usize) -> f64 {
        let rows = self.kernel_rows();
        self.weights[((o * self.ch_in + i) * rows + j) * self.kernel + k]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.channels != self.ch_in {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.ch_in),
                found: format!("{}", input.channels),
            });
        }
        if self.stride == 0 {
            return Err(Error::InvalidModel("stride must be positive".into()));
        }
        let out_dim = |len: usize, k: usize| -> Result<usize> {
            let padded = len + 2 * self.padding;
            if padded < k {
                return Err(Error::ShapeMismatch {
                    expected: format!("extent >= kernel {k}"),
                    found: format!("{padded}"),
                });
            }
            Ok((padded - k) / self.stride + 1)
        };
        let (height, width) = match self.kind {
            ConvKind::TwoD => (out_dim(input.height, self.kernel)?, out_dim(input.width, self.kernel)?),
            ConvKind::OneD => {
                if input.height != 1 {
                    return Err(Error::ShapeMismatch {
                        expected: "height 1 for a 1-D convolution".into(),
                        found: format!("{}", input.height),
                    });
                }
                (1, out_dim(input.width, self.kernel)?)
            }
        };
        Ok(Shape::new(self.ch_out, height, width))
    }
}

/// Second-degree polynomial standing in for ReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxRelu {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Default for ApproxRelu {
    fn default() -> Self {
        Self {
            a0: 0.375373,
            a1: 0.5,
            a2: 0.117071,
        }
    }
}

impl ApproxRelu {
    pub fn eval(&self, x: f64) -> f64 {
        (self.a0 + self.a1 * x) + self.a2 * (x * x)
    }
}

/// Dense layer, weights `[out][in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Fc {
    pub dat_in: usize,
    pub dat_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Fc {
    pub fn weight(&self, o: usize, i: usize) -> f64 {
        self.weights[o * self.dat_in + i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv(Conv),
    AvgPool2d { kernel: usize },
    Square,
    ApproxRelu(ApproxRelu),
    Flatten,
    Fc(Fc),
}

impl LayerSpec {
    /// Short layer-kind name as used in reports.
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv(c) => match c.kind {
                ConvKind::TwoD => "Conv2d",
                ConvKind::OneD => "Conv1d",
            },
            LayerSpec::AvgPool2d { .. } => "AvgPool2d",
            LayerSpec::Square => "Square",
            LayerSpec::ApproxRelu(_) => "Approx ReLU",
            LayerSpec::Flatten => "Flatten",
            LayerSpec::Fc(_) => "FC",
        }
    }

    pub fn is_activation(&self) -> bool {
        matches!(self, LayerSpec::Square | LayerSpec::ApproxRelu(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub input: Shape,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Report names: kind names with fully connected layers numbered
    /// `FC1`, `FC2`, ...
    pub fn layer_names(&self) -> Vec<String> {
        let mut fc = 0;
        self.layers
            .iter()
            .map(|l| match l {
                LayerSpec::Fc(_) => {
                    fc += 1;
                    format!("FC{fc}")
                }
                other => other.kind_name().into(),
            })
            .collect()
    }

    /// Logical output shape of every layer; flattened data is `1 x 1 x n`.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input;
        let mut flattened = false;
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            cur = match layer {
                LayerSpec::Conv(c) => {
                    if flattened {
                        return Err(Error::InvalidModel("convolution after flatten".into()));
                    }
                    c.output_shape(cur)?
                }
                LayerSpec::AvgPool2d { kernel } => {
                    let k = *kernel;
                    if flattened {
                        return Err(Error::InvalidModel("pooling after flatten".into()));
                    }
                    if k == 0 || !cur.height.is_multiple_of(k) || !cur.width.is_multiple_of(k) {
                        return Err(Error::NonDivisibleDims {
                            kernel: k,
                            width: cur.width,
                            height: cur.height,
                        });
                    }
                    Shape::new(cur.channels, cur.height / k, cur.width / k)
                }
                LayerSpec::Square | LayerSpec::ApproxRelu(_) => cur,
                LayerSpec::Flatten => {
                    if flattened {
                        return Err(Error::InvalidModel("second flatten".into()));
                    }
                    flattened = true;
                    Shape::new(1, 1, cur.len())
                }
                LayerSpec::Fc(fc) => {
                    if !flattened {
                        return Err(Error::NotFlattened);
                    }
                    if fc.dat_in != cur.len() {
                        return Err(Error::ShapeMismatch {
                            expected: format!("{} inputs", fc.dat_in),
                            found: format!("{}", cur.len()),
                        });
                    }
                    Shape::new(1, 1, fc.dat_out)
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(self.shapes()?.last().copied().unwrap_or(self.input))
    }

    /// Weight and bias arrays have the lengths their declared dims imply.
    fn check_parameters(&self, violations: &mut Vec<Violation>) {
        for (idx, layer) in self.layers.iter().enumerate() {
            let bad = match layer {
                LayerSpec::Conv(c) => c.weights.len() != c.weight_len() || c.bias.len() != c.ch_out,
                LayerSpec::Fc(f) => {
                    f.dat_in == 0
                        || f.dat_out == 0
                        || f.weights.len() != f.dat_in * f.dat_out
                        || f.bias.len() != f.dat_out
                }
                _ => false,
            };
            if bad {
                violations.push(Violation::new(
                    Some(idx),
                    Rule::ParameterShape,
                    "weight or bias length does not match the declared dimensions",
                ));
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Rule {
    KernelBelowStride,
    PaddingTooLarge,
    PaddingUnsupported,
    ParameterShape,
    ShapeChain,
    FlattenPlacement,
    StrideProductBound,
    DepthBudget,
    Footprint,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Violation {
    pub layer: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl Violation {
    fn new(layer: Option<usize>, rule: Rule, message: impl Into<String>) -> Self {
        Self {
            layer,
            rule,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ValidationReport {
    pub ok: bool,
    pub total_mults: u32,
    pub per_layer_mults: Vec<u32>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn has(&self, rule: Rule) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

/// Per-layer and total multiplicative depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthReport {
    pub per_layer: Vec<u32>,
    pub total: u32,
}

/// Levels each layer consumes, following the layout state machine the
/// runtime uses (so the two can never disagree).
pub fn mult_depth(m: &ModelSpec) -> Result<DepthReport> {
    m.shapes()?;
    let mut layout = LayoutState::input(m.input, Vec::new());
    let mut per_layer = Vec::with_capacity(m.layers.len());
    for layer in &m.layers {
        per_layer.push(layout.level_cost(layer));
        layout = symbolic_advance(&layout, layer)?;
    }
    let total = per_layer.iter().sum();
    Ok(DepthReport { per_layer, total })
}

/// Like [`LayoutState::advance`] but tolerates padding, which only the
/// runtime rejects.
fn symbolic_advance(layout: &LayoutState, layer: &LayerSpec) -> Result<LayoutState> {
    match layer {
        LayerSpec::Conv(c) if c.padding != 0 => {
            let unpadded = Conv {
                padding: 0,
                ..c.clone()
            };
            let mut next = layout.advance(&LayerSpec::Conv(unpadded))?;
            let out = c.output_shape(layout.shape())?;
            next.width = out.width;
            next.height = out.height;
            Ok(next)
        }
        _ => layout.advance(layer),
    }
}

/// Structural checks, depth budget, slot footprint and the stride-product
/// bound at every convolution and pooling layer. Never fails; problems are
/// collected as violations.
pub fn validate(m: &ModelSpec, params: &HeParams) -> ValidationReport {
    let mut violations = Vec::new();
    m.check_parameters(&mut violations);

    let mut flatten_seen = false;
    for (idx, layer) in m.layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv(c) => {
                if c.kernel < c.stride || c.stride < 1 {
                    violations.push(Violation::new(
                        Some(idx),
                        Rule::KernelBelowStride,
                        format!("kernel {} must be >= stride {} >= 1", c.kernel, c.stride),
                    ));
                }
                if 2 * c.padding > c.kernel {
                    violations.push(Violation::new(
                        Some(idx),
                        Rule::PaddingTooLarge,
                        format!("2 * padding {} exceeds kernel {}", c.padding, c.kernel),
                    ));
                }
                if c.padding > 0 {
                    violations.push(Violation::new(
                        Some(idx),
                        Rule::PaddingUnsupported,
                        "padded convolution is planned but not executable",
                    ));
                }
            }
            LayerSpec::Flatten => flatten_seen = true,
            LayerSpec::Fc(_) if !flatten_seen => violations.push(Violation::new(
                Some(idx),
                Rule::FlattenPlacement,
                "fully connected layer before flatten",
            )),
            _ => {}
        }
    }

    let shapes = match m.shapes() {
        Ok(s) => Some(s),
        Err(e) => {
            violations.push(Violation::new(None, Rule::ShapeChain, format!("{e}")));
            None
        }
    };

    if let Some(shapes) = &shapes {
        check_stride_bound(m, shapes, &mut violations);
    }

    let (total_mults, per_layer_mults) = match (shapes.is_some(), mult_depth(m)) {
        (true, Ok(d)) => (d.total, d.per_layer),
        _ => (0, Vec::new()),
    };
    if shapes.is_some() && total_mults > params.depth {
        violations.push(Violation::new(
            None,
            Rule::DepthBudget,
            format!(
                "depth budget exceeded: model needs {total_mults} multiplications, parameters allow {}",
                params.depth
            ),
        ));
    }

    if shapes.is_some() {
        if let Err(e) = packing::footprint(m, params, 1) {
            violations.push(Violation::new(None, Rule::Footprint, format!("{e}")));
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        total_mults,
        per_layer_mults,
        violations,
    }
}

/// `H_img >= H_out(i) * prod(strides and pool kernels up to i)`, and the
/// width analogue, at every convolution and pooling layer.
fn check_stride_bound(m: &ModelSpec, shapes: &[Shape], violations: &mut Vec<Violation>) {
    let mut h_prod = 1usize;
    let mut w_prod = 1usize;
    for (idx, (layer, out)) in m.layers.iter().zip(shapes).enumerate() {
        let (h_step, w_step) = match layer {
            LayerSpec::Conv(c) if c.padding == 0 => match c.kind {
                ConvKind::TwoD => (c.stride, c.stride),
                ConvKind::OneD => (1, c.stride),
            },
            LayerSpec::AvgPool2d { kernel } => (*kernel, *kernel),
            _ => continue,
        };
        h_prod *= h_step;
        w_prod *= w_step;
        if out.height * h_prod > m.input.height || out.width * w_prod > m.input.width {
            violations.push(Violation::new(
                Some(idx),
                Rule::StrideProductBound,
                format!(
                    "output {}x{} times stride product {}x{} exceeds image {}x{}",
                    out.height, out.width, h_prod, w_prod, m.input.height, m.input.width
                ),
            ));
        }
    }
}
