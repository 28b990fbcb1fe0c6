use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::ConvGeometry;
use crate::error::{Error, Result};

/// One entry of a network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { geometry: ConvGeometry, bias: bool },
    BatchNorm { channels: usize },
    Relu,
    MaxPool,
    /// Two 3×3 conv-bn pairs around a skip. A 1×1 conv-bn projection is used
    /// on the skip when `stride > 1` or `in_ch != out_ch`.
    ResidualBlock { in_ch: usize, out_ch: usize, stride: usize },
    GlobalAvgPool,
    Dense { in_features: usize, units: usize },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool => "maxpool",
            LayerSpec::ResidualBlock { .. } => "residual_block",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Dense { .. } => "dense",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Conv { geometry: g, .. } => {
                if g.in_ch == 0 || g.out_ch == 0 || g.kernel == 0 || g.stride == 0 {
                    return Err(Error::Shape(format!("degenerate conv geometry {g:?}")));
                }
                if g.padding > 0 && (g.kernel % 2 == 0 || g.padding != g.kernel / 2) {
                    return Err(Error::Shape(format!(
                        "padded conv must be 'same' with an odd kernel, got kernel {} pad {}",
                        g.kernel, g.padding
                    )));
                }
            }
            LayerSpec::BatchNorm { channels } if *channels == 0 => {
                return Err(Error::Shape("batchnorm with zero channels".into()));
            }
            LayerSpec::ResidualBlock { in_ch, out_ch, stride } if *in_ch == 0 || *out_ch == 0 || *stride == 0 => {
                return Err(Error::Shape("degenerate residual block".into()));
            }
            LayerSpec::Dense { in_features, units } if *in_features == 0 || *units == 0 => {
                return Err(Error::Shape("degenerate dense layer".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Output shape for a given (n, c, h, w) input.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        self.validate()?;
        let [n, c, h, w] = input;
        match self {
            LayerSpec::Conv { geometry, .. } => {
                if c != geometry.in_ch {
                    return Err(Error::Shape(format!("conv expects {} channels, got {c}", geometry.in_ch)));
                }
                let (oh, ow) = geometry.output_hw(h, w)?;
                Ok([n, geometry.out_ch, oh, ow])
            }
            LayerSpec::BatchNorm { channels } => {
                if c != *channels {
                    return Err(Error::Shape(format!("batchnorm expects {channels} channels, got {c}")));
                }
                Ok(input)
            }
            LayerSpec::Relu => Ok(input),
            LayerSpec::MaxPool => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Shape(format!("maxpool needs even spatial dims, got {h}x{w}")));
                }
                Ok([n, c, h / 2, w / 2])
            }
            LayerSpec::ResidualBlock { in_ch, out_ch, stride } => {
                if c != *in_ch {
                    return Err(Error::Shape(format!("residual block expects {in_ch} channels, got {c}")));
                }
                let main = residual_conv1(*in_ch, *out_ch, *stride).output_hw(h, w)?;
                let skip = if needs_projection(*in_ch, *out_ch, *stride) {
                    residual_projection(*in_ch, *out_ch, *stride).output_hw(h, w)?
                } else {
                    (h, w)
                };
                if main != skip {
                    return Err(Error::Shape(format!(
                        "residual branch {main:?} and shortcut {skip:?} disagree"
                    )));
                }
                Ok([n, *out_ch, main.0, main.1])
            }
            LayerSpec::GlobalAvgPool => Ok([n, c, 1, 1]),
            LayerSpec::Dense { in_features, units } => {
                if c * h * w != *in_features {
                    return Err(Error::Shape(format!(
                        "dense expects {in_features} features, got {}",
                        c * h * w
                    )));
                }
                Ok([n, *units, 1, 1])
            }
        }
    }
}

pub(crate) fn needs_projection(in_ch: usize, out_ch: usize, stride: usize) -> bool {
    stride > 1 || in_ch != out_ch
}

pub(crate) fn residual_conv1(in_ch: usize, out_ch: usize, stride: usize) -> ConvGeometry {
    ConvGeometry {
        in_ch,
        out_ch,
        kernel: 3,
        stride,
        padding: 1,
    }
}

pub(crate) fn residual_conv2(out_ch: usize) -> ConvGeometry {
    ConvGeometry::same3(out_ch, out_ch)
}

pub(crate) fn residual_projection(in_ch: usize, out_ch: usize, stride: usize) -> ConvGeometry {
    ConvGeometry {
        in_ch,
        out_ch,
        kernel: 1,
        stride,
        padding: 0,
    }
}

/// Output shape after running `input` through every spec in order.
pub fn compose_shapes(specs: &[LayerSpec], input: [usize; 4]) -> Result<[usize; 4]> {
    specs.iter().enumerate().try_fold(input, |shape, (i, s)| {
        s.output_shape(shape).map_err(|e| as_dimension(i, e))
    })
}

pub(crate) fn as_dimension(layer: usize, e: Error) -> Error {
    match e {
        Error::Shape(message) => Error::Dimension { layer, message },
        other => other,
    }
}

/// The residual family used for patch classification and risk: stem conv,
/// maxpool, three stages of two residual blocks (each stage entered with a
/// stride-2 projection), global average pooling and a single-output dense head.
pub fn default_architecture(in_ch: usize, widths: [usize; 3]) -> Vec<LayerSpec> {
    let mut specs = vec![
        LayerSpec::Conv {
            geometry: ConvGeometry::same3(in_ch, widths[0]),
            bias: false,
        },
        LayerSpec::BatchNorm { channels: widths[0] },
        LayerSpec::Relu,
        LayerSpec::MaxPool,
    ];
    let mut prev = widths[0];
    for &width in &widths {
        specs.push(LayerSpec::ResidualBlock {
            in_ch: prev,
            out_ch: width,
            stride: 2,
        });
        specs.push(LayerSpec::ResidualBlock {
            in_ch: width,
            out_ch: width,
            stride: 1,
        });
        prev = width;
    }
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense {
        in_features: prev,
        units: 1,
    });
    specs
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualParams {
    pub conv1: ConvParams,
    pub bn1: BnParams,
    pub conv2: ConvParams,
    pub bn2: BnParams,
    pub projection: Option<(ConvParams, BnParams)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// (units, in_features), row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Conv(ConvParams),
    BatchNorm(BnParams),
    Residual(Box<ResidualParams>),
    Dense(DenseParams),
    Empty,
}

/// Parameter blocks aligned one-to-one with a `LayerSpec` list. Gradients
/// use the same type; their running-stat blocks are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

fn glorot(fan_in: usize, fan_out: usize, len: usize, rng: &mut impl Rng) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.random_range(-limit..limit)).collect()
}

impl ConvParams {
    fn init(g: &ConvGeometry, bias: bool, rng: &mut impl Rng) -> Self {
        Self {
            weight: glorot(g.fan_in(), g.fan_out(), g.weight_len(), rng),
            bias: bias.then(|| vec![0.0; g.out_ch]),
        }
    }

    fn zeros(g: &ConvGeometry, bias: bool) -> Self {
        Self {
            weight: vec![0.0; g.weight_len()],
            bias: bias.then(|| vec![0.0; g.out_ch]),
        }
    }
}

impl BnParams {
    pub fn identity(channels: usize) -> Self {
        Self {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn zeros(channels: usize) -> Self {
        Self {
            scale: vec![0.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![0.0; channels],
        }
    }
}

impl NetworkParams {
    /// Glorot-uniform conv/dense weights, zero biases, identity batchnorm.
    pub fn init(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            layers.push(match spec {
                LayerSpec::Conv { geometry, bias } => LayerParams::Conv(ConvParams::init(geometry, *bias, rng)),
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm(BnParams::identity(*channels)),
                LayerSpec::ResidualBlock { in_ch, out_ch, stride } => {
                    let conv1 = ConvParams::init(&residual_conv1(*in_ch, *out_ch, *stride), false, rng);
                    let conv2 = ConvParams::init(&residual_conv2(*out_ch), false, rng);
                    let projection = needs_projection(*in_ch, *out_ch, *stride).then(|| {
                        (
                            ConvParams::init(&residual_projection(*in_ch, *out_ch, *stride), false, rng),
                            BnParams::identity(*out_ch),
                        )
                    });
                    LayerParams::Residual(Box::new(ResidualParams {
                        conv1,
                        bn1: BnParams::identity(*out_ch),
                        conv2,
                        bn2: BnParams::identity(*out_ch),
                        projection,
                    }))
                }
                LayerSpec::Dense { in_features, units } => LayerParams::Dense(DenseParams {
                    weight: glorot(*in_features, *units, in_features * units, rng),
                    bias: vec![0.0; *units],
                }),
                LayerSpec::Relu | LayerSpec::MaxPool | LayerSpec::GlobalAvgPool => LayerParams::Empty,
            });
        }
        Ok(Self { layers })
    }

    /// All-zero blocks with the shapes `specs` require.
    pub fn zeros(specs: &[LayerSpec]) -> Self {
        let layers = specs
            .iter()
            .map(|spec| match spec {
                LayerSpec::Conv { geometry, bias } => LayerParams::Conv(ConvParams::zeros(geometry, *bias)),
                LayerSpec::BatchNorm { channels } => LayerParams::BatchNorm(BnParams::zeros(*channels)),
                LayerSpec::ResidualBlock { in_ch, out_ch, stride } => {
                    LayerParams::Residual(Box::new(ResidualParams {
                        conv1: ConvParams::zeros(&residual_conv1(*in_ch, *out_ch, *stride), false),
                        bn1: BnParams::zeros(*out_ch),
                        conv2: ConvParams::zeros(&residual_conv2(*out_ch), false),
                        bn2: BnParams::zeros(*out_ch),
                        projection: needs_projection(*in_ch, *out_ch, *stride).then(|| {
                            (
                                ConvParams::zeros(&residual_projection(*in_ch, *out_ch, *stride), false),
                                BnParams::zeros(*out_ch),
                            )
                        }),
                    }))
                }
                LayerSpec::Dense { in_features, units } => LayerParams::Dense(DenseParams {
                    weight: vec![0.0; in_features * units],
                    bias: vec![0.0; *units],
                }),
                LayerSpec::Relu | LayerSpec::MaxPool | LayerSpec::GlobalAvgPool => LayerParams::Empty,
            })
            .collect();
        Self { layers }
    }

    /// Trainable blocks in spec order, with stable names.
    pub fn trainable(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            visit_layer(i, layer, &mut |name, block, trainable| {
                if trainable {
                    out.push((name, block));
                }
            });
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            visit_layer_mut(layer, &mut |block, trainable| {
                if trainable {
                    out.push(block);
                }
            });
        }
        out
    }

    /// Batchnorm running mean/variance blocks in spec order.
    pub fn running(&self) -> Vec<(String, &Vec<f64>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            visit_layer(i, layer, &mut |name, block, trainable| {
                if !trainable {
                    out.push((name, block));
                }
            });
        }
        out
    }

    pub fn running_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in self.layers.iter_mut() {
            visit_layer_mut(layer, &mut |block, trainable| {
                if !trainable {
                    out.push(block);
                }
            });
        }
        out
    }

    /// (trainable, running) mutable views in one borrow.
    pub fn blocks_mut(&mut self) -> (Vec<&mut Vec<f64>>, Vec<&mut Vec<f64>>) {
        let mut trainable = Vec::new();
        let mut running = Vec::new();
        for layer in self.layers.iter_mut() {
            visit_layer_mut(layer, &mut |block, t| {
                if t {
                    trainable.push(block);
                } else {
                    running.push(block);
                }
            });
        }
        (trainable, running)
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().iter().map(|(_, b)| b.len()).sum()
    }

    /// Checks every block against the shapes `specs` require.
    pub fn check_against(&self, specs: &[LayerSpec]) -> Result<()> {
        let expected = NetworkParams::zeros(specs);
        if expected.layers.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter layers for {} specs",
                self.layers.len(),
                specs.len()
            )));
        }
        let mine = self.trainable().into_iter().chain(self.running());
        let theirs = expected.trainable().into_iter().chain(expected.running());
        for ((name, a), (_, b)) in mine.zip(theirs) {
            if a.len() != b.len() {
                return Err(Error::Shape(format!("block {name} has {} values, expected {}", a.len(), b.len())));
            }
        }
        for (name, rv) in self.running() {
            if name.ends_with("running_var") && rv.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                return Err(Error::Shape(format!("block {name} has a negative running variance")));
            }
        }
        Ok(())
    }
}

fn visit_conv<'a>(prefix: &str, c: &'a ConvParams, f: &mut impl FnMut(String, &'a Vec<f64>, bool)) {
    f(format!("{prefix}.weight"), &c.weight, true);
    if let Some(b) = &c.bias {
        f(format!("{prefix}.bias"), b, true);
    }
}

fn visit_bn<'a>(prefix: &str, b: &'a BnParams, f: &mut impl FnMut(String, &'a Vec<f64>, bool)) {
    f(format!("{prefix}.scale"), &b.scale, true);
    f(format!("{prefix}.shift"), &b.shift, true);
    f(format!("{prefix}.running_mean"), &b.running_mean, false);
    f(format!("{prefix}.running_var"), &b.running_var, false);
}

fn visit_layer<'a>(i: usize, layer: &'a LayerParams, f: &mut impl FnMut(String, &'a Vec<f64>, bool)) {
    match layer {
        LayerParams::Conv(c) => visit_conv(&format!("{i}.conv"), c, f),
        LayerParams::BatchNorm(b) => visit_bn(&format!("{i}.bn"), b, f),
        LayerParams::Residual(r) => {
            visit_conv(&format!("{i}.conv1"), &r.conv1, f);
            visit_bn(&format!("{i}.bn1"), &r.bn1, f);
            visit_conv(&format!("{i}.conv2"), &r.conv2, f);
            visit_bn(&format!("{i}.bn2"), &r.bn2, f);
            if let Some((pc, pb)) = &r.projection {
                visit_conv(&format!("{i}.proj"), pc, f);
                visit_bn(&format!("{i}.proj_bn"), pb, f);
            }
        }
        LayerParams::Dense(d) => {
            f(format!("{i}.dense.weight"), &d.weight, true);
            f(format!("{i}.dense.bias"), &d.bias, true);
        }
        LayerParams::Empty => {}
    }
}

fn visit_conv_mut<'a>(c: &'a mut ConvParams, f: &mut impl FnMut(&'a mut Vec<f64>, bool)) {
    f(&mut c.weight, true);
    if let Some(b) = &mut c.bias {
        f(b, true);
    }
}

fn visit_bn_mut<'a>(b: &'a mut BnParams, f: &mut impl FnMut(&'a mut Vec<f64>, bool)) {
    f(&mut b.scale, true);
    f(&mut b.shift, true);
    f(&mut b.running_mean, false);
    f(&mut b.running_var, false);
}

fn visit_layer_mut<'a>(layer: &'a mut LayerParams, f: &mut impl FnMut(&'a mut Vec<f64>, bool)) {
    match layer {
        LayerParams::Conv(c) => visit_conv_mut(c, f),
        LayerParams::BatchNorm(b) => visit_bn_mut(b, f),
        LayerParams::Residual(r) => {
            let r = r.as_mut();
            visit_conv_mut(&mut r.conv1, f);
            visit_bn_mut(&mut r.bn1, f);
            visit_conv_mut(&mut r.conv2, f);
            visit_bn_mut(&mut r.bn2, f);
            if let Some((pc, pb)) = &mut r.projection {
                visit_conv_mut(pc, f);
                visit_bn_mut(pb, f);
            }
        }
        LayerParams::Dense(d) => {
            f(&mut d.weight, true);
            f(&mut d.bias, true);
        }
        LayerParams::Empty => {}
    }
}
