//! Backbone architectures, head surgery and the 7-way gaze classifier.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    backward_sequence, forward_sequence, sequence_shape, visit_sequence, visit_sequence_mut, BatchNorm, Cache,
    Conv2d, Layer, Linear, MaxPool, Param, Pass, ShapeError, Tensor,
};
use crate::zone::{ZoneDistribution, ZONE_COUNT};

/// Width of the ImageNet classification layer a pretrained backbone ends in.
pub const IMAGENET_CLASSES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    AlexNet,
    Vgg16,
    ResNet50,
    SqueezeNet,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown backbone `{0}`; expected one of: alexnet, vgg16, resnet50, squeezenet")]
pub struct UnknownFamily(pub String);

impl Family {
    pub const ALL: [Family; 4] = [Family::AlexNet, Family::Vgg16, Family::ResNet50, Family::SqueezeNet];

    pub fn name(self) -> &'static str {
        match self {
            Family::AlexNet => "alexnet",
            Family::Vgg16 => "vgg16",
            Family::ResNet50 => "resnet50",
            Family::SqueezeNet => "squeezenet",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::AlexNet => "AlexNet",
            Family::Vgg16 => "VGG16",
            Family::ResNet50 => "ResNet50",
            Family::SqueezeNet => "SqueezeNet",
        }
    }

    pub fn native_input(self) -> u32 {
        match self {
            Family::AlexNet => 227,
            _ => 224,
        }
    }

    pub fn head_kind(self) -> HeadKind {
        match self {
            Family::SqueezeNet => HeadKind::ConvGap,
            _ => HeadKind::FullyConnected,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

impl FromStr for Family {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .ok_or_else(|| UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    FullyConnected,
    ConvGap,
}

/// Where the pretrained ImageNet parameters come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightsLocator {
    /// A parameter file, verified against a SHA-256 digest when one is given.
    File { path: String, sha256: Option<String> },
    /// Seeded He-initialized parameters standing in for pretrained ones.
    StandIn { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: Family,
    /// Divides every hidden channel and fully connected width (never below
    /// 4); 1 is the published architecture.
    pub width_divisor: u32,
    pub weights: WeightsLocator,
}

impl BackboneSpec {
    pub fn new(family: Family, weights: WeightsLocator) -> Self {
        Self { family, width_divisor: 1, weights }
    }

    pub fn with_width_divisor(mut self, divisor: u32) -> Self {
        self.width_divisor = divisor;
        self
    }

    pub fn native_input(&self) -> u32 {
        self.family.native_input()
    }

    pub fn head_kind(&self) -> HeadKind {
        self.family.head_kind()
    }
}

/// A named parameter array as stored in weight and checkpoint files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("width divisor must be at least 1")]
    BadWidthDivisor,
    #[error("pretrained head has {found} outputs, expected {IMAGENET_CLASSES}")]
    UnexpectedHeadWidth { found: usize },
    #[error("{family} ends in fully connected layers, which fix the spatial size of their input; only conv_gap models (SqueezeNet) can run at variable resolution")]
    FixedResolution { family: Family },
    #[error("{family} has a fully connected head; class activation maps need a conv_gap head")]
    NotConvGap { family: Family },
    #[error("model expects {expected}x{expected} input, got {got:?}")]
    ResolutionMismatch { expected: u32, got: [usize; 3] },
    #[error("input must be a 3-channel square image, got {0:?}")]
    BadInput([usize; 3]),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("parameter `{0}` is missing from the weights")]
    MissingParam(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("weights contain unknown parameter `{0}`")]
    UnexpectedParam(String),
    #[error("weights file backends are provided by the host crate, not by `{0}`")]
    UnsupportedLocator(String),
}

/// Pretrained 1000-way ImageNet classifier, before head surgery.
#[derive(Debug, Clone, PartialEq)]
pub struct Backbone {
    spec: BackboneSpec,
    layers: Vec<Layer>,
}

impl Backbone {
    /// The architecture with seeded He-initialized parameters.
    pub fn architecture(spec: BackboneSpec, seed: u64) -> Result<Self, ModelError> {
        if spec.width_divisor == 0 {
            return Err(ModelError::BadWidthDivisor);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Builder { div: spec.width_divisor as usize, rng: &mut rng };
        let layers = match spec.family {
            Family::AlexNet => b.alexnet(),
            Family::Vgg16 => b.vgg16(),
            Family::ResNet50 => b.resnet50(),
            Family::SqueezeNet => b.squeezenet(),
        };
        Ok(Self { spec, layers })
    }

    /// Builds the stand-in backbone for [`WeightsLocator::StandIn`]. File
    /// locators are resolved by the caller with [`Backbone::load`].
    pub fn pretrained(spec: BackboneSpec) -> Result<Self, ModelError> {
        match spec.weights {
            WeightsLocator::StandIn { seed } => Self::architecture(spec, seed),
            WeightsLocator::File { ref path, .. } => Err(ModelError::UnsupportedLocator(path.clone())),
        }
    }

    /// Overwrites every parameter from `arrays`, which must match exactly.
    pub fn load(&mut self, arrays: &[NamedArray]) -> Result<(), ModelError> {
        load_into(&mut self.layers, arrays)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head_index(&self) -> usize {
        head_index(&self.layers)
    }

    pub fn export(&self) -> Vec<NamedArray> {
        export(&self.layers)
    }
}

/// A fine-tunable 7-zone classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct GazeModel {
    spec: BackboneSpec,
    layers: Vec<Layer>,
    head: usize,
    tap: usize,
    variable_resolution: bool,
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub distribution: ZoneDistribution,
    pub logits: [f32; ZONE_COUNT],
    /// Final convolutional activations; for conv_gap models these are the
    /// seven class maps whose spatial means are the logits.
    pub feature_maps: Tensor,
}

/// Replaces the 1000-way ImageNet classifier with a He-initialized 7-way one.
pub fn adapt_head(backbone: Backbone, seed: u64) -> Result<GazeModel, ModelError> {
    let Backbone { spec, mut layers } = backbone;
    let head = head_index(&layers);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    layers[head] = match &layers[head] {
        Layer::Linear(l) if l.out_features == IMAGENET_CLASSES => {
            Layer::Linear(Linear::he(l.in_features, ZONE_COUNT, &mut rng))
        }
        Layer::Conv(c) if c.out_channels == IMAGENET_CLASSES => Layer::Conv(Conv2d::he(
            c.in_channels,
            ZONE_COUNT,
            c.kernel,
            c.stride,
            c.padding,
            &mut rng,
        )),
        Layer::Linear(l) => return Err(ModelError::UnexpectedHeadWidth { found: l.out_features }),
        Layer::Conv(c) => return Err(ModelError::UnexpectedHeadWidth { found: c.out_channels }),
        _ => unreachable!("head_index returns a conv or linear layer"),
    };
    let tap = tap_index(&layers);
    Ok(GazeModel { spec, layers, head, tap, variable_resolution: false })
}

/// Lets a conv_gap model run at any input size its layers accept.
pub fn make_variable_resolution(mut model: GazeModel) -> Result<GazeModel, ModelError> {
    if model.spec.head_kind() != HeadKind::ConvGap {
        return Err(ModelError::FixedResolution { family: model.spec.family });
    }
    model.variable_resolution = true;
    Ok(model)
}

impl GazeModel {
    /// Rebuilds a model from its spec and a full parameter list.
    pub fn from_params(
        spec: BackboneSpec,
        variable_resolution: bool,
        arrays: &[NamedArray],
    ) -> Result<Self, ModelError> {
        let backbone = Backbone::architecture(spec, 0)?;
        let mut model = adapt_head(backbone, 0)?;
        load_into(&mut model.layers, arrays)?;
        if variable_resolution {
            model = make_variable_resolution(model)?;
        }
        Ok(model)
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        ZONE_COUNT
    }

    pub fn accepts_variable_resolution(&self) -> bool {
        self.variable_resolution
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn head_index(&self) -> usize {
        self.head
    }

    pub fn head(&self) -> &Layer {
        &self.layers[self.head]
    }

    pub fn head_mut(&mut self) -> &mut Layer {
        &mut self.layers[self.head]
    }

    pub fn export(&self) -> Vec<NamedArray> {
        export(&self.layers)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        visit_sequence(&self.layers, "", &mut |_, p| n += p.len());
        n
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        visit_sequence(&self.layers, "", f);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        visit_sequence_mut(&mut self.layers, "", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    /// Checks that an input of this shape can be classified.
    pub fn check_input(&self, shape: [usize; 3]) -> Result<(), ModelError> {
        if shape[0] != 3 || shape[1] != shape[2] || shape[1] == 0 {
            return Err(ModelError::BadInput(shape));
        }
        let native = self.spec.native_input();
        if !self.variable_resolution && shape[1] != native as usize {
            return Err(ModelError::ResolutionMismatch { expected: native, got: shape });
        }
        let out = sequence_shape(&self.layers, shape)?;
        debug_assert_eq!(out, [ZONE_COUNT, 1, 1]);
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Prediction, ModelError> {
        self.check_input(input.shape())?;
        let mut pass = Pass::infer();
        let (features, _) = forward_sequence(&self.layers[..self.tap], input.clone(), &mut pass);
        let (out, _) = forward_sequence(&self.layers[self.tap..], features.clone(), &mut pass);
        let logits = to_logits(&out);
        Ok(Prediction { distribution: ZoneDistribution::from_logits(&logits), logits, feature_maps: features })
    }

    /// Runs a recorded forward pass for training; pair with [`GazeModel::backward`].
    pub fn forward_train(&self, input: &Tensor, pass: &mut Pass<'_>) -> Result<(Tensor, Vec<Cache>), ModelError> {
        self.check_input(input.shape())?;
        Ok(forward_sequence(&self.layers, input.clone(), pass))
    }

    /// Accumulates parameter gradients given the gradient of the loss with
    /// respect to the logits.
    pub fn backward(&mut self, caches: Vec<Cache>, dlogits: Tensor) {
        backward_sequence(&mut self.layers, caches, dlogits);
    }

    /// Activations entering the head layer.
    pub fn head_input(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        self.check_input(input.shape())?;
        Ok(forward_sequence(&self.layers[..self.head], input.clone(), &mut Pass::infer()).0)
    }

    /// Logits computed from [`GazeModel::head_input`] activations.
    pub fn logits_from_head_input(&self, features: Tensor, pass: &mut Pass<'_>) -> (Tensor, Vec<Cache>) {
        forward_sequence(&self.layers[self.head..], features, pass)
    }

    /// Backpropagates through the head and the layers after it only.
    pub fn backward_from_head(&mut self, caches: Vec<Cache>, dlogits: Tensor) -> Tensor {
        let head = self.head;
        backward_sequence(&mut self.layers[head..], caches, dlogits)
    }
}

fn to_logits(out: &Tensor) -> [f32; ZONE_COUNT] {
    let mut logits = [0.0; ZONE_COUNT];
    logits.copy_from_slice(&out.data()[..ZONE_COUNT]);
    logits
}

fn head_index(layers: &[Layer]) -> usize {
    layers
        .iter()
        .rposition(|l| matches!(l, Layer::Conv(_) | Layer::Linear(_)))
        .expect("every architecture has a classifier layer")
}

fn tap_index(layers: &[Layer]) -> usize {
    layers
        .iter()
        .position(|l| matches!(l, Layer::GlobalAvgPool | Layer::Flatten))
        .expect("every architecture reduces spatial maps before classifying")
}

fn export(layers: &[Layer]) -> Vec<NamedArray> {
    let mut out = Vec::new();
    visit_sequence(layers, "", &mut |name, p| {
        out.push(NamedArray { name: name.to_string(), shape: p.shape.clone(), values: p.value.clone() })
    });
    out
}

fn load_into(layers: &mut [Layer], arrays: &[NamedArray]) -> Result<(), ModelError> {
    let mut expected = Vec::new();
    visit_sequence(layers, "", &mut |name, p| expected.push((name.to_string(), p.shape.clone())));
    let find = |name: &str| arrays.iter().find(|a| a.name == name);
    for (name, shape) in &expected {
        let a = find(name).ok_or_else(|| ModelError::MissingParam(name.clone()))?;
        if &a.shape != shape || a.values.len() != shape.iter().product::<usize>() {
            return Err(ModelError::ParamShape { name: name.clone(), expected: shape.clone(), found: a.shape.clone() });
        }
    }
    if let Some(extra) = arrays.iter().find(|a| !expected.iter().any(|(n, _)| *n == a.name)) {
        return Err(ModelError::UnexpectedParam(extra.name.clone()));
    }
    visit_sequence_mut(layers, "", &mut |name, p| {
        p.value.copy_from_slice(&find(name).expect("checked above").values);
        p.grad.clear();
    });
    Ok(())
}

/// Narrowed layers keep at least this many channels so a thin squeeze layer
/// cannot start out dead.
const MIN_WIDTH: usize = 4;

struct Builder<'r> {
    div: usize,
    rng: &'r mut ChaCha8Rng,
}

impl Builder<'_> {
    fn w(&self, channels: usize) -> usize {
        (channels / self.div).max(MIN_WIDTH)
    }

    fn conv(&mut self, i: usize, o: usize, k: usize, s: usize, p: usize) -> Layer {
        Layer::Conv(Conv2d::he(i, o, k, s, p, self.rng))
    }

    fn linear(&mut self, i: usize, o: usize) -> Layer {
        Layer::Linear(Linear::he(i, o, self.rng))
    }

    fn pool(kernel: usize, stride: usize, padding: usize, ceil_mode: bool) -> Layer {
        Layer::MaxPool(MaxPool { kernel, stride, padding, ceil_mode })
    }

    fn alexnet(mut self) -> Vec<Layer> {
        let c = [self.w(96), self.w(256), self.w(384), self.w(384), self.w(256)];
        let fc = self.w(4096);
        vec![
            self.conv(3, c[0], 11, 4, 0),
            Layer::Relu,
            Self::pool(3, 2, 0, false),
            self.conv(c[0], c[1], 5, 1, 2),
            Layer::Relu,
            Self::pool(3, 2, 0, false),
            self.conv(c[1], c[2], 3, 1, 1),
            Layer::Relu,
            self.conv(c[2], c[3], 3, 1, 1),
            Layer::Relu,
            self.conv(c[3], c[4], 3, 1, 1),
            Layer::Relu,
            Self::pool(3, 2, 0, false),
            Layer::Flatten,
            Layer::Dropout(0.5),
            self.linear(c[4] * 6 * 6, fc),
            Layer::Relu,
            Layer::Dropout(0.5),
            self.linear(fc, fc),
            Layer::Relu,
            self.linear(fc, IMAGENET_CLASSES),
        ]
    }

    fn vgg16(mut self) -> Vec<Layer> {
        const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
        let mut layers = Vec::new();
        let mut ch = 3;
        for c in CFG {
            if c == 0 {
                layers.push(Self::pool(2, 2, 0, false));
            } else {
                let o = self.w(c);
                layers.push(self.conv(ch, o, 3, 1, 1));
                layers.push(Layer::Relu);
                ch = o;
            }
        }
        let fc = self.w(4096);
        layers.push(Layer::Flatten);
        layers.push(self.linear(ch * 7 * 7, fc));
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout(0.5));
        layers.push(self.linear(fc, fc));
        layers.push(Layer::Relu);
        layers.push(Layer::Dropout(0.5));
        layers.push(self.linear(fc, IMAGENET_CLASSES));
        layers
    }

    fn bottleneck(&mut self, input: usize, width: usize, stride: usize) -> Layer {
        let out = width * 4;
        let mut last_bn = BatchNorm::identity(out);
        // Zero-initialized residual branches keep the stand-in network's
        // activations bounded without real batch statistics.
        last_bn.gamma.value.iter_mut().for_each(|g| *g = 0.0);
        let main = vec![
            self.conv(input, width, 1, 1, 0),
            Layer::BatchNorm(BatchNorm::identity(width)),
            Layer::Relu,
            self.conv(width, width, 3, stride, 1),
            Layer::BatchNorm(BatchNorm::identity(width)),
            Layer::Relu,
            self.conv(width, out, 1, 1, 0),
            Layer::BatchNorm(last_bn),
        ];
        let shortcut = if stride != 1 || input != out {
            vec![self.conv(input, out, 1, stride, 0), Layer::BatchNorm(BatchNorm::identity(out))]
        } else {
            Vec::new()
        };
        Layer::Seq(vec![Layer::Residual { main, shortcut }, Layer::Relu])
    }

    fn resnet50(mut self) -> Vec<Layer> {
        let stem = self.w(64);
        let mut layers = vec![
            self.conv(3, stem, 7, 2, 3),
            Layer::BatchNorm(BatchNorm::identity(stem)),
            Layer::Relu,
            Self::pool(3, 2, 1, false),
        ];
        let mut ch = stem;
        for (i, (width, blocks)) in [(64, 3), (128, 4), (256, 6), (512, 3)].into_iter().enumerate() {
            let width = self.w(width);
            let mut stage = Vec::with_capacity(blocks);
            for b in 0..blocks {
                let stride = if i > 0 && b == 0 { 2 } else { 1 };
                stage.push(self.bottleneck(ch, width, stride));
                ch = width * 4;
            }
            layers.push(Layer::Seq(stage));
        }
        layers.push(Layer::GlobalAvgPool);
        layers.push(self.linear(ch, IMAGENET_CLASSES));
        layers
    }

    fn fire(&mut self, input: usize, squeeze: usize, expand: usize) -> (Layer, usize) {
        let (s, e) = (self.w(squeeze), self.w(expand));
        let layer = Layer::Seq(vec![
            self.conv(input, s, 1, 1, 0),
            Layer::Relu,
            Layer::Concat(vec![
                vec![self.conv(s, e, 1, 1, 0), Layer::Relu],
                vec![self.conv(s, e, 3, 1, 1), Layer::Relu],
            ]),
        ]);
        (layer, 2 * e)
    }

    fn squeezenet(mut self) -> Vec<Layer> {
        let stem = self.w(64);
        let mut layers = vec![self.conv(3, stem, 3, 2, 0), Layer::Relu, Self::pool(3, 2, 0, true)];
        let mut ch = stem;
        let plan: [(usize, usize, bool); 8] = [
            (16, 64, false),
            (16, 64, true),
            (32, 128, false),
            (32, 128, true),
            (48, 192, false),
            (48, 192, false),
            (64, 256, false),
            (64, 256, false),
        ];
        for (squeeze, expand, pool_after) in plan {
            let (fire, out) = self.fire(ch, squeeze, expand);
            layers.push(fire);
            ch = out;
            if pool_after {
                layers.push(Self::pool(3, 2, 0, true));
            }
        }
        layers.push(Layer::Dropout(0.5));
        layers.push(self.conv(ch, IMAGENET_CLASSES, 1, 1, 0));
        layers.push(Layer::Relu);
        layers.push(Layer::GlobalAvgPool);
        layers
    }
}

/// Convenience for building a randomly initialized 7-way model.
pub fn stand_in_model(family: Family, width_divisor: u32, seed: u64) -> Result<GazeModel, ModelError> {
    let spec = BackboneSpec::new(family, WeightsLocator::StandIn { seed }).with_width_divisor(width_divisor);
    adapt_head(Backbone::pretrained(spec)?, seed.wrapping_add(1))
}

impl fmt::Display for BackboneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.width_divisor == 1 {
            write!(f, "{}", self.family)
        } else {
            write!(f, "{} (width / {})", self.family, self.width_divisor)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_input(size: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(3, size, size, (0..3 * size * size).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn family_parsing_is_lenient_and_lists_options() {
        assert_eq!("VGG-16".parse::<Family>(), Ok(Family::Vgg16));
        assert_eq!("SqueezeNet".parse::<Family>(), Ok(Family::SqueezeNet));
        let err = "inception".parse::<Family>().unwrap_err().to_string();
        for f in Family::ALL {
            assert!(err.contains(f.name()));
        }
    }

    #[test]
    fn native_shapes_reduce_to_imagenet_classes() {
        for f in Family::ALL {
            let b = Backbone::architecture(BackboneSpec::new(f, WeightsLocator::StandIn { seed: 0 }).with_width_divisor(16), 0)
                .unwrap();
            let r = f.native_input() as usize;
            assert_eq!(sequence_shape(b.layers(), [3, r, r]).unwrap(), [IMAGENET_CLASSES, 1, 1], "{f}");
        }
    }

    #[test]
    fn squeezenet_class_maps_are_13x13_at_224() {
        let m = stand_in_model(Family::SqueezeNet, 8, 3).unwrap();
        let p = m.forward(&random_input(224, 1)).unwrap();
        assert_eq!(p.feature_maps.shape(), [7, 13, 13]);
        let sum: f64 = p.distribution.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn head_surgery_keeps_other_parameters() {
        let spec = BackboneSpec::new(Family::AlexNet, WeightsLocator::StandIn { seed: 5 }).with_width_divisor(16);
        let b = Backbone::pretrained(spec).unwrap();
        let before = b.export();
        let m = adapt_head(b, 9).unwrap();
        let after = m.export();
        assert_eq!(before.len(), after.len());
        for (a, b) in before.iter().zip(&after).take(before.len() - 2) {
            assert_eq!(a, b);
        }
        assert_eq!(after[after.len() - 2].shape, vec![7, 4096 / 16]);
    }

    #[test]
    fn squeezenet_head_is_seven_thousandths_of_original() {
        let spec = BackboneSpec::new(Family::SqueezeNet, WeightsLocator::StandIn { seed: 1 });
        let b = Backbone::pretrained(spec).unwrap();
        let old = match &b.layers()[b.head_index()] {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            _ => unreachable!(),
        };
        let m = adapt_head(b, 2).unwrap();
        let new = match m.head() {
            Layer::Conv(c) => c.weight.len() + c.bias.len(),
            _ => unreachable!(),
        };
        assert_eq!(new * 1000, old * 7);
    }

    #[test]
    fn zero_head_gives_uniform_distribution() {
        let mut m = stand_in_model(Family::SqueezeNet, 8, 3).unwrap();
        if let Layer::Conv(c) = m.head_mut() {
            c.weight.value.iter_mut().for_each(|w| *w = 0.0);
        }
        let p = m.forward(&random_input(224, 2)).unwrap();
        for &q in p.distribution.probs() {
            assert!((q - 1.0 / 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn resolution_rules() {
        let m = stand_in_model(Family::SqueezeNet, 8, 3).unwrap();
        assert!(matches!(m.forward(&random_input(96, 0)), Err(ModelError::ResolutionMismatch { .. })));
        let before = m.forward(&random_input(224, 4)).unwrap();
        let v = make_variable_resolution(m).unwrap();
        assert_eq!(v.forward(&random_input(224, 4)).unwrap(), before);
        assert_eq!(v.forward(&random_input(96, 0)).unwrap().feature_maps.shape(), [7, 5, 5]);
        let fc = stand_in_model(Family::Vgg16, 16, 3).unwrap();
        assert!(matches!(make_variable_resolution(fc), Err(ModelError::FixedResolution { .. })));
    }

    #[test]
    fn params_round_trip_and_reject_mismatches() {
        let m = stand_in_model(Family::ResNet50, 16, 3).unwrap();
        let arrays = m.export();
        let back = GazeModel::from_params(m.spec().clone(), false, &arrays).unwrap();
        assert_eq!(back.export(), arrays);
        let mut bad = arrays.clone();
        bad[0].shape = vec![1];
        assert!(matches!(GazeModel::from_params(m.spec().clone(), false, &bad), Err(ModelError::ParamShape { .. })));
        let mut missing = arrays;
        missing.pop();
        assert!(matches!(
            GazeModel::from_params(m.spec().clone(), false, &missing),
            Err(ModelError::MissingParam(_))
        ));
    }
}
