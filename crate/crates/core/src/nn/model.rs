use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{
    gap_backward, gap_forward, relu_backward, relu_forward, softmax_backward, softmax_forward, BatchNorm1d,
    BatchStats, BnCache, Conv1d, ConvCache, Dense, MaxPool1d, Mode, Param, PoolCache,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Shape of a residual feature extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeConfig {
    pub input_channels: usize,
    pub input_len: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    /// 3-wide, stride-2 max pool after the stem.
    pub stem_pool: bool,
    /// Channel width of each stage; stages after the first halve the length.
    pub widths: Vec<usize>,
    /// Residual blocks per stage.
    pub blocks: Vec<usize>,
    /// Feature length T. A dense projection is appended when it differs
    /// from the last stage width.
    pub feature_len: usize,
}

impl Default for FeConfig {
    fn default() -> Self {
        Self {
            input_channels: 2,
            input_len: 320,
            stem_channels: 16,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![16, 32, 64],
            blocks: vec![1, 1, 1],
            feature_len: 64,
        }
    }
}

impl FeConfig {
    /// ResNet-18 layout over a 1-D IQ input of `input_len` samples.
    pub fn resnet18(input_len: usize) -> Self {
        Self {
            input_channels: 2,
            input_len,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_pool: true,
            widths: vec![64, 128, 256, 512],
            blocks: vec![2, 2, 2, 2],
            feature_len: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub inputs: usize,
    pub hidden: usize,
    pub classes: usize,
}

pub const DEFAULT_HEAD_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Arch {
    FeatureExtractor(FeConfig),
    Head(HeadConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
    pub shortcut: Option<(Conv1d, BatchNorm1d)>,
}

impl ResBlock {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let shortcut = (stride != 1 || cin != cout).then(|| {
            (
                Conv1d::new(&format!("{name}.down.conv"), cin, cout, 1, stride, 0, false, rng),
                BatchNorm1d::new(&format!("{name}.down.bn"), cout),
            )
        });
        Self {
            conv1: Conv1d::new(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng),
            bn1: BatchNorm1d::new(&format!("{name}.bn1"), cout),
            conv2: Conv1d::new(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng),
            bn2: BatchNorm1d::new(&format!("{name}.bn2"), cout),
            shortcut,
        }
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm1d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, bn)) = &mut self.shortcut {
            v.push(bn);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(Conv1d),
    BatchNorm(BatchNorm1d),
    Relu,
    MaxPool(MaxPool1d),
    Residual(Box<ResBlock>),
    GlobalAvgPool,
    Dense(Dense),
    Softmax,
}

#[derive(Debug, Clone)]
struct ResCache {
    c1: ConvCache,
    b1: BnCache,
    r1: Tensor,
    c2: ConvCache,
    b2: BnCache,
    short: Option<(ConvCache, BnCache)>,
    out: Tensor,
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(ConvCache),
    BatchNorm(BnCache),
    Relu(Tensor),
    MaxPool(PoolCache),
    Residual(Box<ResCache>),
    GlobalAvgPool(Vec<usize>),
    Dense(Tensor),
    Softmax(Tensor),
}

/// How batch statistics feed the running ones during a training pass.
#[derive(Debug, Clone, Copy, PartialEq)]
enum StatUpdate {
    Momentum,
    Replace,
}

fn forward_layer(layer: &Layer, x: &Tensor, mode: Mode, stats: &mut Vec<BatchStats>) -> Result<(Tensor, Cache)> {
    Ok(match layer {
        Layer::Conv(c) => {
            let (y, cache) = c.forward(x)?;
            (y, Cache::Conv(cache))
        }
        Layer::BatchNorm(bn) => {
            let (y, cache, s) = bn.forward(x, mode)?;
            stats.extend(s);
            (y, Cache::BatchNorm(cache))
        }
        Layer::Relu => {
            let y = relu_forward(x);
            (y.clone(), Cache::Relu(y))
        }
        Layer::MaxPool(p) => {
            let (y, cache) = p.forward(x)?;
            (y, Cache::MaxPool(cache))
        }
        Layer::Residual(b) => {
            let (h, c1) = b.conv1.forward(x)?;
            let (h, b1, s1) = b.bn1.forward(&h, mode)?;
            let r1 = relu_forward(&h);
            let (h, c2) = b.conv2.forward(&r1)?;
            let (mut h, b2, s2) = b.bn2.forward(&h, mode)?;
            stats.extend(s1);
            stats.extend(s2);
            let short = match &b.shortcut {
                Some((conv, bn)) => {
                    let (s, cc) = conv.forward(x)?;
                    let (s, bc, s3) = bn.forward(&s, mode)?;
                    stats.extend(s3);
                    h.add_scaled(&s, 1.0)?;
                    Some((cc, bc))
                }
                None => {
                    h.add_scaled(x, 1.0)?;
                    None
                }
            };
            let out = relu_forward(&h);
            (out.clone(), Cache::Residual(Box::new(ResCache { c1, b1, r1, c2, b2, short, out })))
        }
        Layer::GlobalAvgPool => (gap_forward(x)?, Cache::GlobalAvgPool(x.shape().to_vec())),
        Layer::Dense(d) => (d.forward(x)?, Cache::Dense(x.clone())),
        Layer::Softmax => {
            let y = softmax_forward(x)?;
            (y.clone(), Cache::Softmax(y))
        }
    })
}

fn backward_layer(layer: &mut Layer, grad: &Tensor, cache: &Cache) -> Result<Tensor> {
    match (layer, cache) {
        (Layer::Conv(c), Cache::Conv(cache)) => c.backward(grad, cache),
        (Layer::BatchNorm(bn), Cache::BatchNorm(cache)) => bn.backward(grad, cache),
        (Layer::Relu, Cache::Relu(out)) => relu_backward(grad, out),
        (Layer::MaxPool(p), Cache::MaxPool(cache)) => p.backward(grad, cache),
        (Layer::Residual(b), Cache::Residual(c)) => {
            let g = relu_backward(grad, &c.out)?;
            let gx_short = match (&mut b.shortcut, &c.short) {
                (Some((conv, bn)), Some((cc, bc))) => {
                    let gs = bn.backward(&g, bc)?;
                    conv.backward(&gs, cc)?
                }
                _ => g.clone(),
            };
            let gh = b.bn2.backward(&g, &c.b2)?;
            let gh = b.conv2.backward(&gh, &c.c2)?;
            let gh = relu_backward(&gh, &c.r1)?;
            let gh = b.bn1.backward(&gh, &c.b1)?;
            let mut gx = b.conv1.backward(&gh, &c.c1)?;
            gx.add_scaled(&gx_short, 1.0)?;
            Ok(gx)
        }
        (Layer::GlobalAvgPool, Cache::GlobalAvgPool(shape)) => gap_backward(grad, shape),
        (Layer::Dense(d), Cache::Dense(input)) => d.backward(grad, input),
        (Layer::Softmax, Cache::Softmax(out)) => softmax_backward(grad, out),
        _ => Err(Error::Shape("cache does not match layer".into())),
    }
}

fn layer_params(layer: &Layer) -> Vec<&Param> {
    match layer {
        Layer::Conv(c) => std::iter::once(&c.weight).chain(c.bias.as_ref()).collect(),
        Layer::BatchNorm(bn) => vec![&bn.gamma, &bn.beta],
        Layer::Residual(b) => {
            let mut v = vec![&b.conv1.weight, &b.bn1.gamma, &b.bn1.beta, &b.conv2.weight, &b.bn2.gamma, &b.bn2.beta];
            if let Some((c, bn)) = &b.shortcut {
                v.extend([&c.weight, &bn.gamma, &bn.beta]);
            }
            v
        }
        Layer::Dense(d) => vec![&d.weight, &d.bias],
        _ => Vec::new(),
    }
}

fn layer_params_mut(layer: &mut Layer) -> Vec<&mut Param> {
    match layer {
        Layer::Conv(c) => std::iter::once(&mut c.weight).chain(c.bias.as_mut()).collect(),
        Layer::BatchNorm(bn) => vec![&mut bn.gamma, &mut bn.beta],
        Layer::Residual(b) => {
            let b = &mut **b;
            let mut v = vec![
                &mut b.conv1.weight,
                &mut b.bn1.gamma,
                &mut b.bn1.beta,
                &mut b.conv2.weight,
                &mut b.bn2.gamma,
                &mut b.bn2.beta,
            ];
            if let Some((c, bn)) = &mut b.shortcut {
                v.extend([&mut c.weight, &mut bn.gamma, &mut bn.beta]);
            }
            v
        }
        Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
        _ => Vec::new(),
    }
}

fn layer_norms_mut(layer: &mut Layer) -> Vec<&mut BatchNorm1d> {
    match layer {
        Layer::BatchNorm(bn) => vec![bn],
        Layer::Residual(b) => b.norms_mut(),
        _ => Vec::new(),
    }
}

/// Sequential network with a recorded tape for reverse mode.
#[derive(Debug, Clone)]
pub struct ModelGraph {
    arch: Arch,
    /// Per-sample input shape.
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    mode: Mode,
    tape: Option<Vec<Cache>>,
}

/// Same architecture and the same parameter and buffer values. Gradients,
/// mode and the tape are not part of a model's identity.
impl PartialEq for ModelGraph {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.input_shape == other.input_shape && self.state() == other.state()
    }
}

pub fn build_feature_extractor(cfg: &FeConfig, seed: u64) -> Result<ModelGraph> {
    build_feature_extractor_on_stream(cfg, seed, crate::rng::streams::INIT_FE)
}

pub(crate) fn build_feature_extractor_on_stream(cfg: &FeConfig, seed: u64, stream: u64) -> Result<ModelGraph> {
    if cfg.widths.is_empty() || cfg.widths.len() != cfg.blocks.len() {
        return Err(Error::Shape("widths and blocks must be nonempty and of equal length".into()));
    }
    if cfg.input_channels == 0
        || cfg.stem_channels == 0
        || cfg.stem_kernel == 0
        || cfg.stem_stride == 0
        || cfg.feature_len == 0
        || cfg.widths.contains(&0)
        || cfg.blocks.contains(&0)
    {
        return Err(Error::Shape("architecture sizes must be positive".into()));
    }
    let mut rng = stream_rng(seed, stream);
    let mut layers = vec![
        Layer::Conv(Conv1d::new(
            "stem.conv",
            cfg.input_channels,
            cfg.stem_channels,
            cfg.stem_kernel,
            cfg.stem_stride,
            cfg.stem_kernel / 2,
            false,
            &mut rng,
        )),
        Layer::BatchNorm(BatchNorm1d::new("stem.bn", cfg.stem_channels)),
        Layer::Relu,
    ];
    if cfg.stem_pool {
        layers.push(Layer::MaxPool(MaxPool1d { kernel: 3, stride: 2, padding: 1 }));
    }
    let mut cin = cfg.stem_channels;
    for (s, (&w, &n)) in cfg.widths.iter().zip(&cfg.blocks).enumerate() {
        for b in 0..n {
            let stride = if s > 0 && b == 0 { 2 } else { 1 };
            layers.push(Layer::Residual(Box::new(ResBlock::new(
                &format!("stage{}.block{b}", s + 1),
                cin,
                w,
                stride,
                &mut rng,
            ))));
            cin = w;
        }
    }
    layers.push(Layer::GlobalAvgPool);
    if cfg.feature_len != cin {
        layers.push(Layer::Dense(Dense::new("proj", cin, cfg.feature_len, &mut rng)));
    }
    let model = ModelGraph {
        arch: Arch::FeatureExtractor(cfg.clone()),
        input_shape: vec![cfg.input_channels, cfg.input_len],
        layers,
        mode: Mode::Train,
        tape: None,
    };
    model.output_shape()?;
    Ok(model)
}

pub fn build_head(feature_len: usize, classes: usize, seed: u64, stream: u64) -> Result<ModelGraph> {
    build_head_with(&HeadConfig { inputs: feature_len, hidden: DEFAULT_HEAD_HIDDEN, classes }, seed, stream)
}

pub fn build_head_with(cfg: &HeadConfig, seed: u64, stream: u64) -> Result<ModelGraph> {
    if cfg.inputs == 0 || cfg.hidden == 0 || cfg.classes == 0 {
        return Err(Error::Shape("head sizes must be positive".into()));
    }
    let mut rng = stream_rng(seed, stream);
    Ok(ModelGraph {
        arch: Arch::Head(cfg.clone()),
        input_shape: vec![cfg.inputs],
        layers: vec![
            Layer::Dense(Dense::new("fc1", cfg.inputs, cfg.hidden, &mut rng)),
            Layer::Relu,
            Layer::Dense(Dense::new("fc2", cfg.hidden, cfg.classes, &mut rng)),
            Layer::Softmax,
        ],
        mode: Mode::Train,
        tape: None,
    })
}

pub fn build_model(arch: &Arch, seed: u64, stream: u64) -> Result<ModelGraph> {
    match arch {
        Arch::FeatureExtractor(cfg) => build_feature_extractor_on_stream(cfg, seed, stream),
        Arch::Head(cfg) => build_head_with(cfg, seed, stream),
    }
}

impl ModelGraph {
    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Per-sample output shape, checked layer by layer.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = match layer {
                Layer::Conv(c) => {
                    if shape.len() != 2 || shape[0] != c.in_channels {
                        return Err(Error::Shape(format!("conv cannot take {shape:?}")));
                    }
                    vec![c.out_channels, c.out_len(shape[1])?]
                }
                Layer::BatchNorm(_) | Layer::Relu | Layer::Softmax => shape,
                Layer::MaxPool(p) => vec![shape[0], p.out_len(shape[1])?],
                Layer::Residual(b) => {
                    if shape.len() != 2 || shape[0] != b.conv1.in_channels {
                        return Err(Error::Shape(format!("residual block cannot take {shape:?}")));
                    }
                    vec![b.conv2.out_channels, b.conv1.out_len(shape[1])?]
                }
                Layer::GlobalAvgPool => vec![shape[0]],
                Layer::Dense(d) => {
                    if shape != [d.inputs] {
                        return Err(Error::Shape(format!("dense cannot take {shape:?}")));
                    }
                    vec![d.outputs]
                }
            };
        }
        Ok(shape)
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().map(|s| s.iter().product()).unwrap_or(0)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if &x.shape()[1.min(x.shape().len())..] != self.input_shape.as_slice() || x.rows() == 0 {
            return Err(Error::Shape(format!(
                "model expects [N, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(&mut self, x: &Tensor, update: StatUpdate) -> Result<Tensor> {
        self.check_input(x)?;
        let mode = self.mode;
        let mut tape = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in self.layers.iter_mut() {
            let mut stats = Vec::new();
            let (y, cache) = forward_layer(layer, &h, mode, &mut stats)?;
            for (bn, s) in layer_norms_mut(layer).into_iter().zip(&stats) {
                match update {
                    StatUpdate::Momentum => bn.update_running(s),
                    StatUpdate::Replace => {
                        bn.running_mean.data_mut().copy_from_slice(&s.0);
                        bn.running_var.data_mut().copy_from_slice(&s.1);
                    }
                }
            }
            tape.push(cache);
            h = y;
        }
        if !h.is_finite() {
            return Err(Error::NonFiniteOutput("model output".into()));
        }
        self.tape = Some(tape);
        Ok(h)
    }

    /// Forward pass in the current mode, recording the tape for
    /// [`ModelGraph::backward`]. Training mode updates batch-norm running
    /// statistics.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.run(x, StatUpdate::Momentum)
    }

    /// Inference-mode forward; pure and safe to share across threads.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        let mut stats = Vec::new();
        for layer in &self.layers {
            h = forward_layer(layer, &h, Mode::Inference, &mut stats)?.0;
        }
        if !h.is_finite() {
            return Err(Error::NonFiniteOutput("model output".into()));
        }
        Ok(h)
    }

    /// Sets every running statistic to the statistics of `x` (a training-mode
    /// pass with full replacement), so inference on `x` reproduces training.
    pub fn freeze_batch_norm(&mut self, x: &Tensor) -> Result<()> {
        let mode = self.mode;
        self.mode = Mode::Train;
        let r = self.run(x, StatUpdate::Replace);
        self.mode = mode;
        self.tape = None;
        r.map(|_| ())
    }

    /// Accumulates parameter gradients for `grad` (gradient of the loss with
    /// respect to the last forward output) and returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let tape = self.tape.take().ok_or(Error::NoForward)?;
        let mut g = grad.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&tape).rev() {
            g = backward_layer(layer, &g, cache)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(layer_params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(layer_params_mut).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Running batch-norm statistics as named tensors.
    pub fn buffers(&self) -> Vec<(String, &Tensor)> {
        let mut norms: Vec<&BatchNorm1d> = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::BatchNorm(bn) => norms.push(bn),
                Layer::Residual(b) => {
                    norms.extend([&b.bn1, &b.bn2]);
                    norms.extend(b.shortcut.as_ref().map(|(_, bn)| bn));
                }
                _ => {}
            }
        }
        norms
            .into_iter()
            .flat_map(|bn| {
                [
                    (format!("{}.running_mean", bn.name()), &bn.running_mean),
                    (format!("{}.running_var", bn.name()), &bn.running_var),
                ]
            })
            .collect()
    }

    /// Parameters then buffers, in a fixed order.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut v: Vec<(String, Tensor)> = self.params().into_iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        v.extend(self.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        v
    }

    pub fn load_state(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let own = self.state();
        if own.len() != state.len() {
            return Err(Error::ArchMismatch(format!("expected {} tensors, got {}", own.len(), state.len())));
        }
        for ((n, t), (m, u)) in own.iter().zip(state) {
            if n != m || t.shape() != u.shape() {
                return Err(Error::ArchMismatch(format!("tensor {m} {:?} does not fit {n} {:?}", u.shape(), t.shape())));
            }
            if !u.is_finite() {
                return Err(Error::Integrity(format!("tensor {m} has non-finite values")));
            }
        }
        let mut it = state.iter();
        for p in self.params_mut() {
            p.value = it.next().expect("length checked").1.clone();
        }
        for layer in self.layers.iter_mut() {
            for bn in layer_norms_mut(layer) {
                bn.running_mean = it.next().expect("length checked").1.clone();
                bn.running_var = it.next().expect("length checked").1.clone();
            }
        }
        Ok(())
    }

    /// SHA-256 over tensor names and little-endian values of the full state.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.state() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
