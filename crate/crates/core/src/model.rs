//! Construction of the ANN baseline, the SNN baseline and every hybrid
//! `S_kA_m` variant from a declarative spec.
//!
//! A hybrid replaces the first `k` of five convolutions with spiking ones,
//! places the accumulator right after them and keeps a three-layer
//! non-spiking dense head. With `k = 0` the accumulator sits at the very
//! front of the network.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::accumulator::AccumulatorConfig;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::scalar::Scalar;
use crate::spiking::{self, CubaLifParams, SpikeMode, SpikePoolMode, SpikeTensor};
use crate::tensor::Tensor;

pub const CONV_LAYERS: usize = 5;

/// Which of the seven studied networks to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Architecture {
    /// Five non-spiking convolutions behind a front accumulator.
    Ann,
    /// `k` spiking convolutions, `5 - k` non-spiking ones.
    Hybrid(u8),
    /// Spiking convolutions and a spiking dense head, no accumulator.
    Snn,
}

impl Architecture {
    pub const ALL: [Architecture; 7] = [
        Architecture::Ann,
        Architecture::Hybrid(1),
        Architecture::Hybrid(2),
        Architecture::Hybrid(3),
        Architecture::Hybrid(4),
        Architecture::Hybrid(5),
        Architecture::Snn,
    ];

    pub fn spiking_convs(self) -> usize {
        match self {
            Architecture::Ann => 0,
            Architecture::Hybrid(k) => usize::from(k),
            Architecture::Snn => CONV_LAYERS,
        }
    }

    pub fn has_accumulator(self) -> bool {
        !matches!(self, Architecture::Snn)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Architecture::Ann => write!(f, "ann"),
            Architecture::Hybrid(k) => write!(f, "s{k}a{}", CONV_LAYERS as u8 - k),
            Architecture::Snn => write!(f, "snn"),
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ann" => return Ok(Architecture::Ann),
            "snn" => return Ok(Architecture::Snn),
            _ => {}
        }
        let b = lower.as_bytes();
        if b.len() == 4 && b[0] == b's' && b[2] == b'a' && b[1].is_ascii_digit() && b[3].is_ascii_digit() {
            let (k, m) = (b[1] - b'0', b[3] - b'0');
            if (1..=5).contains(&k) && usize::from(k + m) == CONV_LAYERS {
                return Ok(Architecture::Hybrid(k));
            }
        }
        Err(Error::Config(format!(
            "unknown model `{s}`; expected ann, s1a4, s2a3, s3a2, s4a1, s5a0 or snn"
        )))
    }
}

impl Serialize for Architecture {
    fn serialize<Se: Serializer>(&self, s: Se) -> std::result::Result<Se::Ok, Se::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Architecture {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_kernel() -> usize {
    3
}
fn default_pools() -> Vec<bool> {
    vec![true, true, true, false, true]
}
fn default_dense() -> Vec<usize> {
    vec![256, 128]
}

/// Declarative description of one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridModelSpec {
    pub model: Architecture,
    pub interval: usize,
    /// `[C, H, W, T]` of the event input.
    pub input_shape: [usize; 4],
    pub channel_schedule: Vec<usize>,
    pub classes: usize,
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    /// 2×2 pooling after each convolution.
    #[serde(default = "default_pools")]
    pub pool_after: Vec<bool>,
    /// Hidden widths of the dense head; the last layer has `classes` units.
    #[serde(default = "default_dense")]
    pub dense_hidden: Vec<usize>,
    #[serde(default)]
    pub lif: CubaLifParams,
    #[serde(default)]
    pub spike_pool: SpikePoolMode,
}

impl HybridModelSpec {
    /// Canonical schedule at desk scale, `(2, 32, 32, 20)`.
    pub fn canonical(model: Architecture, interval: usize, classes: usize) -> Self {
        Self {
            model,
            interval,
            input_shape: [2, 32, 32, 20],
            channel_schedule: vec![16, 32, 64, 64, 128],
            classes,
            kernel_size: default_kernel(),
            pool_after: default_pools(),
            dense_hidden: default_dense(),
            lif: CubaLifParams::default(),
            spike_pool: SpikePoolMode::Or,
        }
    }

    /// Canonical schedule at full event-camera resolution, `(2, 128, 128, 50)`.
    pub fn full_scale(model: Architecture, interval: usize, classes: usize) -> Self {
        Self {
            input_shape: [2, 128, 128, 50],
            ..Self::canonical(model, interval, classes)
        }
    }

    pub fn timesteps(&self) -> usize {
        self.input_shape[3]
    }

    pub fn accumulator(&self) -> Result<Option<AccumulatorConfig>> {
        if !self.model.has_accumulator() {
            return Ok(None);
        }
        AccumulatorConfig::new(self.interval, self.timesteps()).map(Some)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Linear,
    Spiking,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        pool: bool,
        spiking: bool,
    },
    Accumulate(AccumulatorConfig),
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    /// Sums output spikes over time to form logits.
    SpikeCountReadout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

impl LayerSpec {
    pub fn is_spiking(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv { spiking: true, .. }
                | LayerKind::Dense {
                    activation: Activation::Spiking,
                    ..
                }
        )
    }

    /// Parameter tensors as `(name, shape)`.
    pub fn params(&self) -> Vec<(String, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                (format!("{}.weight", self.name), vec![out_channels, in_channels, kernel, kernel]),
                (format!("{}.bias", self.name), vec![out_channels]),
            ],
            LayerKind::Dense { inputs, outputs, .. } => vec![
                (format!("{}.weight", self.name), vec![outputs, inputs]),
                (format!("{}.bias", self.name), vec![outputs]),
            ],
            _ => vec![],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Neurons of a spiking layer (before any pooling).
    pub fn neurons(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                out_channels, spiking: true, ..
            } => out_channels * self.in_shape[1] * self.in_shape[2],
            LayerKind::Dense {
                outputs,
                activation: Activation::Spiking,
                ..
            } => outputs,
            _ => 0,
        }
    }

    /// Multiply-accumulates for one evaluation (one timestep for spiking
    /// layers).
    pub fn macs_per_step(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => out_channels * in_channels * kernel * kernel * self.in_shape[1] * self.in_shape[2],
            LayerKind::Dense { inputs, outputs, .. } => inputs * outputs,
            _ => 0,
        }
    }

    /// Synaptic targets reached by one presynaptic spike.
    pub fn fan_out(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                out_channels, kernel, ..
            } => out_channels * kernel * kernel,
            LayerKind::Dense { outputs, .. } => outputs,
            _ => 0,
        }
    }
}

/// Immutable layer plan of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct BuiltModel {
    pub spec: HybridModelSpec,
    pub layers: Vec<LayerSpec>,
    /// Index into `layers` of the accumulator, if any.
    pub accumulator_position: Option<usize>,
    pub parameter_count: usize,
}

/// Neurons per spiking layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerCensus {
    pub layer: String,
    pub neurons: usize,
}

fn build_err(layer: &str, message: impl Into<String>) -> Error {
    Error::Build {
        layer: layer.to_string(),
        message: message.into(),
    }
}

/// Builds the layer plan and checks the shape chain end to end.
pub fn build(spec: &HybridModelSpec) -> Result<BuiltModel> {
    if spec.channel_schedule.len() != CONV_LAYERS || spec.pool_after.len() != CONV_LAYERS {
        return Err(build_err(
            "spec",
            format!("channel_schedule and pool_after need {CONV_LAYERS} entries"),
        ));
    }
    if spec.dense_hidden.len() != 2 {
        return Err(build_err("spec", "dense head has exactly two hidden layers"));
    }
    if spec.classes < 2 {
        return Err(build_err("spec", "need at least two classes"));
    }
    if spec.kernel_size % 2 == 0 {
        return Err(build_err("spec", "kernel size must be odd"));
    }
    if spec.input_shape.contains(&0) || spec.channel_schedule.contains(&0) || spec.dense_hidden.contains(&0) {
        return Err(build_err("spec", "sizes must be positive"));
    }
    if let Architecture::Hybrid(k) = spec.model {
        if !(1..=5).contains(&k) {
            return Err(build_err("spec", format!("spiking convolution count {k} outside 1..=5")));
        }
    }
    spec.lif.validate()?;
    let accumulator = spec.accumulator().map_err(|e| build_err("accumulate", e.to_string()))?;
    let k = spec.model.spiking_convs();
    let [c0, h0, w0, t] = spec.input_shape;

    let mut layers = Vec::new();
    let mut accumulator_position = None;
    let mut shape = vec![c0, h0, w0, t];
    let push_acc = |layers: &mut Vec<LayerSpec>, shape: &mut Vec<usize>, pos: &mut Option<usize>| {
        let cfg = accumulator.expect("hybrid has an accumulator");
        let out = vec![cfg.output_channels(shape[0]), shape[1], shape[2]];
        *pos = Some(layers.len());
        layers.push(LayerSpec {
            name: "accumulate".into(),
            kind: LayerKind::Accumulate(cfg),
            in_shape: shape.clone(),
            out_shape: out.clone(),
        });
        *shape = out;
    };

    if k == 0 {
        push_acc(&mut layers, &mut shape, &mut accumulator_position);
    }
    let pad = spec.kernel_size / 2;
    for i in 0..CONV_LAYERS {
        let name = format!("conv{}", i + 1);
        let spiking = i < k;
        let (h, w) = (shape[1], shape[2]);
        if spec.kernel_size > h + 2 * pad || spec.kernel_size > w + 2 * pad {
            return Err(build_err(&name, format!("kernel larger than padded {h}×{w} input")));
        }
        let pool = spec.pool_after[i];
        if pool && (h % 2 != 0 || w % 2 != 0) {
            return Err(build_err(&name, format!("cannot pool odd {h}×{w} map")));
        }
        let out_c = spec.channel_schedule[i];
        let (oh, ow) = if pool { (h / 2, w / 2) } else { (h, w) };
        let mut out = vec![out_c, oh, ow];
        if spiking {
            out.push(t);
        }
        layers.push(LayerSpec {
            name,
            kind: LayerKind::Conv {
                in_channels: shape[0],
                out_channels: out_c,
                kernel: spec.kernel_size,
                pad,
                pool,
                spiking,
            },
            in_shape: shape.clone(),
            out_shape: out.clone(),
        });
        shape = out;
        if i + 1 == k && spec.model.has_accumulator() {
            push_acc(&mut layers, &mut shape, &mut accumulator_position);
        }
    }

    let snn = spec.model == Architecture::Snn;
    let flat: usize = if snn {
        shape[..3].iter().product()
    } else {
        shape.iter().product()
    };
    let flat_shape = if snn { vec![flat, t] } else { vec![flat] };
    layers.push(LayerSpec {
        name: "flatten".into(),
        kind: LayerKind::Flatten,
        in_shape: shape.clone(),
        out_shape: flat_shape.clone(),
    });
    let widths = [spec.dense_hidden[0], spec.dense_hidden[1], spec.classes];
    let mut inputs = flat;
    for (i, &outputs) in widths.iter().enumerate() {
        let activation = if snn {
            Activation::Spiking
        } else if i + 1 < widths.len() {
            Activation::Relu
        } else {
            Activation::Linear
        };
        let in_shape = if snn { vec![inputs, t] } else { vec![inputs] };
        let out_shape = if snn { vec![outputs, t] } else { vec![outputs] };
        layers.push(LayerSpec {
            name: format!("fc{}", i + 1),
            kind: LayerKind::Dense {
                inputs,
                outputs,
                activation,
            },
            in_shape,
            out_shape,
        });
        inputs = outputs;
    }
    if snn {
        layers.push(LayerSpec {
            name: "readout".into(),
            kind: LayerKind::SpikeCountReadout,
            in_shape: vec![spec.classes, t],
            out_shape: vec![spec.classes],
        });
    }
    let parameter_count = layers.iter().map(LayerSpec::parameter_count).sum();
    Ok(BuiltModel {
        spec: spec.clone(),
        layers,
        accumulator_position,
        parameter_count,
    })
}

/// Exact number of trainable scalars.
pub fn count_parameters(model: &BuiltModel) -> usize {
    model.layers.iter().map(LayerSpec::parameter_count).sum()
}

/// Neuron counts of every spiking layer, in network order.
pub fn neuron_census(model: &BuiltModel) -> Vec<LayerCensus> {
    model
        .layers
        .iter()
        .filter(|l| l.is_spiking())
        .map(|l| LayerCensus {
            layer: l.name.clone(),
            neurons: l.neurons(),
        })
        .collect()
}

/// Named parameter tensors in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<S> {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<S>>,
}

const SPIKING_INIT_GAIN: f64 = 1.0;

fn name_stream(name: &str) -> u64 {
    // FNV-1a; gives each tensor its own stream so shared layers of
    // different variants start from identical weights.
    name.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl<S: Scalar> ParamStore<S> {
    /// Uniform fan-in scaled initialisation; biases start at zero.
    pub fn init(model: &BuiltModel, seed: u64) -> Result<Self> {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for layer in &model.layers {
            for (name, shape) in layer.params() {
                let t = if name.ends_with(".bias") {
                    Tensor::zeros(&shape)?
                } else {
                    let fan_in: usize = shape[1..].iter().product();
                    let gain = if layer.is_spiking() { SPIKING_INIT_GAIN } else { 1.0 };
                    let bound = gain * (6.0 / fan_in as f64).sqrt();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(name_stream(&name));
                    Tensor::from_fn(&shape, |_| S::of(rng.gen_range(-bound..bound)))?
                };
                names.push(name);
                tensors.push(t);
            }
        }
        Ok(Self { names, tensors })
    }

    pub fn from_named(model: &BuiltModel, named: Vec<(String, Tensor<S>)>) -> Result<Self> {
        let expected: Vec<(String, Vec<usize>)> = model.layers.iter().flat_map(LayerSpec::params).collect();
        if expected.len() != named.len() {
            return Err(Error::Config(format!(
                "model has {} parameter tensors, weights provide {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || es.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "weight `{n}` {:?} does not match `{en}` {es:?}",
                    t.shape()
                )));
            }
        }
        let (names, tensors) = named.into_iter().unzip();
        Ok(Self { names, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Registers every tensor as a trainable leaf of `g`.
    pub fn register(&self, g: &mut Graph<S>) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }
}

/// Handles into a recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub logits: Var,
    pub accumulator_input: Option<Var>,
    pub accumulator_output: Option<Var>,
    /// Output of every spiking layer, after pooling.
    pub spike_outputs: Vec<Var>,
}

impl BuiltModel {
    pub fn input_shape(&self) -> [usize; 4] {
        self.spec.input_shape
    }

    /// Records the network on `g`. `params` must come from
    /// [`ParamStore::register`].
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], input: Var, mode: SpikeMode) -> Result<ForwardPass> {
        if g.value(input).shape() != self.spec.input_shape {
            return Err(Error::shapes("model input", g.value(input).shape(), &self.spec.input_shape));
        }
        let mut x = input;
        let mut p = params.iter().copied();
        let mut next = |name: &str| p.next().ok_or_else(|| build_err(name, "missing parameter"));
        let mut pass = ForwardPass {
            logits: input,
            accumulator_input: None,
            accumulator_output: None,
            spike_outputs: Vec::new(),
        };
        for layer in &self.layers {
            x = match &layer.kind {
                LayerKind::Conv { pad, pool, spiking, .. } => {
                    let (w, b) = (next(&layer.name)?, next(&layer.name)?);
                    let y = g.conv2d(x, w, 1, *pad)?;
                    let y = g.add_bias(y, b)?;
                    if *spiking {
                        let s = g.lif(y, &self.spec.lif, mode, &layer.name)?;
                        let s = if *pool { g.spike_pool(s, self.spec.spike_pool)? } else { s };
                        pass.spike_outputs.push(s);
                        s
                    } else {
                        let y = g.relu(y)?;
                        if *pool {
                            g.maxpool2(y)?
                        } else {
                            y
                        }
                    }
                }
                LayerKind::Accumulate(cfg) => {
                    pass.accumulator_input = Some(x);
                    let a = g.accumulate(x, cfg)?;
                    pass.accumulator_output = Some(a);
                    a
                }
                LayerKind::Flatten => g.reshape(x, &layer.out_shape)?,
                LayerKind::Dense { activation, outputs, .. } => {
                    let (w, b) = (next(&layer.name)?, next(&layer.name)?);
                    let spiking = *activation == Activation::Spiking;
                    let col = if spiking {
                        x
                    } else {
                        let n = g.value(x).numel();
                        g.reshape(x, &[n, 1])?
                    };
                    let y = g.matmul(w, col)?;
                    let y = g.add_bias(y, b)?;
                    match activation {
                        Activation::Spiking => {
                            let s = g.lif(y, &self.spec.lif, mode, &layer.name)?;
                            pass.spike_outputs.push(s);
                            s
                        }
                        Activation::Relu => {
                            let r = g.relu(y)?;
                            g.reshape(r, &[*outputs])?
                        }
                        Activation::Linear => g.reshape(y, &[*outputs])?,
                    }
                }
                LayerKind::SpikeCountReadout => g.sum_last(x)?,
            };
        }
        pass.logits = x;
        Ok(pass)
    }

    /// Logits for one sample without retaining a graph for training.
    pub fn predict<S: Scalar>(&self, params: &ParamStore<S>, input: &SpikeTensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params
            .tensors
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<_>>()?;
        let x = g.constant(input.tensor().clone())?;
        let pass = self.forward(&mut g, &vars, x, SpikeMode::Binary)?;
        Ok(g.value(pass.logits).clone())
    }

    /// Runs the spiking layers only, measuring activity. Intermediate
    /// buffers are dropped as soon as the next layer has consumed them.
    pub fn probe_activity<S: Scalar>(&self, params: &ParamStore<S>, input: &SpikeTensor<S>) -> Result<Activity> {
        let mut x: Vec<S> = input.tensor().to_vec();
        let mut shape: Vec<usize> = input.tensor().shape().to_vec();
        let mut layers = Vec::new();
        let mut accumulator_input_spikes = None;
        let mut pi = 0;
        for layer in &self.layers {
            let n_params = layer.params().len();
            match &layer.kind {
                LayerKind::Accumulate(_) => {
                    accumulator_input_spikes = Some(count_nonzero(&x));
                    break;
                }
                LayerKind::Conv { spiking: false, .. } => break,
                LayerKind::Conv { pad, pool, .. } => {
                    let (w, b) = (&params.tensors[pi], &params.tensors[pi + 1]);
                    let geom = spiking::conv_geom(&shape, w.shape(), 1, *pad)?;
                    let input_spikes = count_nonzero(&x);
                    let mut drive = kernels::conv2d_forward(&x, w.data(), &geom);
                    spiking::add_channel_bias(&mut drive, b.data(), geom.filters)?;
                    let (s, _) = spiking::lif_sequence(&drive, geom.batch, &self.spec.lif, SpikeMode::Binary, &layer.name)?;
                    drop(drive);
                    let output_spikes = count_nonzero(&s);
                    let (oh, ow, f, t) = (geom.out_height(), geom.out_width(), geom.filters, geom.batch);
                    (x, shape) = if *pool {
                        let pooled = SpikeTensor::new(Tensor::from_vec(&[f, oh, ow, t], s)?)?;
                        let pooled = spiking::spike_pool_with(&pooled, self.spec.spike_pool)?;
                        let shape = pooled.tensor().shape().to_vec();
                        (pooled.tensor().to_vec(), shape)
                    } else {
                        (s, vec![f, oh, ow, t])
                    };
                    layers.push(LayerActivity {
                        layer: layer.name.clone(),
                        input_spikes,
                        output_spikes,
                        fan_out: layer.fan_out(),
                    });
                }
                LayerKind::Flatten => {
                    let t = *shape.last().unwrap();
                    shape = vec![x.len() / t, t];
                }
                LayerKind::Dense {
                    activation: Activation::Spiking,
                    inputs,
                    outputs,
                } => {
                    let (w, b) = (&params.tensors[pi], &params.tensors[pi + 1]);
                    let t = shape[1];
                    let input_spikes = count_nonzero(&x);
                    let mut y = vec![S::zero(); outputs * t];
                    kernels::gemm(*outputs, t, *inputs, w.data(), *inputs, &x, t, &mut y, t, false);
                    spiking::add_channel_bias(&mut y, b.data(), *outputs)?;
                    let (s, _) = spiking::lif_sequence(&y, t, &self.spec.lif, SpikeMode::Binary, &layer.name)?;
                    layers.push(LayerActivity {
                        layer: layer.name.clone(),
                        input_spikes,
                        output_spikes: count_nonzero(&s),
                        fan_out: layer.fan_out(),
                    });
                    x = s;
                    shape = vec![*outputs, t];
                }
                _ => {}
            }
            pi += n_params;
        }
        Ok(Activity {
            input_spikes: input.count(),
            layers,
            accumulator_input_spikes,
        })
    }
}

fn count_nonzero<S: Scalar>(x: &[S]) -> usize {
    x.iter().filter(|&&v| v != S::zero()).count()
}

/// Measured spiking activity of one forward pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Activity {
    pub input_spikes: usize,
    pub layers: Vec<LayerActivity>,
    /// Spikes entering the accumulator (`None` for the SNN baseline).
    pub accumulator_input_spikes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerActivity {
    pub layer: String,
    pub input_spikes: usize,
    pub output_spikes: usize,
    pub fan_out: usize,
}

impl LayerActivity {
    pub fn synaptic_events(&self) -> usize {
        self.input_spikes * self.fan_out
    }
}

impl Activity {
    /// Averages several probes element-wise (counts are rounded down).
    pub fn mean(probes: &[Activity]) -> Activity {
        let Some(first) = probes.first() else {
            return Activity::default();
        };
        let n = probes.len();
        let avg = |f: &dyn Fn(&Activity) -> usize| probes.iter().map(f).sum::<usize>() / n;
        Activity {
            input_spikes: avg(&|a| a.input_spikes),
            layers: (0..first.layers.len())
                .map(|i| LayerActivity {
                    layer: first.layers[i].layer.clone(),
                    input_spikes: avg(&|a| a.layers[i].input_spikes),
                    output_spikes: avg(&|a| a.layers[i].output_spikes),
                    fan_out: first.layers[i].fan_out,
                })
                .collect(),
            accumulator_input_spikes: first
                .accumulator_input_spikes
                .map(|_| avg(&|a| a.accumulator_input_spikes.unwrap_or(0))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.to_string().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!(Architecture::Hybrid(2).to_string(), "s2a3");
        assert!("s2a2".parse::<Architecture>().is_err());
        assert!("s0a5".parse::<Architecture>().is_err());
    }

    #[test]
    fn single_dense_layer_count() {
        let layer = LayerSpec {
            name: "fc".into(),
            kind: LayerKind::Dense {
                inputs: 10,
                outputs: 5,
                activation: Activation::Linear,
            },
            in_shape: vec![10],
            out_shape: vec![5],
        };
        assert_eq!(layer.parameter_count(), 55);
    }

    #[test]
    fn ann_has_front_accumulator() {
        let m = build(&HybridModelSpec::canonical(Architecture::Ann, 5, 3)).unwrap();
        assert_eq!(m.accumulator_position, Some(0));
        match m.layers[1].kind {
            LayerKind::Conv {
                in_channels, spiking, ..
            } => {
                assert_eq!(in_channels, 2 * 20 / 5);
                assert!(!spiking);
            }
            _ => panic!("conv1 expected"),
        }
        assert!(neuron_census(&m).is_empty());
    }

    #[test]
    fn s2a3_places_accumulator_between_conv2_and_conv3() {
        let m = build(&HybridModelSpec::canonical(Architecture::Hybrid(2), 5, 3)).unwrap();
        let names: Vec<_> = m.layers.iter().map(|l| l.name.as_str()).collect();
        assert_eq!(
            names,
            ["conv1", "conv2", "accumulate", "conv3", "conv4", "conv5", "flatten", "fc1", "fc2", "fc3"]
        );
        assert_eq!(m.accumulator_position, Some(2));
        assert_eq!(m.layers[2].in_shape, vec![32, 8, 8, 20]);
        assert_eq!(m.layers[2].out_shape, vec![128, 8, 8]);
        // 16·32·32 and 32·16·16 neurons
        let census = neuron_census(&m);
        assert_eq!(census.iter().map(|c| c.neurons).collect::<Vec<_>>(), vec![16384, 8192]);
    }

    #[test]
    fn snn_has_spiking_head_and_no_accumulator() {
        let m = build(&HybridModelSpec::canonical(Architecture::Snn, 7, 3)).unwrap();
        assert_eq!(m.accumulator_position, None);
        assert!(m.layers.iter().filter(|l| l.name.starts_with("fc")).all(LayerSpec::is_spiking));
        assert_eq!(m.layers.last().unwrap().kind, LayerKind::SpikeCountReadout);
    }

    #[test]
    fn bad_pool_is_named() {
        let mut spec = HybridModelSpec::canonical(Architecture::Hybrid(1), 5, 3);
        spec.input_shape = [2, 8, 8, 20];
        let err = build(&spec).unwrap_err();
        assert!(matches!(err, Error::Build { ref layer, .. } if layer == "conv5"), "{err}");
    }

    #[test]
    fn non_dividing_interval_is_rejected() {
        let err = build(&HybridModelSpec::canonical(Architecture::Hybrid(2), 7, 3)).unwrap_err();
        assert!(matches!(err, Error::Build { ref layer, .. } if layer == "accumulate"));
    }

    #[test]
    fn shared_layers_start_identical() {
        let a = build(&HybridModelSpec::canonical(Architecture::Hybrid(2), 5, 3)).unwrap();
        let b = build(&HybridModelSpec::canonical(Architecture::Hybrid(2), 10, 3)).unwrap();
        let pa = ParamStore::<f64>::init(&a, 9).unwrap();
        let pb = ParamStore::<f64>::init(&b, 9).unwrap();
        assert_eq!(pa.get("conv1.weight"), pb.get("conv1.weight"));
        assert_ne!(pa.get("conv3.weight").unwrap().shape(), pb.get("conv3.weight").unwrap().shape());
    }
}
