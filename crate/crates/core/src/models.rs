//! Victim and judge networks: a LeNet-style stack of three 5x5 convolutions
//! and a final linear classifier, in two variants sharing one parameter
//! layout. The ANN uses sigmoid activations; the SNN replaces each sigmoid
//! with an Integrate-and-Fire neuron stepped over T timesteps, averaging the
//! per-step classifier outputs.

use std::path::Path;
use std::rc::Rc;

use sha2::{Digest, Sha256};

use crate::bytesio::{ByteReader, ByteWriter};
use crate::codec::{ImageTensor, SpikeModality, SpikeTensor};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d, linear, one_hot, slice_outer, softmax_cross_entropy, spike_heaviside_atan, Graph,
    Tensor,
};
use crate::util::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ann,
    Snn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetMode {
    /// V <- V * (1 - s): membrane zeroed where the neuron fired.
    HardZero,
    /// V <- V - s * v_threshold.
    SoftSubtract,
}

/// Integrate-and-Fire neuron hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronParams {
    pub v_threshold: f64,
    pub reset_mode: ResetMode,
    /// Surrogate gradient width for the spike step.
    pub alpha: f64,
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams { v_threshold: 1.0, reset_mode: ResetMode::HardZero, alpha: 2.0 }
    }
}

impl NeuronParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_threshold > 0.0) {
            return Err(Error::validation(format!("v_threshold must be > 0, got {}", self.v_threshold)));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::validation(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    Linear { in_features: usize, out_features: usize },
}

/// Architecture description. The activation between layers is implied by
/// `kind`: sigmoid for Ann, IF neurons for Snn. `timesteps` is ignored by the
/// ANN forward.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<LayerSpec>,
    pub timesteps: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    /// The concrete LeNet variant used throughout: conv(C->12, 5x5, pad 2,
    /// stride 2) -> act -> conv(12->12, 5x5, pad 2, stride 2) -> act ->
    /// conv(12->12, 5x5, pad 2, stride 1) -> act -> flatten -> linear(->K).
    pub fn lenet(
        kind: ModelKind,
        in_channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        timesteps: usize,
    ) -> Result<ModelSpec> {
        let convs = [
            LayerSpec::Conv { in_ch: in_channels, out_ch: 12, kernel: 5, stride: 2, pad: 2 },
            LayerSpec::Conv { in_ch: 12, out_ch: 12, kernel: 5, stride: 2, pad: 2 },
            LayerSpec::Conv { in_ch: 12, out_ch: 12, kernel: 5, stride: 1, pad: 2 },
        ];
        let (mut h, mut w, mut c) = (height, width, in_channels);
        for l in &convs {
            let LayerSpec::Conv { out_ch, kernel, stride, pad, .. } = *l else { unreachable!() };
            let (oh, ow) = crate::tensor::conv_output_dims(h, w, kernel, stride, pad)
                .ok_or_else(|| {
                    Error::dimension(format!("input {height}x{width} too small for the LeNet stack"))
                })?;
            h = oh;
            w = ow;
            c = out_ch;
        }
        let mut layers = convs.to_vec();
        layers.push(LayerSpec::Linear { in_features: c * h * w, out_features: num_classes });
        let spec = ModelSpec {
            kind,
            in_channels,
            height,
            width,
            layers,
            timesteps,
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Shape-consistency of the whole stack; all conv layers must precede a
    /// single final linear layer whose width is num_classes.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("need at least two classes"));
        }
        if self.kind == ModelKind::Snn && self.timesteps == 0 {
            return Err(Error::validation("snn requires timesteps >= 1"));
        }
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::dimension("input dims must be positive"));
        }
        let n = self.layers.len();
        if n < 2 {
            return Err(Error::validation("model needs at least one conv and the final linear layer"));
        }
        let (mut c, mut h, mut w) = (self.in_channels, self.height, self.width);
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride, pad } => {
                    if i == n - 1 {
                        return Err(Error::validation("final layer must be linear"));
                    }
                    if in_ch != c {
                        return Err(Error::dimension(format!(
                            "layer {i} expects {in_ch} channels, gets {c}"
                        )));
                    }
                    let (oh, ow) = crate::tensor::conv_output_dims(h, w, kernel, stride, pad)
                        .ok_or_else(|| Error::dimension(format!("layer {i} kernel does not fit")))?;
                    c = out_ch;
                    h = oh;
                    w = ow;
                }
                LayerSpec::Linear { in_features, out_features } => {
                    if i != n - 1 {
                        return Err(Error::validation("only the final layer may be linear"));
                    }
                    if in_features != c * h * w {
                        return Err(Error::dimension(format!(
                            "final linear expects {in_features} features, stack produces {}",
                            c * h * w
                        )));
                    }
                    if out_features != self.num_classes {
                        return Err(Error::dimension(format!(
                            "final linear width {out_features} != num_classes {}",
                            self.num_classes
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parameter names and shapes in the canonical (stable) order: weight then
    /// bias per layer, layers in definition order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv { in_ch, out_ch, kernel, .. } => {
                    out.push((format!("conv{i}.weight"), vec![out_ch, in_ch, kernel, kernel]));
                    out.push((format!("conv{i}.bias"), vec![out_ch]));
                }
                LayerSpec::Linear { in_features, out_features } => {
                    out.push((format!("fc{i}.weight"), vec![out_features, in_features]));
                    out.push((format!("fc{i}.bias"), vec![out_features]));
                }
            }
        }
        out
    }

    /// Canonical architecture encoding, hashed into federated messages so
    /// parties can detect spec disagreement.
    pub fn descriptor_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.u8(match self.kind {
            ModelKind::Ann => 0,
            ModelKind::Snn => 1,
        });
        w.u32(self.in_channels as u32);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            match *l {
                LayerSpec::Conv { in_ch, out_ch, kernel, stride, pad } => {
                    w.u8(0);
                    for v in [in_ch, out_ch, kernel, stride, pad] {
                        w.u32(v as u32);
                    }
                }
                LayerSpec::Linear { in_features, out_features } => {
                    w.u8(1);
                    w.u32(in_features as u32);
                    w.u32(out_features as u32);
                }
            }
        }
        w.u32(self.timesteps as u32);
        w.u32(self.num_classes as u32);
        w.buf
    }

    pub fn spec_hash(&self) -> [u8; 32] {
        Sha256::digest(self.descriptor_bytes()).into()
    }
}

/// Named dense buffer; the unit both parameters and gradients are made of.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub tensors: Vec<NamedTensor>,
}

/// Per-layer gradients in the same order and naming as the ParameterSet they
/// were taken against.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub tensors: Vec<NamedTensor>,
}

impl GradientSet {
    /// Structural agreement (names and shapes, not values).
    pub fn matches_params(&self, params: &ParameterSet) -> Result<()> {
        if self.tensors.len() != params.tensors.len() {
            return Err(Error::usage(format!(
                "gradient set has {} tensors, parameters have {}",
                self.tensors.len(),
                params.tensors.len()
            )));
        }
        for (g, p) in self.tensors.iter().zip(&params.tensors) {
            if g.name != p.name || g.shape != p.shape {
                return Err(Error::usage(format!(
                    "gradient {}{:?} does not line up with parameter {}{:?}",
                    g.name, g.shape, p.name, p.shape
                )));
            }
        }
        Ok(())
    }

    pub fn l2_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

fn build_params(spec: &ModelSpec, seed: u64, bound_of: impl Fn(usize, usize) -> f64) -> Result<ParameterSet> {
    spec.validate()?;
    let mut rng = rng_for(seed, "model-init", 0);
    let mut tensors = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        let (fan_in, fan_out, wshape, bshape, wname, bname) = match *l {
            LayerSpec::Conv { in_ch, out_ch, kernel, .. } => (
                in_ch * kernel * kernel,
                out_ch * kernel * kernel,
                vec![out_ch, in_ch, kernel, kernel],
                vec![out_ch],
                format!("conv{i}.weight"),
                format!("conv{i}.bias"),
            ),
            LayerSpec::Linear { in_features, out_features } => (
                in_features,
                out_features,
                vec![out_features, in_features],
                vec![out_features],
                format!("fc{i}.weight"),
                format!("fc{i}.bias"),
            ),
        };
        let bound = bound_of(fan_in, fan_out);
        let mut draw = |shape: &Vec<usize>| -> Vec<f64> {
            use rand::Rng;
            (0..shape.iter().product::<usize>())
                .map(|_| rng.random_range(-bound..bound))
                .collect()
        };
        let wdata = draw(&wshape);
        let bdata = draw(&bshape);
        tensors.push(NamedTensor { name: wname, shape: wshape, data: wdata });
        tensors.push(NamedTensor { name: bname, shape: bshape, data: bdata });
    }
    Ok(ParameterSet { tensors })
}

/// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization per layer,
/// deterministic in the seed. This is the victim init the attacks assume.
pub fn build_lenet(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    build_params(spec, seed, |fan_in, _| 1.0 / (fan_in as f64).sqrt())
}

/// Glorot-uniform initialization with the sigmoid gain for the ANN. The
/// victim init above attenuates activation variance roughly 50x per sigmoid
/// conv, which leaves the deepest features input-independent and SGD stuck at
/// the class priors; judge training therefore starts from a variance
/// preserving draw instead. The spiking stack keeps gain 1: its binary
/// activations do not shrink signal the way a near-linear sigmoid does.
pub fn build_lenet_glorot(spec: &ModelSpec, seed: u64) -> Result<ParameterSet> {
    let gain = match spec.kind {
        ModelKind::Ann => 4.0,
        ModelKind::Snn => 1.0,
    };
    build_params(spec, seed, |fan_in, fan_out| {
        gain * (6.0 / (fan_in + fan_out) as f64).sqrt()
    })
}

/// Register every parameter as a graph leaf, preserving order.
pub fn register_params(graph: &Graph, params: &ParameterSet, requires_grad: bool) -> Result<Vec<Tensor>> {
    params
        .tensors
        .iter()
        .map(|t| graph.leaf(t.data.clone(), &t.shape, requires_grad))
        .collect()
}

fn check_param_count(spec: &ModelSpec, params: &[Tensor]) -> Result<()> {
    let want = spec.layers.len() * 2;
    if params.len() != want {
        return Err(Error::usage(format!(
            "expected {want} parameter tensors (weight+bias per layer), got {}",
            params.len()
        )));
    }
    Ok(())
}

/// ANN forward on the graph: conv/sigmoid stack, flatten, final linear.
/// Returns (logits [B,K], hidden activations).
pub fn ann_logits_traced(spec: &ModelSpec, params: &[Tensor], x: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
    check_param_count(spec, params)?;
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != self_dims(spec).0 || xs[2] != spec.height || xs[3] != spec.width {
        return Err(Error::dimension(format!(
            "input {xs:?} does not match spec [B,{},{},{}]",
            spec.in_channels, spec.height, spec.width
        )));
    }
    let b = xs[0];
    let mut cur = x.clone();
    let mut trace = Vec::new();
    for (i, l) in spec.layers.iter().enumerate() {
        match *l {
            LayerSpec::Conv { stride, pad, .. } => {
                let y = conv2d(&cur, &params[2 * i], &params[2 * i + 1], stride, pad)?;
                cur = y.sigmoid();
                trace.push(cur.clone());
            }
            LayerSpec::Linear { in_features, .. } => {
                let flat = cur.reshape(&[b, in_features])?;
                cur = linear(&flat, &params[2 * i], &params[2 * i + 1])?;
            }
        }
    }
    Ok((cur, trace))
}

pub fn ann_logits(spec: &ModelSpec, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
    Ok(ann_logits_traced(spec, params, x)?.0)
}

fn self_dims(spec: &ModelSpec) -> (usize, usize, usize) {
    (spec.in_channels, spec.height, spec.width)
}

/// Graph-level SNN input: either one static image shared by every timestep or
/// a full per-step rank-5 tensor.
#[derive(Clone)]
pub enum SnnGraphInput {
    /// [B,C,H,W], reused at every step (frame replication).
    Replicated { image: Tensor },
    /// [T,B,C,H,W], sliced per step.
    PerStep { spikes: Tensor },
}

/// SNN forward on the graph. Per step: V <- V + I, s = step(V - v_threshold)
/// with the ATan surrogate, reset per `reset_mode`; the final linear layer is
/// non-spiking and its per-step outputs are averaged over T. Membrane state
/// lives only inside this call (stateless between calls).
/// Returns (logits [B,K], every hidden spike tensor, step-major).
pub fn snn_logits_traced(
    spec: &ModelSpec,
    params: &[Tensor],
    input: &SnnGraphInput,
    neuron: &NeuronParams,
) -> Result<(Tensor, Vec<Tensor>)> {
    check_param_count(spec, params)?;
    neuron.validate()?;
    let steps = spec.timesteps.max(1);

    let b;
    let static_current: Option<Tensor>;
    match input {
        SnnGraphInput::Replicated { image } => {
            let s = image.shape();
            if s.len() != 4 || s[1] != spec.in_channels || s[2] != spec.height || s[3] != spec.width {
                return Err(Error::dimension(format!(
                    "replicated image {s:?} does not match spec [B,{},{},{}]",
                    spec.in_channels, spec.height, spec.width
                )));
            }
            b = s[0];
            // The first layer sees the same input every step; hoist its
            // convolution out of the time loop.
            let LayerSpec::Conv { stride, pad, .. } = spec.layers[0] else {
                return Err(Error::validation("first layer must be conv"));
            };
            static_current = Some(conv2d(image, &params[0], &params[1], stride, pad)?);
        }
        SnnGraphInput::PerStep { spikes } => {
            let s = spikes.shape();
            if s.len() != 5 || s[2] != spec.in_channels || s[3] != spec.height || s[4] != spec.width {
                return Err(Error::dimension(format!(
                    "spike tensor {s:?} does not match spec [T,B,{},{},{}]",
                    spec.in_channels, spec.height, spec.width
                )));
            }
            if s[0] != steps {
                return Err(Error::dimension(format!(
                    "spike tensor has {} timesteps, spec wants {steps}",
                    s[0]
                )));
            }
            b = s[1];
            static_current = None;
        }
    }

    let n_if = spec.layers.len() - 1;
    let mut membrane: Vec<Option<Tensor>> = vec![None; n_if];
    let mut acc: Option<Tensor> = None;
    let mut trace = Vec::new();

    for t in 0..steps {
        let mut spikes_in: Option<Tensor> = None;
        for (i, l) in spec.layers.iter().enumerate() {
            match *l {
                LayerSpec::Conv { stride, pad, .. } => {
                    let current = if i == 0 {
                        match (&static_current, input) {
                            (Some(c), _) => c.clone(),
                            (None, SnnGraphInput::PerStep { spikes }) => {
                                let xt = slice_outer(spikes, t)?;
                                conv2d(&xt, &params[0], &params[1], stride, pad)?
                            }
                            _ => unreachable!(),
                        }
                    } else {
                        conv2d(
                            spikes_in.as_ref().expect("conv after first layer has spike input"),
                            &params[2 * i],
                            &params[2 * i + 1],
                            stride,
                            pad,
                        )?
                    };
                    let v = match membrane[i].take() {
                        None => current,
                        Some(prev) => prev.add(&current)?,
                    };
                    let s = spike_heaviside_atan(&v.shift(-neuron.v_threshold), neuron.alpha)?;
                    membrane[i] = Some(match neuron.reset_mode {
                        ResetMode::HardZero => v.mul(&s.scale(-1.0).shift(1.0))?,
                        ResetMode::SoftSubtract => v.sub(&s.scale(neuron.v_threshold))?,
                    });
                    trace.push(s.clone());
                    spikes_in = Some(s);
                }
                LayerSpec::Linear { in_features, .. } => {
                    let flat = spikes_in
                        .as_ref()
                        .expect("linear layer has spike input")
                        .reshape(&[b, in_features])?;
                    let logits_t = linear(&flat, &params[2 * i], &params[2 * i + 1])?;
                    acc = Some(match acc.take() {
                        None => logits_t,
                        Some(prev) => prev.add(&logits_t)?,
                    });
                }
            }
        }
    }
    Ok((acc.expect("validated spec has a final linear layer").scale(1.0 / steps as f64), trace))
}

pub fn snn_logits(
    spec: &ModelSpec,
    params: &[Tensor],
    input: &SnnGraphInput,
    neuron: &NeuronParams,
) -> Result<Tensor> {
    Ok(snn_logits_traced(spec, params, input, neuron)?.0)
}

/// A model input at the value level.
#[derive(Clone, Debug)]
pub enum ModelInput {
    Image(ImageTensor),
    Spikes(SpikeTensor),
}

impl ModelInput {
    pub fn batch_size(&self) -> usize {
        match self {
            ModelInput::Image(i) => i.b,
            ModelInput::Spikes(s) => s.b,
        }
    }
}

/// Build the graph input for an SNN from a value-level spike tensor, using
/// the cheap shared-image path when the tensor is a replicated image.
pub fn snn_graph_input(graph: &Graph, st: &SpikeTensor) -> Result<SnnGraphInput> {
    match st.modality {
        SpikeModality::ReplicatedImage => {
            let img = st.slice_step(0)?;
            let t = graph.leaf(img.data, &[img.b, img.c, img.h, img.w], false)?;
            Ok(SnnGraphInput::Replicated { image: t })
        }
        _ => {
            let t = graph.leaf(
                st.data.clone(),
                &[st.t, st.b, st.c, st.h, st.w],
                false,
            )?;
            Ok(SnnGraphInput::PerStep { spikes: t })
        }
    }
}

/// Inference: logits as a flat [B*K] buffer.
pub fn forward_model(
    spec: &ModelSpec,
    params: &ParameterSet,
    input: &ModelInput,
    neuron: &NeuronParams,
) -> Result<Vec<f64>> {
    let graph = Graph::new();
    let p = register_params(&graph, params, false)?;
    let logits = match (spec.kind, input) {
        (ModelKind::Ann, ModelInput::Image(img)) => {
            let x = graph.leaf(img.data.clone(), &[img.b, img.c, img.h, img.w], false)?;
            ann_logits(spec, &p, &x)?
        }
        (ModelKind::Snn, ModelInput::Spikes(st)) => {
            let gi = snn_graph_input(&graph, st)?;
            snn_logits(spec, &p, &gi, neuron)?
        }
        _ => {
            return Err(Error::usage(
                "model kind and input modality disagree (ann wants images, snn wants spikes)",
            ))
        }
    };
    Ok(logits.to_vec())
}

/// Cross-entropy gradients of every parameter at one labelled input, with the
/// parameters left untouched. The victim-side computation the attacker
/// intercepts.
pub fn compute_victim_gradients(
    spec: &ModelSpec,
    params: &ParameterSet,
    input: &ModelInput,
    label: usize,
    neuron: &NeuronParams,
) -> Result<GradientSet> {
    if label >= spec.num_classes {
        return Err(Error::usage(format!(
            "label {label} out of range for {} classes",
            spec.num_classes
        )));
    }
    let graph = Graph::new();
    let p = register_params(&graph, params, true)?;
    let logits = match (spec.kind, input) {
        (ModelKind::Ann, ModelInput::Image(img)) => {
            let x = graph.leaf(img.data.clone(), &[img.b, img.c, img.h, img.w], false)?;
            ann_logits(spec, &p, &x)?
        }
        (ModelKind::Snn, ModelInput::Spikes(st)) => {
            let gi = snn_graph_input(&graph, st)?;
            snn_logits(spec, &p, &gi, neuron)?
        }
        _ => {
            return Err(Error::usage(
                "model kind and input modality disagree (ann wants images, snn wants spikes)",
            ))
        }
    };
    let b = input.batch_size();
    let target = one_hot(&graph, &vec![label; b], spec.num_classes)?;
    let loss = softmax_cross_entropy(&logits, &target)?;
    let grads = loss.backward_wrt(&p)?;
    let tensors = params
        .tensors
        .iter()
        .zip(&p)
        .map(|(nt, leaf)| {
            Ok(NamedTensor {
                name: nt.name.clone(),
                shape: nt.shape.clone(),
                data: grads.wrt(leaf)?.to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradientSet { tensors })
}

/// Saved model: architecture, neuron hyperparameters, parameters, and the
/// held-out accuracy measured at save time.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub neuron: NeuronParams,
    pub params: ParameterSet,
    pub test_accuracy: f64,
}

const SLMD_MAGIC: &[u8; 4] = b"SLMD";
const SLMD_VERSION: u32 = 1;

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SLMD_MAGIC);
    w.u32(SLMD_VERSION);
    let desc = ck.spec.descriptor_bytes();
    w.u32(desc.len() as u32);
    w.bytes(&desc);
    w.f64(ck.neuron.v_threshold);
    w.u8(match ck.neuron.reset_mode {
        ResetMode::HardZero => 0,
        ResetMode::SoftSubtract => 1,
    });
    w.f64(ck.neuron.alpha);
    w.f64(ck.test_accuracy);
    w.u32(ck.params.tensors.len() as u32);
    for t in &ck.params.tensors {
        w.u32(t.name.len() as u32);
        w.bytes(t.name.as_bytes());
        w.u32(t.shape.len() as u32);
        for &d in &t.shape {
            w.u32(d as u32);
        }
        for &v in &t.data {
            w.f64(v);
        }
    }
    w.buf
}

fn decode_descriptor(r: &mut ByteReader) -> Result<ModelSpec> {
    let kind = match r.u8("model kind")? {
        0 => ModelKind::Ann,
        1 => ModelKind::Snn,
        k => return Err(r.err(format!("unknown model kind {k}"))),
    };
    let in_channels = r.u32("in_channels")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let n_layers = r.u32("layer count")? as usize;
    if n_layers > 64 {
        return Err(r.err(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        match r.u8("layer tag")? {
            0 => {
                let mut v = [0usize; 5];
                for slot in &mut v {
                    *slot = r.u32("conv field")? as usize;
                }
                layers.push(LayerSpec::Conv {
                    in_ch: v[0],
                    out_ch: v[1],
                    kernel: v[2],
                    stride: v[3],
                    pad: v[4],
                });
            }
            1 => {
                let in_features = r.u32("linear in")? as usize;
                let out_features = r.u32("linear out")? as usize;
                layers.push(LayerSpec::Linear { in_features, out_features });
            }
            t => return Err(r.err(format!("unknown layer tag {t}"))),
        }
    }
    let timesteps = r.u32("timesteps")? as usize;
    let num_classes = r.u32("num_classes")? as usize;
    Ok(ModelSpec { kind, in_channels, height, width, layers, timesteps, num_classes })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = ByteReader::new(bytes);
    r.magic(SLMD_MAGIC, "model checkpoint")?;
    let version = r.u32("version")?;
    if version != SLMD_VERSION {
        return Err(r.err(format!("unsupported checkpoint version {version}")));
    }
    let desc_len = r.u32("descriptor length")? as usize;
    let desc_start = r.pos();
    let spec = decode_descriptor(&mut r)?;
    if r.pos() - desc_start != desc_len {
        return Err(r.err("descriptor length does not match contents"));
    }
    spec.validate().map_err(|e| r.err(format!("invalid model spec: {e}")))?;
    let v_threshold = r.f64("v_threshold")?;
    let reset_mode = match r.u8("reset mode")? {
        0 => ResetMode::HardZero,
        1 => ResetMode::SoftSubtract,
        m => return Err(r.err(format!("unknown reset mode {m}"))),
    };
    let alpha = r.f64("alpha")?;
    let neuron = NeuronParams { v_threshold, reset_mode, alpha };
    neuron.validate().map_err(|e| r.err(format!("invalid neuron params: {e}")))?;
    let test_accuracy = r.f64("test accuracy")?;
    let count = r.u32("tensor count")? as usize;
    let expected = spec.param_shapes();
    if count != expected.len() {
        return Err(r.err(format!("expected {} tensors, file has {count}", expected.len())));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in expected {
        let name_len = r.u32("name length")? as usize;
        if name_len > 256 {
            return Err(r.err(format!("implausible name length {name_len}")));
        }
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| r.err("tensor name is not utf-8"))?;
        if name != want_name {
            return Err(r.err(format!("tensor {name} where {want_name} expected")));
        }
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dim")? as usize);
        }
        if shape != want_shape {
            return Err(r.err(format!("tensor {name} has shape {shape:?}, expected {want_shape:?}")));
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.f64("tensor payload")?);
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    r.expect_end("checkpoint")?;
    Ok(Checkpoint { spec, neuron, params: ParameterSet { tensors }, test_accuracy })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes)
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Rc-sharing helper for repeated forward passes over the same parameters.
pub fn params_rc(params: &ParameterSet) -> Vec<(Rc<Vec<f64>>, Vec<usize>)> {
    params
        .tensors
        .iter()
        .map(|t| (Rc::new(t.data.clone()), t.shape.clone()))
        .collect()
}
