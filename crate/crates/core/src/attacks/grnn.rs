//! Generative gradient-inversion: a small fully-connected generator maps a
//! flattened GradientSet to a candidate input. Training minimizes the same
//! gradient-matching loss as DLG, evaluated by pushing the generator output
//! through the victim model, so the whole pipeline is differentiated end to
//! end (generator -> candidate input -> victim gradients -> match loss).

use std::rc::Rc;

use super::{gradient_match_loss_graph, AttackStatus, DummyModality};
use crate::codec::{ImageTensor, SpikeModality, SpikeTensor};
use crate::error::{Error, Result};
use crate::models::{
    ann_logits, register_params, snn_logits, GradientSet, ModelInput, ModelKind, ModelSpec,
    SnnGraphInput,
};
use crate::tensor::{linear, one_hot, slice_outer, softmax_cross_entropy, Graph, Tensor};
use crate::util::rng_for;

use super::AttackTarget;

#[derive(Clone, Copy, Debug)]
pub struct GrnnConfig {
    pub hidden: usize,
    pub epochs: usize,
    /// Fixed step size of the plain gradient-descent trainer.
    pub lr: f64,
    pub seed: u64,
}

impl Default for GrnnConfig {
    fn default() -> Self {
        // The gradient-matching loss lives at the squared scale of the
        // input-dependent gradient components (~1e-5 on the toy victims), so a
        // fixed-step trainer needs a step size that large in reciprocal.
        GrnnConfig { hidden: 1024, epochs: 120, lr: 1e5, seed: 0 }
    }
}

impl GrnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 {
            return Err(Error::validation("grnn hidden width and epochs must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::validation(format!("grnn lr must be > 0, got {}", self.lr)));
        }
        Ok(())
    }
}

/// gradient features -> linear(hidden) -> tanh -> linear(hidden) -> tanh
/// -> linear(output). The output head is a sigmoid for images (range (0,1))
/// and a softplus for spike trains (non-negative).
#[derive(Clone, Debug)]
pub struct GrnnGenerator {
    pub grad_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub modality: DummyModality,
    /// [w1, b1, w2, b2, w3, b3] with shapes per `param_shapes`.
    pub weights: Vec<Rc<Vec<f64>>>,
}

impl GrnnGenerator {
    pub fn new(grad_dim: usize, hidden: usize, out_dim: usize, modality: DummyModality, seed: u64) -> Self {
        let shapes = Self::shapes(grad_dim, hidden, out_dim);
        let mut rng = rng_for(seed, "grnn-init", 0);
        let weights = shapes
            .iter()
            .map(|shape| {
                let fan_in = shape.last().copied().unwrap_or(1).max(1);
                let fan_in = if shape.len() == 1 { shape[0] } else { fan_in };
                let bound = 1.0 / (fan_in as f64).sqrt();
                use rand::Rng;
                Rc::new(
                    (0..shape.iter().product::<usize>())
                        .map(|_| rng.random_range(-bound..bound))
                        .collect::<Vec<f64>>(),
                )
            })
            .collect();
        GrnnGenerator { grad_dim, hidden, out_dim, modality, weights }
    }

    fn shapes(grad_dim: usize, hidden: usize, out_dim: usize) -> [Vec<usize>; 6] {
        [
            vec![hidden, grad_dim],
            vec![hidden],
            vec![hidden, hidden],
            vec![hidden],
            vec![out_dim, hidden],
            vec![out_dim],
        ]
    }

    fn register(&self, graph: &Graph, requires_grad: bool) -> Result<Vec<Tensor>> {
        Self::shapes(self.grad_dim, self.hidden, self.out_dim)
            .iter()
            .zip(&self.weights)
            .map(|(shape, w)| graph.leaf_rc(Rc::clone(w), shape, requires_grad))
            .collect()
    }

    /// Graph forward over a batch of flattened gradients [B, grad_dim].
    fn forward(&self, x: &Tensor, w: &[Tensor]) -> Result<Tensor> {
        let h1 = linear(x, &w[0], &w[1])?.tanh();
        let h2 = linear(&h1, &w[2], &w[3])?.tanh();
        let raw = linear(&h2, &w[4], &w[5])?;
        Ok(match self.modality {
            DummyModality::Image => raw.sigmoid(),
            DummyModality::SpikeTrain => raw.softplus(),
        })
    }

    /// Value-level reconstruction of one gradient set.
    pub fn generate(&self, victim: &GradientSet) -> Result<Vec<f64>> {
        let flat = gradient_features(victim);
        if flat.len() != self.grad_dim {
            return Err(Error::dimension(format!(
                "gradient vector has {} entries, generator expects {}",
                flat.len(),
                self.grad_dim
            )));
        }
        let graph = Graph::new();
        let w = self.register(&graph, false)?;
        let x = graph.leaf(flat, &[1, self.grad_dim], false)?;
        Ok(self.forward(&x, &w)?.to_vec())
    }
}

/// Flattened-gradient feature vector: each parameter tensor's gradient is
/// l2-normalized before concatenation. Raw per-tensor magnitudes span several
/// orders (the last linear layer dwarfs the conv layers), which leaves plain
/// gradient descent on the generator stuck in the dominant subspace.
pub fn gradient_features(victim: &GradientSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(victim.tensors.iter().map(|t| t.data.len()).sum());
    for t in &victim.tensors {
        let norm = t.data.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        out.extend(t.data.iter().map(|v| v / norm));
    }
    out
}

#[derive(Clone, Debug)]
pub struct GrnnOutcome {
    pub generator: GrnnGenerator,
    pub reconstructions: Vec<ModelInput>,
    pub labels: Vec<usize>,
    /// Mean gradient-matching loss per training epoch.
    pub loss_trace: Vec<f64>,
    pub status: AttackStatus,
}

fn input_dims(spec: &ModelSpec, modality: DummyModality) -> (usize, Vec<usize>) {
    let per_image = spec.in_channels * spec.height * spec.width;
    match modality {
        DummyModality::Image => (per_image, vec![1, spec.in_channels, spec.height, spec.width]),
        DummyModality::SpikeTrain => (
            spec.timesteps * per_image,
            vec![spec.timesteps, 1, spec.in_channels, spec.height, spec.width],
        ),
    }
}

/// Train a generator on a batch of intercepted gradients with known labels,
/// then emit its reconstruction for each of them.
pub fn run_grnn(
    target: AttackTarget,
    victims: &[GradientSet],
    labels: &[usize],
    modality: DummyModality,
    cfg: &GrnnConfig,
) -> Result<GrnnOutcome> {
    cfg.validate()?;
    if victims.is_empty() {
        return Err(Error::usage("grnn needs at least one gradient sample"));
    }
    if victims.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} gradient samples but {} labels",
            victims.len(),
            labels.len()
        )));
    }
    let spec = target.spec;
    if spec.kind == ModelKind::Ann && modality == DummyModality::SpikeTrain {
        return Err(Error::usage("spike-train generation only applies to spiking victims"));
    }
    for v in victims {
        v.matches_params(target.params)?;
    }
    for &l in labels {
        if l >= spec.num_classes {
            return Err(Error::usage(format!("label {l} out of range for {} classes", spec.num_classes)));
        }
    }

    let features: Vec<Vec<f64>> = victims.iter().map(gradient_features).collect();
    let grad_dim = features[0].len();
    let n = victims.len();
    let (out_dim, x_shape) = input_dims(spec, modality);
    let mut gen = GrnnGenerator::new(grad_dim, cfg.hidden, out_dim, modality, cfg.seed);
    let flat_features: Vec<f64> = features.iter().flat_map(|f| f.iter().copied()).collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut status = AttackStatus::Completed;

    for _epoch in 0..cfg.epochs {
        let graph = Graph::new();
        let w = gen.register(&graph, true)?;
        let feats = graph.leaf(flat_features.clone(), &[n, grad_dim], false)?;
        let candidates = gen.forward(&feats, &w)?;
        let p = register_params(&graph, target.params, true)?;
        let mut total: Option<Tensor> = None;
        for i in 0..n {
            let xi = slice_outer(&candidates, i)?.reshape(&x_shape)?;
            let logits = match (spec.kind, modality) {
                (ModelKind::Ann, _) => ann_logits(spec, &p, &xi)?,
                (ModelKind::Snn, DummyModality::Image) => {
                    snn_logits(spec, &p, &SnnGraphInput::Replicated { image: xi }, target.neuron)?
                }
                (ModelKind::Snn, DummyModality::SpikeTrain) => {
                    snn_logits(spec, &p, &SnnGraphInput::PerStep { spikes: xi }, target.neuron)?
                }
            };
            let t = one_hot(&graph, &[labels[i]], spec.num_classes)?;
            let ce = softmax_cross_entropy(&logits, &t)?;
            let inner = ce.backward_wrt(&p)?;
            let dummy: Vec<Tensor> = p.iter().map(|pt| inner.wrt(pt)).collect::<Result<_>>()?;
            let d = gradient_match_loss_graph(&graph, &dummy, &victims[i])?;
            total = Some(match total.take() {
                None => d,
                Some(acc) => acc.add(&d)?,
            });
        }
        let loss = total.expect("n >= 1").scale(1.0 / n as f64);
        let value = loss.item();
        trace.push(value);
        if !value.is_finite() {
            status = AttackStatus::Diverged;
            break;
        }
        let grads = loss.backward_wrt(&w)?;
        let mut next = Vec::with_capacity(6);
        for (cur, leaf) in gen.weights.iter().zip(&w) {
            let g = grads.wrt(leaf)?.to_vec();
            next.push(Rc::new(
                cur.iter().zip(g).map(|(v, gv)| v - cfg.lr * gv).collect::<Vec<f64>>(),
            ));
        }
        gen.weights = next;
    }

    let mut reconstructions = Vec::with_capacity(n);
    for v in victims {
        let out = gen.generate(v)?;
        reconstructions.push(match modality {
            DummyModality::Image => ModelInput::Image(ImageTensor::new(
                out,
                1,
                spec.in_channels,
                spec.height,
                spec.width,
            )?),
            DummyModality::SpikeTrain => ModelInput::Spikes(SpikeTensor::new(
                out,
                [spec.timesteps, 1, spec.in_channels, spec.height, spec.width],
                SpikeModality::EventFrames,
            )?),
        });
    }
    Ok(GrnnOutcome { generator: gen, reconstructions, labels: labels.to_vec(), loss_trace: trace, status })
}
