//! Gradient-inversion attacks.
//!
//! All three attacks consume an intercepted per-sample GradientSet and try to
//! reproduce the private input behind it. DLG optimizes a dummy input and a
//! soft dummy label jointly; iDLG first reads the label analytically off the
//! final linear layer and optimizes the input alone; GRNN trains a small
//! generator network mapping flattened gradients to candidate inputs.
//!
//! The objective throughout is the gradient-matching loss: the summed squared
//! difference between the gradients the dummy produces and the intercepted
//! ones, over every parameter tensor. Differentiating it w.r.t. the dummy
//! requires gradients of gradients, which the tensor module supports by
//! recording backward passes onto the same tape.

mod grnn;
mod lbfgs;

pub use grnn::{run_grnn, GrnnConfig, GrnnGenerator, GrnnOutcome};
pub use lbfgs::{Lbfgs, LbfgsConfig, StepOutcome};

use rand_distr::{Distribution, Normal};

use crate::codec::{init_dummy_image, init_dummy_spikes, ImageTensor, SpikeModality, SpikeTensor};
use crate::error::{Error, Result};
use crate::models::{
    ann_logits, argmax, register_params, snn_logits, GradientSet, ModelInput, ModelKind, ModelSpec,
    NeuronParams, ParameterSet, SnnGraphInput,
};
use crate::tensor::{one_hot, softmax, softmax_cross_entropy, sq_diff_sum, Graph, Tensor};
use crate::util::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackKind {
    Dlg,
    Idlg,
    Grnn,
}

impl AttackKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackKind::Dlg => "dlg",
            AttackKind::Idlg => "idlg",
            AttackKind::Grnn => "grnn",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThresholdStrategy {
    None,
    /// Binarize once after the optimization finishes.
    PostOpt,
    /// Binarize after every optimizer iteration, resetting optimizer state.
    InOpt,
}

impl ThresholdStrategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            ThresholdStrategy::None => "none",
            ThresholdStrategy::PostOpt => "post_opt",
            ThresholdStrategy::InOpt => "in_opt",
        }
    }
}

/// What the dummy being optimized looks like. Static datasets use one shared
/// image even against the SNN (the attacker knows the frame-replication
/// encoding); event datasets need the full per-step tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DummyModality {
    Image,
    SpikeTrain,
}

#[derive(Clone, Copy, Debug)]
pub struct AttackConfig {
    pub attack: AttackKind,
    pub iterations: usize,
    pub lbfgs: LbfgsConfig,
    /// Scale of the folded-normal spike-dummy initialization.
    pub sigma: f64,
    pub tau: f64,
    pub strategy: ThresholdStrategy,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            attack: AttackKind::Dlg,
            iterations: 300,
            lbfgs: LbfgsConfig::default(),
            sigma: 0.1,
            tau: 0.5,
            strategy: ThresholdStrategy::None,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::validation("attack needs at least one iteration"));
        }
        self.lbfgs.validate()?;
        if !(self.sigma > 0.0) {
            return Err(Error::validation(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.strategy != ThresholdStrategy::None && !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::validation(format!(
                "tau must lie in (0,1) when a thresholding strategy is set, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// The victim model as the attacker knows it: architecture, snapshot of the
/// parameters, and the (public) neuron hyperparameters.
#[derive(Clone, Copy)]
pub struct AttackTarget<'a> {
    pub spec: &'a ModelSpec,
    pub params: &'a ParameterSet,
    pub neuron: &'a NeuronParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttackStatus {
    Completed,
    Diverged,
}

impl AttackStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttackStatus::Completed => "completed",
            AttackStatus::Diverged => "diverged",
        }
    }
}

/// Final state of one inversion run.
#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub x: ModelInput,
    /// Recovered label per batch row (argmax of the soft label for DLG, the
    /// analytic label for iDLG, caller-provided for GRNN).
    pub labels: Vec<usize>,
    /// Gradient-matching loss per iteration; entry 0 is the value at the
    /// initial dummy, later entries are accepted line-search results.
    pub loss_trace: Vec<f64>,
    pub status: AttackStatus,
    pub iterations_run: usize,
}

impl AttackOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("trace always has the initial entry")
    }
}

/// Eq-style squared gradient distance on the graph: dummy gradients stay
/// differentiable, victim gradients enter as constants.
pub fn gradient_match_loss_graph(
    graph: &Graph,
    dummy: &[Tensor],
    victim: &GradientSet,
) -> Result<Tensor> {
    if dummy.len() != victim.tensors.len() {
        return Err(Error::usage(format!(
            "dummy has {} gradient tensors, victim has {}",
            dummy.len(),
            victim.tensors.len()
        )));
    }
    let mut total: Option<Tensor> = None;
    for (d, v) in dummy.iter().zip(&victim.tensors) {
        if d.shape() != v.shape.as_slice() {
            return Err(Error::usage(format!(
                "gradient shape mismatch at {}: {:?} vs {:?}",
                v.name,
                d.shape(),
                v.shape
            )));
        }
        let vc = graph.constant(v.data.clone(), &v.shape)?;
        let term = sq_diff_sum(d, &vc)?;
        total = Some(match total.take() {
            None => term,
            Some(acc) => acc.add(&term)?,
        });
    }
    total.ok_or_else(|| Error::usage("gradient sets are empty"))
}

/// Value-level twin of `gradient_match_loss_graph` for reporting and tests.
pub fn gradient_match_loss(a: &GradientSet, b: &GradientSet) -> Result<f64> {
    if a.tensors.len() != b.tensors.len() {
        return Err(Error::usage(format!(
            "gradient sets differ in tensor count: {} vs {}",
            a.tensors.len(),
            b.tensors.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.tensors.iter().zip(&b.tensors) {
        if x.shape != y.shape {
            return Err(Error::usage(format!(
                "gradient shape mismatch at {}: {:?} vs {:?}",
                x.name, x.shape, y.shape
            )));
        }
        total += x.data.iter().zip(&y.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    }
    Ok(total)
}

/// Analytic iDLG label: the row of the final linear layer's weight gradient
/// with the minimal sum. For batch-1 cross-entropy that row's factor is
/// softmax minus one, the only negative coefficient, so the minimal row sum
/// identifies the true class whenever the features are non-negative with at
/// least one strictly positive entry. Ties break to the lowest index.
pub fn infer_label_idlg(victim: &GradientSet) -> Result<usize> {
    let n = victim.tensors.len();
    if n < 2 {
        return Err(Error::usage("gradient set too small to contain a final linear layer"));
    }
    let wgrad = &victim.tensors[n - 2];
    if wgrad.shape.len() != 2 {
        return Err(Error::usage(format!(
            "expected the penultimate gradient tensor {} to be a linear weight (rank 2), got rank {}",
            wgrad.name,
            wgrad.shape.len()
        )));
    }
    let (k, f) = (wgrad.shape[0], wgrad.shape[1]);
    let mut best = 0usize;
    let mut best_sum = f64::INFINITY;
    for row in 0..k {
        let s: f64 = wgrad.data[row * f..(row + 1) * f].iter().sum();
        if s < best_sum {
            best_sum = s;
            best = row;
        }
    }
    Ok(best)
}

/// Elementwise strict threshold into {0,1}.
pub(crate) fn binarize_values(values: &mut [f64], tau: f64) {
    for v in values.iter_mut() {
        *v = if *v > tau { 1.0 } else { 0.0 };
    }
}

/// Post-optimization thresholding: strict `> tau` per cell; the result is a
/// binary spike tensor.
pub fn binarize_post(x: &SpikeTensor, tau: f64) -> Result<SpikeTensor> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::validation(format!("tau must lie in (0,1), got {tau}")));
    }
    let mut data = x.data.clone();
    binarize_values(&mut data, tau);
    SpikeTensor::new(data, [x.t, x.b, x.c, x.h, x.w], SpikeModality::BinarySpikes)
}

struct InversionProblem<'a> {
    target: AttackTarget<'a>,
    victim: &'a GradientSet,
    modality: DummyModality,
    batch: usize,
    x_len: usize,
    fixed_labels: Option<Vec<usize>>,
}

impl<'a> InversionProblem<'a> {
    /// Gradient-matching loss and its gradient w.r.t. the flat dummy vector
    /// (input first, then the soft-label logits when present).
    fn eval(&self, flat: &[f64]) -> Result<(f64, Vec<f64>)> {
        let spec = self.target.spec;
        let graph = Graph::new();
        let p = register_params(&graph, self.target.params, true)?;
        let (x_leaf, logits) = match self.modality {
            DummyModality::Image => {
                let shape = [self.batch, spec.in_channels, spec.height, spec.width];
                let x = graph.leaf(flat[..self.x_len].to_vec(), &shape, true)?;
                let logits = match spec.kind {
                    ModelKind::Ann => ann_logits(spec, &p, &x)?,
                    ModelKind::Snn => snn_logits(
                        spec,
                        &p,
                        &SnnGraphInput::Replicated { image: x.clone() },
                        self.target.neuron,
                    )?,
                };
                (x, logits)
            }
            DummyModality::SpikeTrain => {
                let shape =
                    [spec.timesteps, self.batch, spec.in_channels, spec.height, spec.width];
                let x = graph.leaf(flat[..self.x_len].to_vec(), &shape, true)?;
                let logits = snn_logits(
                    spec,
                    &p,
                    &SnnGraphInput::PerStep { spikes: x.clone() },
                    self.target.neuron,
                )?;
                (x, logits)
            }
        };
        let y_leaf;
        let label_rows = match &self.fixed_labels {
            Some(ls) => {
                y_leaf = None;
                one_hot(&graph, ls, spec.num_classes)?
            }
            None => {
                let y = graph.leaf(
                    flat[self.x_len..].to_vec(),
                    &[self.batch, spec.num_classes],
                    true,
                )?;
                let rows = softmax(&y)?;
                y_leaf = Some(y);
                rows
            }
        };
        let ce = softmax_cross_entropy(&logits, &label_rows)?;
        let inner = ce.backward_wrt(&p)?;
        let dummy_grads: Vec<Tensor> = p.iter().map(|t| inner.wrt(t)).collect::<Result<_>>()?;
        let d = gradient_match_loss_graph(&graph, &dummy_grads, self.victim)?;
        let loss = d.item();

        let mut targets = vec![x_leaf.clone()];
        if let Some(y) = &y_leaf {
            targets.push(y.clone());
        }
        let outer = d.backward_wrt(&targets)?;
        let mut g = outer.wrt(&x_leaf)?.to_vec();
        if let Some(y) = &y_leaf {
            g.extend(outer.wrt(y)?.to_vec());
        }
        Ok((loss, g))
    }

    fn project(&self, flat: &mut [f64]) {
        match self.modality {
            DummyModality::Image => {
                for v in flat[..self.x_len].iter_mut() {
                    *v = v.clamp(0.0, 1.0);
                }
            }
            DummyModality::SpikeTrain => {
                for v in flat[..self.x_len].iter_mut() {
                    *v = v.max(0.0);
                }
            }
        }
    }
}

/// Deterministic dummy initialization shared by the attacks: image dummies
/// near mid-gray, spike dummies folded-normal, soft labels near-uniform.
pub(crate) fn dummy_init(
    spec: &ModelSpec,
    modality: DummyModality,
    batch: usize,
    sigma: f64,
    seed: u64,
    with_label: bool,
) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let x = match modality {
        DummyModality::Image => {
            init_dummy_image(batch, spec.in_channels, spec.height, spec.width, 1, seed)?
                .slice_step(0)?
                .data
        }
        DummyModality::SpikeTrain => {
            init_dummy_spikes(
                [spec.timesteps, batch, spec.in_channels, spec.height, spec.width],
                sigma,
                seed,
            )?
            .data
        }
    };
    let y = if with_label {
        let normal = Normal::new(0.0, 0.1).expect("fixed parameters are valid");
        let mut rng = rng_for(seed, "dummy-label", 0);
        Some((0..batch * spec.num_classes).map(|_| normal.sample(&mut rng)).collect())
    } else {
        None
    };
    Ok((x, y))
}

fn check_attack_setup(
    target: &AttackTarget,
    victim: &GradientSet,
    batch: usize,
    modality: DummyModality,
    cfg: &AttackConfig,
) -> Result<()> {
    cfg.validate()?;
    victim.matches_params(target.params)?;
    target.neuron.validate()?;
    if batch == 0 {
        return Err(Error::usage("batch size must be >= 1"));
    }
    if target.spec.kind == ModelKind::Ann && modality == DummyModality::SpikeTrain {
        return Err(Error::usage("spike-train dummies only apply to spiking victims"));
    }
    if cfg.strategy != ThresholdStrategy::None && modality != DummyModality::SpikeTrain {
        return Err(Error::usage("thresholding strategies only apply to the spike modality"));
    }
    Ok(())
}

fn finish_input(
    spec: &ModelSpec,
    modality: DummyModality,
    batch: usize,
    x: Vec<f64>,
    binary: bool,
) -> Result<ModelInput> {
    match modality {
        DummyModality::Image => Ok(ModelInput::Image(ImageTensor::new(
            x,
            batch,
            spec.in_channels,
            spec.height,
            spec.width,
        )?)),
        DummyModality::SpikeTrain => {
            let m = if binary { SpikeModality::BinarySpikes } else { SpikeModality::EventFrames };
            Ok(ModelInput::Spikes(SpikeTensor::new(
                x,
                [spec.timesteps, batch, spec.in_channels, spec.height, spec.width],
                m,
            )?))
        }
    }
}

fn run_inversion(
    target: AttackTarget,
    victim: &GradientSet,
    batch: usize,
    modality: DummyModality,
    cfg: &AttackConfig,
    fixed_labels: Option<Vec<usize>>,
) -> Result<AttackOutcome> {
    check_attack_setup(&target, victim, batch, modality, cfg)?;
    let spec = target.spec;
    let (x0, y0) = dummy_init(spec, modality, batch, cfg.sigma, cfg.seed, fixed_labels.is_none())?;
    let x_len = x0.len();
    let y_len = y0.as_ref().map_or(0, Vec::len);
    let mut flat = x0;
    if let Some(y) = y0 {
        flat.extend(y);
    }
    let problem = InversionProblem {
        target,
        victim,
        modality,
        batch,
        x_len,
        fixed_labels: fixed_labels.clone(),
    };

    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    let (l0, _) = problem.eval(&flat)?;
    trace.push(l0);

    let mut status = AttackStatus::Completed;
    let mut iterations_run = 0usize;
    if !l0.is_finite() {
        status = AttackStatus::Diverged;
    } else if l0 > 1e-12 {
        let mut opt = Lbfgs::new(cfg.lbfgs)?;
        let mut prev_pattern: Option<Vec<f64>> = None;
        for it in 0..cfg.iterations {
            let step = opt.step(&mut flat, |v| problem.eval(v), |v| problem.project(v));
            let (outcome, loss) = match step {
                Ok(r) => r,
                Err(Error::Validation(_)) => {
                    // Objective went non-finite at the iterate itself.
                    status = AttackStatus::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            iterations_run = it + 1;
            if !loss.is_finite() {
                status = AttackStatus::Diverged;
                break;
            }
            if outcome == StepOutcome::Accepted {
                trace.push(loss);
            }
            match cfg.strategy {
                ThresholdStrategy::InOpt => {
                    binarize_values(&mut flat[..x_len], cfg.tau);
                    let pattern = flat[..x_len].to_vec();
                    let repeated = prev_pattern.as_deref() == Some(pattern.as_slice());
                    prev_pattern = Some(pattern);
                    opt.reset();
                    // A repeated binary pattern is a fixed point: the next
                    // optimizer segment would replay deterministically.
                    if repeated {
                        break;
                    }
                }
                _ => {
                    if outcome == StepOutcome::Stalled {
                        break;
                    }
                }
            }
            if loss <= 1e-12 {
                break;
            }
        }
    }

    let mut x = flat[..x_len].to_vec();
    let mut binary = cfg.strategy == ThresholdStrategy::InOpt && iterations_run > 0;
    if cfg.strategy == ThresholdStrategy::PostOpt {
        binarize_values(&mut x, cfg.tau);
        binary = true;
    }
    let labels = match &fixed_labels {
        Some(ls) => ls.clone(),
        None => {
            let y = &flat[x_len..x_len + y_len];
            (0..batch).map(|row| argmax(&y[row * spec.num_classes..(row + 1) * spec.num_classes])).collect()
        }
    };
    Ok(AttackOutcome {
        x: finish_input(spec, modality, batch, x, binary)?,
        labels,
        loss_trace: trace,
        status,
        iterations_run,
    })
}

/// Deep-leakage attack: joint L-BFGS over the dummy input and a soft dummy
/// label, minimizing the gradient-matching loss.
pub fn run_dlg(
    target: AttackTarget,
    victim: &GradientSet,
    batch: usize,
    modality: DummyModality,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    run_inversion(target, victim, batch, modality, cfg, None)
}

/// Improved DLG: the label is inferred analytically from the final layer's
/// weight gradient and held fixed; only the input is optimized.
pub fn run_idlg(
    target: AttackTarget,
    victim: &GradientSet,
    batch: usize,
    modality: DummyModality,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let label = infer_label_idlg(victim)?;
    run_inversion(target, victim, batch, modality, cfg, Some(vec![label; batch]))
}

#[cfg(test)]
pub(crate) fn named_like(params: &ParameterSet, values: Vec<Vec<f64>>) -> GradientSet {
    use crate::models::NamedTensor;
    GradientSet {
        tensors: params
            .tensors
            .iter()
            .zip(values)
            .map(|(p, data)| NamedTensor { name: p.name.clone(), shape: p.shape.clone(), data })
            .collect(),
    }
}

/// Uniform noise in [lo, hi) with a tagged stream, used by attack tests.
#[cfg(test)]
pub(crate) fn uniform_vec(seed: u64, tag: &str, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    use rand::Rng;
    let mut rng = rng_for(seed, tag, 0);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}
