//! Reconstruction quality metrics, judge models, and reference statistics.
//!
//! Images are scored with MSE/PSNR/SSIM; spike trains with the Euclidean
//! distance, which is better suited to sparse binary sequences. Attack
//! success rate is semantic: a separately trained judge classifier must
//! recognize the reconstruction as the victim's true class.

use rand::seq::SliceRandom;

use crate::codec::{ImageTensor, SpikeTensor};
use crate::error::{Error, Result};
use crate::models::{
    ann_logits, argmax, forward_model, register_params, snn_graph_input, snn_logits, Checkpoint,
    ModelInput, ModelKind, ModelSpec, NeuronParams, ParameterSet,
};
use crate::tensor::{one_hot, softmax_cross_entropy, Graph};
use crate::util::rng_for;

/// A trained judge is stored exactly like any other checkpoint: spec, neuron
/// hyperparameters, parameters, held-out accuracy.
pub type JudgeModel = Checkpoint;

/// Per-sample reconstruction scores. `ssim` is NaN for spike-train pairs,
/// where it has no meaning; `l2` is always present.
#[derive(Clone, Copy, Debug)]
pub struct MetricReport {
    pub mse: f64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub l2: f64,
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("mse over {} vs {} entries", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::dimension("mse of empty tensors"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// 10*log10(peak^2 / mse); identical inputs report +infinity.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

pub fn l2_of(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dimension(format!("l2 over {} vs {} entries", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

/// Euclidean distance over all T*B*C*H*W cells of two spike tensors.
pub fn l2_distance(a: &SpikeTensor, b: &SpikeTensor) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dimension(format!("l2 of {:?} vs {:?}", a.dims(), b.dims())));
    }
    l2_of(&a.data, &b.data)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 1.0) * (0.01 * 1.0);
const SSIM_C2: f64 = (0.03 * 1.0) * (0.03 * 1.0);

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

fn ssim_core(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Global-statistics SSIM over one plane; the documented fallback for images
/// smaller than the 11x11 window.
fn ssim_global(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mx = a.iter().sum::<f64>() / n;
    let my = b.iter().sum::<f64>() / n;
    let mut vx = 0.0;
    let mut vy = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
        cov += (x - mx) * (y - my);
    }
    ssim_core(mx, my, vx / n, vy / n, cov / n)
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, win: &[f64]) -> f64 {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return ssim_global(a, b);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - SSIM_WINDOW) {
        for ox in 0..=(w - SSIM_WINDOW) {
            let mut mx = 0.0;
            let mut my = 0.0;
            for ky in 0..SSIM_WINDOW {
                let row = (oy + ky) * w + ox;
                let wrow = ky * SSIM_WINDOW;
                for kx in 0..SSIM_WINDOW {
                    let g = win[wrow + kx];
                    mx += g * a[row + kx];
                    my += g * b[row + kx];
                }
            }
            let mut vx = 0.0;
            let mut vy = 0.0;
            let mut cov = 0.0;
            for ky in 0..SSIM_WINDOW {
                let row = (oy + ky) * w + ox;
                let wrow = ky * SSIM_WINDOW;
                for kx in 0..SSIM_WINDOW {
                    let g = win[wrow + kx];
                    let da = a[row + kx] - mx;
                    let db = b[row + kx] - my;
                    vx += g * da * da;
                    vy += g * db * db;
                    cov += g * da * db;
                }
            }
            total += ssim_core(mx, my, vx, vy, cov);
            count += 1;
        }
    }
    total / count as f64
}

/// Mean local SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1.0, averaged over batch and channels.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::dimension(format!("ssim of {:?} vs {:?}", a.shape(), b.shape())));
    }
    let win = gaussian_window();
    let plane = a.h * a.w;
    let planes = a.b * a.c;
    let mut total = 0.0;
    for p in 0..planes {
        let s = p * plane;
        total += ssim_plane(&a.data[s..s + plane], &b.data[s..s + plane], a.h, a.w, &win);
    }
    Ok(total / planes as f64)
}

/// Image-pair report; `l2` is the Euclidean distance over all pixels.
pub fn image_metrics(recon: &ImageTensor, truth: &ImageTensor) -> Result<MetricReport> {
    Ok(MetricReport {
        mse: mse(&recon.data, &truth.data)?,
        psnr_db: psnr(&recon.data, &truth.data, 1.0)?,
        ssim: ssim(recon, truth)?,
        l2: l2_of(&recon.data, &truth.data)?,
    })
}

/// Spike-pair report; SSIM does not apply and is reported as NaN.
pub fn spike_metrics(recon: &SpikeTensor, truth: &SpikeTensor) -> Result<MetricReport> {
    Ok(MetricReport {
        mse: mse(&recon.data, &truth.data)?,
        psnr_db: psnr(&recon.data, &truth.data, 1.0)?,
        ssim: f64::NAN,
        l2: l2_distance(recon, truth)?,
    })
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct JudgeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for JudgeTrainConfig {
    fn default() -> Self {
        JudgeTrainConfig { epochs: 10, batch_size: 32, lr: 0.01, momentum: 0.9, seed: 0 }
    }
}

impl JudgeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("judge batch size must be >= 1"));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::validation(format!(
                "judge lr must be > 0 and momentum in [0,1), got lr={} momentum={}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }
}

/// Concatenate batch-1 inputs along the batch axis. All samples must agree on
/// dims and kind.
pub fn stack_batch(inputs: &[&ModelInput]) -> Result<ModelInput> {
    let first = inputs.first().ok_or_else(|| Error::usage("cannot stack an empty batch"))?;
    match first {
        ModelInput::Image(proto) => {
            let mut data = Vec::with_capacity(inputs.len() * proto.numel());
            for input in inputs {
                let ModelInput::Image(img) = input else {
                    return Err(Error::usage("mixed image/spike batch"));
                };
                if img.b != 1 || (img.c, img.h, img.w) != (proto.c, proto.h, proto.w) {
                    return Err(Error::dimension("batch members must be batch-1 and same shape"));
                }
                data.extend_from_slice(&img.data);
            }
            Ok(ModelInput::Image(ImageTensor::new(data, inputs.len(), proto.c, proto.h, proto.w)?))
        }
        ModelInput::Spikes(proto) => {
            let step = proto.c * proto.h * proto.w;
            let mut data = vec![0.0; inputs.len() * proto.t * step];
            for (i, input) in inputs.iter().enumerate() {
                let ModelInput::Spikes(st) = input else {
                    return Err(Error::usage("mixed image/spike batch"));
                };
                if st.b != 1 || (st.t, st.c, st.h, st.w) != (proto.t, proto.c, proto.h, proto.w) {
                    return Err(Error::dimension("batch members must be batch-1 and same shape"));
                }
                for t in 0..st.t {
                    let src = t * step;
                    let dst = (t * inputs.len() + i) * step;
                    data[dst..dst + step].copy_from_slice(&st.data[src..src + step]);
                }
            }
            Ok(ModelInput::Spikes(SpikeTensor::new(
                data,
                [proto.t, inputs.len(), proto.c, proto.h, proto.w],
                proto.modality,
            )?))
        }
    }
}

/// Judge argmax predictions for a (possibly batched) input.
pub fn predict(judge: &JudgeModel, input: &ModelInput) -> Result<Vec<usize>> {
    let logits = forward_model(&judge.spec, &judge.params, input, &judge.neuron)?;
    let k = judge.spec.num_classes;
    Ok(logits.chunks(k).map(argmax).collect())
}

fn accuracy(spec: &ModelSpec, params: &ParameterSet, neuron: &NeuronParams, data: &[(ModelInput, usize)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("cannot measure accuracy on an empty set"));
    }
    let mut correct = 0usize;
    for chunk in data.chunks(64) {
        let refs: Vec<&ModelInput> = chunk.iter().map(|(i, _)| i).collect();
        let batch = stack_batch(&refs)?;
        let logits = forward_model(spec, params, &batch, neuron)?;
        for (row, (_, label)) in chunk.iter().enumerate() {
            let k = spec.num_classes;
            if argmax(&logits[row * k..(row + 1) * k]) == *label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mini-batch SGD with momentum on cross-entropy; deterministic per seed.
/// Held-out accuracy is measured after the final epoch and stored in the
/// returned checkpoint.
pub fn train_judge(
    spec: &ModelSpec,
    neuron: &NeuronParams,
    train: &[(ModelInput, usize)],
    test: &[(ModelInput, usize)],
    cfg: &JudgeTrainConfig,
) -> Result<JudgeModel> {
    cfg.validate()?;
    spec.validate()?;
    neuron.validate()?;
    if train.is_empty() {
        return Err(Error::usage("judge training needs at least one sample"));
    }
    for (_, label) in train.iter().chain(test) {
        if *label >= spec.num_classes {
            return Err(Error::usage(format!("label {label} out of range")));
        }
    }
    let mut params = crate::models::build_lenet_glorot(spec, cfg.seed)?;
    let mut velocity: Vec<Vec<f64>> =
        params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_for(cfg.seed, "judge-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let refs: Vec<&ModelInput> = chunk.iter().map(|&i| &train[i].0).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();
            let batch = stack_batch(&refs)?;

            let graph = Graph::new();
            let p = register_params(&graph, &params, true)?;
            let logits = match (&batch, spec.kind) {
                (ModelInput::Image(img), ModelKind::Ann) => {
                    let x = graph.leaf(img.data.clone(), &[img.b, img.c, img.h, img.w], false)?;
                    ann_logits(spec, &p, &x)?
                }
                (ModelInput::Spikes(st), ModelKind::Snn) => {
                    let gi = snn_graph_input(&graph, st)?;
                    snn_logits(spec, &p, &gi, neuron)?
                }
                _ => return Err(Error::usage("judge input modality does not match model kind")),
            };
            let target = one_hot(&graph, &labels, spec.num_classes)?;
            let loss = softmax_cross_entropy(&logits, &target)?;
            let grads = loss.backward_wrt(&p)?;
            for ((pt, leaf), vel) in params.tensors.iter_mut().zip(&p).zip(&mut velocity) {
                let g = grads.wrt(leaf)?.to_vec();
                for ((w, v), gv) in pt.data.iter_mut().zip(vel.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v - cfg.lr * gv;
                    *w += *v;
                }
            }
        }
    }

    let test_accuracy = if test.is_empty() { f64::NAN } else { accuracy(spec, &params, neuron, test)? };
    Ok(Checkpoint { spec: spec.clone(), neuron: *neuron, params, test_accuracy })
}

/// Attack success rate: percentage of reconstructions the judge assigns to
/// the victim's true class.
pub fn asr(judge: &JudgeModel, reconstructions: &[ModelInput], true_labels: &[usize]) -> Result<f64> {
    if reconstructions.is_empty() || reconstructions.len() != true_labels.len() {
        return Err(Error::usage(format!(
            "asr needs matching non-empty reconstructions and labels, got {} and {}",
            reconstructions.len(),
            true_labels.len()
        )));
    }
    let mut correct = 0usize;
    for (r, label) in reconstructions.iter().zip(true_labels) {
        let preds = predict(judge, r)?;
        if preds.len() != 1 {
            return Err(Error::usage("asr expects batch-1 reconstructions"));
        }
        if preds[0] == *label {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / reconstructions.len() as f64)
}

/// One aggregate line of the reference-distance table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatLine {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub pairs: usize,
}

fn stat_line(values: &[f64]) -> StatLine {
    let (mean, std) = mean_std(values);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    StatLine { mean, std, min, max, pairs: values.len() }
}

#[derive(Clone, Debug)]
pub struct ReferenceStats {
    pub intra: StatLine,
    pub inter: StatLine,
    /// Classes with fewer than two samples contribute no intra pairs.
    pub excluded_classes: Vec<usize>,
}

/// All pairwise distances partitioned into same-class and cross-class sets.
pub fn reference_l2_stats(samples: &[SpikeTensor], labels: &[usize]) -> Result<ReferenceStats> {
    if samples.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} samples but {} labels",
            samples.len(),
            labels.len()
        )));
    }
    if samples.len() < 2 {
        return Err(Error::usage("reference statistics need at least two samples"));
    }
    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            let d = l2_distance(&samples[i], &samples[j])?;
            if labels[i] == labels[j] {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    let mut counts = std::collections::BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0usize) += 1;
    }
    let excluded_classes = counts.into_iter().filter(|(_, c)| *c < 2).map(|(l, _)| l).collect();
    Ok(ReferenceStats { intra: stat_line(&intra), inter: stat_line(&inter), excluded_classes })
}
