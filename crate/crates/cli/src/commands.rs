//! The experiment drivers behind each CLI verb. Each command validates its
//! config, runs the protocol through the library crate, and leaves a
//! self-describing artifact directory behind.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use spikeleak::attacks::{
    binarize_post, infer_label_idlg, run_dlg, run_grnn, run_idlg, AttackConfig, AttackKind,
    AttackOutcome, AttackTarget, DummyModality, ThresholdStrategy,
};
use spikeleak::codec::{events_to_frames, replicate_image, synth_gesture_stream};
use spikeleak::data::{parse_cifar_bin, parse_idx, LabeledDataset, Split};
use spikeleak::eval::{
    image_metrics, predict, reference_l2_stats, spike_metrics, train_judge, JudgeModel,
    MetricReport,
};
use spikeleak::fl::{eavesdrop, ClientState, GradientMessage};
use spikeleak::models::{
    build_lenet, decode_checkpoint, encode_checkpoint, GradientSet, ModelInput, ModelKind,
    ModelSpec, NeuronParams,
};
use spikeleak::util::rng_for;

use crate::config::{DatasetKind, ExperimentConfig};
use crate::report::{
    dump_input, write_file, write_json, write_results_csv, Manifest, ResultRow, Summary,
};
use crate::CliError;

const GESTURE_CLASSES: usize = 11;

pub struct LoadedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Name used in CSV rows.
    pub name: String,
    /// Files hashed into the manifest (empty for synthetic data).
    pub files: Vec<PathBuf>,
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::data(format!("read {}: {e}", path.display())))
}

/// Load (or synthesize) both splits of the configured dataset. Image datasets
/// keep image inputs here; SNN encoding happens at use sites.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<LoadedData, CliError> {
    match cfg.dataset.kind {
        DatasetKind::Idx => {
            let dir = cfg.dataset.path.as_ref().expect("validated");
            let files: Vec<PathBuf> = [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ]
            .iter()
            .map(|n| dir.join(n))
            .collect();
            let train = parse_idx(&read(&files[0])?, &read(&files[1])?, Split::Train)
                .map_err(CliError::from_data)?;
            let test = parse_idx(&read(&files[2])?, &read(&files[3])?, Split::Test)
                .map_err(CliError::from_data)?;
            Ok(LoadedData { train, test, name: "idx".into(), files })
        }
        DatasetKind::Cifar => {
            let dir = cfg.dataset.path.as_ref().expect("validated");
            let files = vec![dir.join("train.bin"), dir.join("test.bin")];
            let train =
                parse_cifar_bin(&read(&files[0])?, true, Split::Train).map_err(CliError::from_data)?;
            let test =
                parse_cifar_bin(&read(&files[1])?, true, Split::Test).map_err(CliError::from_data)?;
            Ok(LoadedData { train, test, name: "cifar".into(), files })
        }
        DatasetKind::Gesture => {
            let seed = cfg.resolved_seed();
            let make = |split: Split, tag: &str, count: usize| -> Result<LabeledDataset, CliError> {
                let mut rng = rng_for(seed, tag, 0);
                let mut inputs = Vec::with_capacity(count);
                let mut labels = Vec::with_capacity(count);
                for i in 0..count {
                    let class = i % GESTURE_CLASSES;
                    let stream_seed: u64 = rng.random();
                    let ev = synth_gesture_stream(
                        class,
                        stream_seed,
                        (cfg.dataset.sensor, cfg.dataset.sensor),
                        cfg.dataset.duration_us,
                    )
                    .map_err(CliError::from_data)?;
                    let frames = events_to_frames(&ev, cfg.model.timesteps)
                        .map_err(CliError::from_data)?;
                    inputs.push(ModelInput::Spikes(frames));
                    labels.push(class);
                }
                LabeledDataset::new(inputs, labels, GESTURE_CLASSES, split)
                    .map_err(CliError::from_data)
            };
            let train = make(Split::Train, "gesture-train", cfg.dataset.count)?;
            let test = make(Split::Test, "gesture-test", (cfg.dataset.count / 4).max(1))?;
            Ok(LoadedData { train, test, name: "gesture".into(), files: Vec::new() })
        }
    }
}

/// Victim architecture for this dataset/model combination.
pub fn victim_spec(cfg: &ExperimentConfig, data: &LoadedData) -> Result<ModelSpec, CliError> {
    let kind = cfg.model.model_kind()?;
    let (c, h, w) = match &data.train.inputs[0] {
        ModelInput::Image(img) => (img.c, img.h, img.w),
        ModelInput::Spikes(st) => (st.c, st.h, st.w),
    };
    let t = match kind {
        ModelKind::Ann => 1,
        ModelKind::Snn => cfg.model.timesteps,
    };
    ModelSpec::lenet(kind, c, h, w, data.train.num_classes, t).map_err(CliError::from_config)
}

/// Encode a dataset input as the victim (or judge) model consumes it.
fn encode_input(input: &ModelInput, spec: &ModelSpec) -> Result<ModelInput, CliError> {
    match (input, spec.kind) {
        (ModelInput::Image(img), ModelKind::Snn) => Ok(ModelInput::Spikes(
            replicate_image(img, spec.timesteps).map_err(CliError::from_data)?,
        )),
        (other, _) => Ok(other.clone()),
    }
}

fn encode_pairs(
    ds: &LabeledDataset,
    spec: &ModelSpec,
) -> Result<Vec<(ModelInput, usize)>, CliError> {
    ds.inputs
        .iter()
        .zip(&ds.labels)
        .map(|(x, &l)| Ok((encode_input(x, spec)?, l)))
        .collect()
}

/// Seeded distinct sample indices from a split (draw order kept).
pub fn select_samples(len: usize, n: usize, seed: u64) -> Result<Vec<usize>, CliError> {
    if n > len {
        return Err(CliError::config(format!(
            "requested {n} samples but the split holds only {len}"
        )));
    }
    let mut rng = rng_for(seed, "sample-select", 0);
    let mut pool: Vec<usize> = (0..len).collect();
    let mut picked = Vec::with_capacity(n);
    for _ in 0..n {
        let j = rng.random_range(0..pool.len());
        picked.push(pool.swap_remove(j));
    }
    Ok(picked)
}

/// Honest-but-curious interception: every selected sample goes through one
/// simulated client round and the attack reads the wire tap, never the
/// client's memory.
pub fn tap_victim_gradients(
    spec: &ModelSpec,
    params: &spikeleak::models::ParameterSet,
    neuron: &NeuronParams,
    samples: Vec<(ModelInput, usize)>,
) -> Result<Vec<GradientSet>, CliError> {
    let client = ClientState { client_id: 1, samples, spec, params, neuron };
    let mut msgs: Vec<GradientMessage> = Vec::with_capacity(client.samples.len());
    for i in 0..client.samples.len() {
        msgs.push(client.client_round(i, 0).map_err(CliError::from_data)?);
    }
    Ok(eavesdrop(&msgs).into_iter().map(|(_, g)| g).collect())
}

pub struct TrainJudgeOutput {
    pub accuracy: f64,
    pub checkpoint: PathBuf,
}

pub fn cmd_train_judge(cfg: &ExperimentConfig) -> Result<TrainJudgeOutput, CliError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?;
    let spec = victim_spec(cfg, &data)?;
    let neuron = NeuronParams::default();
    let train = encode_pairs(&data.train, &spec)?;
    let test = encode_pairs(&data.test, &spec)?;
    let judge = train_judge(&spec, &neuron, &train, &test, &cfg.judge_train_config())
        .map_err(CliError::from_config)?;

    let bytes = encode_checkpoint(&judge);
    write_file(&cfg.judge.checkpoint, &bytes)?;

    let mut manifest = Manifest::new("train-judge", cfg.resolved_seed(), cfg);
    for f in &data.files {
        manifest.add_input(f)?;
    }
    manifest.add_output(&cfg.judge.checkpoint)?;
    manifest.write(&cfg.out_dir)?;
    Ok(TrainJudgeOutput { accuracy: judge.test_accuracy, checkpoint: cfg.judge.checkpoint.clone() })
}

fn load_judge(cfg: &ExperimentConfig) -> Result<JudgeModel, CliError> {
    if !cfg.judge.checkpoint.is_file() {
        return Err(CliError::config(format!(
            "judge checkpoint {} does not exist",
            cfg.judge.checkpoint.display()
        )));
    }
    decode_checkpoint(&read(&cfg.judge.checkpoint)?).map_err(CliError::from_data)
}

/// Inputs an attack run needs per sample.
struct Victim {
    sample_id: usize,
    truth: ModelInput,
    label: usize,
    gradients: GradientSet,
}

fn metric_report(recon: &ModelInput, truth: &ModelInput) -> Result<MetricReport, CliError> {
    match (recon, truth) {
        (ModelInput::Image(r), ModelInput::Image(t)) => {
            image_metrics(r, t).map_err(CliError::from_data)
        }
        (ModelInput::Spikes(r), ModelInput::Spikes(t)) => {
            spike_metrics(r, t).map_err(CliError::from_data)
        }
        _ => Err(CliError::data("reconstruction and truth modality mismatch")),
    }
}

#[allow(clippy::too_many_arguments)]
fn row_from_outcome(
    cfg: &ExperimentConfig,
    dataset: &str,
    judge: &JudgeModel,
    v: &Victim,
    outcome: &AttackOutcome,
    attack: AttackKind,
    wall_ms: u64,
) -> Result<ResultRow, CliError> {
    let metrics = metric_report(&outcome.x, &v.truth)?;
    let judge_pred = predict(judge, &outcome.x).map_err(CliError::from_data)?[0];
    Ok(ResultRow {
        sample_id: v.sample_id,
        attack: attack.as_str().into(),
        model_kind: cfg.model.kind.clone(),
        dataset: dataset.into(),
        tau: cfg.attack.tau,
        strategy: cfg.attack.threshold_strategy()?.as_str().into(),
        status: outcome.status.as_str().into(),
        final_loss: outcome.final_loss(),
        mse: metrics.mse,
        psnr: metrics.psnr_db,
        ssim: metrics.ssim,
        l2: metrics.l2,
        judge_pred,
        true_label: v.label,
        iterations_run: outcome.iterations_run,
        wall_ms,
    })
}

/// Dummy modality for the configured dataset: spike trains for event data,
/// images (replicated inside the SNN graph) otherwise.
fn dummy_modality(cfg: &ExperimentConfig) -> DummyModality {
    match cfg.dataset.kind {
        DatasetKind::Gesture => DummyModality::SpikeTrain,
        _ => DummyModality::Image,
    }
}

fn run_one(
    target: AttackTarget,
    victim: &GradientSet,
    modality: DummyModality,
    acfg: &AttackConfig,
) -> Result<AttackOutcome, CliError> {
    match acfg.attack {
        AttackKind::Dlg => run_dlg(target, victim, 1, modality, acfg).map_err(CliError::from_data),
        AttackKind::Idlg => {
            run_idlg(target, victim, 1, modality, acfg).map_err(CliError::from_data)
        }
        AttackKind::Grnn => Err(CliError::config("grnn runs jointly, not per sample")),
    }
}

pub struct AttackOutput {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
    pub results_csv: PathBuf,
}

pub fn cmd_attack(cfg: &ExperimentConfig) -> Result<AttackOutput, CliError> {
    cfg.validate()?;
    let seed = cfg.resolved_seed();
    let data = load_dataset(cfg)?;
    let judge = load_judge(cfg)?;
    let spec = victim_spec(cfg, &data)?;
    let neuron = NeuronParams::default();
    let params = build_lenet(&spec, rng_for(seed, "victim-params", 0).random())
        .map_err(CliError::from_config)?;

    // Attacks target unseen samples; the judge was fit on the train split.
    let picked = select_samples(data.test.len(), cfg.attack.samples, seed)?;
    let mut client_samples = Vec::with_capacity(picked.len());
    for &idx in &picked {
        client_samples.push((encode_input(&data.test.inputs[idx], &spec)?, data.test.labels[idx]));
    }
    let grads = tap_victim_gradients(&spec, &params, &neuron, client_samples)?;
    let victims: Vec<Victim> = picked
        .iter()
        .zip(grads)
        .map(|(&idx, gradients)| Victim {
            sample_id: idx,
            truth: data.test.inputs[idx].clone(),
            label: data.test.labels[idx],
            gradients,
        })
        .collect();

    let modality = dummy_modality(cfg);
    let target = AttackTarget { spec: &spec, params: &params, neuron: &neuron };
    let attack = cfg.attack.attack_kind()?;

    let mut rows = Vec::with_capacity(victims.len());
    let mut recons: Vec<ModelInput> = Vec::with_capacity(victims.len());
    if attack == AttackKind::Grnn {
        // One generator trained across every intercepted gradient; labels come
        // from the analytic inference, not the private data.
        let sets: Vec<GradientSet> = victims.iter().map(|v| v.gradients.clone()).collect();
        let labels: Vec<usize> = sets
            .iter()
            .map(|g| infer_label_idlg(g).map_err(CliError::from_data))
            .collect::<Result<_, _>>()?;
        let t0 = Instant::now();
        let out =
            run_grnn(target, &sets, &labels, modality, &cfg.grnn_config()).map_err(CliError::from_data)?;
        let wall = if cfg.timing { t0.elapsed().as_millis() as u64 } else { 0 };
        for (v, recon) in victims.iter().zip(out.reconstructions) {
            let outcome = AttackOutcome {
                x: recon,
                labels: vec![],
                loss_trace: out.loss_trace.clone(),
                status: out.status,
                iterations_run: out.loss_trace.len(),
            };
            rows.push(row_from_outcome(cfg, &data.name, &judge, v, &outcome, attack, wall)?);
            recons.push(outcome.x);
        }
    } else {
        let acfg = cfg.attack_config()?;
        let outcomes = run_samples(cfg.workers, &victims, |v, i| {
            let per = AttackConfig { seed: rng_for(seed, "attack-seed", i as u64).random(), ..acfg };
            run_one(target, &v.gradients, modality, &per)
        })?;
        for (v, (outcome, wall)) in victims.iter().zip(outcomes) {
            let wall = if cfg.timing { wall } else { 0 };
            rows.push(row_from_outcome(cfg, &data.name, &judge, v, &outcome, attack, wall)?);
            recons.push(outcome.x);
        }
    }

    let sample_dir = cfg.out_dir.join("samples");
    for (v, recon) in victims.iter().zip(&recons) {
        dump_input(&sample_dir, &format!("{:04}_truth", v.sample_id), &v.truth)?;
        dump_input(&sample_dir, &format!("{:04}_recon", v.sample_id), recon)?;
    }

    let summary = Summary::from_rows(&rows);
    let results_csv = cfg.out_dir.join("results.csv");
    write_results_csv(&results_csv, &rows)?;
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;

    let mut manifest = Manifest::new("attack", seed, cfg);
    for f in &data.files {
        manifest.add_input(f)?;
    }
    manifest.add_input(&cfg.judge.checkpoint)?;
    manifest.add_output(&results_csv)?;
    manifest.add_output(&cfg.out_dir.join("summary.json"))?;
    manifest.write(&cfg.out_dir)?;

    if summary.completed == 0 {
        return Err(CliError::all_diverged(format!(
            "all {} attack runs diverged",
            summary.samples
        )));
    }
    Ok(AttackOutput { rows, summary, results_csv })
}

/// Run a closure over every victim, optionally fanning out over worker
/// threads on disjoint chunks. Output order matches input order regardless of
/// scheduling; wall times are per sample.
fn run_samples<F>(
    workers: usize,
    victims: &[Victim],
    f: F,
) -> Result<Vec<(AttackOutcome, u64)>, CliError>
where
    F: Fn(&Victim, usize) -> Result<AttackOutcome, CliError> + Sync,
{
    let timed = |v: &Victim, i: usize| -> Result<(AttackOutcome, u64), CliError> {
        let t0 = Instant::now();
        let out = f(v, i)?;
        Ok((out, t0.elapsed().as_millis() as u64))
    };
    if workers <= 1 || victims.len() <= 1 {
        return victims.iter().enumerate().map(|(i, v)| timed(v, i)).collect();
    }
    let chunk = victims.len().div_ceil(workers);
    let mut slots: Vec<Option<Result<(AttackOutcome, u64), CliError>>> = Vec::new();
    slots.resize_with(victims.len(), || None);
    std::thread::scope(|scope| {
        for (ci, (vs, out)) in
            victims.chunks(chunk).zip(slots.chunks_mut(chunk)).enumerate()
        {
            let timed = &timed;
            scope.spawn(move || {
                for (j, (v, slot)) in vs.iter().zip(out.iter_mut()).enumerate() {
                    *slot = Some(timed(v, ci * chunk + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

/// One aggregate line per (tau, strategy) cell.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SweepCell {
    pub attack: String,
    pub tau: f64,
    pub strategy: String,
    pub samples: usize,
    pub completed: usize,
    pub diverged: usize,
    pub asr: f64,
    pub l2_mean: f64,
}

pub struct SweepOutput {
    pub cells: Vec<SweepCell>,
    pub rows: Vec<ResultRow>,
    pub cells_csv: PathBuf,
}

pub fn cmd_sweep_tau(
    cfg: &ExperimentConfig,
    taus: &[f64],
    strategies: &[ThresholdStrategy],
) -> Result<SweepOutput, CliError> {
    cfg.validate()?;
    if cfg.dataset.kind != DatasetKind::Gesture {
        return Err(CliError::config("sweep-tau operates on the spike modality (gesture data)"));
    }
    let attack = cfg.attack.attack_kind()?;
    if attack == AttackKind::Grnn {
        return Err(CliError::config("sweep-tau sweeps the iterative attacks (dlg|idlg)"));
    }
    if taus.is_empty() || strategies.is_empty() {
        return Err(CliError::config("sweep needs at least one tau and one strategy"));
    }
    for &t in taus {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::config(format!("tau must lie in (0,1), got {t}")));
        }
    }
    if strategies.contains(&ThresholdStrategy::None) {
        return Err(CliError::config("sweep strategies are post|in"));
    }

    let seed = cfg.resolved_seed();
    let data = load_dataset(cfg)?;
    let judge = load_judge(cfg)?;
    let spec = victim_spec(cfg, &data)?;
    let neuron = NeuronParams::default();
    let params = build_lenet(&spec, rng_for(seed, "victim-params", 0).random())
        .map_err(CliError::from_config)?;
    let picked = select_samples(data.test.len(), cfg.attack.samples, seed)?;
    let mut client_samples = Vec::with_capacity(picked.len());
    for &idx in &picked {
        client_samples.push((data.test.inputs[idx].clone(), data.test.labels[idx]));
    }
    let grads = tap_victim_gradients(&spec, &params, &neuron, client_samples)?;
    let victims: Vec<Victim> = picked
        .iter()
        .zip(grads)
        .map(|(&idx, gradients)| Victim {
            sample_id: idx,
            truth: data.test.inputs[idx].clone(),
            label: data.test.labels[idx],
            gradients,
        })
        .collect();
    let target = AttackTarget { spec: &spec, params: &params, neuron: &neuron };
    let base_cfg = cfg.attack_config()?;

    // Post-opt thresholding is a pure post-process, so every post cell shares
    // one unthresholded base run per sample.
    let base_runs: Option<Vec<(AttackOutcome, u64)>> = if strategies
        .contains(&ThresholdStrategy::PostOpt)
    {
        let unthresholded =
            AttackConfig { strategy: ThresholdStrategy::None, tau: 0.5, ..base_cfg };
        Some(run_samples(cfg.workers, &victims, |v, i| {
            let per = AttackConfig {
                seed: rng_for(seed, "attack-seed", i as u64).random(),
                ..unthresholded
            };
            run_one(target, &v.gradients, DummyModality::SpikeTrain, &per)
        })?)
    } else {
        None
    };

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut cells: Vec<SweepCell> = Vec::new();
    for &strategy in strategies {
        for &tau in taus {
            let cell_outcomes: Vec<(AttackOutcome, u64)> = match strategy {
                ThresholdStrategy::PostOpt => base_runs
                    .as_ref()
                    .expect("base runs exist for post cells")
                    .iter()
                    .map(|(o, w)| -> Result<(AttackOutcome, u64), CliError> {
                        let ModelInput::Spikes(st) = &o.x else {
                            return Err(CliError::data("spike dummy expected"));
                        };
                        let bin = binarize_post(st, tau).map_err(CliError::from_data)?;
                        Ok((AttackOutcome { x: ModelInput::Spikes(bin), ..o.clone() }, *w))
                    })
                    .collect::<Result<_, _>>()?,
                ThresholdStrategy::InOpt => {
                    let in_cfg =
                        AttackConfig { strategy: ThresholdStrategy::InOpt, tau, ..base_cfg };
                    run_samples(cfg.workers, &victims, |v, i| {
                        let per = AttackConfig {
                            seed: rng_for(seed, "attack-seed", i as u64).random(),
                            ..in_cfg
                        };
                        run_one(target, &v.gradients, DummyModality::SpikeTrain, &per)
                    })?
                }
                ThresholdStrategy::None => unreachable!("rejected above"),
            };

            let mut cell_rows = Vec::with_capacity(victims.len());
            for (v, (outcome, wall)) in victims.iter().zip(&cell_outcomes) {
                let wall = if cfg.timing { *wall } else { 0 };
                let mut row =
                    row_from_outcome(cfg, &data.name, &judge, v, outcome, attack, wall)?;
                row.tau = tau;
                row.strategy = strategy.as_str().into();
                cell_rows.push(row);
            }
            let done: Vec<&ResultRow> =
                cell_rows.iter().filter(|r| r.status == "completed").collect();
            let n = done.len().max(1) as f64;
            cells.push(SweepCell {
                attack: attack.as_str().into(),
                tau,
                strategy: strategy.as_str().into(),
                samples: cell_rows.len(),
                completed: done.len(),
                diverged: cell_rows.iter().filter(|r| r.status == "diverged").count(),
                asr: 100.0 * done.iter().filter(|r| r.judge_pred == r.true_label).count() as f64
                    / n,
                l2_mean: done.iter().map(|r| r.l2).sum::<f64>() / n,
            });
            rows.extend(cell_rows);
        }
    }

    let results_csv = cfg.out_dir.join("results.csv");
    write_results_csv(&results_csv, &rows)?;
    let cells_csv = cfg.out_dir.join("cells.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in &cells {
        w.serialize(c).map_err(|e| CliError::data(format!("csv serialize: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(format!("csv flush: {e}")))?;
    write_file(&cells_csv, &bytes)?;

    let mut manifest = Manifest::new("sweep-tau", seed, cfg);
    manifest.add_input(&cfg.judge.checkpoint)?;
    manifest.add_output(&results_csv)?;
    manifest.add_output(&cells_csv)?;
    manifest.write(&cfg.out_dir)?;

    if rows.iter().all(|r| r.status != "completed") {
        return Err(CliError::all_diverged("every sweep run diverged"));
    }
    Ok(SweepOutput { cells, rows, cells_csv })
}

pub struct RefStatsOutput {
    pub csv_path: PathBuf,
    pub stats: spikeleak::eval::ReferenceStats,
}

pub fn cmd_ref_stats(cfg: &ExperimentConfig) -> Result<RefStatsOutput, CliError> {
    cfg.validate()?;
    if cfg.dataset.kind != DatasetKind::Gesture {
        return Err(CliError::config("ref-stats reads spike data (gesture dataset)"));
    }
    let data = load_dataset(cfg)?;
    let tensors: Vec<spikeleak::codec::SpikeTensor> = data
        .train
        .inputs
        .iter()
        .map(|x| match x {
            ModelInput::Spikes(st) => st.clone(),
            ModelInput::Image(_) => unreachable!("gesture data is spikes"),
        })
        .collect();
    let stats =
        reference_l2_stats(&tensors, &data.train.labels).map_err(CliError::from_data)?;

    let mut out = String::from("type,mean,std,min,max\n");
    for (name, line) in [("intra", &stats.intra), ("inter", &stats.inter)] {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            name, line.mean, line.std, line.min, line.max
        ));
    }
    let csv_path = cfg.out_dir.join("ref_stats.csv");
    write_file(&csv_path, out.as_bytes())?;

    let mut manifest = Manifest::new("ref-stats", cfg.resolved_seed(), cfg);
    manifest.add_output(&csv_path)?;
    manifest.write(&cfg.out_dir)?;
    Ok(RefStatsOutput { csv_path, stats })
}

/// Exercised by `attack` when the victim is spiking and thresholding is
/// configured; re-exported for tests that need direct access.
pub use spikeleak::attacks::binarize_post as binarize;
