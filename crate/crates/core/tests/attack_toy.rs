//! End-to-end attack behavior on a desk-size victim (8x8 grayscale, 4
//! classes). Large enough to show the leakage/resistance split, small
//! enough to run in seconds.

use rand::Rng;

use spikeleak::attacks::{
    run_dlg, run_grnn, run_idlg, AttackConfig, AttackKind, AttackStatus, AttackTarget,
    DummyModality, GrnnConfig,
};
use spikeleak::codec::{replicate_image, ImageTensor};
use spikeleak::eval::ssim;
use spikeleak::models::{
    build_lenet, compute_victim_gradients, GradientSet, ModelInput, ModelKind, ModelSpec,
    NeuronParams, ParameterSet,
};
use spikeleak::util::rng_for;

const K: usize = 4;

fn toy_spec(kind: ModelKind, t: usize) -> ModelSpec {
    ModelSpec::lenet(kind, 1, 8, 8, K, t).unwrap()
}

fn toy_image(seed: u64) -> ImageTensor {
    let mut rng = rng_for(seed, "toy-image", 0);
    ImageTensor::new((0..64).map(|_| rng.random::<f64>()).collect(), 1, 1, 8, 8).unwrap()
}

fn ann_victim(
    spec: &ModelSpec,
    params: &ParameterSet,
    img: &ImageTensor,
    label: usize,
) -> GradientSet {
    let input = ModelInput::Image(img.clone());
    compute_victim_gradients(spec, params, &input, label, &NeuronParams::default()).unwrap()
}

fn recon_image(x: &ModelInput) -> &ImageTensor {
    match x {
        ModelInput::Image(img) => img,
        ModelInput::Spikes(_) => panic!("expected an image reconstruction"),
    }
}

fn iters_to(trace: &[f64], threshold: f64) -> Option<usize> {
    trace.iter().position(|&l| l < threshold)
}

#[test]
fn dlg_reconstructs_a_toy_ann_input() {
    let spec = toy_spec(ModelKind::Ann, 1);
    let params = build_lenet(&spec, 42).unwrap();
    let truth = toy_image(7);
    let label = 2;
    let victim = ann_victim(&spec, &params, &truth, label);

    let cfg = AttackConfig { iterations: 100, seed: 5, ..Default::default() };
    let target = AttackTarget { spec: &spec, params: &params, neuron: &NeuronParams::default() };
    let out = run_dlg(target, &victim, 1, DummyModality::Image, &cfg).unwrap();

    assert_eq!(out.status, AttackStatus::Completed);
    let s = ssim(recon_image(&out.x), &truth).unwrap();
    println!("dlg: final loss {:.3e}, ssim {:.4}, label {:?}", out.final_loss(), s, out.labels);
    assert!(s >= 0.8, "DLG ssim {s}");
    assert_eq!(out.labels, vec![label]);
}

#[test]
fn idlg_converges_no_slower_and_agrees_on_the_label() {
    let spec = toy_spec(ModelKind::Ann, 1);
    let params = build_lenet(&spec, 42).unwrap();
    let truth = toy_image(11);
    let label = 3;
    let victim = ann_victim(&spec, &params, &truth, label);
    let target = AttackTarget { spec: &spec, params: &params, neuron: &NeuronParams::default() };

    let cfg = AttackConfig { iterations: 100, seed: 9, ..Default::default() };
    let dlg = run_dlg(target, &victim, 1, DummyModality::Image, &cfg).unwrap();
    let idlg_cfg = AttackConfig { attack: AttackKind::Idlg, ..cfg };
    let idlg = run_idlg(target, &victim, 1, DummyModality::Image, &idlg_cfg).unwrap();

    let s_dlg = ssim(recon_image(&dlg.x), &truth).unwrap();
    let s_idlg = ssim(recon_image(&idlg.x), &truth).unwrap();
    let it_dlg = iters_to(&dlg.loss_trace, 1e-4);
    let it_idlg = iters_to(&idlg.loss_trace, 1e-4);
    println!(
        "dlg: ssim {s_dlg:.4} iters-to-1e-4 {it_dlg:?}; idlg: ssim {s_idlg:.4} iters-to-1e-4 {it_idlg:?}"
    );

    assert_eq!(idlg.labels, vec![label], "analytic label must be exact");
    assert!(s_idlg >= 0.8, "iDLG ssim {s_idlg}");
    let (a, b) = (it_idlg.expect("iDLG converged"), it_dlg.expect("DLG converged"));
    assert!(a <= b, "iDLG took {a} iterations, DLG {b}");
    // Converged runs agree on the recovered label.
    assert_eq!(dlg.labels, idlg.labels);
}

#[test]
fn grnn_reads_ann_gradients_but_not_snn_gradients() {
    let ann_spec = toy_spec(ModelKind::Ann, 1);
    let snn_spec = toy_spec(ModelKind::Snn, 8);
    let ann_params = build_lenet(&ann_spec, 42).unwrap();
    let snn_params = build_lenet(&snn_spec, 42).unwrap();
    let neuron = NeuronParams::default();

    let n = 8;
    let truths: Vec<ImageTensor> = (0..n).map(|i| toy_image(100 + i as u64)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % K).collect();

    let ann_victims: Vec<GradientSet> = truths
        .iter()
        .zip(&labels)
        .map(|(img, &l)| ann_victim(&ann_spec, &ann_params, img, l))
        .collect();
    let snn_victims: Vec<GradientSet> = truths
        .iter()
        .zip(&labels)
        .map(|(img, &l)| {
            let input = ModelInput::Spikes(replicate_image(img, snn_spec.timesteps).unwrap());
            compute_victim_gradients(&snn_spec, &snn_params, &input, l, &neuron).unwrap()
        })
        .collect();

    let cfg = GrnnConfig::default();
    let ann_target = AttackTarget { spec: &ann_spec, params: &ann_params, neuron: &neuron };
    let snn_target = AttackTarget { spec: &snn_spec, params: &snn_params, neuron: &neuron };
    let ann_out = run_grnn(ann_target, &ann_victims, &labels, DummyModality::Image, &cfg).unwrap();
    let snn_out = run_grnn(snn_target, &snn_victims, &labels, DummyModality::Image, &cfg).unwrap();

    assert_eq!(ann_out.status, AttackStatus::Completed);
    assert_eq!(snn_out.status, AttackStatus::Completed);
    let mean_ssim = |outs: &[ModelInput]| {
        outs.iter()
            .zip(&truths)
            .map(|(x, t)| ssim(recon_image(x), t).unwrap())
            .sum::<f64>()
            / n as f64
    };
    let s_ann = mean_ssim(&ann_out.reconstructions);
    let s_snn = mean_ssim(&snn_out.reconstructions);
    println!(
        "grnn ann: loss {:.4e} -> {:.4e}, ssim {s_ann:.4}; snn: loss {:.4e} -> {:.4e}, ssim {s_snn:.4}",
        ann_out.loss_trace[0],
        ann_out.loss_trace.last().unwrap(),
        snn_out.loss_trace[0],
        snn_out.loss_trace.last().unwrap(),
    );

    assert!(ann_out.loss_trace.last().unwrap() < &(0.5 * ann_out.loss_trace[0]));
    assert!(s_ann >= 0.4, "GRNN on ANN gradients: mean ssim {s_ann}");
    assert!(s_ann - s_snn >= 0.3, "separation {s_ann} - {s_snn}");
}

#[test]
fn dlg_degrades_on_the_spiking_twin() {
    let ann_spec = toy_spec(ModelKind::Ann, 1);
    let snn_spec = toy_spec(ModelKind::Snn, 4);
    let ann_params = build_lenet(&ann_spec, 42).unwrap();
    let snn_params = build_lenet(&snn_spec, 42).unwrap();
    let neuron = NeuronParams::default();
    let cfg = AttackConfig { iterations: 100, seed: 3, ..Default::default() };

    let mut s_ann_total = 0.0;
    let mut s_snn_total = 0.0;
    let trials = 3;
    for i in 0..trials {
        let truth = toy_image(200 + i);
        let label = (i as usize) % K;
        let ann_g = ann_victim(&ann_spec, &ann_params, &truth, label);
        let ann_target =
            AttackTarget { spec: &ann_spec, params: &ann_params, neuron: &neuron };
        let ann_out = run_dlg(ann_target, &ann_g, 1, DummyModality::Image, &cfg).unwrap();
        s_ann_total += ssim(recon_image(&ann_out.x), &truth).unwrap();

        let input = ModelInput::Spikes(replicate_image(&truth, snn_spec.timesteps).unwrap());
        let snn_g =
            compute_victim_gradients(&snn_spec, &snn_params, &input, label, &neuron).unwrap();
        let snn_target =
            AttackTarget { spec: &snn_spec, params: &snn_params, neuron: &neuron };
        let snn_out = run_dlg(snn_target, &snn_g, 1, DummyModality::Image, &cfg).unwrap();
        s_snn_total += ssim(recon_image(&snn_out.x), &truth).unwrap();
    }
    let (s_ann, s_snn) = (s_ann_total / trials as f64, s_snn_total / trials as f64);
    println!("dlg mean ssim: ann {s_ann:.4}, snn {s_snn:.4}");
    assert!(s_snn < s_ann, "spiking resistance direction: snn {s_snn} vs ann {s_ann}");
}
