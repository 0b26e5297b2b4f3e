//! Finite-difference oracles for the autodiff engine.
//!
//! Every differentiable primitive, the composed network graphs, and the
//! second-order path (gradient of a gradient-matching loss) are checked
//! against central differences with h = 1e-5. The comparison is
//! |auto - fd| <= tol * max(1, |auto|, |fd|), the usual mixed
//! absolute/relative criterion.
//!
//! The spike step is the one deliberate exception: its forward is hard, so
//! its backward is compared against the analytic derivative of the smooth
//! arctan primitive it stands in for, and composed recurrent graphs are
//! checked with a smooth sigmoid gate in place of the step so the finite
//! difference of the whole graph is well-defined.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spikeleak::tensor::{
    avg_pool2, broadcast_row, conv2d, fill_like, linear, log_softmax, one_hot, pad_outer,
    slice_outer, softmax, softmax_cross_entropy, spike_heaviside_atan, sq_diff_sum, Graph, Tensor,
};

const H: f64 = 1e-5;

type Build = dyn Fn(&Graph, &[Tensor]) -> Tensor;

fn rel_ok(auto: f64, fd: f64, tol: f64) -> bool {
    (auto - fd).abs() <= tol * auto.abs().max(fd.abs()).max(1.0)
}

fn eval(inputs: &[(Vec<usize>, Vec<f64>)], build: &Build) -> f64 {
    let g = Graph::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| g.leaf(data.clone(), shape, true).unwrap())
        .collect();
    build(&g, &leaves).item()
}

/// Check d(build)/d(input_i) for every input element against central
/// differences.
fn gradcheck(name: &str, inputs: &[(Vec<usize>, Vec<f64>)], build: &Build, tol: f64) {
    let g = Graph::new();
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| g.leaf(data.clone(), shape, true).unwrap())
        .collect();
    let root = build(&g, &leaves);
    assert_eq!(root.numel(), 1, "{name}: build must produce a scalar");
    let grads = root.backward().unwrap();

    for (i, (_, data)) in inputs.iter().enumerate() {
        let auto = grads.wrt(&leaves[i]).unwrap().to_vec();
        for j in 0..data.len() {
            let mut plus = inputs.to_vec();
            plus[i].1[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].1[j] -= H;
            let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * H);
            assert!(
                rel_ok(auto[j], fd, tol),
                "{name}: input {i} element {j}: autodiff {} vs finite difference {}",
                auto[j],
                fd
            );
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Root = sum(out * cot) with a fixed random cotangent, so output gradients
/// are non-uniform.
fn weighted(out: &Tensor, cot: &[f64]) -> Tensor {
    let c = out.graph().constant(cot.to_vec(), &out.shape()).unwrap();
    out.mul(&c).unwrap().sum_all()
}

#[test]
fn elementwise_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 12;
    let cot = rand_vec(&mut rng, n, -1.0, 1.0);

    let cases: Vec<(&str, Vec<f64>, Box<Build>)> = vec![
        ("add", rand_vec(&mut rng, 2 * n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g: &Graph, l: &[Tensor]| weighted(&l[0].add(&l[1]).unwrap(), &cot))
        }),
        ("sub", rand_vec(&mut rng, 2 * n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l| weighted(&l[0].sub(&l[1]).unwrap(), &cot))
        }),
        ("mul", rand_vec(&mut rng, 2 * n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l| weighted(&l[0].mul(&l[1]).unwrap(), &cot))
        }),
    ];

    for (name, flat, build) in cases {
        let inputs = vec![(vec![n], flat[..n].to_vec()), (vec![n], flat[n..].to_vec())];
        gradcheck(name, &inputs, build.as_ref(), 1e-4);
    }
}

#[test]
fn unary_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 12;
    let cot = rand_vec(&mut rng, n, -1.0, 1.0);

    let unary_cases: Vec<(&str, Vec<f64>, Box<Build>)> = vec![
        ("scale", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].scale(-1.7), &cot))
        }),
        ("shift", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].shift(0.9), &cot))
        }),
        ("exp", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].exp(), &cot))
        }),
        ("ln", rand_vec(&mut rng, n, 0.5, 2.5), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].ln(), &cot))
        }),
        ("recip", rand_vec(&mut rng, n, 0.5, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].recip(), &cot))
        }),
        ("sigmoid", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].sigmoid(), &cot))
        }),
        ("softplus", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].softplus(), &cot))
        }),
        ("tanh", rand_vec(&mut rng, n, -2.0, 2.0), {
            let cot = cot.clone();
            Box::new(move |_g, l: &[Tensor]| weighted(&l[0].tanh(), &cot))
        }),
    ];

    for (name, data, build) in unary_cases {
        gradcheck(name, &[(vec![n], data)], build.as_ref(), 1e-4);
    }
}

#[test]
fn structural_primitives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);

    // matmul [3,4] x [4,2]
    {
        let cot = rand_vec(&mut rng, 6, -1.0, 1.0);
        let a = rand_vec(&mut rng, 12, -2.0, 2.0);
        let b = rand_vec(&mut rng, 8, -2.0, 2.0);
        gradcheck(
            "matmul",
            &[(vec![3, 4], a), (vec![4, 2], b)],
            &move |_g, l| weighted(&l[0].matmul(&l[1]).unwrap(), &cot),
            1e-4,
        );
    }
    // transpose + reshape + sum_rows
    {
        let cot = rand_vec(&mut rng, 4, -1.0, 1.0);
        let a = rand_vec(&mut rng, 12, -2.0, 2.0);
        gradcheck(
            "transpose_reshape_sum_rows",
            &[(vec![3, 4], a)],
            &move |_g, l| {
                let t = l[0].transpose().unwrap().reshape(&[3, 4]).unwrap();
                weighted(&t.sum_rows().unwrap(), &cot)
            },
            1e-4,
        );
    }
    // broadcast_row + fill_like + slice/pad
    {
        let cot = rand_vec(&mut rng, 15, -1.0, 1.0);
        let a = rand_vec(&mut rng, 5, -2.0, 2.0);
        gradcheck(
            "broadcast_row",
            &[(vec![5], a)],
            &move |_g, l| weighted(&broadcast_row(&l[0], 3).unwrap(), &cot),
            1e-4,
        );

        let cot2 = rand_vec(&mut rng, 8, -1.0, 1.0);
        let s = rand_vec(&mut rng, 1, -2.0, 2.0);
        gradcheck(
            "fill_like",
            &[(vec![1], s)],
            &move |_g, l| weighted(&fill_like(&l[0], &[2, 4]).unwrap(), &cot2),
            1e-4,
        );

        let cot3 = rand_vec(&mut rng, 6, -1.0, 1.0);
        let x = rand_vec(&mut rng, 18, -2.0, 2.0);
        gradcheck(
            "slice_outer",
            &[(vec![3, 6], x)],
            &move |_g, l| weighted(&slice_outer(&l[0], 1).unwrap(), &cot3),
            1e-4,
        );

        let cot4 = rand_vec(&mut rng, 12, -1.0, 1.0);
        let y = rand_vec(&mut rng, 4, -2.0, 2.0);
        gradcheck(
            "pad_outer",
            &[(vec![2, 2], y)],
            &move |_g, l| weighted(&pad_outer(&l[0], 2, 3).unwrap(), &cot4),
            1e-4,
        );
    }
    // avg_pool2
    {
        let cot = rand_vec(&mut rng, 8, -1.0, 1.0);
        let x = rand_vec(&mut rng, 32, -2.0, 2.0);
        gradcheck(
            "avg_pool2",
            &[(vec![1, 2, 4, 4], x)],
            &move |_g, l| weighted(&avg_pool2(&l[0]).unwrap(), &cot),
            1e-4,
        );
    }
}

#[test]
fn conv2d_gradients_match_finite_differences_tightly() {
    // The stated oracle: random 1x2x5x5 input, gradient of sum(output) w.r.t.
    // the weight to relative error < 1e-6. Input and bias held to the same bar.
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_vec(&mut rng, 2 * 25, -2.0, 2.0);
    let w = rand_vec(&mut rng, 3 * 2 * 9, -2.0, 2.0);
    let b = rand_vec(&mut rng, 3, -2.0, 2.0);
    gradcheck(
        "conv2d_sum",
        &[(vec![1, 2, 5, 5], x), (vec![3, 2, 3, 3], w), (vec![3], b)],
        &|_g, l| conv2d(&l[0], &l[1], &l[2], 2, 1).unwrap().sum_all(),
        1e-6,
    );
}

#[test]
fn linear_gradients_match_finite_differences_tightly() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let cot = rand_vec(&mut rng, 2 * 3, -1.0, 1.0);
    let x = rand_vec(&mut rng, 2 * 5, -2.0, 2.0);
    let w = rand_vec(&mut rng, 3 * 5, -2.0, 2.0);
    let b = rand_vec(&mut rng, 3, -2.0, 2.0);
    gradcheck(
        "linear",
        &[(vec![2, 5], x), (vec![3, 5], w), (vec![3], b)],
        &move |_g, l| weighted(&linear(&l[0], &l[1], &l[2]).unwrap(), &cot),
        1e-6,
    );
}

#[test]
fn softmax_family_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    {
        let cot = rand_vec(&mut rng, 8, -1.0, 1.0);
        let z = rand_vec(&mut rng, 8, -2.0, 2.0);
        gradcheck(
            "softmax",
            &[(vec![2, 4], z)],
            &move |_g, l| weighted(&softmax(&l[0]).unwrap(), &cot),
            1e-4,
        );
    }
    {
        let cot = rand_vec(&mut rng, 8, -1.0, 1.0);
        let z = rand_vec(&mut rng, 8, -2.0, 2.0);
        gradcheck(
            "log_softmax",
            &[(vec![2, 4], z)],
            &move |_g, l| weighted(&log_softmax(&l[0]).unwrap(), &cot),
            1e-4,
        );
    }
    // One-hot target: gradient w.r.t. logits only.
    {
        let z = rand_vec(&mut rng, 8, -2.0, 2.0);
        gradcheck(
            "cross_entropy_one_hot",
            &[(vec![2, 4], z)],
            &|g, l| {
                let t = one_hot(g, &[1, 3], 4).unwrap();
                softmax_cross_entropy(&l[0], &t).unwrap()
            },
            1e-4,
        );
    }
    // Soft target produced by a softmax over a second trainable leaf: both
    // sides must be differentiable (the DLG dummy-label path).
    {
        let z = rand_vec(&mut rng, 8, -2.0, 2.0);
        let y = rand_vec(&mut rng, 8, -2.0, 2.0);
        gradcheck(
            "cross_entropy_soft_label",
            &[(vec![2, 4], z), (vec![2, 4], y)],
            &|_g, l| {
                let t = softmax(&l[1]).unwrap();
                softmax_cross_entropy(&l[0], &t).unwrap()
            },
            1e-4,
        );
    }
}

#[test]
fn spike_surrogate_matches_arctan_primitive_derivative() {
    // Oracle: the smooth primitive is (1/pi) atan((pi/2) alpha v) + 1/2.
    // Its derivative is computed analytically and by finite differences,
    // then compared with the surrogate factor the backward pass applies.
    let alpha = 2.0;
    let prim = |v: f64| (std::f64::consts::FRAC_PI_2 * alpha * v).atan() / std::f64::consts::PI + 0.5;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 24;
    let vals = rand_vec(&mut rng, n, -2.0, 2.0);
    let cot = rand_vec(&mut rng, n, -1.0, 1.0);

    let g = Graph::new();
    let v = g.leaf(vals.clone(), &[n], true).unwrap();
    let s = spike_heaviside_atan(&v, alpha).unwrap();
    let root = weighted(&s, &cot);
    let auto = root.backward().unwrap().wrt(&v).unwrap().to_vec();

    for j in 0..n {
        let fd = (prim(vals[j] + H) - prim(vals[j] - H)) / (2.0 * H) * cot[j];
        let analytic = alpha / (2.0 * (1.0 + (std::f64::consts::FRAC_PI_2 * alpha * vals[j]).powi(2))) * cot[j];
        assert!(rel_ok(auto[j], fd, 1e-6), "fd: {} vs {}", auto[j], fd);
        assert!(rel_ok(auto[j], analytic, 1e-12), "analytic: {} vs {}", auto[j], analytic);
    }
}

/// Small feedforward stack: conv -> sigmoid -> conv -> sigmoid -> flatten ->
/// linear -> cross-entropy. End-to-end check of the composed graph.
#[test]
fn composed_ann_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = rand_vec(&mut rng, 36, 0.0, 1.0);
    let w1 = rand_vec(&mut rng, 2 * 1 * 9, -0.5, 0.5);
    let b1 = rand_vec(&mut rng, 2, -0.5, 0.5);
    let w2 = rand_vec(&mut rng, 2 * 2 * 9, -0.5, 0.5);
    let b2 = rand_vec(&mut rng, 2, -0.5, 0.5);
    let wf = rand_vec(&mut rng, 3 * 18, -0.5, 0.5);
    let bf = rand_vec(&mut rng, 3, -0.5, 0.5);

    gradcheck(
        "composed_ann",
        &[
            (vec![1, 1, 6, 6], x),
            (vec![2, 1, 3, 3], w1),
            (vec![2], b1),
            (vec![2, 2, 3, 3], w2),
            (vec![2], b2),
            (vec![3, 18], wf),
            (vec![3], bf),
        ],
        &|g, l| {
            let h1 = conv2d(&l[0], &l[1], &l[2], 2, 1).unwrap().sigmoid();
            let h2 = conv2d(&h1, &l[3], &l[4], 1, 1).unwrap().sigmoid();
            let flat = h2.reshape(&[1, 18]).unwrap();
            let logits = linear(&flat, &l[5], &l[6]).unwrap();
            let t = one_hot(g, &[2], 3).unwrap();
            softmax_cross_entropy(&logits, &t).unwrap()
        },
        1e-4,
    );
}

/// Recurrent membrane graph with a smooth sigmoid gate standing in for the
/// spike step: v_t = v_{t-1} (1 - s_{t-1}) + conv(x_t); s_t = gate(v_t - 1).
/// Validates the BPTT wiring (slice, accumulate, reset) by exact finite
/// differences, which the hard step would not admit.
#[test]
fn composed_recurrent_graph_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let steps = 3;
    let x = rand_vec(&mut rng, steps * 16, 0.0, 1.0);
    let w = rand_vec(&mut rng, 2 * 1 * 9, -0.7, 0.7);
    let b = rand_vec(&mut rng, 2, -0.5, 0.5);
    let wf = rand_vec(&mut rng, 2 * 8, -0.7, 0.7);
    let bf = rand_vec(&mut rng, 2, -0.5, 0.5);

    gradcheck(
        "composed_recurrent",
        &[
            (vec![steps, 1, 1, 4, 4], x),
            (vec![2, 1, 3, 3], w),
            (vec![2], b),
            (vec![2, 8], wf),
            (vec![2], bf),
        ],
        &|g, l| {
            let mut v: Option<Tensor> = None;
            let mut acc: Option<Tensor> = None;
            for t in 0..3 {
                let xt = slice_outer(&l[0], t).unwrap();
                let i = conv2d(&xt, &l[1], &l[2], 2, 1).unwrap();
                let vt = match v {
                    None => i,
                    Some(prev) => prev.add(&i).unwrap(),
                };
                let gate = vt.shift(-1.0).scale(4.0).sigmoid();
                // soft reset: v <- v (1 - gate)
                v = Some(vt.mul(&gate.scale(-1.0).shift(1.0)).unwrap());
                let flat = gate.reshape(&[1, 8]).unwrap();
                let logits = linear(&flat, &l[3], &l[4]).unwrap();
                acc = Some(match acc {
                    None => logits,
                    Some(prev) => prev.add(&logits).unwrap(),
                });
            }
            let mean_logits = acc.unwrap().scale(1.0 / 3.0);
            let t = one_hot(g, &[1], 2).unwrap();
            softmax_cross_entropy(&mean_logits, &t).unwrap()
        },
        1e-4,
    );
}

/// Second-order oracle: D(x) = sum_l ||dL/dW_l (x) - v_l||^2 where the inner
/// gradients come from a full backward pass. dD/dx via autodiff must match
/// finite differences of the scalar function D evaluated from scratch.
#[test]
fn gradient_of_gradient_matching_loss_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let x0 = rand_vec(&mut rng, 16, 0.0, 1.0);
    let w1 = rand_vec(&mut rng, 2 * 1 * 9, -0.7, 0.7);
    let b1 = rand_vec(&mut rng, 2, -0.3, 0.3);
    let wf = rand_vec(&mut rng, 3 * 8, -0.7, 0.7);
    let bf = rand_vec(&mut rng, 3, -0.3, 0.3);
    let victims: Vec<Vec<f64>> = vec![
        rand_vec(&mut rng, 18, -0.1, 0.1),
        rand_vec(&mut rng, 2, -0.1, 0.1),
        rand_vec(&mut rng, 24, -0.1, 0.1),
        rand_vec(&mut rng, 3, -0.1, 0.1),
    ];

    let eval_d = |xv: &[f64]| -> (f64, Option<Vec<f64>>) {
        let g = Graph::new();
        let x = g.leaf(xv.to_vec(), &[1, 1, 4, 4], true).unwrap();
        let params = [
            g.leaf(w1.clone(), &[2, 1, 3, 3], true).unwrap(),
            g.leaf(b1.clone(), &[2], true).unwrap(),
            g.leaf(wf.clone(), &[3, 8], true).unwrap(),
            g.leaf(bf.clone(), &[3], true).unwrap(),
        ];
        let h = conv2d(&x, &params[0], &params[1], 2, 1).unwrap().sigmoid();
        let flat = h.reshape(&[1, 8]).unwrap();
        let logits = linear(&flat, &params[2], &params[3]).unwrap();
        let t = one_hot(&g, &[1], 3).unwrap();
        let loss = softmax_cross_entropy(&logits, &t).unwrap();
        let inner = loss.backward_wrt(&params).unwrap();

        let mut d: Option<Tensor> = None;
        for (p, v) in params.iter().zip(&victims) {
            let gp = inner.wrt(p).unwrap();
            let vt = g.constant(v.clone(), &p.shape()).unwrap();
            let term = sq_diff_sum(&gp, &vt).unwrap();
            d = Some(match d {
                None => term,
                Some(prev) => prev.add(&term).unwrap(),
            });
        }
        let d = d.unwrap();
        let dv = d.item();
        let outer = d.backward_wrt(std::slice::from_ref(&x)).unwrap();
        (dv, Some(outer.wrt(&x).unwrap().to_vec()))
    };

    let (_, auto) = eval_d(&x0);
    let auto = auto.unwrap();
    for j in 0..x0.len() {
        let mut plus = x0.clone();
        plus[j] += H;
        let mut minus = x0.clone();
        minus[j] -= H;
        let fd = (eval_d(&plus).0 - eval_d(&minus).0) / (2.0 * H);
        assert!(
            rel_ok(auto[j], fd, 1e-4),
            "second-order element {j}: autodiff {} vs finite difference {}",
            auto[j],
            fd
        );
    }
}

#[test]
fn backward_is_bit_deterministic() {
    let run = || -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = rand_vec(&mut rng, 36, -1.0, 1.0);
        let w = rand_vec(&mut rng, 2 * 9, -1.0, 1.0);
        let g = Graph::new();
        let xt = g.leaf(x, &[1, 1, 6, 6], true).unwrap();
        let wt = g.leaf(w, &[2, 1, 3, 3], true).unwrap();
        let bt = g.leaf(vec![0.1, -0.2], &[2], true).unwrap();
        let y = conv2d(&xt, &wt, &bt, 1, 1).unwrap().sigmoid().sum_all();
        let grads = y.backward().unwrap();
        let mut bits = Vec::new();
        for t in [&xt, &wt, &bt] {
            bits.extend(grads.wrt(t).unwrap().to_vec().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}

/// The GRNN trainer's first update must encode the true gradient of the mean
/// match loss w.r.t. the generator weights: running one fixed-step epoch and
/// reading (w0 - w1)/lr back recovers it, checked against central
/// differences of the value-level loss pipeline.
#[test]
fn grnn_update_matches_finite_differences() {
    use spikeleak::attacks::{run_grnn, AttackTarget, DummyModality, GrnnConfig};
    use spikeleak::codec::ImageTensor;
    use spikeleak::models::{
        build_lenet, compute_victim_gradients, ModelInput, ModelKind, ModelSpec, NeuronParams,
    };

    let spec = ModelSpec::lenet(ModelKind::Ann, 1, 8, 8, 4, 1).unwrap();
    let params = build_lenet(&spec, 31).unwrap();
    let neuron = NeuronParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mk = |rng: &mut ChaCha8Rng, label: usize| {
        let img = ImageTensor::new(rand_vec(rng, 64, 0.0, 1.0), 1, 1, 8, 8).unwrap();
        compute_victim_gradients(&spec, &params, &ModelInput::Image(img), label, &neuron).unwrap()
    };
    let victims = vec![mk(&mut rng, 2), mk(&mut rng, 0)];
    let labels = [2usize, 0];

    let value_loss = |weights: &[std::rc::Rc<Vec<f64>>]| -> f64 {
        let cfg = GrnnConfig { hidden: 6, epochs: 1, lr: 1.0, seed: 3 };
        let mut gen = spikeleak::attacks::GrnnGenerator::new(
            victims[0].tensors.iter().map(|t| t.data.len()).sum(),
            cfg.hidden,
            64,
            DummyModality::Image,
            cfg.seed,
        );
        gen.weights = weights.to_vec();
        let mut total = 0.0;
        for (v, &l) in victims.iter().zip(&labels) {
            let x = gen.generate(v).unwrap();
            let input = ModelInput::Image(ImageTensor::new(x, 1, 1, 8, 8).unwrap());
            let dummy = compute_victim_gradients(&spec, &params, &input, l, &neuron).unwrap();
            total += spikeleak::attacks::gradient_match_loss(&dummy, v).unwrap();
        }
        total / victims.len() as f64
    };

    let lr = 1.0;
    let cfg = GrnnConfig { hidden: 6, epochs: 1, lr, seed: 3 };
    let target = AttackTarget { spec: &spec, params: &params, neuron: &neuron };
    let before = spikeleak::attacks::GrnnGenerator::new(
        victims[0].tensors.iter().map(|t| t.data.len()).sum(),
        cfg.hidden,
        64,
        DummyModality::Image,
        cfg.seed,
    );
    let out = run_grnn(target, &victims, &labels, DummyModality::Image, &cfg).unwrap();
    let after = &out.generator.weights;

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0usize;
    for ti in 0..before.weights.len() {
        let n = before.weights[ti].len();
        for _ in 0..4 {
            let j = rng.random_range(0..n);
            let auto = (before.weights[ti][j] - after[ti][j]) / lr;
            let mut plus = before.weights.clone();
            let mut minus = before.weights.clone();
            std::rc::Rc::make_mut(&mut plus[ti])[j] += H;
            std::rc::Rc::make_mut(&mut minus[ti])[j] -= H;
            let fd = (value_loss(&plus) - value_loss(&minus)) / (2.0 * H);
            assert!(
                (auto - fd).abs() <= 1e-4 * auto.abs().max(fd.abs()).max(1e-9),
                "generator tensor {ti} coord {j}: update gradient {auto} vs finite difference {fd}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 24);
}
