//! Dense f64 tensors with reverse-mode autodiff on a shared tape.
//!
//! Backward passes emit their vector-Jacobian products as ordinary recorded
//! ops, so gradients are differentiable tensors in their own right. That
//! second-order capability is the foundation of every gradient-inversion
//! attack here: the optimizer needs d/dx' of a loss that is itself a function
//! of dL/dW.

mod graph;
mod kernels;
mod ops;

pub use graph::{Gradients, Graph, Tensor};
pub use ops::{
    avg_pool2, broadcast_row, conv2d, constant_rc, fill_like, linear, log_softmax, one_hot,
    pad_outer, slice_outer, softmax, softmax_cross_entropy, spike_heaviside_atan, sq_diff_sum,
};

/// Spatial output dims of a conv layer, None when the kernel does not fit.
pub fn conv_output_dims(h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Option<(usize, usize)> {
    kernels::ConvGeom::new(1, 1, h, w, kernel, stride, pad).map(|g| (g.oh, g.ow))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g() -> Graph {
        Graph::new()
    }

    #[test]
    fn conv_sum_of_nine_ones() {
        let graph = g();
        let x = graph.constant(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        let w = graph.constant(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        let b = graph.constant(vec![0.0], &[1]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert_eq!(y.shape(), vec![1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv_zero_weight_gives_zero_output() {
        let graph = g();
        let x = graph.constant((0..18).map(|v| v as f64).collect(), &[1, 2, 3, 3]).unwrap();
        let w = graph.constant(vec![0.0; 2 * 2 * 2 * 2], &[2, 2, 2, 2]).unwrap();
        let b = graph.constant(vec![0.0; 2], &[2]).unwrap();
        let y = conv2d(&x, &w, &b, 1, 0).unwrap();
        assert!(y.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_is_dimension_error() {
        let graph = g();
        let x = graph.constant(vec![0.0; 9], &[1, 1, 3, 3]).unwrap();
        let w = graph.constant(vec![0.0; 18], &[1, 2, 3, 3]).unwrap();
        let b = graph.constant(vec![0.0], &[1]).unwrap();
        let err = conv2d(&x, &w, &b, 1, 0).unwrap_err();
        assert!(matches!(err, crate::error::Error::Dimension(_)), "{err}");
    }

    #[test]
    fn linear_identity_and_known_value() {
        let graph = g();
        let x = graph.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
        let eye = graph.constant(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        let zb = graph.constant(vec![0.0, 0.0], &[2]).unwrap();
        assert_eq!(linear(&x, &eye, &zb).unwrap().to_vec(), vec![1.0, 2.0]);

        let w = graph.constant(vec![3.0, 4.0], &[1, 2]).unwrap();
        let b = graph.constant(vec![5.0], &[1]).unwrap();
        assert_eq!(linear(&x, &w, &b).unwrap().to_vec(), vec![16.0]);
    }

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        let graph = g();
        let x = graph.constant(vec![0.0, 800.0, -800.0], &[3]).unwrap();
        let s = x.sigmoid().to_vec();
        assert_eq!(s[0], 0.5);
        assert!(s[1] > 1.0 - 1e-12 && s[1] <= 1.0);
        assert!(s[2] >= 0.0 && s[2] < 1e-12);
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spike_forward_thresholds_with_ties_firing() {
        let graph = g();
        let v = graph.constant(vec![-0.3, 0.0, 0.7], &[3]).unwrap();
        let s = spike_heaviside_atan(&v, 2.0).unwrap();
        assert_eq!(s.to_vec(), vec![0.0, 1.0, 1.0]);
        assert!(spike_heaviside_atan(&v, 0.0).is_err());
    }

    #[test]
    fn spike_surrogate_at_origin_is_alpha_over_two() {
        let graph = g();
        let v = graph.leaf(vec![0.0], &[1], true).unwrap();
        let s = spike_heaviside_atan(&v, 2.0).unwrap();
        let grads = s.sum_all().backward().unwrap();
        assert_eq!(grads.wrt(&v).unwrap().to_vec(), vec![1.0]);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let graph = g();
        let z = graph.constant(vec![0.7; 10], &[1, 10]).unwrap();
        let t = one_hot(&graph, &[3], 10).unwrap();
        let loss = softmax_cross_entropy(&z, &t).unwrap().item();
        assert!((loss - 10f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn cross_entropy_against_own_softmax_is_entropy() {
        let graph = g();
        let z = graph.constant(vec![0.1, -0.4, 1.3, 0.0], &[1, 4]).unwrap();
        let p = softmax(&z).unwrap();
        let loss = softmax_cross_entropy(&z, &p).unwrap().item();
        let entropy: f64 = p.to_vec().iter().map(|&q| -q * q.ln()).sum();
        assert!((loss - entropy).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_unnormalized_target() {
        let graph = g();
        let z = graph.constant(vec![0.0; 4], &[1, 4]).unwrap();
        let t = graph.constant(vec![0.5, 0.5, 0.5, 0.5], &[1, 4]).unwrap();
        assert!(softmax_cross_entropy(&z, &t).is_err());
    }

    #[test]
    fn backward_of_sum_is_ones_and_untouched_leaf_reads_zero() {
        let graph = g();
        let a = graph.leaf(vec![1.0, 2.0, 3.0], &[3], true).unwrap();
        let b = graph.leaf(vec![4.0, 5.0], &[2], true).unwrap();
        let grads = a.sum_all().backward().unwrap();
        assert_eq!(grads.wrt(&a).unwrap().to_vec(), vec![1.0; 3]);
        assert_eq!(grads.wrt(&b).unwrap().to_vec(), vec![0.0; 2]);
        assert_eq!(a.grad().unwrap().as_ref(), &vec![1.0; 3]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let graph = g();
        let a = graph.leaf(vec![1.0, 2.0], &[2], true).unwrap();
        assert!(a.backward().is_err());
    }

    #[test]
    fn backward_replaces_grads_on_reuse() {
        let graph = g();
        let a = graph.leaf(vec![2.0], &[1], true).unwrap();
        let y1 = a.scale(3.0);
        let y2 = a.scale(5.0);
        y1.backward().unwrap();
        assert_eq!(a.grad().unwrap().as_ref(), &vec![3.0]);
        y2.backward().unwrap();
        assert_eq!(a.grad().unwrap().as_ref(), &vec![5.0]);
    }

    #[test]
    fn cross_graph_ops_are_usage_errors() {
        let g1 = g();
        let g2 = g();
        let a = g1.constant(vec![1.0], &[1]).unwrap();
        let b = g2.constant(vec![1.0], &[1]).unwrap();
        assert!(matches!(a.add(&b), Err(crate::error::Error::Usage(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let graph = g();
        let z = graph.constant(vec![5.0, -3.0, 0.2, 900.0, 899.0, -900.0], &[2, 3]).unwrap();
        let p = softmax(&z).unwrap().to_vec();
        for row in p.chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn slice_pad_adjoint_pair() {
        let graph = g();
        let x = graph.leaf((0..12).map(|v| v as f64).collect(), &[3, 2, 2], true).unwrap();
        let s = slice_outer(&x, 1).unwrap();
        assert_eq!(s.shape(), vec![2, 2]);
        assert_eq!(s.to_vec(), vec![4.0, 5.0, 6.0, 7.0]);
        let grads = s.sum_all().backward().unwrap();
        let gx = grads.wrt(&x).unwrap().to_vec();
        assert_eq!(gx, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
