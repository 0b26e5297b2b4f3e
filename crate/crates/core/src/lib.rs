//! spikeleak: a gradient-inversion laboratory for federated learning.
//!
//! The crate simulates an honest-but-curious server that intercepts per-sample
//! parameter gradients and tries to reconstruct the private inputs behind
//! them. It provides the full chain needed to study that threat end to end:
//! a second-order-capable autodiff engine, LeNet-style victim models in both
//! conventional (sigmoid) and spiking (Integrate-and-Fire) variants, the
//! DLG/iDLG/GRNN attack family, spike-train codecs, a minimal federated
//! round harness, and evaluation tooling (SSIM/PSNR/MSE, l2 on spike trains,
//! judge-model attack success rate).

mod bytesio;

pub mod attacks;
pub mod codec;
pub mod data;
pub mod error;
pub mod eval;
pub mod fl;
pub mod models;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
