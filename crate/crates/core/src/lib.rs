//! Differentiable color histograms and histogram-based losses.
//!
//! This crate builds smooth, fully differentiable 1D and joint (2D) intensity
//! histograms of image channels, defines earth-mover's-distance and
//! mutual-information losses on top of them, and drives a pixel-space Adam
//! optimizer that matches an image's color distribution to a reference
//! histogram while preserving its content.
//!
//! The moving parts, bottom up:
//!
//! * [`binning`] — the bin partition of `[-1, 1]` and the sigmoid-based soft
//!   membership function with its derivative.
//! * [`histogram`] / [`joint`] — 1D and K×K joint histograms with analytic
//!   backward passes down to pixels.
//! * [`colorspace`] — 8-bit RGB ↔ YUV conversion and PNG I/O.
//! * [`metrics`] — EMD over cumulative histograms, normalized mutual
//!   information, and the weighted total loss with its pixel gradient.
//! * [`optim`] — Adam over output pixels: histogram matching and color
//!   transfer.
//! * [`gradcheck`] — the central-difference oracle used to validate every
//!   backward pass.
//!
//! Everything is plain `f64` on the CPU. Reductions run in fixed order, so
//! results are bit-identical across runs and thread counts.

pub mod binning;
pub mod colorspace;
pub mod error;
pub mod gradcheck;
pub mod grid;
pub mod histogram;
pub mod joint;
pub mod metrics;
pub mod optim;

pub use binning::{
    activation_stack, pi_k, pi_k_deriv, sigmoid, sigmoid_kernel, ActivationStack, BinningConfig,
    Channel,
};
pub use colorspace::{rgb_to_yuv, yuv_to_rgb, ImageRgb8, ImageYuv};
pub use error::{Error, Result};
pub use gradcheck::{check_scalar_fn, GradCheckReport};
pub use grid::Grid;
pub use histogram::{
    channel_histogram, cumulative, histogram_backward, soft_histogram, CumulativeHistogram,
    SoftHistogram,
};
pub use joint::{joint_backward, joint_histogram, JointHistogram};
pub use metrics::{
    d_mi, emd, emd_backward, joint_entropy, mi_backward, mutual_information, total_loss,
    total_loss_with_grad, LossReport, LossWeights,
};
pub use optim::{
    color_transfer, optimize, AdamState, InitMode, LossTrace, OptimizationConfig, TraceRecord,
};
