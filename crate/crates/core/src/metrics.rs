//! Histogram-space losses and their gradients.
//!
//! Two distances are defined on top of the differentiable histograms:
//!
//! * the squared-Euclidean distance between cumulative histograms (the
//!   gradient-friendly form of the earth mover's distance for equal-mass 1D
//!   histograms), and
//! * `1 - I/H`, the mutual information between two channels normalized by
//!   their joint entropy, a content-similarity metric in `[0, 1]` that is 0
//!   for identical channels and 1 for independent ones.
//!
//! The total loss is a weighted sum of the channel-averaged EMD against the
//! reference histograms and the channel-averaged normalized MI against the
//! source image. Natural logarithms throughout; terms with any factor below
//! `1e-12` are treated as exact zeros in both value and gradient.

use rayon::prelude::*;
use serde::Serialize;

use crate::binning::{
    activation_stack, fill_edge_tables, ActivationStack, BinningConfig, Channel, PIXEL_BLOCK,
};
use crate::colorspace::ImageYuv;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::histogram::{cumulative, SoftHistogram};
use crate::joint::JointHistogram;

/// Floor below which a probability cell is treated as an exact zero.
pub const LOG_EPS: f64 = 1e-12;

/// Weights of the loss terms. The adversarial slot exists for interface
/// parity and must stay zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossWeights {
    pub emd: f64,
    pub mi: f64,
    pub adv: f64,
}

impl LossWeights {
    pub fn new(emd: f64, mi: f64) -> Self {
        Self { emd, mi, adv: 0.0 }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        for (name, v) in [("emd", self.emd), ("mi", self.mi), ("adv", self.adv)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "loss weight {name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.adv != 0.0 {
            return Err(Error::InvalidArgument(
                "the adversarial weight is a placeholder and must be 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

/// Loss values of one evaluation: the weighted total plus the per-channel
/// EMD and normalized-MI terms (Y, U, V order).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub emd_per_channel: [f64; 3],
    pub mi_per_channel: [f64; 3],
}

impl LossReport {
    pub fn l_emd(&self) -> f64 {
        mean3(&self.emd_per_channel)
    }

    pub fn l_mi(&self) -> f64 {
        mean3(&self.mi_per_channel)
    }
}

fn mean3(v: &[f64; 3]) -> f64 {
    (v[0] + v[1] + v[2]) / 3.0
}

fn check_hist_pair(h1: &SoftHistogram, h2: &SoftHistogram) -> Result<()> {
    if h1.config() != h2.config() {
        return Err(Error::ConfigMismatch);
    }
    Ok(())
}

/// Squared-Euclidean distance between the cumulative histograms,
/// `sum_i (CDF_i(h1) - CDF_i(h2))^2`.
pub fn emd(h1: &SoftHistogram, h2: &SoftHistogram) -> Result<f64> {
    check_hist_pair(h1, h2)?;
    let c1 = cumulative(h1);
    let c2 = cumulative(h2);
    let mut total = 0.0;
    for (a, b) in c1.cdf().iter().zip(c2.cdf()) {
        let d = a - b;
        total += d * d;
    }
    Ok(total)
}

/// Gradient of [`emd`] with respect to both mass vectors:
/// `grad1[k] = 2 * sum_{i >= k} (CDF_i(h1) - CDF_i(h2))`, `grad2 = -grad1`.
pub fn emd_backward(h1: &SoftHistogram, h2: &SoftHistogram) -> Result<(Vec<f64>, Vec<f64>)> {
    check_hist_pair(h1, h2)?;
    let c1 = cumulative(h1);
    let c2 = cumulative(h2);
    let k = h1.mass().len();
    let mut grad1 = vec![0.0; k];
    let mut suffix = 0.0;
    for i in (0..k).rev() {
        suffix += c1.cdf()[i] - c2.cdf()[i];
        grad1[i] = 2.0 * suffix;
    }
    let grad2 = grad1.iter().map(|g| -g).collect();
    Ok((grad1, grad2))
}

fn joint_marginals(j: &JointHistogram) -> (Vec<f64>, Vec<f64>, f64) {
    let p1 = j.row_marginal();
    let p2 = j.col_marginal();
    let total = p1.iter().sum();
    (p1, p2, total)
}

/// Mutual information of the joint distribution, with marginals taken as the
/// row and column sums. Natural log.
pub fn mutual_information(j: &JointHistogram) -> Result<f64> {
    let (p1, p2, total) = joint_marginals(j);
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    let k = j.config().bins();
    let mut mi = 0.0;
    for (k1, &m1) in p1.iter().enumerate() {
        if m1 < LOG_EPS {
            continue;
        }
        for (k2, &m2) in p2.iter().enumerate() {
            let p = j.mass()[k1 * k + k2];
            if p < LOG_EPS || m2 < LOG_EPS {
                continue;
            }
            mi += p * (p / (m1 * m2)).ln();
        }
    }
    Ok(mi)
}

/// Joint entropy `-sum p ln p`, skipping cells below the floor.
pub fn joint_entropy(j: &JointHistogram) -> Result<f64> {
    let total: f64 = j.mass().iter().sum();
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }
    let mut h = 0.0;
    for &p in j.mass() {
        if p >= LOG_EPS {
            h -= p * p.ln();
        }
    }
    Ok(h)
}

/// Normalized MI distance `1 - I/H`: 0 for identical channels, 1 for
/// independent ones.
pub fn d_mi(j: &JointHistogram) -> Result<f64> {
    let h = joint_entropy(j)?;
    if h < LOG_EPS {
        return Err(Error::DegenerateJoint);
    }
    let i = mutual_information(j)?;
    Ok(1.0 - i / h)
}

/// Gradient of [`d_mi`] with respect to every joint cell, with the marginals'
/// dependence on the cells included in the chain rule. Cells below the floor
/// contribute exactly zero.
pub fn mi_backward(j: &JointHistogram) -> Result<Vec<f64>> {
    let k = j.config().bins();
    let mass = j.mass();
    let (p1, p2, total) = joint_marginals(j);
    if total <= 0.0 {
        return Err(Error::EmptyDistribution);
    }

    // sums restricted to cells that clear the floor, so the gradient matches
    // the skipping convention of the forward pass exactly
    let mut p1_inc = vec![0.0; k];
    let mut p2_inc = vec![0.0; k];
    let mut h = 0.0;
    let mut i_val = 0.0;
    for k1 in 0..k {
        for k2 in 0..k {
            let p = mass[k1 * k + k2];
            if p < LOG_EPS {
                continue;
            }
            p1_inc[k1] += p;
            p2_inc[k2] += p;
            h -= p * p.ln();
            if p1[k1] >= LOG_EPS && p2[k2] >= LOG_EPS {
                i_val += p * (p / (p1[k1] * p2[k2])).ln();
            }
        }
    }
    if h < LOG_EPS {
        return Err(Error::DegenerateJoint);
    }

    let mut grad = vec![0.0; k * k];
    for k1 in 0..k {
        for k2 in 0..k {
            let p = mass[k1 * k + k2];
            if p < LOG_EPS {
                continue;
            }
            let di = (p / (p1[k1] * p2[k2])).ln() + 1.0
                - p1_inc[k1] / p1[k1]
                - p2_inc[k2] / p2[k2];
            let dh = -(p.ln() + 1.0);
            grad[k1 * k + k2] = -di / h + i_val * dh / (h * h);
        }
    }
    Ok(grad)
}

/// How the MI term is handled during a loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum MiMode {
    /// Do not compute joints at all; MI fields are NaN.
    Off,
    /// Degenerate joints are an error.
    Strict,
    /// Degenerate joints drop the MI term for this evaluation.
    SkipDegenerate,
}

pub(crate) struct Evaluation {
    pub report: LossReport,
    pub grads: Option<[Grid; 3]>,
    pub mi_skipped: bool,
}

pub(crate) fn build_src_stacks(src: &ImageYuv, config: &BinningConfig) -> [ActivationStack; 3] {
    let [y, u, v] = src.channels();
    [
        activation_stack(y, config),
        activation_stack(u, config),
        activation_stack(v, config),
    ]
}

struct ChannelForward {
    hist: SoftHistogram,
    joint: Option<JointHistogram>,
    deriv_maps: Option<Vec<f64>>,
}

/// One block pass over a channel: histogram, joint against a cached source
/// stack, and the stash of membership derivatives for the backward pass.
/// Bit-identical to composing the public single-purpose operations.
fn channel_forward(
    out: &Channel,
    src_stack: Option<&ActivationStack>,
    config: &BinningConfig,
    want_deriv: bool,
) -> Result<ChannelForward> {
    let n = out.pixel_count();
    let bins = config.bins();
    let b = config.bandwidth();
    if let Some(s) = src_stack {
        if s.config() != config {
            return Err(Error::ConfigMismatch);
        }
        if s.height() != out.height() || s.width() != out.width() {
            return Err(Error::ShapeMismatch {
                expected_height: s.height(),
                expected_width: s.width(),
                height: out.height(),
                width: out.width(),
            });
        }
    }

    let mut hist_acc = vec![0.0f64; bins];
    let mut joint_acc = src_stack.map(|_| vec![0.0f64; bins * bins]);
    let mut deriv = if want_deriv {
        Some(vec![0.0f64; bins * n])
    } else {
        None
    };

    let mut sig = vec![0.0f64; (bins + 1) * PIXEL_BLOCK];
    let mut ker = if want_deriv {
        Some(vec![0.0f64; (bins + 1) * PIXEL_BLOCK])
    } else {
        None
    };
    let mut pi_block = vec![0.0f64; bins * PIXEL_BLOCK];

    let values = out.values();
    let mut start = 0;
    while start < n {
        let blk = PIXEL_BLOCK.min(n - start);
        fill_edge_tables(
            &values[start..start + blk],
            config,
            PIXEL_BLOCK,
            &mut sig,
            ker.as_deref_mut(),
        );

        let sig_ref = &sig;
        pi_block
            .par_chunks_mut(PIXEL_BLOCK)
            .enumerate()
            .for_each(|(k, row)| {
                let lo = &sig_ref[k * PIXEL_BLOCK..k * PIXEL_BLOCK + blk];
                let hi = &sig_ref[(k + 1) * PIXEL_BLOCK..(k + 1) * PIXEL_BLOCK + blk];
                for x in 0..blk {
                    row[x] = lo[x] - hi[x];
                }
            });

        let pi_ref = &pi_block;
        hist_acc.par_iter_mut().enumerate().for_each(|(k, a)| {
            let row = &pi_ref[k * PIXEL_BLOCK..k * PIXEL_BLOCK + blk];
            let mut acc = *a;
            for &v in row {
                acc += v;
            }
            *a = acc;
        });

        if let Some(joint) = joint_acc.as_mut() {
            let src = src_stack.expect("joint_acc implies src_stack");
            joint.par_chunks_mut(bins).enumerate().for_each(|(k1, row)| {
                let a = &pi_ref[k1 * PIXEL_BLOCK..k1 * PIXEL_BLOCK + blk];
                for (k2, cell) in row.iter_mut().enumerate() {
                    let srow = &src.map(k2)[start..start + blk];
                    let mut acc = *cell;
                    for (av, bv) in a.iter().zip(srow) {
                        acc += av * bv;
                    }
                    *cell = acc;
                }
            });
        }

        if let (Some(d), Some(kt)) = (deriv.as_mut(), ker.as_ref()) {
            d.par_chunks_mut(n).enumerate().for_each(|(k, slab)| {
                let lo = &kt[k * PIXEL_BLOCK..k * PIXEL_BLOCK + blk];
                let hi = &kt[(k + 1) * PIXEL_BLOCK..(k + 1) * PIXEL_BLOCK + blk];
                for x in 0..blk {
                    slab[start + x] = (lo[x] - hi[x]) / b;
                }
            });
        }

        start += blk;
    }

    let nf = n as f64;
    let hist = SoftHistogram::from_mass(
        config.clone(),
        hist_acc.into_iter().map(|a| a / nf).collect(),
    )?;
    let joint = match joint_acc {
        Some(mut acc) => {
            for cell in &mut acc {
                *cell /= nf;
            }
            Some(JointHistogram::from_mass(config.clone(), acc)?)
        }
        None => None,
    };
    Ok(ChannelForward {
        hist,
        joint,
        deriv_maps: deriv,
    })
}

/// Combines histogram-space coefficients and a joint-space gradient into one
/// pixel-gradient pass: `g[x] = (1/N) * sum_k deriv[k][x] * (coeff[k] + T[k][x])`
/// with `T = G * M_src`.
fn channel_pixel_grad(
    out: &Channel,
    deriv_maps: &[f64],
    config: &BinningConfig,
    hist_coeff: &[f64],
    joint_term: Option<(&[f64], &ActivationStack)>,
) -> Grid {
    let n = out.pixel_count();
    let bins = config.bins();
    let nf = n as f64;
    let mut grad = vec![0.0f64; n];
    let mut t_block = joint_term.map(|_| vec![0.0f64; bins * PIXEL_BLOCK]);

    let mut start = 0;
    while start < n {
        let blk = PIXEL_BLOCK.min(n - start);
        if let (Some(t), Some((g, src))) = (t_block.as_mut(), joint_term) {
            t.par_chunks_mut(PIXEL_BLOCK).enumerate().for_each(|(k1, row)| {
                for slot in row[..blk].iter_mut() {
                    *slot = 0.0;
                }
                for k2 in 0..bins {
                    let gv = g[k1 * bins + k2];
                    if gv == 0.0 {
                        continue;
                    }
                    let srow = &src.map(k2)[start..start + blk];
                    for (slot, &sv) in row[..blk].iter_mut().zip(srow) {
                        *slot += gv * sv;
                    }
                }
            });
        }

        let t_ref = t_block.as_deref();
        grad[start..start + blk]
            .par_chunks_mut(512)
            .enumerate()
            .for_each(|(chunk_idx, chunk)| {
                let base = chunk_idx * 512;
                for (i, slot) in chunk.iter_mut().enumerate() {
                    let x = base + i;
                    let mut acc = 0.0;
                    match t_ref {
                        Some(t) => {
                            for k in 0..bins {
                                acc += deriv_maps[k * n + start + x]
                                    * (hist_coeff[k] + t[k * PIXEL_BLOCK + x]);
                            }
                        }
                        None => {
                            for k in 0..bins {
                                acc += deriv_maps[k * n + start + x] * hist_coeff[k];
                            }
                        }
                    }
                    *slot = acc / nf;
                }
            });
        start += blk;
    }

    Grid::from_values(out.height(), out.width(), grad)
        .expect("gradient grid matches channel shape")
}

pub(crate) fn evaluate_loss(
    out_channels: [&Channel; 3],
    src_stacks: Option<&[ActivationStack; 3]>,
    ref_hists: &[SoftHistogram; 3],
    weights: &LossWeights,
    config: &BinningConfig,
    want_grad: bool,
    mi_mode: MiMode,
) -> Result<Evaluation> {
    weights.validate()?;
    for hist in ref_hists {
        if hist.config() != config {
            return Err(Error::ConfigMismatch);
        }
    }
    let (h0, w0) = (out_channels[0].height(), out_channels[0].width());
    for c in out_channels.iter().skip(1) {
        if c.height() != h0 || c.width() != w0 {
            return Err(Error::ShapeMismatch {
                expected_height: h0,
                expected_width: w0,
                height: c.height(),
                width: c.width(),
            });
        }
    }
    if mi_mode != MiMode::Off && src_stacks.is_none() {
        return Err(Error::InvalidArgument(
            "MI evaluation requires source activation stacks".into(),
        ));
    }

    let mut emd_pc = [0.0f64; 3];
    let mut emd_grads: Vec<Vec<f64>> = Vec::with_capacity(3);
    let mut joints: Vec<Option<JointHistogram>> = Vec::with_capacity(3);
    let mut derivs: Vec<Option<Vec<f64>>> = Vec::with_capacity(3);

    for (c, out) in out_channels.iter().enumerate() {
        let src = match mi_mode {
            MiMode::Off => None,
            _ => src_stacks.map(|s| &s[c]),
        };
        let fwd = channel_forward(out, src, config, want_grad)?;
        emd_pc[c] = emd(&ref_hists[c], &fwd.hist)?;
        if want_grad {
            let (_, grad_out) = emd_backward(&ref_hists[c], &fwd.hist)?;
            emd_grads.push(grad_out);
        }
        joints.push(fwd.joint);
        derivs.push(fwd.deriv_maps);
    }

    let mut mi_pc = [f64::NAN; 3];
    let mut mi_grads: Vec<Option<Vec<f64>>> = vec![None, None, None];
    let mut mi_skipped = false;
    if mi_mode != MiMode::Off {
        for c in 0..3 {
            let joint = joints[c].as_ref().expect("joint computed when MI is on");
            match d_mi(joint) {
                Ok(v) => mi_pc[c] = v,
                Err(e @ (Error::DegenerateJoint | Error::EmptyDistribution)) => {
                    if mi_mode == MiMode::Strict {
                        return Err(e);
                    }
                    mi_skipped = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !mi_skipped && want_grad && weights.mi != 0.0 {
            for c in 0..3 {
                let joint = joints[c].as_ref().expect("joint computed when MI is on");
                mi_grads[c] = Some(mi_backward(joint)?);
            }
        }
    }

    let mi_active = mi_mode != MiMode::Off && !mi_skipped;
    let l_emd = mean3(&emd_pc);
    let total = if mi_active {
        weights.emd * l_emd + weights.mi * mean3(&mi_pc)
    } else {
        weights.emd * l_emd
    };
    let report = LossReport {
        total,
        emd_per_channel: emd_pc,
        mi_per_channel: if mi_active { mi_pc } else { [f64::NAN; 3] },
    };

    let grads = if want_grad {
        let mut out_grads = Vec::with_capacity(3);
        for c in 0..3 {
            let coeff: Vec<f64> = emd_grads[c]
                .iter()
                .map(|g| g * weights.emd / 3.0)
                .collect();
            let scaled_mi: Option<Vec<f64>> = mi_grads[c]
                .as_ref()
                .map(|g| g.iter().map(|v| v * weights.mi / 3.0).collect());
            let joint_term = scaled_mi.as_ref().map(|g| {
                (
                    g.as_slice(),
                    &src_stacks.expect("MI gradient implies source stacks")[c],
                )
            });
            out_grads.push(channel_pixel_grad(
                out_channels[c],
                derivs[c].as_ref().expect("derivatives requested"),
                config,
                &coeff,
                joint_term,
            ));
        }
        let mut it = out_grads.into_iter();
        Some([
            it.next().unwrap(),
            it.next().unwrap(),
            it.next().unwrap(),
        ])
    } else {
        None
    };

    Ok(Evaluation {
        report,
        grads,
        mi_skipped,
    })
}

fn check_image_pair(out: &ImageYuv, src: &ImageYuv) -> Result<()> {
    if !out.same_shape(src) {
        return Err(Error::ShapeMismatch {
            expected_height: src.height(),
            expected_width: src.width(),
            height: out.height(),
            width: out.width(),
        });
    }
    Ok(())
}

/// The weighted total loss of an output image against reference histograms
/// (EMD term) and a source image (MI term).
pub fn total_loss(
    out: &ImageYuv,
    src: &ImageYuv,
    ref_hists: &[SoftHistogram; 3],
    weights: &LossWeights,
    config: &BinningConfig,
) -> Result<LossReport> {
    check_image_pair(out, src)?;
    let src_stacks = build_src_stacks(src, config);
    let eval = evaluate_loss(
        out.channels(),
        Some(&src_stacks),
        ref_hists,
        weights,
        config,
        false,
        MiMode::Strict,
    )?;
    Ok(eval.report)
}

/// [`total_loss`] plus its analytic gradient with respect to the output
/// image's pixels (Y, U, V grids).
pub fn total_loss_with_grad(
    out: &ImageYuv,
    src: &ImageYuv,
    ref_hists: &[SoftHistogram; 3],
    weights: &LossWeights,
    config: &BinningConfig,
) -> Result<(LossReport, [Grid; 3])> {
    check_image_pair(out, src)?;
    let src_stacks = build_src_stacks(src, config);
    let eval = evaluate_loss(
        out.channels(),
        Some(&src_stacks),
        ref_hists,
        weights,
        config,
        true,
        MiMode::Strict,
    )?;
    Ok((eval.report, eval.grads.expect("gradients were requested")))
}
