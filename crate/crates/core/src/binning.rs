//! Bin partition of `[-1, 1]` and the soft membership function.
//!
//! The intensity range is split into `K` bins of width `L = 2/K` with centers
//! `mu_k = -1 + L(k + 1/2)`. A pixel value `z` belongs to bin `k` with the
//! smooth weight
//!
//! ```text
//! pi_k(z) = sigmoid((z - mu_k + L/2) / B) - sigmoid((z - mu_k - L/2) / B)
//! ```
//!
//! a differentiable stand-in for the rectangular indicator, where `B` is the
//! kernel bandwidth. Applying all `K` memberships to a channel yields an
//! activation stack, the shared building block of 1D and joint histograms.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Pixels are processed in blocks of this many values so that scratch tables
/// stay small regardless of image size.
pub(crate) const PIXEL_BLOCK: usize = 4096;

/// Logistic sigmoid, evaluated via the branch form that never exponentiates a
/// positive argument.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic sigmoid, `sigmoid(z) * sigmoid(-z)`.
///
/// Symmetric in `z` by construction and safe for arguments up to several
/// hundred: large `|z|` underflows toward zero instead of overflowing.
#[inline]
pub fn sigmoid_kernel(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// Computes `(sigmoid(z), sigmoid_kernel(z))` from a single `exp`.
///
/// Bit-identical to calling the two functions separately.
#[inline]
pub(crate) fn sigmoid_and_kernel(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let denom = 1.0 + e;
    let s = if z >= 0.0 { 1.0 / denom } else { e / denom };
    (s, e / (denom * denom))
}

/// The bin partition: bin count `K`, bin width `L = 2/K`, kernel bandwidth
/// `B`, and the precomputed bin centers and edges.
#[derive(Debug, Clone, PartialEq)]
pub struct BinningConfig {
    bins: usize,
    bin_width: f64,
    bandwidth: f64,
    centers: Vec<f64>,
    edges: Vec<f64>,
}

impl BinningConfig {
    /// Bin count used when nothing else is requested.
    pub const DEFAULT_BINS: usize = 256;
    /// Default ratio `L / B` between bin width and kernel bandwidth.
    pub const DEFAULT_BANDWIDTH_RATIO: f64 = 2.5;

    pub fn new(bins: usize, bandwidth: f64) -> Result<Self> {
        if bins == 0 {
            return Err(Error::InvalidArgument("bin count must be positive".into()));
        }
        if bandwidth <= 0.0 || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be a positive finite number, got {bandwidth}"
            )));
        }
        let bin_width = 2.0 / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| -1.0 + k as f64 * bin_width).collect();
        let centers: Vec<f64> = (0..bins)
            .map(|k| -1.0 + (k as f64 + 0.5) * bin_width)
            .collect();
        Ok(Self {
            bins,
            bin_width,
            bandwidth,
            centers,
            edges,
        })
    }

    /// Builds a config with `B = L / ratio`.
    pub fn with_bandwidth_ratio(bins: usize, ratio: f64) -> Result<Self> {
        if ratio <= 0.0 || !ratio.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bandwidth ratio must be a positive finite number, got {ratio}"
            )));
        }
        let bin_width = 2.0 / bins as f64;
        Self::new(bins, bin_width / ratio)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn center(&self, k: usize) -> f64 {
        self.centers[k]
    }

    /// Lower edge of bin `k`; `edge(bins())` is the upper end of the range.
    pub fn edge(&self, k: usize) -> f64 {
        self.edges[k]
    }

    /// Smallest channel value kept after clamping, `-1 + L/2`.
    ///
    /// Values at exactly ±1 would lose about half their kernel mass outside
    /// the range, so channels produced by this crate are clamped half a bin
    /// inward before histogramming.
    pub fn clamp_min(&self) -> f64 {
        -1.0 + 0.5 * self.bin_width
    }

    /// Largest channel value kept after clamping, `1 - L/2`.
    pub fn clamp_max(&self) -> f64 {
        1.0 - 0.5 * self.bin_width
    }

    pub fn clamp(&self, z: f64) -> f64 {
        z.clamp(self.clamp_min(), self.clamp_max())
    }
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self::with_bandwidth_ratio(Self::DEFAULT_BINS, Self::DEFAULT_BANDWIDTH_RATIO)
            .expect("default binning config is valid")
    }
}

/// An H×W grid of intensities in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Channel {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(
                "channel dimensions must be positive".into(),
            ));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::NonFinite("channel values"));
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "channel value {v} outside [-1, 1]"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The `K` soft membership maps of one channel, plus the channel values they
/// were computed from (needed by the backward passes).
///
/// `map(k)[x] = pi_k(I(x))`, stored as `K` contiguous slabs of `H*W` values.
#[derive(Debug, Clone)]
pub struct ActivationStack {
    config: BinningConfig,
    height: usize,
    width: usize,
    maps: Vec<f64>,
    values: Vec<f64>,
}

impl ActivationStack {
    pub fn config(&self) -> &BinningConfig {
        &self.config
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.values.len()
    }

    /// The flattened activation map for bin `k` (row-major over pixels).
    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.values.len();
        &self.maps[k * n..(k + 1) * n]
    }

    /// All maps as one `K * H * W` slice, bin-major.
    pub fn maps(&self) -> &[f64] {
        &self.maps
    }

    /// The channel values this stack was built from.
    pub fn channel_values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_domain(&self, other: &ActivationStack) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.config == other.config
    }
}

/// Soft membership of `z` in bin `k`.
pub fn pi_k(z: f64, k: usize, config: &BinningConfig) -> f64 {
    assert!(k < config.bins(), "bin index {k} out of range");
    let b = config.bandwidth();
    sigmoid((z - config.edge(k)) / b) - sigmoid((z - config.edge(k + 1)) / b)
}

/// Derivative of [`pi_k`] with respect to `z`.
///
/// `(1/B) * [sigmoid_kernel((z - mu_k + L/2)/B) - sigmoid_kernel((z - mu_k - L/2)/B)]`,
/// antisymmetric about the bin center.
pub fn pi_k_deriv(z: f64, k: usize, config: &BinningConfig) -> f64 {
    assert!(k < config.bins(), "bin index {k} out of range");
    let b = config.bandwidth();
    (sigmoid_kernel((z - config.edge(k)) / b) - sigmoid_kernel((z - config.edge(k + 1)) / b)) / b
}

/// Fills `sig` (and `ker`, when given) with the edge tables of one pixel
/// block: row `j` holds `sigmoid((z_x - edge_j)/B)` for every pixel `x` of the
/// block. Adjacent rows differ by exactly one bin, so `pi_k` values fall out
/// as `sig[k] - sig[k+1]`, bit-identical to calling [`pi_k`] per pixel.
pub(crate) fn fill_edge_tables(
    values: &[f64],
    config: &BinningConfig,
    row_len: usize,
    sig: &mut [f64],
    ker: Option<&mut [f64]>,
) {
    let b = config.bandwidth();
    match ker {
        None => {
            sig.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(j, row)| {
                    let e = config.edge(j);
                    for (slot, &z) in row.iter_mut().zip(values) {
                        *slot = sigmoid((z - e) / b);
                    }
                });
        }
        Some(ker) => {
            sig.par_chunks_mut(row_len)
                .zip(ker.par_chunks_mut(row_len))
                .enumerate()
                .for_each(|(j, (srow, krow))| {
                    let e = config.edge(j);
                    for ((s, k), &z) in srow.iter_mut().zip(krow.iter_mut()).zip(values) {
                        let (sv, kv) = sigmoid_and_kernel((z - e) / b);
                        *s = sv;
                        *k = kv;
                    }
                });
        }
    }
}

/// Applies all `K` membership functions to a channel.
pub fn activation_stack(channel: &Channel, config: &BinningConfig) -> ActivationStack {
    let n = channel.pixel_count();
    let k = config.bins();
    let mut maps = vec![0.0f64; k * n];
    let mut table = vec![0.0f64; (k + 1) * PIXEL_BLOCK];

    let values = channel.values();
    let mut start = 0;
    while start < n {
        let blk = PIXEL_BLOCK.min(n - start);
        let chunk = &values[start..start + blk];
        fill_edge_tables(chunk, config, PIXEL_BLOCK, &mut table, None);
        let table_ref = &table;
        maps.par_chunks_mut(n).enumerate().for_each(|(bin, slab)| {
            let lo = &table_ref[bin * PIXEL_BLOCK..bin * PIXEL_BLOCK + blk];
            let hi = &table_ref[(bin + 1) * PIXEL_BLOCK..(bin + 1) * PIXEL_BLOCK + blk];
            for x in 0..blk {
                slab[start + x] = lo[x] - hi[x];
            }
        });
        start += blk;
    }

    ActivationStack {
        config: config.clone(),
        height: channel.height(),
        width: channel.width(),
        maps,
        values: values.to_vec(),
    }
}
