//! Differentiable 1D histograms and their cumulative form.
//!
//! The mass of bin `k` is the average soft membership over all pixels,
//! `mass[k] = (1/N) * sum_x pi_k(I(x))`. Masses are not renormalized: the
//! small deficit left by kernel tails outside `[-1, 1]` is kept exactly as
//! the formulas produce it, so gradients stay faithful.
//!
//! Summation is always plain sequential accumulation in row-major pixel
//! order, which makes repeated calls bit-identical regardless of thread
//! count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binning::{fill_edge_tables, ActivationStack, BinningConfig, Channel, PIXEL_BLOCK};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// A `K`-vector of soft bin masses together with its bin partition.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftHistogram {
    config: BinningConfig,
    mass: Vec<f64>,
}

impl SoftHistogram {
    /// Wraps raw bin masses, validating length and non-negativity. Useful for
    /// reference histograms loaded from files or written by hand.
    pub fn from_mass(config: BinningConfig, mass: Vec<f64>) -> Result<Self> {
        if mass.len() != config.bins() {
            return Err(Error::LengthMismatch {
                expected: config.bins(),
                actual: mass.len(),
            });
        }
        for &m in &mass {
            if !m.is_finite() {
                return Err(Error::NonFinite("histogram mass"));
            }
            if m < 0.0 {
                return Err(Error::InvalidArgument(format!("negative bin mass {m}")));
            }
        }
        Ok(Self { config, mass })
    }

    pub fn config(&self) -> &BinningConfig {
        &self.config
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Serializes as `{"k": ..., "centers": [...], "mass": [...]}`.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&HistogramJson {
            k: self.config.bins(),
            centers: self.config.centers().to_vec(),
            mass: self.mass.clone(),
        })
        .expect("histogram serialization cannot fail")
    }

    /// Parses the JSON produced by [`SoftHistogram::to_json`]. The bin count
    /// must agree with `config`; centers, when present, are checked against
    /// the configured grid.
    pub fn from_json(text: &str, config: &BinningConfig) -> Result<Self> {
        let parsed: HistogramJson = serde_json::from_str(text)?;
        if parsed.k != config.bins() || parsed.mass.len() != parsed.k {
            return Err(Error::LengthMismatch {
                expected: config.bins(),
                actual: parsed.mass.len(),
            });
        }
        if !parsed.centers.is_empty() {
            if parsed.centers.len() != parsed.k {
                return Err(Error::LengthMismatch {
                    expected: parsed.k,
                    actual: parsed.centers.len(),
                });
            }
            for (a, b) in parsed.centers.iter().zip(config.centers()) {
                if (a - b).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "histogram centers do not match the bin grid ({a} vs {b})"
                    )));
                }
            }
        }
        Self::from_mass(config.clone(), parsed.mass)
    }
}

#[derive(Serialize, Deserialize)]
struct HistogramJson {
    k: usize,
    #[serde(default)]
    centers: Vec<f64>,
    mass: Vec<f64>,
}

/// Prefix sums of a histogram's masses.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeHistogram {
    config: BinningConfig,
    cdf: Vec<f64>,
}

impl CumulativeHistogram {
    pub fn config(&self) -> &BinningConfig {
        &self.config
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }
}

/// Sums each activation map into its bin mass.
pub fn soft_histogram(stack: &ActivationStack) -> SoftHistogram {
    let n = stack.pixel_count() as f64;
    let bins = stack.config().bins();
    let mut mass = vec![0.0f64; bins];
    mass.par_iter_mut().enumerate().for_each(|(k, m)| {
        let mut acc = 0.0;
        for &v in stack.map(k) {
            acc += v;
        }
        *m = acc / n;
    });
    SoftHistogram {
        config: stack.config().clone(),
        mass,
    }
}

/// Histogram of a channel without materializing the full activation stack.
///
/// Bit-identical to `soft_histogram(&activation_stack(channel, config))`,
/// with memory bounded by the scratch block instead of `K * H * W`.
pub fn channel_histogram(channel: &Channel, config: &BinningConfig) -> SoftHistogram {
    let n = channel.pixel_count();
    let bins = config.bins();
    let mut acc = vec![0.0f64; bins];
    let mut table = vec![0.0f64; (bins + 1) * PIXEL_BLOCK];

    let values = channel.values();
    let mut start = 0;
    while start < n {
        let blk = PIXEL_BLOCK.min(n - start);
        fill_edge_tables(&values[start..start + blk], config, PIXEL_BLOCK, &mut table, None);
        let table_ref = &table;
        acc.par_iter_mut().enumerate().for_each(|(k, a)| {
            let lo = &table_ref[k * PIXEL_BLOCK..k * PIXEL_BLOCK + blk];
            let hi = &table_ref[(k + 1) * PIXEL_BLOCK..(k + 1) * PIXEL_BLOCK + blk];
            for x in 0..blk {
                *a += lo[x] - hi[x];
            }
        });
        start += blk;
    }

    let nf = n as f64;
    SoftHistogram {
        config: config.clone(),
        mass: acc.into_iter().map(|a| a / nf).collect(),
    }
}

/// Prefix sums of the bin masses.
pub fn cumulative(hist: &SoftHistogram) -> CumulativeHistogram {
    let mut cdf = Vec::with_capacity(hist.mass.len());
    let mut running = 0.0;
    for &m in &hist.mass {
        running += m;
        cdf.push(running);
    }
    CumulativeHistogram {
        config: hist.config.clone(),
        cdf,
    }
}

/// Chain rule through the histogram: maps a gradient with respect to bin
/// masses back to a gradient over pixels,
/// `dL/dI(x) = (1/N) * sum_k grad_mass[k] * pi_k'(I(x))`.
pub fn histogram_backward(stack: &ActivationStack, grad_mass: &[f64]) -> Result<Grid> {
    let bins = stack.config().bins();
    if grad_mass.len() != bins {
        return Err(Error::LengthMismatch {
            expected: bins,
            actual: grad_mass.len(),
        });
    }
    let n = stack.pixel_count();
    let nf = n as f64;
    let b = stack.config().bandwidth();
    let config = stack.config();
    let values = stack.channel_values();

    let mut out = vec![0.0f64; n];
    out.par_chunks_mut(PIXEL_BLOCK)
        .zip(values.par_chunks(PIXEL_BLOCK))
        .for_each(|(out_chunk, val_chunk)| {
            let mut ker = vec![0.0f64; bins + 1];
            for (g, &z) in out_chunk.iter_mut().zip(val_chunk) {
                for (j, slot) in ker.iter_mut().enumerate() {
                    *slot = crate::binning::sigmoid_kernel((z - config.edge(j)) / b);
                }
                let mut acc = 0.0;
                for k in 0..bins {
                    acc += grad_mass[k] * ((ker[k] - ker[k + 1]) / b);
                }
                *g = acc / nf;
            }
        });

    Grid::from_values(stack.height(), stack.width(), out)
}
