//! Differentiable joint (2D) histograms of two channels.
//!
//! The joint mass of bins `(k1, k2)` is
//! `(1/N) * sum_x pi_{k1}(I1(x)) * pi_{k2}(I2(x))`, which is exactly the
//! matrix product `(1/N) * M1 * M2^T` of the two flattened activation stacks.
//! Each output cell is one sequential dot product over pixels, so results are
//! identical for any parallel split over cells.

use rayon::prelude::*;

use crate::binning::{ActivationStack, BinningConfig, PIXEL_BLOCK};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// A `K x K` matrix of joint bin masses, row-major with the first channel
/// indexing rows.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    config: BinningConfig,
    mass: Vec<f64>,
}

impl JointHistogram {
    /// Wraps raw joint masses (row-major `K*K`), validating shape and sign.
    pub fn from_mass(config: BinningConfig, mass: Vec<f64>) -> Result<Self> {
        let k = config.bins();
        if mass.len() != k * k {
            return Err(Error::LengthMismatch {
                expected: k * k,
                actual: mass.len(),
            });
        }
        for &m in &mass {
            if !m.is_finite() {
                return Err(Error::NonFinite("joint histogram mass"));
            }
            if m < 0.0 {
                return Err(Error::InvalidArgument(format!("negative joint mass {m}")));
            }
        }
        Ok(Self { config, mass })
    }

    pub fn config(&self) -> &BinningConfig {
        &self.config
    }

    /// Row-major `K*K` masses.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.mass[k1 * self.config.bins() + k2]
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Row sums: the soft marginal of the first channel.
    pub fn row_marginal(&self) -> Vec<f64> {
        let k = self.config.bins();
        (0..k)
            .map(|k1| self.mass[k1 * k..(k1 + 1) * k].iter().sum())
            .collect()
    }

    /// Column sums: the soft marginal of the second channel.
    pub fn col_marginal(&self) -> Vec<f64> {
        let k = self.config.bins();
        let mut out = vec![0.0; k];
        for k1 in 0..k {
            for (k2, o) in out.iter_mut().enumerate() {
                *o += self.mass[k1 * k + k2];
            }
        }
        out
    }
}

fn check_domains(a: &ActivationStack, b: &ActivationStack) -> Result<()> {
    if a.config() != b.config() {
        return Err(Error::ConfigMismatch);
    }
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::ShapeMismatch {
            expected_height: a.height(),
            expected_width: a.width(),
            height: b.height(),
            width: b.width(),
        });
    }
    Ok(())
}

/// Joint histogram of two stacks over the same pixel domain.
pub fn joint_histogram(stack1: &ActivationStack, stack2: &ActivationStack) -> Result<JointHistogram> {
    check_domains(stack1, stack2)?;
    let k = stack1.config().bins();
    let nf = stack1.pixel_count() as f64;

    let mut mass = vec![0.0f64; k * k];
    mass.par_chunks_mut(k).enumerate().for_each(|(k1, row)| {
        let m1 = stack1.map(k1);
        for (k2, cell) in row.iter_mut().enumerate() {
            let m2 = stack2.map(k2);
            let mut acc = 0.0;
            for (a, b) in m1.iter().zip(m2) {
                acc += a * b;
            }
            *cell = acc / nf;
        }
    });

    Ok(JointHistogram {
        config: stack1.config().clone(),
        mass,
    })
}

/// Chain rule through the joint histogram: maps a `K x K` gradient over joint
/// masses back to pixel gradients for both channels.
pub fn joint_backward(
    stack1: &ActivationStack,
    stack2: &ActivationStack,
    grad_mass: &[f64],
) -> Result<(Grid, Grid)> {
    check_domains(stack1, stack2)?;
    let k = stack1.config().bins();
    if grad_mass.len() != k * k {
        return Err(Error::LengthMismatch {
            expected: k * k,
            actual: grad_mass.len(),
        });
    }
    let grad1 = backward_one_side(stack1, stack2, grad_mass, false)?;
    let grad2 = backward_one_side(stack2, stack1, grad_mass, true)?;
    Ok((grad1, grad2))
}

/// Gradient with respect to the first stack's pixels only.
///
/// `dL/dI1(x) = (1/N) * sum_{k1} pi'_{k1}(I1(x)) * T[k1][x]` with
/// `T = G * M2`. With `transpose_grad` the matrix `G` is read transposed,
/// which yields the second-channel gradient when the roles are swapped.
pub(crate) fn backward_one_side(
    primary: &ActivationStack,
    other: &ActivationStack,
    grad_mass: &[f64],
    transpose_grad: bool,
) -> Result<Grid> {
    let k = primary.config().bins();
    let n = primary.pixel_count();
    let nf = n as f64;
    let b = primary.config().bandwidth();
    let config = primary.config();
    let values = primary.channel_values();

    let mut out = vec![0.0f64; n];

    let mut start = 0;
    let mut t_block = vec![0.0f64; k * PIXEL_BLOCK];
    while start < n {
        let blk = PIXEL_BLOCK.min(n - start);
        // T[k1][x] = sum_{k2} G[k1][k2] * M_other[k2][x] over this block
        t_block.par_chunks_mut(PIXEL_BLOCK).enumerate().for_each(|(k1, row)| {
            for slot in row[..blk].iter_mut() {
                *slot = 0.0;
            }
            for k2 in 0..k {
                let g = if transpose_grad {
                    grad_mass[k2 * k + k1]
                } else {
                    grad_mass[k1 * k + k2]
                };
                if g == 0.0 {
                    continue;
                }
                let m = &other.map(k2)[start..start + blk];
                for (slot, &v) in row[..blk].iter_mut().zip(m) {
                    *slot += g * v;
                }
            }
        });

        let t_ref = &t_block;
        out[start..start + blk]
            .par_chunks_mut(512)
            .enumerate()
            .for_each(|(chunk_idx, out_chunk)| {
                let mut ker = vec![0.0f64; k + 1];
                let base = chunk_idx * 512;
                for (i, g) in out_chunk.iter_mut().enumerate() {
                    let x = base + i;
                    let z = values[start + x];
                    for (j, slot) in ker.iter_mut().enumerate() {
                        *slot = crate::binning::sigmoid_kernel((z - config.edge(j)) / b);
                    }
                    let mut acc = 0.0;
                    for k1 in 0..k {
                        let deriv = (ker[k1] - ker[k1 + 1]) / b;
                        acc += deriv * t_ref[k1 * PIXEL_BLOCK + x];
                    }
                    *g = acc / nf;
                }
            });
        start += blk;
    }

    Grid::from_values(primary.height(), primary.width(), out)
}
