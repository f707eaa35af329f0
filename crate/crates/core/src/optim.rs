//! Pixel-space gradient descent.
//!
//! The output image's pixels are the free parameters. Every step evaluates
//! the total loss, backpropagates through the histogram and joint-histogram
//! layers to per-pixel gradients, applies a bias-corrected Adam update, and
//! clamps pixels back into the histogram range. The source image's activation
//! stacks are constant and computed once.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binning::{BinningConfig, Channel};
use crate::colorspace::{rgb_to_yuv, yuv_to_rgb, ImageRgb8, ImageYuv};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::histogram::{channel_histogram, SoftHistogram};
use crate::metrics::{evaluate_loss, LossWeights, MiMode};

const DEFAULT_BETA1: f64 = 0.5;
const DEFAULT_BETA2: f64 = 0.999;
// Membership gradients decay exponentially with the pixel's distance from a
// populated bin; a small eps keeps the normalized update at full stride for
// pixels far out in the kernel tails instead of freezing them.
const DEFAULT_EPS: f64 = 1e-12;

/// Bias-corrected Adam over three pixel grids.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: [Grid; 3],
    v: [Grid; 3],
}

impl AdamState {
    /// Fresh state with momentum parameters `beta1 = 0.5`, `beta2 = 0.999`.
    pub fn new(height: usize, width: usize, lr: f64) -> Self {
        Self::with_hyperparams(height, width, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
            .expect("default Adam hyperparameters are valid")
    }

    pub fn with_hyperparams(
        height: usize,
        width: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if eps <= 0.0 || eps.is_nan() {
            return Err(Error::InvalidArgument(format!(
                "eps must be positive, got {eps}"
            )));
        }
        let zeros = || {
            [
                Grid::zeros(height, width),
                Grid::zeros(height, width),
                Grid::zeros(height, width),
            ]
        };
        Ok(Self {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [Grid; 3], grads: &[Grid; 3]) {
        for c in 0..3 {
            assert!(
                params[c].same_shape(&self.m[c]) && grads[c].same_shape(&self.m[c]),
                "parameter and gradient shapes must match the optimizer state"
            );
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for c in 0..3 {
            let m = self.m[c].values_mut();
            let v = self.v[c].values_mut();
            let p = params[c].values_mut();
            let g = grads[c].values();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// How the output image is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Start from a copy of the source image.
    FromSource,
    /// Start from seeded uniform noise over the clamped range.
    FromNoise,
}

/// Everything the optimization loop needs to know.
#[derive(Debug, Clone)]
pub struct OptimizationConfig {
    pub max_steps: usize,
    pub weights: LossWeights,
    pub binning: BinningConfig,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    pub init_mode: InitMode,
}

impl OptimizationConfig {
    /// Defaults: 1000 steps, weights (1, 1, 0), learning rate 0.01,
    /// init from source, trace every step.
    pub fn new(binning: BinningConfig) -> Self {
        Self {
            max_steps: 1000,
            weights: LossWeights::default(),
            binning,
            lr: 0.01,
            seed: 0,
            log_every: 1,
            init_mode: InitMode::FromSource,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return Err(Error::InvalidArgument("max_steps must be positive".into()));
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidArgument("log_every must be positive".into()));
        }
        self.weights.validate()
    }
}

/// One logged optimization step. `mi` is NaN whenever the MI term was
/// disabled or skipped for the step.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: usize,
    pub total: f64,
    pub emd: f64,
    pub mi: f64,
    pub warning: Option<String>,
}

/// The per-step loss log of one optimization run.
#[derive(Debug, Clone, Default)]
pub struct LossTrace {
    records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn warnings(&self) -> impl Iterator<Item = (usize, &str)> {
        self.records
            .iter()
            .filter_map(|r| r.warning.as_deref().map(|w| (r.step, w)))
    }

    /// CSV with the fixed header `step,total,emd,mi`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,total,emd,mi\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.total, r.emd, r.mi));
        }
        out
    }
}

fn channel_from_grid(grid: &Grid) -> Channel {
    Channel::new(grid.height(), grid.width(), grid.values().to_vec())
        .expect("optimizer keeps parameters within the clamped range")
}

/// Minimizes the total loss over the output image's pixels.
///
/// Deterministic for a fixed seed: every reduction inside the forward and
/// backward passes runs in a fixed order, so traces and outputs are
/// bit-identical across runs and thread counts.
pub fn optimize(
    src: &ImageYuv,
    ref_hists: &[SoftHistogram; 3],
    cfg: &OptimizationConfig,
) -> Result<(ImageYuv, LossTrace)> {
    cfg.validate()?;
    for h in ref_hists {
        if h.config() != &cfg.binning {
            return Err(Error::ConfigMismatch);
        }
    }
    let (height, width) = (src.height(), src.width());
    let (lo, hi) = (cfg.binning.clamp_min(), cfg.binning.clamp_max());

    let mut params: [Grid; 3] = match cfg.init_mode {
        InitMode::FromSource => {
            let [y, u, v] = src.channels();
            [y, u, v].map(|c| {
                let clamped: Vec<f64> = c.values().iter().map(|&z| z.clamp(lo, hi)).collect();
                Grid::from_values(height, width, clamped).expect("source shape")
            })
        }
        InitMode::FromNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut noise = || {
                let values: Vec<f64> = (0..height * width)
                    .map(|_| rng.random_range(lo..=hi))
                    .collect();
                Grid::from_values(height, width, values).expect("noise shape")
            };
            [noise(), noise(), noise()]
        }
    };

    let mi_enabled = cfg.weights.mi > 0.0;
    let src_stacks = if mi_enabled {
        Some(crate::metrics::build_src_stacks(src, &cfg.binning))
    } else {
        None
    };

    let mut adam = AdamState::new(height, width, cfg.lr);
    let mut trace = LossTrace::default();

    for step in 0..cfg.max_steps {
        let channels = [
            channel_from_grid(&params[0]),
            channel_from_grid(&params[1]),
            channel_from_grid(&params[2]),
        ];
        let eval = evaluate_loss(
            [&channels[0], &channels[1], &channels[2]],
            src_stacks.as_ref(),
            ref_hists,
            &cfg.weights,
            &cfg.binning,
            true,
            if mi_enabled {
                MiMode::SkipDegenerate
            } else {
                MiMode::Off
            },
        )?;

        if step % cfg.log_every == 0 || step + 1 == cfg.max_steps {
            let report = &eval.report;
            trace.records.push(TraceRecord {
                step,
                total: report.total,
                emd: report.l_emd(),
                mi: report.l_mi(),
                warning: eval
                    .mi_skipped
                    .then(|| "mi term skipped: degenerate joint distribution".to_string()),
            });
        }

        let grads = eval.grads.expect("gradients were requested");
        adam.step(&mut params, &grads);
        for grid in &mut params {
            for p in grid.values_mut() {
                *p = p.clamp(lo, hi);
            }
        }
    }

    let [py, pu, pv] = params;
    let out = ImageYuv::new(
        channel_from_grid(&py),
        channel_from_grid(&pu),
        channel_from_grid(&pv),
    )?;
    Ok((out, trace))
}

/// Paints `src` with the color distribution of `reference`: converts both to
/// YUV, histograms the reference, optimizes, and converts back to RGB.
/// The two images may have different sizes.
pub fn color_transfer(
    src: &ImageRgb8,
    reference: &ImageRgb8,
    cfg: &OptimizationConfig,
) -> Result<(ImageRgb8, LossTrace)> {
    let src_yuv = rgb_to_yuv(src, &cfg.binning);
    let ref_yuv = rgb_to_yuv(reference, &cfg.binning);
    let [ry, ru, rv] = ref_yuv.channels();
    let ref_hists = [
        channel_histogram(ry, &cfg.binning),
        channel_histogram(ru, &cfg.binning),
        channel_histogram(rv, &cfg.binning),
    ];
    let (out_yuv, trace) = optimize(&src_yuv, &ref_hists, cfg)?;
    Ok((yuv_to_rgb(&out_yuv), trace))
}
