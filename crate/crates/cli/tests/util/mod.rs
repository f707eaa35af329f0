//! Helpers shared by the CLI integration and acceptance suites.

// each test target compiles this module separately and uses its own subset
#![allow(dead_code)]

use histlayer_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;

pub fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_histlayer"))
}

pub fn tmp_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).expect("create test dir");
    dir
}

/// A smooth synthetic color image, deterministic in the seed; all three
/// channels vary meaningfully.
pub fn synth_rgb(seed: u64, height: usize, width: usize) -> ImageRgb8 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for _ in 0..3 {
        let fx = rng.random_range(0.5..3.0);
        let fy = rng.random_range(0.5..3.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let offset = rng.random_range(0.3..0.7);
        let amp = rng.random_range(0.2..0.35);
        params.push((fx, fy, phase, offset, amp));
    }
    let mut data = Vec::with_capacity(height * width * 3);
    for r in 0..height {
        for c in 0..width {
            let x = c as f64 / width as f64;
            let y = r as f64 / height as f64;
            for &(fx, fy, phase, offset, amp) in &params {
                let v = offset
                    + amp * (std::f64::consts::TAU * (fx * x + fy * y) + phase).sin()
                    + 0.08 * (19.0 * x).sin() * (23.0 * y).cos();
                data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    ImageRgb8::new(width, height, data).unwrap()
}

pub fn yuv_hists(img: &ImageYuv, cfg: &BinningConfig) -> [SoftHistogram; 3] {
    let [y, u, v] = img.channels();
    [
        channel_histogram(y, cfg),
        channel_histogram(u, cfg),
        channel_histogram(v, cfg),
    ]
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0;
            for k in i..=j {
                r[idx[k]] = mid;
            }
            i = j + 1;
        }
        r
    }
    let ra = ranks(a);
    let rb = ranks(b);
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Splitmix-style deterministic pseudo-random stream for oracle inputs.
pub struct DetRng(pub u64);

impl DetRng {
    pub fn unit(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [-scale, scale].
    pub fn symmetric(&mut self, scale: f64) -> f64 {
        (self.unit() * 2.0 - 1.0) * scale
    }
}
