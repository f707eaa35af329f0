//! Shared helpers for the integration suites: synthetic test images and the
//! independent oracles the optimizer is judged against.

// each test target compiles this module separately and uses its own subset
#![allow(dead_code)]

use histlayer_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A smooth synthetic color image: per-channel sinusoid fields with a little
/// high-frequency texture, deterministic in the seed. All three channels vary
/// meaningfully, so rank statistics are well defined.
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
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Classical exact histogram matching: a monotone rank remap of the source
/// pixels onto the reference CDF, inverted piecewise-linearly over each bin's
/// support. The textbook solution this library's optimizer is compared to.
pub fn classical_match(src: &Channel, reference: &SoftHistogram) -> Channel {
    let cfg = reference.config();
    let n = src.pixel_count();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| src.values()[i].total_cmp(&src.values()[j]));
    let mut cdf = Vec::with_capacity(cfg.bins());
    let mut run = 0.0;
    for &m in reference.mass() {
        run += m;
        cdf.push(run);
    }
    let total = *cdf.last().unwrap();
    let mut out = vec![0.0; n];
    for (rank, &idx) in order.iter().enumerate() {
        let q = (rank as f64 + 0.5) / n as f64 * total;
        let bin = cdf.partition_point(|&c| c < q).min(cfg.bins() - 1);
        let lo_cdf = if bin == 0 { 0.0 } else { cdf[bin - 1] };
        let mass = reference.mass()[bin];
        let frac = if mass > 0.0 { (q - lo_cdf) / mass } else { 0.5 };
        let value = cfg.edge(bin) + cfg.bin_width() * frac.clamp(0.0, 1.0);
        out[idx] = cfg.clamp(value);
    }
    Channel::new(src.height(), src.width(), out).unwrap()
}

pub fn mean_abs_diff(a: &ImageRgb8, b: &ImageRgb8) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .sum::<f64>()
        / a.data().len() as f64
}
