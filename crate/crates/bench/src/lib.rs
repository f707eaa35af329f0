//! Benchmark-only crate; see `benches/pipeline.rs`.
//!
//! Shared input builders live here so the bench targets stay terse.

use histlayer_core::{BinningConfig, Channel, ImageYuv};

/// Deterministic pseudo-random channel over most of the intensity range.
pub fn bench_channel(seed: u64, side: usize) -> Channel {
    let mut state = seed;
    let values: Vec<f64> = (0..side * side)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * 0.95
        })
        .collect();
    Channel::new(side, side, values).unwrap()
}

pub fn bench_image(seed: u64, side: usize, config: &BinningConfig) -> ImageYuv {
    let clamp = |c: Channel| {
        let values = c.values().iter().map(|&z| config.clamp(z)).collect();
        Channel::new(c.height(), c.width(), values).unwrap()
    };
    ImageYuv::new(
        clamp(bench_channel(seed, side)),
        clamp(bench_channel(seed + 1, side)),
        clamp(bench_channel(seed + 2, side)),
    )
    .unwrap()
}
