//! Seeded synthetic signals used when no external corpus is supplied.
//!
//! 1D signals mix a smooth low-frequency base, a few steps and a localized
//! high-frequency burst. 2D images mix band-limited noise, flat shapes with
//! sharp edges and striped texture patches. Every generator is a pure
//! function of its seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signals::{jacobian_frobenius, SampledSignal};

fn normalize(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    for v in values.iter_mut() {
        *v = if span > 0.0 { (*v - lo) / span } else { 0.5 };
    }
}

/// A 1D signal of `n` samples. `seed` also picks how much fine detail it has.
pub fn signal_1d(seed: u64, n: usize) -> SampledSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51_6e_61_6c);
    let detail: f64 = rng.random_range(0.0..1.0);
    let mut f = vec![0.0; n];
    let x = |i: usize| i as f64 / (n - 1) as f64;

    let n_waves = 2 + (detail * 3.0) as usize;
    for k in 0..n_waves {
        let freq = rng.random_range(0.5..2.5) * (1.0 + k as f64 * (1.0 + 3.0 * detail));
        let amp = rng.random_range(0.1..0.3) / (1.0 + k as f64 * 0.5);
        let phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in f.iter_mut().enumerate() {
            *v += amp * (2.0 * PI * freq * x(i) + phase).sin();
        }
    }
    let n_steps = 1 + rng.random_range(0..3);
    for _ in 0..n_steps {
        let at = rng.random_range(0.1..0.9);
        let h = rng.random_range(-0.5..0.5);
        for (i, v) in f.iter_mut().enumerate() {
            if x(i) > at {
                *v += h;
            }
        }
    }
    let start = rng.random_range(0.0..0.7);
    let width = rng.random_range(0.1..0.3);
    let freq = rng.random_range(15.0..45.0) * (0.5 + detail);
    let amp = 0.05 + 0.15 * detail;
    for (i, v) in f.iter_mut().enumerate() {
        let t = x(i);
        if t > start && t < start + width {
            *v += amp * (2.0 * PI * freq * t).sin();
        }
    }
    normalize(&mut f);
    SampledSignal::from_grid(vec![n], 1, f).expect("generator produces a valid lattice")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageCategory {
    Natural,
    Text,
    Noise,
}

impl std::fmt::Display for ImageCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ImageCategory::Natural => "natural",
            ImageCategory::Text => "text",
            ImageCategory::Noise => "noise",
        })
    }
}

/// A `size`×`size` image with `channels` ∈ {1,3}.
pub fn image_2d(seed: u64, size: usize, channels: usize, category: ImageCategory) -> SampledSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1_a6e5);
    let mut planes = vec![vec![0.0; size * size]; channels];
    let xy = |i: usize| ((i / size) as f64 / (size - 1) as f64, (i % size) as f64 / (size - 1) as f64);
    match category {
        ImageCategory::Natural => {
            let waves: Vec<(f64, f64, f64, f64)> = (0..8)
                .map(|k| {
                    let scale = 1.0 + k as f64 * 0.8;
                    (
                        rng.random_range(-3.0..3.0) * scale,
                        rng.random_range(-3.0..3.0) * scale,
                        rng.random_range(0.0..2.0 * PI),
                        0.25 / (1.0 + k as f64 * 0.6),
                    )
                })
                .collect();
            let tints: Vec<f64> = (0..channels).map(|_| rng.random_range(0.6..1.0)).collect();
            for (i, base) in planes[0].iter_mut().enumerate() {
                let (a, b) = xy(i);
                *base = waves
                    .iter()
                    .map(|&(fa, fb, ph, amp)| amp * (2.0 * PI * (fa * a + fb * b) + ph).sin())
                    .sum();
            }
            let base = planes[0].clone();
            for (c, plane) in planes.iter_mut().enumerate() {
                for (v, b) in plane.iter_mut().zip(&base) {
                    *v = b * tints[c];
                }
            }
            // Flat shapes with sharp edges.
            for _ in 0..4 {
                let (ca, cb) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
                let r = rng.random_range(0.08..0.25);
                let level: Vec<f64> = (0..channels).map(|_| rng.random_range(-0.6..0.6)).collect();
                let disc = rng.random_bool(0.5);
                for i in 0..size * size {
                    let (a, b) = xy(i);
                    let inside = if disc {
                        (a - ca).powi(2) + (b - cb).powi(2) < r * r
                    } else {
                        (a - ca).abs() < r && (b - cb).abs() < r * 0.7
                    };
                    if inside {
                        for (c, plane) in planes.iter_mut().enumerate() {
                            plane[i] += level[c];
                        }
                    }
                }
            }
            // One striped texture patch.
            let (pa, pb) = (rng.random_range(0.0..0.6), rng.random_range(0.0..0.6));
            let freq = rng.random_range(8.0..18.0);
            let angle = rng.random_range(0.0..PI);
            for i in 0..size * size {
                let (a, b) = xy(i);
                if a > pa && a < pa + 0.35 && b > pb && b < pb + 0.35 {
                    let s = 0.2 * (2.0 * PI * freq * (a * angle.cos() + b * angle.sin())).sin();
                    for plane in planes.iter_mut() {
                        plane[i] += s;
                    }
                }
            }
        }
        ImageCategory::Text => {
            for plane in planes.iter_mut() {
                plane.iter_mut().for_each(|v| *v = 1.0);
            }
            let rows = 4 + rng.random_range(0..3);
            for r in 0..rows {
                let top = 0.08 + r as f64 * 0.85 / rows as f64;
                let h = 0.5 * 0.85 / rows as f64;
                let mut left = 0.05;
                while left < 0.9 {
                    let w = rng.random_range(0.01..0.03);
                    let tall = rng.random_range(0.5..1.0) * h;
                    let bar = rng.random_bool(0.7);
                    for i in 0..size * size {
                        let (a, b) = xy(i);
                        let hit = if bar {
                            b > left && b < left + w && a > top + h - tall && a < top + h
                        } else {
                            b > left && b < left + 3.0 * w && (a - (top + h * 0.5)).abs() < w * 0.5
                        };
                        if hit {
                            for plane in planes.iter_mut() {
                                plane[i] = 0.0;
                            }
                        }
                    }
                    left += w + rng.random_range(0.01..0.05);
                }
            }
        }
        ImageCategory::Noise => {
            for plane in planes.iter_mut() {
                plane.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
            }
        }
    }
    if category != ImageCategory::Text {
        // Shared normalization keeps the colour balance.
        let mut all: Vec<f64> = planes.iter().flatten().copied().collect();
        normalize(&mut all);
        for (c, plane) in planes.iter_mut().enumerate() {
            plane.copy_from_slice(&all[c * size * size..(c + 1) * size * size]);
        }
    }
    let mut values = Vec::with_capacity(size * size * channels);
    for i in 0..size * size {
        for plane in &planes {
            values.push(plane[i]);
        }
    }
    SampledSignal::from_grid(vec![size, size], channels, values)
        .expect("generator produces a valid lattice")
}

pub fn constant(grid_shape: Vec<usize>, channels: usize, level: f64) -> SampledSignal {
    let count: usize = grid_shape.iter().product();
    SampledSignal::from_grid(grid_shape, channels, vec![level; count * channels])
        .expect("constant level must be in [0,1]")
}

/// Mean Jacobian norm of the channel-mean signal; used to rank signals.
pub fn complexity(signal: &SampledSignal) -> f64 {
    let g = jacobian_frobenius(&signal.channel_mean());
    g.as_slice().iter().sum::<f64>() / g.len() as f64
}

/// `count` 1D signals seeded from `base_seed`.
pub fn dev_set_1d(base_seed: u64, count: usize, n: usize) -> Vec<SampledSignal> {
    (0..count as u64).map(|k| signal_1d(base_seed.wrapping_add(k), n)).collect()
}

/// `count` natural-category images seeded from `base_seed`.
pub fn dev_set_2d(base_seed: u64, count: usize, size: usize, channels: usize) -> Vec<SampledSignal> {
    (0..count as u64)
        .map(|k| image_2d(base_seed.wrapping_add(k), size, channels, ImageCategory::Natural))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let a = signal_1d(3, 512);
        assert_eq!(a, signal_1d(3, 512));
        assert_ne!(a, signal_1d(4, 512));
        let lo = a.values().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
        for cat in [ImageCategory::Natural, ImageCategory::Text, ImageCategory::Noise] {
            let img = image_2d(1, 32, 3, cat);
            assert_eq!(img, image_2d(1, 32, 3, cat));
            assert_eq!(img.grid_shape(), &[32, 32]);
        }
    }

    #[test]
    fn constant_has_zero_complexity() {
        assert_eq!(complexity(&constant(vec![16, 16], 1, 0.4)), 0.0);
        assert!(complexity(&image_2d(0, 32, 1, ImageCategory::Natural)) > 0.0);
    }
}
