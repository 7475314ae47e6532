use crate::error::{Error, Result};

/// Returned by [`psnr`] when the two inputs are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

/// Peak signal-to-noise ratio for values on a unit dynamic range.
pub fn psnr(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::EmptySignal);
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(-10.0 * mse.log10())
}

/// Single-channel image with values in `[0,1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: width * height,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// From interleaved values; RGB is reduced to BT.601 luma.
    pub fn from_channels(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        match channels {
            1 => Self::new(width, height, values.to_vec()),
            3 => Self::new(
                width,
                height,
                values
                    .chunks(3)
                    .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
                    .collect(),
            ),
            c => Err(Error::Config(format!("unsupported channel count {c}"))),
        }
    }

    #[inline]
    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

const WINDOW: usize = 11;
const WINDOW_STD: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; WINDOW * WINDOW] {
    let half = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW * WINDOW];
    let mut total = 0.0;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let (dx, dy) = (x as f64 - half, y as f64 - half);
            let v = (-(dx * dx + dy * dy) / (2.0 * WINDOW_STD * WINDOW_STD)).exp();
            w[y * WINDOW + x] = v;
            total += v;
        }
    }
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows (σ = 1.5).
pub fn ssim(pred: &GrayImage, truth: &GrayImage) -> Result<f64> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::LengthMismatch {
            left: pred.data.len(),
            right: truth.data.len(),
        });
    }
    if pred.width < WINDOW || pred.height < WINDOW {
        return Err(Error::ImageTooSmall {
            width: pred.width,
            height: pred.height,
            window: WINDOW,
        });
    }
    let w = gaussian_window();
    let mut sum = 0.0;
    let mut count = 0usize;
    for y0 in 0..=pred.height - WINDOW {
        for x0 in 0..=pred.width - WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..WINDOW {
                for dx in 0..WINDOW {
                    let wt = w[dy * WINDOW + dx];
                    let a = pred.at(x0 + dx, y0 + dy);
                    let b = truth.at(x0 + dx, y0 + dy);
                    mx += wt * a;
                    my += wt * b;
                    xx += wt * a * a;
                    yy += wt * b * b;
                    xy += wt * a * b;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            sum += ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_values() {
        let t = vec![0.5; 100];
        assert_eq!(psnr(&t, &t).unwrap(), PSNR_CAP_DB);
        let p: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&p, &t).unwrap() - 20.0).abs() < 1e-9);
        let e = 1e-3f64.sqrt();
        let p: Vec<f64> = t.iter().map(|v| v + e).collect();
        assert!((psnr(&p, &t).unwrap() - 30.0).abs() < 1e-9);
        assert!(psnr(&p[..3], &t).is_err());
    }

    fn checker(n: usize) -> GrayImage {
        let data = (0..n * n)
            .map(|i| ((i / n + i % n) % 2) as f64)
            .collect();
        GrayImage::new(n, n, data).unwrap()
    }

    #[test]
    fn ssim_self_is_one() {
        let c = checker(16);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        let flat = GrayImage::new(12, 12, vec![0.5; 144]).unwrap();
        assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_checkerboard_is_nonpositive() {
        let c = checker(16);
        let inv = GrayImage::new(16, 16, c.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&c, &inv).unwrap() <= 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let s = GrayImage::new(10, 20, vec![0.0; 200]).unwrap();
        assert!(matches!(ssim(&s, &s), Err(Error::ImageTooSmall { .. })));
    }
}
