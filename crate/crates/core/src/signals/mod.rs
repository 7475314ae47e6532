//! Sampled 1D/2D signals: loading, train/test splits, gradient fields and
//! fidelity metrics.

mod metrics;
pub mod netpbm;
pub mod synth;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use metrics::{psnr, ssim, GrayImage, PSNR_CAP_DB};

/// A signal sampled on a full regular lattice over `[0,1]^N`.
///
/// Coordinates and values are stored flat; point `i` owns
/// `coords[i*N..(i+1)*N]` and `values[i*M..(i+1)*M]`. The lattice is
/// enumerated in row-major order (last axis fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    coords: Vec<f64>,
    values: Vec<f64>,
    grid_shape: Vec<usize>,
    n_dims_out: usize,
}

impl SampledSignal {
    /// Builds a signal from lattice-ordered values already scaled to `[0,1]`.
    pub fn from_grid(grid_shape: Vec<usize>, n_dims_out: usize, values: Vec<f64>) -> Result<Self> {
        if grid_shape.is_empty() || grid_shape.len() > 2 {
            return Err(Error::Config(format!(
                "signals must be 1D or 2D, got {} axes",
                grid_shape.len()
            )));
        }
        if n_dims_out != 1 && n_dims_out != 3 {
            return Err(Error::Config(format!(
                "signals must have 1 or 3 channels, got {n_dims_out}"
            )));
        }
        let count: usize = grid_shape.iter().product();
        if count == 0 || values.is_empty() {
            return Err(Error::EmptySignal);
        }
        for (axis, &extent) in grid_shape.iter().enumerate() {
            if extent < 2 {
                return Err(Error::ExtentTooSmall { axis, extent });
            }
        }
        if values.len() != count * n_dims_out {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: count * n_dims_out,
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::format("signal values", "outside [0,1]"));
        }
        let coords = lattice_coords(&grid_shape);
        Ok(Self {
            coords,
            values,
            grid_shape,
            n_dims_out,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.n_dims_in()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn n_dims_in(&self) -> usize {
        self.grid_shape.len()
    }

    pub fn n_dims_out(&self) -> usize {
        self.n_dims_out
    }

    pub fn grid_shape(&self) -> &[usize] {
        &self.grid_shape
    }

    pub fn coord(&self, i: usize) -> &[f64] {
        let n = self.n_dims_in();
        &self.coords[i * n..(i + 1) * n]
    }

    pub fn value(&self, i: usize) -> &[f64] {
        let m = self.n_dims_out;
        &self.values[i * m..(i + 1) * m]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Flat values of the listed points, in the order given.
    pub fn gather_values(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.value(i).iter().copied()).collect()
    }

    /// Flat coordinates of the listed points, in the order given.
    pub fn gather_coords(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.coord(i).iter().copied()).collect()
    }

    /// Channel mean `f̄`, a single-channel signal on the same lattice.
    pub fn channel_mean(&self) -> SampledSignal {
        if self.n_dims_out == 1 {
            return self.clone();
        }
        let m = self.n_dims_out as f64;
        let values = self
            .values
            .chunks(self.n_dims_out)
            .map(|c| c.iter().sum::<f64>() / m)
            .collect();
        SampledSignal {
            coords: self.coords.clone(),
            values,
            grid_shape: self.grid_shape.clone(),
            n_dims_out: 1,
        }
    }

    /// The sub-lattice keeping every `stride[a]`-th sample along axis `a`,
    /// starting at index 0. Coordinates are re-normalized to `[0,1]`.
    pub fn sublattice(&self, stride: &[usize]) -> Result<SampledSignal> {
        let idx = sublattice_indices(&self.grid_shape, stride);
        let shape = sublattice_shape(&self.grid_shape, stride);
        SampledSignal::from_grid(shape, self.n_dims_out, self.gather_values(&idx))
    }

    /// Lattice index of a multi-index (row-major).
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        flat_index(&self.grid_shape, multi)
    }
}

fn lattice_coords(shape: &[usize]) -> Vec<f64> {
    let count: usize = shape.iter().product();
    let n = shape.len();
    let mut out = Vec::with_capacity(count * n);
    for i in 0..count {
        let multi = multi_index(shape, i);
        for (a, &k) in multi.iter().enumerate() {
            out.push(k as f64 / (shape[a] - 1) as f64);
        }
    }
    out
}

pub(crate) fn multi_index(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut multi = vec![0; shape.len()];
    for a in (0..shape.len()).rev() {
        multi[a] = flat % shape[a];
        flat /= shape[a];
    }
    multi
}

pub(crate) fn flat_index(shape: &[usize], multi: &[usize]) -> usize {
    multi
        .iter()
        .zip(shape)
        .fold(0, |acc, (&k, &extent)| acc * extent + k)
}

fn sublattice_shape(shape: &[usize], stride: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .zip(stride)
        .map(|(&e, &s)| (e - 1) / s + 1)
        .collect()
}

fn sublattice_indices(shape: &[usize], stride: &[usize]) -> Vec<usize> {
    (0..shape.iter().product())
        .filter(|&i| {
            multi_index(shape, i)
                .iter()
                .zip(stride)
                .all(|(&k, &s)| k % s == 0)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalKind {
    Csv1d,
    Image2d,
}

impl std::str::FromStr for SignalKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv_1d" | "csv" => Ok(SignalKind::Csv1d),
            "image_2d" | "image" => Ok(SignalKind::Image2d),
            other => Err(Error::Config(format!("unknown signal kind '{other}'"))),
        }
    }
}

impl SignalKind {
    /// Guesses the kind from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(SignalKind::Csv1d),
            "pgm" | "ppm" | "pnm" => Some(SignalKind::Image2d),
            _ => None,
        }
    }
}

/// Loads a signal from disk and normalizes it to `[0,1]`.
pub fn load_signal(path: &Path, kind: SignalKind) -> Result<SampledSignal> {
    match kind {
        SignalKind::Csv1d => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_csv_1d(&text)
        }
        SignalKind::Image2d => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            let img = netpbm::decode(&bytes)?;
            img.into_signal()
        }
    }
}

/// Parses one value per line and min-max normalizes. A constant column maps to 0.
pub fn parse_csv_1d(text: &str) -> Result<SampledSignal> {
    let mut raw = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line.parse().map_err(|_| {
            Error::format("csv signal", format!("line {}: '{line}' is not a number", lineno + 1))
        })?;
        if !v.is_finite() {
            return Err(Error::format("csv signal", format!("line {}: non-finite", lineno + 1)));
        }
        raw.push(v);
    }
    if raw.is_empty() {
        return Err(Error::EmptySignal);
    }
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let values = raw
        .iter()
        .map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 })
        .collect::<Vec<_>>();
    let n = values.len();
    SampledSignal::from_grid(vec![n], 1, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitScheme {
    Regular,
    Random,
}

impl std::str::FromStr for SplitScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(SplitScheme::Regular),
            "random" => Ok(SplitScheme::Random),
            other => Err(Error::Config(format!("unknown split scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for SplitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SplitScheme::Regular => "regular",
            SplitScheme::Random => "random",
        })
    }
}

/// A partition of the lattice into training and held-out points.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitPlan {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub scheme: SplitScheme,
    pub fraction: f64,
    pub seed: u64,
    /// Per-axis stride of the training sub-lattice (regular scheme only).
    pub stride: Option<Vec<usize>>,
}

/// Per-axis stride used by the regular scheme: `round(fraction^(-1/N))`.
pub fn regular_stride(fraction: f64, n_dims: usize) -> usize {
    (fraction.powf(-1.0 / n_dims as f64)).round().max(1.0) as usize
}

pub fn make_split(
    signal: &SampledSignal,
    scheme: SplitScheme,
    fraction: f64,
    seed: u64,
) -> Result<SplitPlan> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidSplit(format!("fraction {fraction} not in (0,1]")));
    }
    let n = signal.len();
    let (train_idx, stride) = match scheme {
        SplitScheme::Regular => {
            let s = regular_stride(fraction, signal.n_dims_in());
            let stride = vec![s; signal.n_dims_in()];
            (sublattice_indices(signal.grid_shape(), &stride), Some(stride))
        }
        SplitScheme::Random => {
            let count = (fraction * n as f64).round() as usize;
            if count == 0 {
                return Err(Error::InvalidSplit("training set would be empty".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, count.min(n)).into_vec();
            idx.sort_unstable();
            (idx, None)
        }
    };
    if train_idx.is_empty() {
        return Err(Error::InvalidSplit("training set would be empty".into()));
    }
    let mut in_train = vec![false; n];
    for &i in &train_idx {
        in_train[i] = true;
    }
    let test_idx: Vec<usize> = (0..n).filter(|&i| !in_train[i]).collect();
    if fraction < 1.0 && test_idx.is_empty() {
        return Err(Error::InvalidSplit(format!(
            "fraction {fraction} leaves no test points"
        )));
    }
    Ok(SplitPlan {
        train_idx,
        test_idx,
        scheme,
        fraction,
        seed,
        stride,
    })
}

/// Per-point Frobenius norm of the target Jacobian.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientField(pub Vec<f64>);

impl GradientField {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Finite-difference Jacobian norm on the lattice: central differences in the
/// interior, one-sided at the boundary, spacing `1/(extent-1)` per axis.
pub fn jacobian_frobenius(signal: &SampledSignal) -> GradientField {
    let shape = signal.grid_shape();
    let m = signal.n_dims_out();
    let n = signal.len();
    let mut g = vec![0.0; n];
    for (i, gi) in g.iter_mut().enumerate() {
        let multi = multi_index(shape, i);
        let mut acc = 0.0;
        for (a, &extent) in shape.iter().enumerate() {
            let h = 1.0 / (extent - 1) as f64;
            let k = multi[a];
            let (lo, hi, span) = if k == 0 {
                (0, 1, h)
            } else if k == extent - 1 {
                (k - 1, k, h)
            } else {
                (k - 1, k + 1, 2.0 * h)
            };
            let mut ml = multi.clone();
            ml[a] = lo;
            let mut mh = multi.clone();
            mh[a] = hi;
            let (il, ih) = (flat_index(shape, &ml), flat_index(shape, &mh));
            for c in 0..m {
                let d = (signal.values[ih * m + c] - signal.values[il * m + c]) / span;
                acc += d * d;
            }
        }
        *gi = acc.sqrt();
    }
    GradientField(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize, f: impl Fn(f64) -> f64) -> SampledSignal {
        let vals = (0..n).map(|i| f(i as f64 / (n - 1) as f64)).collect();
        SampledSignal::from_grid(vec![n], 1, vals).unwrap()
    }

    #[test]
    fn csv_endpoints() {
        let s = parse_csv_1d("0\n255\n").unwrap();
        assert_eq!(s.coords(), &[0.0, 1.0]);
        assert_eq!(s.values(), &[0.0, 1.0]);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv_1d("\n\n"), Err(Error::EmptySignal)));
        assert!(matches!(
            parse_csv_1d("3\n"),
            Err(Error::ExtentTooSmall { axis: 0, extent: 1 })
        ));
        assert!(parse_csv_1d("1\nabc\n").is_err());
    }

    #[test]
    fn lattice_is_row_major() {
        let s = SampledSignal::from_grid(vec![2, 3], 1, vec![0.0; 6]).unwrap();
        assert_eq!(s.coord(0), &[0.0, 0.0]);
        assert_eq!(s.coord(1), &[0.0, 0.5]);
        assert_eq!(s.coord(3), &[1.0, 0.0]);
        assert_eq!(s.flat_index(&[1, 2]), 5);
    }

    #[test]
    fn regular_half_split() {
        let s = ramp(512, |x| x);
        let p = make_split(&s, SplitScheme::Regular, 0.5, 0).unwrap();
        assert_eq!(p.train_idx.len(), 256);
        assert!(p.train_idx.iter().all(|i| i % 2 == 0));
        assert!(p.test_idx.iter().all(|i| i % 2 == 1));
    }

    #[test]
    fn full_split_has_no_test() {
        let s = ramp(20, |x| x);
        let p = make_split(&s, SplitScheme::Regular, 1.0, 0).unwrap();
        assert_eq!(p.train_idx.len(), 20);
        assert!(p.test_idx.is_empty());
    }

    #[test]
    fn random_split_is_reproducible() {
        let s = SampledSignal::from_grid(vec![120, 120], 1, vec![0.5; 14400]).unwrap();
        let a = make_split(&s, SplitScheme::Random, 0.25, 7).unwrap();
        let b = make_split(&s, SplitScheme::Random, 0.25, 7).unwrap();
        assert_eq!(a.train_idx.len(), 3600);
        assert_eq!(a, b);
        let c = make_split(&s, SplitScheme::Random, 0.25, 8).unwrap();
        assert_ne!(a.train_idx, c.train_idx);
    }

    #[test]
    fn split_errors() {
        let s = ramp(10, |x| x);
        assert!(make_split(&s, SplitScheme::Regular, 0.0, 0).is_err());
        assert!(make_split(&s, SplitScheme::Regular, 0.9, 0).is_err());
        assert!(make_split(&s, SplitScheme::Random, 0.01, 0).is_err());
    }

    #[test]
    fn regular_2d_split_is_sublattice() {
        let s = SampledSignal::from_grid(vec![120, 120], 1, vec![0.5; 14400]).unwrap();
        let p = make_split(&s, SplitScheme::Regular, 0.25, 0).unwrap();
        assert_eq!(p.stride, Some(vec![2, 2]));
        assert_eq!(p.train_idx.len(), 3600);
        let p = make_split(&s, SplitScheme::Regular, 0.10, 0).unwrap();
        assert_eq!(p.train_idx.len(), 40 * 40);
    }

    #[test]
    fn gradient_constant_and_ramp() {
        let g = jacobian_frobenius(&ramp(11, |_| 0.3));
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let g = jacobian_frobenius(&ramp(11, |x| x));
        for &v in &g.as_slice()[1..10] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_square_at_half() {
        let g = jacobian_frobenius(&ramp(101, |x| x * x));
        assert!((g.as_slice()[50] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn gradient_2d_rgb_uses_all_channels() {
        // f = (x1, x2, 0): each interior point has ‖J‖_F = sqrt(2).
        let shape = vec![5, 5];
        let mut vals = Vec::new();
        for i in 0..25 {
            let m = multi_index(&shape, i);
            vals.extend([m[0] as f64 / 4.0, m[1] as f64 / 4.0, 0.0]);
        }
        let s = SampledSignal::from_grid(shape, 3, vals).unwrap();
        let g = jacobian_frobenius(&s);
        assert!((g.as_slice()[12] - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sublattice_renormalizes() {
        let s = ramp(9, |x| x);
        let sub = s.sublattice(&[2]).unwrap();
        assert_eq!(sub.grid_shape(), &[5]);
        assert_eq!(sub.values(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(sub.coord(1), &[0.25]);
    }
}
