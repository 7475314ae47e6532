//! Polynomial map from gradient norm to σ, and interpolation of σ onto new
//! coordinates.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::embedders::DEFAULT_SIGMA_MIN;
use crate::error::{Error, Result};

pub const DEFAULT_TERMS: usize = 10;
pub const DEFAULT_RIDGE: f64 = 1e-8;
/// Projected range of the unit domain.
pub const DEFAULT_SIGMA_MAX: f64 = 1.0;

/// `σ(g) = Σ_k β_k (g / g_scale)^k`, clamped to `[sigma_min, sigma_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaPolynomial {
    coeffs: Vec<f64>,
    ridge: f64,
    g_scale: f64,
    sigma_min: f64,
    sigma_max: f64,
}

impl SigmaPolynomial {
    pub fn n_terms(&self) -> usize {
        self.coeffs.len()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn g_scale(&self) -> f64 {
        self.g_scale
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// Coefficients of the standardized variable `g / g_scale`.
    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// Coefficients of powers of the raw gradient norm.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        let mut p = 1.0;
        self.coeffs
            .iter()
            .map(|b| {
                let v = b / p;
                p *= self.g_scale;
                v
            })
            .collect()
    }

    pub fn with_bounds(mut self, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_max >= sigma_min) {
            return Err(Error::Config(format!(
                "bad σ bounds [{sigma_min}, {sigma_max}]"
            )));
        }
        self.sigma_min = sigma_min;
        self.sigma_max = sigma_max;
        Ok(self)
    }

    /// Polynomial value without clamping; `g` beyond the fitted range is
    /// held at `g_scale`.
    pub fn evaluate(&self, g: f64) -> f64 {
        let t = (g / self.g_scale).clamp(0.0, 1.0);
        self.coeffs.iter().rev().fold(0.0, |acc, b| acc * t + b)
    }

    pub fn predict(&self, g: f64) -> f64 {
        self.evaluate(g).clamp(self.sigma_min, self.sigma_max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        out.write_record(["L", "ridge", "g_scale", "sigma_min", "sigma_max"])?;
        out.write_record(&[
            self.coeffs.len().to_string(),
            self.ridge.to_string(),
            self.g_scale.to_string(),
            self.sigma_min.to_string(),
            self.sigma_max.to_string(),
        ])?;
        out.write_record(["k", "beta"])?;
        for (k, b) in self.coeffs.iter().enumerate() {
            out.write_record(&[k.to_string(), b.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("sigma model", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let bad = |why: &str| Error::format("sigma model csv", why.to_string());
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(r);
        let rows: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
        if rows.len() < 3 || rows[0].get(0) != Some("L") {
            return Err(bad("missing header"));
        }
        let num = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad("unparsable number"))
        };
        let h = &rows[1];
        let n = num(h.get(0))? as usize;
        let coeffs = rows[3..]
            .iter()
            .map(|r| num(r.get(1)))
            .collect::<Result<Vec<f64>>>()?;
        if coeffs.len() != n || n == 0 {
            return Err(bad("coefficient count differs from L"));
        }
        let model = Self {
            coeffs,
            ridge: num(h.get(1))?,
            g_scale: num(h.get(2))?,
            sigma_min: 1.0,
            sigma_max: 1.0,
        };
        if !(model.g_scale > 0.0) {
            return Err(bad("g_scale must be positive"));
        }
        model.with_bounds(num(h.get(3))?, num(h.get(4))?)
    }
}

/// Ridge-damped least squares on the Vandermonde system in `g / max(g)`.
pub fn fit_polynomial(pairs: &[(f64, f64)], n_terms: usize, ridge: f64) -> Result<SigmaPolynomial> {
    if n_terms == 0 {
        return Err(Error::Config("polynomial needs at least one term".into()));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be >= 0, got {ridge}")));
    }
    if pairs.iter().any(|(g, s)| !g.is_finite() || !s.is_finite() || *g < 0.0) {
        return Err(Error::NonFinite("σ fit pairs".into()));
    }
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::TooFewAbscissae(distinct.len()));
    }
    let g_scale = distinct[distinct.len() - 1];
    let rows = pairs.len() + if ridge > 0.0 { n_terms } else { 0 };
    let mut v = DMatrix::<f64>::zeros(rows, n_terms);
    let mut y = DVector::<f64>::zeros(rows);
    for (i, &(g, s)) in pairs.iter().enumerate() {
        let t = g / g_scale;
        let mut p = 1.0;
        for k in 0..n_terms {
            v[(i, k)] = p;
            p *= t;
        }
        y[i] = s;
    }
    if ridge > 0.0 {
        let r = ridge.sqrt();
        for k in 0..n_terms {
            v[(pairs.len() + k, k)] = r;
        }
    }
    let coeffs = v
        .svd(true, true)
        .solve(&y, 0.0)
        .map_err(|e| Error::Config(format!("least squares failed: {e}")))?;
    Ok(SigmaPolynomial {
        coeffs: coeffs.iter().copied().collect(),
        ridge,
        g_scale,
        sigma_min: DEFAULT_SIGMA_MIN,
        sigma_max: DEFAULT_SIGMA_MAX,
    })
}

pub fn predict_sigma(model: &SigmaPolynomial, g: f64) -> f64 {
    model.predict(g)
}

/// Root-mean-square of `evaluate(g) − σ` over `pairs` (no σ clamping).
pub fn residual_rms(model: &SigmaPolynomial, pairs: &[(f64, f64)]) -> f64 {
    let ss: f64 = pairs
        .iter()
        .map(|&(g, s)| (model.evaluate(g) - s).powi(2))
        .sum();
    (ss / pairs.len() as f64).sqrt()
}

/// Where σ is known.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaNodes {
    /// Strictly increasing 1D positions.
    Line(Vec<f64>),
    /// Row-major rectangular lattice with strictly increasing axis positions.
    Grid { rows: Vec<f64>, cols: Vec<f64> },
    /// Arbitrary points (`n_dims` per point); nearest-neighbor lookup.
    Scattered { coords: Vec<f64>, n_dims: usize },
}

impl SigmaNodes {
    /// Classifies flat coordinates as a line, a full lattice, or scattered points.
    pub fn from_coords(coords: &[f64], n_dims: usize) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        match n_dims {
            1 => {
                if coords.windows(2).all(|w| w[0] < w[1]) {
                    Ok(Self::Line(coords.to_vec()))
                } else {
                    Err(Error::Config("1D σ nodes must be strictly increasing".into()))
                }
            }
            2 => {
                let axis = |a: usize| {
                    let mut v: Vec<f64> = coords.iter().skip(a).step_by(2).copied().collect();
                    v.sort_by(f64::total_cmp);
                    v.dedup();
                    v
                };
                let (rows, cols) = (axis(0), axis(1));
                let is_grid = rows.len() * cols.len() * 2 == coords.len()
                    && coords.chunks(2).enumerate().all(|(i, p)| {
                        p[0] == rows[i / cols.len()] && p[1] == cols[i % cols.len()]
                    });
                if is_grid {
                    Ok(Self::Grid { rows, cols })
                } else {
                    Ok(Self::Scattered {
                        coords: coords.to_vec(),
                        n_dims: 2,
                    })
                }
            }
            _ => Err(Error::Config(format!("unsupported dimensionality {n_dims}"))),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Line(x) => x.len(),
            Self::Grid { rows, cols } => rows.len() * cols.len(),
            Self::Scattered { coords, n_dims } => coords.len() / n_dims,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn n_dims(&self) -> usize {
        match self {
            Self::Line(_) => 1,
            Self::Grid { .. } => 2,
            Self::Scattered { n_dims, .. } => *n_dims,
        }
    }
}

/// Locates `x` on increasing `nodes`: (left index, weight of the right node).
/// Outside the range the nearest end is returned with weight 0.
fn bracket(nodes: &[f64], x: f64) -> (usize, f64) {
    let n = nodes.len();
    if n == 1 || x <= nodes[0] {
        return (0, 0.0);
    }
    if x >= nodes[n - 1] {
        return (n - 1, 0.0);
    }
    let hi = nodes.partition_point(|v| *v <= x);
    let lo = hi - 1;
    (lo, (x - nodes[lo]) / (nodes[hi] - nodes[lo]))
}

/// σ at `test` (flat coordinates): piecewise-linear in 1D, bilinear on a
/// lattice (nearest node outside its hull), nearest node for scattered input.
pub fn interpolate_sigma(nodes: &SigmaNodes, sigma: &[f64], test: &[f64]) -> Result<Vec<f64>> {
    if nodes.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if sigma.len() != nodes.len() {
        return Err(Error::LengthMismatch {
            left: sigma.len(),
            right: nodes.len(),
        });
    }
    let n = nodes.n_dims();
    if test.len() % n != 0 {
        return Err(Error::LengthMismatch {
            left: test.len(),
            right: n,
        });
    }
    let out = test
        .chunks(n)
        .map(|p| match nodes {
            SigmaNodes::Line(x) => {
                let (i, w) = bracket(x, p[0]);
                if w == 0.0 {
                    sigma[i]
                } else {
                    (1.0 - w) * sigma[i] + w * sigma[i + 1]
                }
            }
            SigmaNodes::Grid { rows, cols } => {
                let inside = |v: f64, ax: &[f64]| v >= ax[0] && v <= ax[ax.len() - 1];
                let nc = cols.len();
                if inside(p[0], rows) && inside(p[1], cols) {
                    let (r, wr) = bracket(rows, p[0]);
                    let (c, wc) = bracket(cols, p[1]);
                    let at = |rr: usize, cc: usize| sigma[rr.min(rows.len() - 1) * nc + cc.min(nc - 1)];
                    (1.0 - wr) * ((1.0 - wc) * at(r, c) + wc * at(r, c + 1))
                        + wr * ((1.0 - wc) * at(r + 1, c) + wc * at(r + 1, c + 1))
                } else {
                    let r = nearest(rows, p[0]);
                    let c = nearest(cols, p[1]);
                    sigma[r * nc + c]
                }
            }
            SigmaNodes::Scattered { coords, n_dims } => {
                let mut best = (f64::INFINITY, 0);
                for (k, q) in coords.chunks(*n_dims).enumerate() {
                    let d: f64 = q.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                    if d < best.0 {
                        best = (d, k);
                    }
                }
                sigma[best.1]
            }
        })
        .collect();
    Ok(out)
}

fn nearest(axis: &[f64], v: f64) -> usize {
    let (i, w) = bracket(axis, v);
    if w > 0.5 {
        i + 1
    } else {
        i
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Reduces raw `(g, σ)` samples to at most `bins` pairs: sort by g, split
/// into equal-count bins, keep the mean g and mean σ of each bin.
pub fn bin_pairs(pairs: &[(f64, f64)], bins: usize) -> Vec<(f64, f64)> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = sorted.len();
    let bins = bins.min(n).max(1);
    (0..bins)
        .filter_map(|b| {
            let lo = b * n / bins;
            let hi = (b + 1) * n / bins;
            if lo == hi {
                return None;
            }
            let k = (hi - lo) as f64;
            let g = sorted[lo..hi].iter().map(|p| p.0).sum::<f64>() / k;
            let s = sorted[lo..hi].iter().map(|p| p.1).sum::<f64>() / k;
            Some((g, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_quadratic() {
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let g = i as f64 * 0.2;
                (g, 0.3 - 0.1 * g + 0.02 * g * g)
            })
            .collect();
        let m = fit_polynomial(&pairs, 3, 0.0).unwrap();
        let raw = m.raw_coefficients();
        for (got, want) in raw.iter().zip([0.3, -0.1, 0.02]) {
            assert!((got - want).abs() < 1e-8, "{raw:?}");
        }
    }

    #[test]
    fn more_terms_never_fit_worse() {
        let pairs: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let g = i as f64 / 4.0;
                (g, 0.05 + 0.02 * (3.0 * g).sin().abs())
            })
            .collect();
        let r3 = residual_rms(&fit_polynomial(&pairs, 3, 0.0).unwrap(), &pairs);
        let r10 = residual_rms(&fit_polynomial(&pairs, 10, 0.0).unwrap(), &pairs);
        assert!(r10 <= r3 + 1e-12);
    }

    /// Weighted normal equations solved by plain elimination.
    fn weighted_fit(pairs: &[(f64, f64, f64)], n: usize, scale: f64) -> Vec<f64> {
        let mut a = vec![vec![0.0; n + 1]; n];
        for &(g, s, w) in pairs {
            let t = g / scale;
            for r in 0..n {
                for c in 0..n {
                    a[r][c] += w * t.powi((r + c) as i32);
                }
                a[r][n] += w * t.powi(r as i32) * s;
            }
        }
        for col in 0..n {
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..=n {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (a[r][n] - tail) / a[r][r];
        }
        x
    }

    #[test]
    fn duplicate_pair_acts_as_weight() {
        let base = [(0.0, 0.3), (0.5, 0.2), (1.0, 0.25), (1.5, 0.1), (2.0, 0.15)];
        let mut dup = base.to_vec();
        dup.push(base[2]);
        let fit = fit_polynomial(&dup, 3, 0.0).unwrap();
        let weighted: Vec<(f64, f64, f64)> = base
            .iter()
            .enumerate()
            .map(|(i, &(g, s))| (g, s, if i == 2 { 2.0 } else { 1.0 }))
            .collect();
        let want = weighted_fit(&weighted, 3, 2.0);
        for (a, b) in fit.coefficients().iter().zip(&want) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn prediction_clamps() {
        let pairs = [(0.0, 0.2), (1.0, 0.2), (2.0, 0.2)];
        let m = fit_polynomial(&pairs, 2, DEFAULT_RIDGE).unwrap();
        assert!((m.predict(1.3) - 0.2).abs() < 1e-6);
        let low = fit_polynomial(&[(0.0, -1.0), (1.0, -1.0)], 1, 0.0).unwrap();
        assert_eq!(predict_sigma(&low, 0.5), DEFAULT_SIGMA_MIN);
        let lin = fit_polynomial(&[(0.0, 0.5), (1.0, 0.3)], 2, 0.0).unwrap();
        assert!((lin.predict(0.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn needs_two_abscissae() {
        assert!(matches!(
            fit_polynomial(&[(1.0, 0.1), (1.0, 0.2)], 2, 0.0),
            Err(Error::TooFewAbscissae(1))
        ));
    }

    #[test]
    fn csv_roundtrip() {
        let pairs: Vec<(f64, f64)> = (0..8).map(|i| (i as f64, 0.1 / (1.0 + i as f64))).collect();
        let m = fit_polynomial(&pairs, 4, 1e-8).unwrap().with_bounds(1e-3, 0.5).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = SigmaPolynomial::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert!(SigmaPolynomial::read_csv("x\n".as_bytes()).is_err());
    }

    #[test]
    fn linear_interpolation_1d() {
        let nodes = SigmaNodes::from_coords(&[0.0, 1.0], 1).unwrap();
        let out = interpolate_sigma(&nodes, &[0.1, 0.3], &[0.5, 0.0, 1.0, -1.0, 2.0]).unwrap();
        assert!((out[0] - 0.2).abs() < 1e-15);
        assert_eq!(&out[1..], &[0.1, 0.3, 0.1, 0.3]);
    }

    #[test]
    fn bilinear_center() {
        let coords = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0];
        let nodes = SigmaNodes::from_coords(&coords, 2).unwrap();
        assert!(matches!(nodes, SigmaNodes::Grid { .. }));
        let sig = [0.1, 0.2, 0.3, 0.4];
        let out = interpolate_sigma(&nodes, &sig, &[0.5, 0.5, 1.0, 0.0]).unwrap();
        assert!((out[0] - 0.25).abs() < 1e-15);
        assert_eq!(out[1], 0.3);
    }

    #[test]
    fn outside_lattice_uses_nearest_node() {
        let coords = [0.2, 0.2, 0.2, 0.8, 0.8, 0.2, 0.8, 0.8];
        let nodes = SigmaNodes::from_coords(&coords, 2).unwrap();
        let out = interpolate_sigma(&nodes, &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.9, 1.0, 0.1]).unwrap();
        assert_eq!(out, vec![2.0, 3.0]);
    }

    #[test]
    fn scattered_nodes() {
        let coords = [0.1, 0.1, 0.9, 0.2, 0.4, 0.8];
        let nodes = SigmaNodes::from_coords(&coords, 2).unwrap();
        assert!(matches!(nodes, SigmaNodes::Scattered { .. }));
        let out = interpolate_sigma(&nodes, &[1.0, 2.0, 3.0], &[0.85, 0.25, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![2.0, 1.0]);
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]) - 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![1.5, 0.0, 1.5]);
    }

    #[test]
    fn binning_takes_means() {
        let pairs: Vec<(f64, f64)> = (0..9).map(|i| (i as f64, if i == 2 { 0.0 } else { 1.0 })).collect();
        let b = bin_pairs(&pairs, 3);
        assert_eq!(b, vec![(1.0, 2.0 / 3.0), (4.0, 1.0), (7.0, 1.0)]);
    }
}
