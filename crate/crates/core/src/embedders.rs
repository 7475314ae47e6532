//! Positional embeddings: the super-Gaussian radial-basis embedder with a
//! per-coordinate width, random Fourier features, their analytic Jacobians
//! and the induced metric tensor.
//!
//! A super-Gaussian component is
//!
//! ```text
//! φ_i(x) = exp(-b · (x·α - t_i)² / (2σ²))
//! ```
//!
//! In `PerAxis` mode every input axis gets its own `D/N` centers over
//! `[0,1]` and the per-axis embeddings are concatenated; `α` is unused.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kv::KvMap;
use crate::linalg::{self, Matrix};
use crate::par;

pub const DEFAULT_D_EMBED: usize = 256;
pub const DEFAULT_EXPONENT: f64 = 2.0;
pub const DEFAULT_SIGMA_MIN: f64 = 1e-3;
/// Initial width in units of the center spacing.
pub const INIT_SIGMA_SPACINGS: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedMode {
    Projected,
    PerAxis,
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projected" => Ok(EmbedMode::Projected),
            "per_axis" => Ok(EmbedMode::PerAxis),
            other => Err(Error::Config(format!("unknown embed mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbedMode::Projected => "projected",
            EmbedMode::PerAxis => "per_axis",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperGaussianConfig {
    n_dims_in: usize,
    d_embed: usize,
    exponent: f64,
    alpha: Vec<f64>,
    mode: EmbedMode,
    sigma_min: f64,
    /// Projected mode: all `D` centers. Per-axis mode: the `D/N` centers shared by every axis.
    centers: Vec<f64>,
    range: (f64, f64),
}

impl SuperGaussianConfig {
    pub fn new(
        n_dims_in: usize,
        d_embed: usize,
        exponent: f64,
        mode: EmbedMode,
        alpha: Option<Vec<f64>>,
        sigma_min: f64,
    ) -> Result<Self> {
        if n_dims_in == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }
        if !(exponent > 0.0) {
            return Err(Error::Config(format!("exponent b must be > 0, got {exponent}")));
        }
        if !(sigma_min > 0.0) {
            return Err(Error::Config(format!("sigma_min must be > 0, got {sigma_min}")));
        }
        let alpha = alpha.unwrap_or_else(|| vec![1.0; n_dims_in]);
        if alpha.len() != n_dims_in {
            return Err(Error::Config(format!(
                "alpha has {} entries for {n_dims_in} input dims",
                alpha.len()
            )));
        }
        let per_centers = match mode {
            EmbedMode::Projected => d_embed,
            EmbedMode::PerAxis => {
                if d_embed % n_dims_in != 0 {
                    return Err(Error::Config(format!(
                        "d_embed {d_embed} not divisible by {n_dims_in} axes"
                    )));
                }
                d_embed / n_dims_in
            }
        };
        if per_centers < 2 {
            return Err(Error::Config("need at least 2 centers".into()));
        }
        let range = match mode {
            // Extremes of x·α over the unit box.
            EmbedMode::Projected => (
                alpha.iter().map(|a| a.min(0.0)).sum(),
                alpha.iter().map(|a| a.max(0.0)).sum(),
            ),
            EmbedMode::PerAxis => (0.0, 1.0),
        };
        if !(range.1 > range.0) {
            return Err(Error::Config("alpha projects the domain to a point".into()));
        }
        let centers = (0..per_centers)
            .map(|i| range.0 + (range.1 - range.0) * i as f64 / (per_centers - 1) as f64)
            .collect();
        Ok(Self {
            n_dims_in,
            d_embed,
            exponent,
            alpha,
            mode,
            sigma_min,
            centers,
            range,
        })
    }

    /// D = 256, b = 2, σ_min = 1e-3; projected for 1D, per-axis otherwise.
    pub fn default_for(n_dims_in: usize) -> Self {
        let mode = if n_dims_in == 1 {
            EmbedMode::Projected
        } else {
            EmbedMode::PerAxis
        };
        Self::new(
            n_dims_in,
            DEFAULT_D_EMBED,
            DEFAULT_EXPONENT,
            mode,
            None,
            DEFAULT_SIGMA_MIN,
        )
        .expect("default configuration is valid")
    }

    pub fn n_dims_in(&self) -> usize {
        self.n_dims_in
    }
    pub fn d_embed(&self) -> usize {
        self.d_embed
    }
    pub fn exponent(&self) -> f64 {
        self.exponent
    }
    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
    pub fn mode(&self) -> EmbedMode {
        self.mode
    }
    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Length of the projected domain, used as the upper clamp for σ.
    pub fn projected_extent(&self) -> f64 {
        self.range.1 - self.range.0
    }

    pub fn center_spacing(&self) -> f64 {
        self.projected_extent() / (self.centers.len() - 1) as f64
    }

    /// Width of one independently normalized segment: all of `D` in projected
    /// mode, `D/N` per axis otherwise.
    pub fn block_len(&self) -> usize {
        match self.mode {
            EmbedMode::Projected => self.d_embed,
            EmbedMode::PerAxis => self.d_embed / self.n_dims_in,
        }
    }

    /// Embeds every row with its own σ and no floor check, plus optional `∂φ/∂σ`.
    pub(crate) fn embed_rows(&self, coords: &[f64], sigmas: &[f64], with_sigma_derivative: bool) -> (Matrix, Option<Matrix>) {
        let n = self.n_dims_in;
        let d = self.d_embed;
        let count = sigmas.len();
        let mut emb = Matrix::zeros(count, d);
        par::for_each_chunk_mut(emb.as_mut_slice(), d, |i, row| {
            self.embed_into(&coords[i * n..(i + 1) * n], sigmas[i], row);
        });
        let deriv = with_sigma_derivative.then(|| {
            let mut m = Matrix::zeros(count, d);
            par::for_each_chunk_mut(m.as_mut_slice(), d, |i, row| {
                self.sigma_derivative_into(&coords[i * n..(i + 1) * n], sigmas[i], row);
            });
            m
        });
        (emb, deriv)
    }

    pub fn initial_sigma(&self) -> f64 {
        INIT_SIGMA_SPACINGS * self.center_spacing()
    }

    fn check_sigma(&self, sigma: f64) -> Result<()> {
        if sigma >= self.sigma_min && sigma.is_finite() {
            Ok(())
        } else {
            Err(Error::SigmaBelowFloor {
                sigma,
                floor: self.sigma_min,
            })
        }
    }

    /// Calls `f(component, offset, axis)` for each component, where `axis` is
    /// `None` in projected mode (the offset moves along α).
    #[inline]
    fn for_each_offset(&self, x: &[f64], mut f: impl FnMut(usize, f64, Option<usize>)) {
        match self.mode {
            EmbedMode::Projected => {
                let p: f64 = x.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
                for (k, t) in self.centers.iter().enumerate() {
                    f(k, p - t, None);
                }
            }
            EmbedMode::PerAxis => {
                let per = self.centers.len();
                for (a, &xa) in x.iter().enumerate() {
                    for (k, t) in self.centers.iter().enumerate() {
                        f(a * per + k, xa - t, Some(a));
                    }
                }
            }
        }
    }

    /// Writes the embedding of `x` into `out` without checking σ.
    #[inline]
    pub(crate) fn embed_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let scale = -self.exponent / (2.0 * sigma * sigma);
        self.for_each_offset(x, |k, off, _| out[k] = (scale * off * off).exp());
    }

    /// `∂φ_k/∂σ` for every component.
    pub(crate) fn sigma_derivative_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let scale = -self.exponent / (2.0 * sigma * sigma);
        let s3 = sigma * sigma * sigma;
        self.for_each_offset(x, |k, off, _| {
            let z = off * off;
            out[k] = (scale * z).exp() * self.exponent * z / s3;
        });
    }

    /// Embeds every row of `coords` (flat, `n_dims_in` per point) with its own σ.
    pub fn embed_batch(&self, coords: &[f64], sigmas: &[f64]) -> Result<Matrix> {
        let n = self.n_dims_in;
        let count = coords.len() / n;
        if sigmas.len() != count {
            return Err(Error::LengthMismatch {
                left: sigmas.len(),
                right: count,
            });
        }
        for &s in sigmas {
            self.check_sigma(s)?;
        }
        let mut out = Matrix::zeros(count, self.d_embed);
        let d = self.d_embed;
        par::for_each_chunk_mut(out.as_mut_slice(), d, |i, row| {
            self.embed_into(&coords[i * n..(i + 1) * n], sigmas[i], row);
        });
        Ok(out)
    }

    /// Writes the `D×N` Jacobian of `x ↦ Φ(x)` (σ held fixed) into `out`.
    pub(crate) fn jacobian_into(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let n = self.n_dims_in;
        let scale = -self.exponent / (2.0 * sigma * sigma);
        let slope = -self.exponent / (sigma * sigma);
        out.iter_mut().for_each(|v| *v = 0.0);
        self.for_each_offset(x, |k, off, axis| {
            let d = (scale * off * off).exp() * slope * off;
            match axis {
                None => {
                    for (j, a) in self.alpha.iter().enumerate() {
                        out[k * n + j] = d * a;
                    }
                }
                Some(a) => out[k * n + a] = d,
            }
        });
    }
}

pub fn super_gaussian_embed(x: &[f64], sigma: f64, cfg: &SuperGaussianConfig) -> Result<Vec<f64>> {
    check_dims(x, cfg.n_dims_in)?;
    cfg.check_sigma(sigma)?;
    let mut out = vec![0.0; cfg.d_embed];
    cfg.embed_into(x, sigma, &mut out);
    Ok(out)
}

/// `D×N` matrix of `∂φ_i/∂x_n`.
pub fn super_gaussian_jacobian(x: &[f64], sigma: f64, cfg: &SuperGaussianConfig) -> Result<Matrix> {
    check_dims(x, cfg.n_dims_in)?;
    cfg.check_sigma(sigma)?;
    let mut j = Matrix::zeros(cfg.d_embed, cfg.n_dims_in);
    cfg.jacobian_into(x, sigma, j.as_mut_slice());
    Ok(j)
}

/// Riemannian metric `J_Φ J_Φᵀ` (`N×N`) of the embedded manifold at `x`.
pub fn metric_tensor(x: &[f64], sigma: f64, cfg: &SuperGaussianConfig) -> Result<Matrix> {
    let j = super_gaussian_jacobian(x, sigma, cfg)?;
    Ok(linalg::matmul_tn(&j, &j))
}

/// `√det` of the metric tensor, clamped at 0 against rounding.
pub fn volume_element(x: &[f64], sigma: f64, cfg: &SuperGaussianConfig) -> Result<f64> {
    let m = metric_tensor(x, sigma, cfg)?;
    Ok(linalg::det_small(&m).max(0.0).sqrt())
}

fn check_dims(x: &[f64], n: usize) -> Result<()> {
    if x.len() == n {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            left: x.len(),
            right: n,
        })
    }
}

/// Scales every `block`-wide segment of each row to unit norm in place and
/// returns the original norms (row-major, one per segment). Zero segments are
/// left untouched.
pub fn normalize_blocks(m: &mut Matrix, block: usize) -> Vec<f64> {
    let d = m.cols();
    let blocks = d / block;
    let mut norms = vec![0.0; m.rows() * blocks];
    par::for_each_chunk_mut(&mut norms, blocks, |i, nrm| {
        for (b, v) in nrm.iter_mut().enumerate() {
            *v = m.row(i)[b * block..(b + 1) * block]
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
        }
    });
    par::for_each_chunk_mut(m.as_mut_slice(), d, |i, row| {
        for (b, seg) in row.chunks_mut(block).enumerate() {
            let r = norms[i * blocks + b];
            if r > 0.0 {
                seg.iter_mut().for_each(|x| *x /= r);
            }
        }
    });
    norms
}

/// Pulls a gradient with respect to normalized rows `hat` back to the raw
/// rows: `(v̄ − v̂(v̂·v̄)) / r` per segment, in place.
pub fn normalize_blocks_backward(hat: &Matrix, norms: &[f64], bar: &mut Matrix, block: usize) {
    let d = hat.cols();
    let blocks = d / block;
    par::for_each_chunk_mut(bar.as_mut_slice(), d, |i, row| {
        let h = hat.row(i);
        for (b, seg) in row.chunks_mut(block).enumerate() {
            let r = norms[i * blocks + b];
            if r == 0.0 {
                seg.iter_mut().for_each(|v| *v = 0.0);
                continue;
            }
            let hs = &h[b * block..(b + 1) * block];
            let proj: f64 = hs.iter().zip(seg.iter()).map(|(x, y)| x * y).sum();
            for (v, x) in seg.iter_mut().zip(hs) {
                *v = (*v - x * proj) / r;
            }
        }
    });
}

/// Per-coordinate widths for a set of training coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmaField {
    sigmas: Vec<f64>,
    floor: f64,
}

impl SigmaField {
    pub fn new(sigmas: Vec<f64>, floor: f64) -> Result<Self> {
        if let Some(&s) = sigmas.iter().find(|&&s| !(s >= floor) || !s.is_finite()) {
            return Err(Error::SigmaBelowFloor { sigma: s, floor });
        }
        Ok(Self { sigmas, floor })
    }

    pub fn uniform(len: usize, sigma: f64, floor: f64) -> Result<Self> {
        Self::new(vec![sigma; len], floor)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.sigmas
    }
    pub fn floor(&self) -> f64 {
        self.floor
    }
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }
    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.sigmas
    }

    /// CSV rows `coord components..., sigma`.
    pub fn write_csv<W: std::io::Write>(&self, coords: &[f64], n_dims_in: usize, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..n_dims_in).map(|a| format!("x{a}")).collect();
        header.push("sigma".into());
        wr.write_record(&header)?;
        for (i, s) in self.sigmas.iter().enumerate() {
            let mut rec: Vec<String> = coords[i * n_dims_in..(i + 1) * n_dims_in]
                .iter()
                .map(|v| v.to_string())
                .collect();
            rec.push(s.to_string());
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("sigma csv", e))?;
        Ok(())
    }
}

/// Random Fourier features `[cos(2πBx); sin(2πBx)]` with fixed Gaussian `B`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffConfig {
    freqs: Matrix,
    sigma_r: f64,
    seed: u64,
}

impl RffConfig {
    pub fn new(n_dims_in: usize, d_embed: usize, sigma_r: f64, seed: u64) -> Result<Self> {
        if d_embed == 0 || d_embed % 2 != 0 {
            return Err(Error::Config(format!("RFF dimension must be even, got {d_embed}")));
        }
        if !(sigma_r > 0.0) {
            return Err(Error::Config(format!("sigma_R must be > 0, got {sigma_r}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma_r).map_err(|e| Error::Config(e.to_string()))?;
        let freqs = Matrix::from_fn(d_embed / 2, n_dims_in, |_, _| normal.sample(&mut rng));
        Ok(Self {
            freqs,
            sigma_r,
            seed,
        })
    }

    pub fn d_embed(&self) -> usize {
        2 * self.freqs.rows()
    }
    pub fn n_dims_in(&self) -> usize {
        self.freqs.cols()
    }
    pub fn sigma_r(&self) -> f64 {
        self.sigma_r
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn frequencies(&self) -> &Matrix {
        &self.freqs
    }

    #[inline]
    fn phase(&self, f: usize, x: &[f64]) -> f64 {
        2.0 * PI * self.freqs.row(f).iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub(crate) fn embed_into(&self, x: &[f64], out: &mut [f64]) {
        let h = self.freqs.rows();
        for f in 0..h {
            let (s, c) = self.phase(f, x).sin_cos();
            out[f] = c;
            out[h + f] = s;
        }
    }

    pub(crate) fn jacobian_into(&self, x: &[f64], out: &mut [f64]) {
        let h = self.freqs.rows();
        let n = self.n_dims_in();
        for f in 0..h {
            let (s, c) = self.phase(f, x).sin_cos();
            for (j, b) in self.freqs.row(f).iter().enumerate() {
                out[f * n + j] = -2.0 * PI * b * s;
                out[(h + f) * n + j] = 2.0 * PI * b * c;
            }
        }
    }

    pub fn embed_batch(&self, coords: &[f64]) -> Matrix {
        let n = self.n_dims_in();
        let d = self.d_embed();
        let mut out = Matrix::zeros(coords.len() / n, d);
        par::for_each_chunk_mut(out.as_mut_slice(), d, |i, row| {
            self.embed_into(&coords[i * n..(i + 1) * n], row);
        });
        out
    }
}

pub fn rff_embed(x: &[f64], cfg: &RffConfig) -> Result<Vec<f64>> {
    check_dims(x, cfg.n_dims_in())?;
    let mut out = vec![0.0; cfg.d_embed()];
    cfg.embed_into(x, &mut out);
    Ok(out)
}

pub fn rff_jacobian(x: &[f64], cfg: &RffConfig) -> Result<Matrix> {
    check_dims(x, cfg.n_dims_in())?;
    let mut j = Matrix::zeros(cfg.d_embed(), cfg.n_dims_in());
    cfg.jacobian_into(x, j.as_mut_slice());
    Ok(j)
}

/// Smallest pairwise embedding distance over a coordinate set.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectivityReport {
    pub min_distance: f64,
    pub closest_pair: (usize, usize),
    /// Set when the closest pair is closer than [`INJECTIVITY_TOL`].
    pub offending: Option<(usize, usize)>,
}

pub const INJECTIVITY_TOL: f64 = 1e-9;

pub fn check_injectivity(
    cfg: &SuperGaussianConfig,
    lattice: &[f64],
    sigma_field: &SigmaField,
) -> Result<InjectivityReport> {
    let emb = cfg.embed_batch(lattice, sigma_field.as_slice())?;
    let l = emb.rows();
    if l < 2 {
        return Err(Error::Config("need at least two coordinates".into()));
    }
    // Exact differences, not the Gram identity: duplicates must come out as 0.
    let per_row = par::map_range(l - 1, |i| {
        let mut best = (f64::INFINITY, i + 1);
        for j in i + 1..l {
            let d: f64 = emb
                .row(i)
                .iter()
                .zip(emb.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    });
    let (i, &(d2, j)) = per_row
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0))
        .expect("at least one pair");
    let min_distance = d2.sqrt();
    Ok(InjectivityReport {
        min_distance,
        closest_pair: (i, j),
        offending: (min_distance < INJECTIVITY_TOL).then_some((i, j)),
    })
}

/// Which positional embedding feeds the MLP.
#[derive(Clone, Debug, PartialEq)]
pub enum Embedder {
    /// Raw coordinates.
    Identity { n_dims_in: usize },
    SuperGaussian(SuperGaussianConfig),
    Rff(RffConfig),
}

impl Embedder {
    pub fn n_dims_in(&self) -> usize {
        match self {
            Embedder::Identity { n_dims_in } => *n_dims_in,
            Embedder::SuperGaussian(c) => c.n_dims_in(),
            Embedder::Rff(c) => c.n_dims_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Embedder::Identity { n_dims_in } => *n_dims_in,
            Embedder::SuperGaussian(c) => c.d_embed(),
            Embedder::Rff(c) => c.d_embed(),
        }
    }

    pub fn needs_sigma(&self) -> bool {
        matches!(self, Embedder::SuperGaussian(_))
    }

    /// Embeds a batch; `sigmas` is required for the super-Gaussian embedder.
    pub fn embed_batch(&self, coords: &[f64], sigmas: Option<&[f64]>) -> Result<Matrix> {
        match self {
            Embedder::Identity { n_dims_in } => {
                Ok(Matrix::from_vec(coords.len() / n_dims_in, *n_dims_in, coords.to_vec()))
            }
            Embedder::SuperGaussian(c) => {
                let s = sigmas.ok_or_else(|| Error::Missing("sigma for super-Gaussian embedder".into()))?;
                c.embed_batch(coords, s)
            }
            Embedder::Rff(c) => Ok(c.embed_batch(coords)),
        }
    }

    /// `D×N` Jacobian with respect to the coordinate.
    pub fn jacobian(&self, x: &[f64], sigma: Option<f64>) -> Result<Matrix> {
        match self {
            Embedder::Identity { n_dims_in } => {
                Ok(Matrix::from_fn(*n_dims_in, *n_dims_in, |i, j| (i == j) as u8 as f64))
            }
            Embedder::SuperGaussian(c) => {
                let s = sigma.ok_or_else(|| Error::Missing("sigma for super-Gaussian embedder".into()))?;
                super_gaussian_jacobian(x, s, c)
            }
            Embedder::Rff(c) => rff_jacobian(x, c),
        }
    }
}

/// Serializable embedder settings (`key=value` file).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbedderSettings {
    pub d_embed: usize,
    pub exponent: f64,
    pub mode: Option<EmbedMode>,
    pub sigma_min: f64,
    pub alpha: Option<Vec<f64>>,
    pub rff_sigma_r: f64,
    pub seed: u64,
}

impl Default for EmbedderSettings {
    fn default() -> Self {
        Self {
            d_embed: DEFAULT_D_EMBED,
            exponent: DEFAULT_EXPONENT,
            mode: None,
            sigma_min: DEFAULT_SIGMA_MIN,
            alpha: None,
            rff_sigma_r: 10.0,
            seed: 0,
        }
    }
}

impl EmbedderSettings {
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            d_embed: kv.get_or("d_embed", d.d_embed)?,
            exponent: kv.get_or("b", d.exponent)?,
            mode: kv.get("mode")?,
            sigma_min: kv.get_or("sigma_min", d.sigma_min)?,
            alpha: kv.get_list("alpha")?,
            rff_sigma_r: kv.get_or("rff_sigma_r", d.rff_sigma_r)?,
            seed: kv.get_or("seed", d.seed)?,
        })
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("d_embed", self.d_embed);
        kv.insert("b", self.exponent);
        if let Some(m) = self.mode {
            kv.insert("mode", m);
        }
        kv.insert("sigma_min", self.sigma_min);
        if let Some(a) = &self.alpha {
            kv.insert(
                "alpha",
                a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            );
        }
        kv.insert("rff_sigma_r", self.rff_sigma_r);
        kv.insert("seed", self.seed);
        kv
    }

    pub fn super_gaussian(&self, n_dims_in: usize) -> Result<SuperGaussianConfig> {
        let mode = self.mode.unwrap_or(if n_dims_in == 1 {
            EmbedMode::Projected
        } else {
            EmbedMode::PerAxis
        });
        SuperGaussianConfig::new(
            n_dims_in,
            self.d_embed,
            self.exponent,
            mode,
            self.alpha.clone(),
            self.sigma_min,
        )
    }

    pub fn rff(&self, n_dims_in: usize, sigma_r: f64) -> Result<RffConfig> {
        RffConfig::new(n_dims_in, self.d_embed, sigma_r, self.seed)
    }
}
