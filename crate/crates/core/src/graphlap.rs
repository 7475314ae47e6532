//! Similarity graphs over embedded coordinates and the Laplacian objective
//! used to learn a per-coordinate σ field.

use std::io::Write;

use crate::embedders::{normalize_blocks, normalize_blocks_backward, SigmaField, SuperGaussianConfig};
use crate::error::{Error, Result};
use crate::linalg::{matmul, pairwise_sq_dists, Matrix};
use crate::net::adam::{AdamConfig, AdamState};
use crate::par;
use crate::signals::{flat_index, multi_index};

pub const DEFAULT_MAX_GRAPH_SIZE: usize = 1024;
pub const DEFAULT_TILE: usize = 16;

/// Dense weighted graph with `L = Deg − A`.
#[derive(Clone, Debug)]
pub struct SimilarityGraph {
    adjacency: Matrix,
    degrees: Vec<f64>,
    raw_degrees: Vec<f64>,
    epsilon: f64,
    lambda_deg: f64,
}

impl SimilarityGraph {
    pub fn len(&self) -> usize {
        self.degrees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.degrees.is_empty()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Kernel sums `ρ_i`, self term included.
    pub fn raw_degrees(&self) -> &[f64] {
        &self.raw_degrees
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda_deg(&self) -> f64 {
        self.lambda_deg
    }

    pub fn laplacian(&self) -> Matrix {
        let n = self.len();
        Matrix::from_fn(n, n, |i, j| {
            if i == j {
                self.degrees[i]
            } else {
                -self.adjacency.get(i, j)
            }
        })
    }

    /// Mean off-diagonal weight.
    pub fn mean_weight(&self) -> f64 {
        let n = self.len();
        self.degrees.iter().sum::<f64>() / (n * (n - 1)) as f64
    }

    pub fn adjacency_norm(&self) -> f64 {
        self.adjacency.frobenius_norm()
    }
}

pub fn build_graph(embeddings: &Matrix, epsilon: f64, lambda_deg: f64) -> Result<SimilarityGraph> {
    if embeddings.rows() < 2 {
        return Err(Error::Config(format!(
            "a graph needs at least 2 vertices, got {}",
            embeddings.rows()
        )));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("kernel width must be positive, got {epsilon}")));
    }
    if !(lambda_deg >= 0.0 && lambda_deg.is_finite()) {
        return Err(Error::Config(format!("degree exponent must be >= 0, got {lambda_deg}")));
    }
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("graph embeddings".into()));
    }
    Ok(Kernel::new(&pairwise_sq_dists(embeddings), epsilon, lambda_deg).into_graph())
}

/// Intermediate quantities shared by graph construction and the backward pass.
struct Kernel {
    theta: Matrix,
    rho: Vec<f64>,
    /// `ρ_i^{−λ_deg}`.
    scale: Vec<f64>,
    adjacency: Matrix,
    epsilon: f64,
    lambda_deg: f64,
}

impl Kernel {
    fn new(sq_dists: &Matrix, epsilon: f64, lambda_deg: f64) -> Self {
        let n = sq_dists.rows();
        let inv = -1.0 / (2.0 * epsilon * epsilon);
        let mut theta = Matrix::zeros(n, n);
        par::for_each_chunk_mut(theta.as_mut_slice(), n, |i, row| {
            for (j, t) in row.iter_mut().enumerate() {
                *t = if i == j { 1.0 } else { (sq_dists.get(i, j) * inv).exp() };
            }
        });
        let rho: Vec<f64> = (0..n).map(|i| theta.row(i).iter().sum()).collect();
        let scale: Vec<f64> = if lambda_deg == 0.0 {
            vec![1.0; n]
        } else {
            rho.iter().map(|r| r.powf(-lambda_deg)).collect()
        };
        let mut adjacency = Matrix::zeros(n, n);
        par::for_each_chunk_mut(adjacency.as_mut_slice(), n, |i, row| {
            for (j, a) in row.iter_mut().enumerate() {
                if i != j {
                    *a = scale[i] * scale[j] * theta.get(i, j);
                }
            }
        });
        Self {
            theta,
            rho,
            scale,
            adjacency,
            epsilon,
            lambda_deg,
        }
    }

    fn into_graph(self) -> SimilarityGraph {
        let n = self.rho.len();
        let degrees = (0..n).map(|i| self.adjacency.row(i).iter().sum()).collect();
        SimilarityGraph {
            adjacency: self.adjacency,
            degrees,
            raw_degrees: self.rho,
            epsilon: self.epsilon,
            lambda_deg: self.lambda_deg,
        }
    }
}

fn check_len(graph: &SimilarityGraph, u: &[f64]) -> Result<()> {
    if u.len() != graph.len() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: graph.len(),
        });
    }
    Ok(())
}

/// `uᵀ(Deg − A)u`.
pub fn quadratic_form(graph: &SimilarityGraph, u: &[f64]) -> Result<f64> {
    check_len(graph, u)?;
    let mut total = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        let au: f64 = graph.adjacency.row(i).iter().zip(u).map(|(a, uj)| a * uj).sum();
        total += ui * (graph.degrees[i] * ui - au);
    }
    Ok(total)
}

/// `uᵀLu − λ_adj‖A‖_F`.
pub fn regularized_objective(graph: &SimilarityGraph, u: &[f64], lambda_adj: f64) -> Result<f64> {
    Ok(quadratic_form(graph, u)? - lambda_adj * graph.adjacency_norm())
}

/// How the kernel width is chosen from the initial embeddings (then frozen).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median of all pairwise distances.
    MedianPairwise,
    /// `scale ×` median nearest-neighbour distance.
    NearestNeighbor(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphObjectiveConfig {
    pub lambda_adj: f64,
    pub lambda_deg: f64,
    pub iterations: usize,
    pub step_size: f64,
    pub bandwidth: Bandwidth,
    /// Scale each embedding (per axis block) to unit norm before measuring distances.
    pub normalize_embeddings: bool,
    /// Divide `u` by its standard deviation.
    pub standardize_u: bool,
    /// Upper bound on σ in center spacings, enforced by projecting `s`.
    pub sigma_cap: Option<f64>,
    pub max_graph_size: usize,
}

impl GraphObjectiveConfig {
    /// Defaults with `lambda_adj` tuned for `n_dims`-dimensional domains.
    ///
    /// Sampled 2D images sit farther apart in embedding space than 1D signals, so the
    /// smoothness term outweighs `‖A‖_F` unless `lambda_adj` grows with it.
    pub fn for_dims(n_dims: usize) -> Self {
        Self {
            lambda_adj: if n_dims >= 2 { 150.0 } else { 3.0 },
            ..Self::default()
        }
    }
}

impl Default for GraphObjectiveConfig {
    fn default() -> Self {
        Self {
            lambda_adj: 3.0,
            lambda_deg: 0.0,
            iterations: 300,
            step_size: 0.05,
            bandwidth: Bandwidth::NearestNeighbor(0.5),
            normalize_embeddings: true,
            standardize_u: true,
            sigma_cap: Some(8.0),
            max_graph_size: DEFAULT_MAX_GRAPH_SIZE,
        }
    }
}

impl GraphObjectiveConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.lambda_adj >= 0.0 && self.lambda_deg >= 0.0) {
            return Err(Error::Config("graph weights must be >= 0".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Config("step size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub tau: f64,
    pub adj_norm: f64,
    pub tau_bar: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "tau", "adj_norm", "tau_bar"])?;
    for r in trace {
        out.write_record(&[
            r.iteration.to_string(),
            r.tau.to_string(),
            r.adj_norm.to_string(),
            r.tau_bar.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("trace csv", e))?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SigmaOptimization {
    pub field: SigmaField,
    /// One row per iteration plus a final row after the last update.
    pub trace: Vec<TraceRow>,
    pub epsilon: f64,
    pub initial_mean_weight: f64,
    pub final_mean_weight: f64,
}

#[derive(Clone, Copy, Debug)]
struct Eval {
    tau: f64,
    adj_norm: f64,
    tau_bar: f64,
    mean_weight: f64,
}

/// One σ-optimization problem with its frozen bandwidth.
struct Problem<'a> {
    coords: &'a [f64],
    u: Vec<f64>,
    cfg: &'a SuperGaussianConfig,
    obj: &'a GraphObjectiveConfig,
    block: usize,
    epsilon: f64,
}

impl<'a> Problem<'a> {
    fn new(
        coords: &'a [f64],
        u: &[f64],
        cfg: &'a SuperGaussianConfig,
        obj: &'a GraphObjectiveConfig,
    ) -> Result<Self> {
        obj.validate()?;
        let n = cfg.n_dims_in();
        if coords.len() % n != 0 || coords.len() / n != u.len() {
            return Err(Error::LengthMismatch {
                left: coords.len() / n,
                right: u.len(),
            });
        }
        let count = u.len();
        if count > obj.max_graph_size {
            return Err(Error::GraphTooLarge {
                got: count,
                cap: obj.max_graph_size,
            });
        }
        if count < 2 {
            return Err(Error::Config("σ optimization needs at least 2 coordinates".into()));
        }
        if u.iter().any(|v| !v.is_finite()) || coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("σ optimization input".into()));
        }
        let mut u = u.to_vec();
        if obj.standardize_u {
            let mean = u.iter().sum::<f64>() / count as f64;
            let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
            if var > 0.0 {
                let sd = var.sqrt();
                u.iter_mut().for_each(|v| *v /= sd);
            }
        }
        let block = cfg.block_len();
        let mut p = Self {
            coords,
            u,
            cfg,
            obj,
            block,
            epsilon: 1.0,
        };
        let sig = vec![cfg.initial_sigma(); count];
        let (emb, _) = p.embed(&sig, false);
        let d2 = pairwise_sq_dists(&emb);
        p.epsilon = match obj.bandwidth {
            Bandwidth::Fixed(e) => e,
            Bandwidth::MedianPairwise => {
                let mut d: Vec<f64> = (0..count)
                    .flat_map(|i| ((i + 1)..count).map(move |j| (i, j)))
                    .map(|(i, j)| d2.get(i, j).sqrt())
                    .collect();
                median(&mut d)
            }
            Bandwidth::NearestNeighbor(scale) => {
                let mut d: Vec<f64> = (0..count)
                    .map(|i| {
                        (0..count)
                            .filter(|&j| j != i)
                            .map(|j| d2.get(i, j))
                            .fold(f64::INFINITY, f64::min)
                            .sqrt()
                    })
                    .collect();
                scale * median(&mut d)
            }
        };
        if !(p.epsilon > 0.0 && p.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "kernel width {} is degenerate (duplicate coordinates?)",
                p.epsilon
            )));
        }
        Ok(p)
    }

    fn len(&self) -> usize {
        self.u.len()
    }

    fn sigmas(&self, s: &[f64]) -> Vec<f64> {
        s.iter().map(|v| self.cfg.sigma_min() + v.exp()).collect()
    }

    /// Embeddings used by the graph, and (optionally) raw `∂φ/∂σ` plus block norms.
    fn embed(&self, sig: &[f64], with_derivative: bool) -> (Matrix, Option<(Matrix, Vec<f64>)>) {
        let (mut emb, deriv) = self.cfg.embed_rows(self.coords, sig, with_derivative);
        let norms = if self.obj.normalize_embeddings {
            normalize_blocks(&mut emb, self.block)
        } else {
            Vec::new()
        };
        (emb, deriv.map(|d| (d, norms)))
    }

    fn evaluate(&self, s: &[f64], with_grad: bool) -> (Eval, Option<Vec<f64>>) {
        let count = self.len();
        let sig = self.sigmas(s);
        let (emb, extra) = self.embed(&sig, with_grad);
        let kernel = Kernel::new(&pairwise_sq_dists(&emb), self.epsilon, self.obj.lambda_deg);
        let a = &kernel.adjacency;
        let u = &self.u;
        let mut tau = 0.0;
        let mut sum_a = 0.0;
        for i in 0..count {
            let row = a.row(i);
            for j in (i + 1)..count {
                let du = u[i] - u[j];
                tau += row[j] * du * du;
                sum_a += row[j];
            }
        }
        let adj_norm = a.frobenius_norm();
        let eval = Eval {
            tau,
            adj_norm,
            tau_bar: tau - self.obj.lambda_adj * adj_norm,
            mean_weight: 2.0 * sum_a / (count * (count - 1)) as f64,
        };
        let Some((deriv, norms)) = extra else {
            return (eval, None);
        };
        (eval, Some(self.backward(s, &emb, &deriv, &norms, &kernel, adj_norm)))
    }

    /// Reverse-mode gradient of τ̄ with respect to `s`.
    fn backward(
        &self,
        s: &[f64],
        emb: &Matrix,
        deriv: &Matrix,
        norms: &[f64],
        k: &Kernel,
        adj_norm: f64,
    ) -> Vec<f64> {
        let count = self.len();
        let u = &self.u;
        let lam_adj = if adj_norm > 0.0 {
            self.obj.lambda_adj / adj_norm
        } else {
            0.0
        };
        // dτ̄/dA_ij for each ordered entry.
        let g = |i: usize, j: usize| {
            let du = u[i] - u[j];
            0.5 * du * du - lam_adj * k.adjacency.get(i, j)
        };
        let lam = self.obj.lambda_deg;
        let rho_bar: Vec<f64> = if lam == 0.0 {
            vec![0.0; count]
        } else {
            par::map_range(count, |i| {
                let acc: f64 = (0..count)
                    .filter(|&j| j != i)
                    .map(|j| g(i, j) * k.adjacency.get(i, j))
                    .sum();
                -2.0 * lam / k.rho[i] * acc
            })
        };
        // Q holds dτ̄/d(d²_ij) for each unordered pair, mirrored.
        let inv = -1.0 / (2.0 * k.epsilon * k.epsilon);
        let mut q = Matrix::zeros(count, count);
        par::for_each_chunk_mut(q.as_mut_slice(), count, |i, row| {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    let theta_bar = 2.0 * g(i, j) * k.scale[i] * k.scale[j] + rho_bar[i] + rho_bar[j];
                    *v = theta_bar * k.theta.get(i, j) * inv;
                }
            }
        });
        // Φ̄ = 2(diag(Q·1) − Q)Φ.
        let mut emb_bar = matmul(&q, emb);
        let row_sums: Vec<f64> = (0..count).map(|i| q.row(i).iter().sum()).collect();
        let d = emb.cols();
        par::for_each_chunk_mut(emb_bar.as_mut_slice(), d, |i, row| {
            for (v, e) in row.iter_mut().zip(emb.row(i)) {
                *v = 2.0 * (row_sums[i] * e - *v);
            }
        });
        if self.obj.normalize_embeddings {
            normalize_blocks_backward(emb, norms, &mut emb_bar, self.block);
        }
        (0..count)
            .map(|i| {
                let sigma_bar: f64 = emb_bar.row(i).iter().zip(deriv.row(i)).map(|(a, b)| a * b).sum();
                sigma_bar * s[i].exp()
            })
            .collect()
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn initial_s(cfg: &SuperGaussianConfig, count: usize) -> Vec<f64> {
    vec![(cfg.initial_sigma() - cfg.sigma_min()).ln(); count]
}

/// Learns σ for each coordinate (flat, `n_dims_in` per point) by Adam on τ̄.
pub fn optimize_sigma(
    coords: &[f64],
    u: &[f64],
    cfg: &SuperGaussianConfig,
    obj: &GraphObjectiveConfig,
) -> Result<SigmaOptimization> {
    let problem = Problem::new(coords, u, cfg, obj)?;
    let count = problem.len();
    let s_cap = obj
        .sigma_cap
        .map(|c| c * cfg.center_spacing() - cfg.sigma_min())
        .filter(|v| *v > 0.0)
        .map(f64::ln);
    let mut s = initial_s(cfg, count);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: obj.step_size,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        &[count],
    );
    let mut trace = Vec::with_capacity(obj.iterations + 1);
    let mut initial_mean_weight = 0.0;
    let record = |it: usize, e: &Eval, trace: &mut Vec<TraceRow>| -> Result<()> {
        if !e.tau_bar.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        trace.push(TraceRow {
            iteration: it,
            tau: e.tau,
            adj_norm: e.adj_norm,
            tau_bar: e.tau_bar,
        });
        Ok(())
    };
    for it in 0..obj.iterations {
        let (e, grad) = problem.evaluate(&s, true);
        if it == 0 {
            initial_mean_weight = e.mean_weight;
        }
        record(it, &e, &mut trace)?;
        let grad = grad.expect("gradient requested");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        adam.step(&mut [&mut s], &[&grad]);
        if let Some(cap) = s_cap {
            s.iter_mut().for_each(|v| *v = v.min(cap));
        }
    }
    let (e, _) = problem.evaluate(&s, false);
    record(obj.iterations, &e, &mut trace)?;
    Ok(SigmaOptimization {
        field: SigmaField::new(problem.sigmas(&s), cfg.sigma_min())?,
        trace,
        epsilon: problem.epsilon,
        initial_mean_weight,
        final_mean_weight: e.mean_weight,
    })
}

/// Value of τ̄ at log-widths `s` (bandwidth frozen from the initial σ).
pub fn objective_at(
    coords: &[f64],
    u: &[f64],
    cfg: &SuperGaussianConfig,
    obj: &GraphObjectiveConfig,
    s: &[f64],
) -> Result<f64> {
    let p = Problem::new(coords, u, cfg, obj)?;
    check_s(&p, s)?;
    Ok(p.evaluate(s, false).0.tau_bar)
}

/// Reverse-mode `dτ̄/ds` at `s`.
pub fn objective_gradient(
    coords: &[f64],
    u: &[f64],
    cfg: &SuperGaussianConfig,
    obj: &GraphObjectiveConfig,
    s: &[f64],
) -> Result<Vec<f64>> {
    let p = Problem::new(coords, u, cfg, obj)?;
    check_s(&p, s)?;
    Ok(p.evaluate(s, true).1.expect("gradient requested"))
}

fn check_s(p: &Problem<'_>, s: &[f64]) -> Result<()> {
    if s.len() != p.len() {
        return Err(Error::LengthMismatch {
            left: s.len(),
            right: p.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_err: f64,
}

/// Compares the reverse-mode gradient with central differences of step `h`.
pub fn analytic_vs_numeric_grad(
    coords: &[f64],
    u: &[f64],
    cfg: &SuperGaussianConfig,
    obj: &GraphObjectiveConfig,
    s: &[f64],
    h: f64,
) -> Result<GradCheck> {
    let p = Problem::new(coords, u, cfg, obj)?;
    check_s(&p, s)?;
    let analytic = p.evaluate(s, true).1.expect("gradient requested");
    let numeric: Vec<f64> = (0..s.len())
        .map(|k| {
            let mut sp = s.to_vec();
            sp[k] += h;
            let fp = p.evaluate(&sp, false).0.tau_bar;
            sp[k] -= 2.0 * h;
            let fm = p.evaluate(&sp, false).0.tau_bar;
            (fp - fm) / (2.0 * h)
        })
        .collect();
    let max_rel_err = max_relative_error(&analytic, &numeric);
    Ok(GradCheck {
        analytic,
        numeric,
        max_rel_err,
    })
}

/// Largest componentwise `|a−n| / max(|a|, |n|, 1e-6·max|a|)`; zero when both vanish.
pub fn max_relative_error(a: &[f64], n: &[f64]) -> f64 {
    let scale = a.iter().chain(n).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-6 * scale;
    a.iter()
        .zip(n)
        .map(|(x, y)| {
            let denom = x.abs().max(y.abs()).max(floor);
            if denom == 0.0 {
                0.0
            } else {
                (x - y).abs() / denom
            }
        })
        .fold(0.0, f64::max)
}

/// σ for a whole lattice, optimized independently on tiles that respect the
/// graph-size cap.
#[derive(Clone, Debug)]
pub struct LatticeSigma {
    pub field: SigmaField,
    pub tiles: Vec<SigmaOptimization>,
}

/// Runs `optimize_sigma` on tiles of at most `tile` points per axis (2D) or
/// `max_graph_size` points (1D). `coords` and `u` are in row-major lattice order.
pub fn optimize_sigma_lattice(
    grid_shape: &[usize],
    coords: &[f64],
    u: &[f64],
    cfg: &SuperGaussianConfig,
    obj: &GraphObjectiveConfig,
    tile: usize,
) -> Result<LatticeSigma> {
    let n = grid_shape.len();
    let total: usize = grid_shape.iter().product();
    if u.len() != total || coords.len() != total * n || n != cfg.n_dims_in() {
        return Err(Error::LengthMismatch {
            left: u.len(),
            right: total,
        });
    }
    let extent: Vec<usize> = if n == 1 {
        vec![obj.max_graph_size.max(2)]
    } else {
        vec![tile.max(2); n]
    };
    let tile_counts: Vec<usize> = grid_shape
        .iter()
        .zip(&extent)
        .map(|(g, e)| g.div_ceil(*e))
        .collect();
    let n_tiles: usize = tile_counts.iter().product();
    let members: Vec<Vec<usize>> = (0..n_tiles)
        .map(|t| {
            let tidx = multi_index(&tile_counts, t);
            let lo: Vec<usize> = tidx.iter().zip(&extent).map(|(t, e)| t * e).collect();
            let shape: Vec<usize> = lo
                .iter()
                .zip(&extent)
                .zip(grid_shape)
                .map(|((l, e), g)| (*e).min(g - l))
                .collect();
            let count: usize = shape.iter().product();
            (0..count)
                .map(|k| {
                    let local = multi_index(&shape, k);
                    let global: Vec<usize> = local.iter().zip(&lo).map(|(a, b)| a + b).collect();
                    flat_index(grid_shape, &global)
                })
                .collect()
        })
        .collect();
    let runs = par::map_slice(&members, |idx| {
        let c: Vec<f64> = idx.iter().flat_map(|&i| coords[i * n..(i + 1) * n].iter().copied()).collect();
        let uu: Vec<f64> = idx.iter().map(|&i| u[i]).collect();
        optimize_sigma(&c, &uu, cfg, obj)
    });
    let mut sigmas = vec![0.0; total];
    let mut tiles = Vec::with_capacity(n_tiles);
    for (idx, run) in members.iter().zip(runs) {
        let run = run?;
        for (k, &i) in idx.iter().enumerate() {
            sigmas[i] = run.field.as_slice()[k];
        }
        tiles.push(run);
    }
    Ok(LatticeSigma {
        field: SigmaField::new(sigmas, cfg.sigma_min())?,
        tiles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedders::EmbedMode;

    fn graph_from(points: &[f64], dim: usize, eps: f64, ld: f64) -> SimilarityGraph {
        let m = Matrix::from_vec(points.len() / dim, dim, points.to_vec());
        build_graph(&m, eps, ld).unwrap()
    }

    #[test]
    fn zero_degree_exponent_gives_kernel() {
        let g = graph_from(&[0.0, 0.0, 1.0, 0.0, 0.0, 2.0], 2, 1.5, 0.0);
        let want = (-1.0f64 / (2.0 * 2.25)).exp();
        assert_eq!(g.adjacency().get(0, 1), want);
        assert_eq!(g.adjacency().get(0, 0), 0.0);
    }

    #[test]
    fn coincident_vertices_have_unit_weight() {
        let g = graph_from(&[0.3, 0.3], 1, 0.1, 0.0);
        assert_eq!(g.adjacency().get(0, 1), 1.0);
        assert_eq!(g.raw_degrees(), &[2.0, 2.0]);
    }

    #[test]
    fn two_node_quadratic_form() {
        // w = 0.5 when d² = 2ε² ln 2.
        let eps = 1.0;
        let d = (2.0 * 2.0f64.ln()).sqrt();
        let g = graph_from(&[0.0, d], 1, eps, 0.0);
        assert!((g.adjacency().get(0, 1) - 0.5).abs() < 1e-15);
        assert!((quadratic_form(&g, &[0.0, 2.0]).unwrap() - 2.0).abs() < 1e-14);
        assert!(quadratic_form(&g, &[1.0, 1.0]).unwrap().abs() < 1e-15);
        assert!(quadratic_form(&g, &[1.0]).is_err());
    }

    #[test]
    fn three_node_objective_by_hand() {
        let g = graph_from(&[0.0, 1.0, 3.0], 1, 1.0, 0.0);
        let w01 = (-0.5f64).exp();
        let w12 = (-2.0f64).exp();
        let w02 = (-4.5f64).exp();
        let u = [1.0, 0.0, 2.0];
        let tau = w01 * 1.0 + w12 * 4.0 + w02 * 1.0;
        let fro = (2.0 * (w01 * w01 + w12 * w12 + w02 * w02)).sqrt();
        let got = regularized_objective(&g, &u, 0.3).unwrap();
        assert!((got - (tau - 0.3 * fro)).abs() < 1e-14);
        assert_eq!(
            regularized_objective(&g, &u, 0.0).unwrap(),
            quadratic_form(&g, &u).unwrap()
        );
    }

    #[test]
    fn far_apart_vertices_have_no_edges() {
        let g = graph_from(&[0.0, 100.0, 200.0], 1, 0.1, 1.0);
        let v = regularized_objective(&g, &[0.0, 1.0, 5.0], 0.1).unwrap();
        assert!(v.abs() < 1e-300);
    }

    #[test]
    fn laplacian_rows_sum_to_zero() {
        let g = graph_from(&[0.0, 0.1, 0.5, 0.2, 0.9, 0.4], 2, 0.3, 1.0);
        let lap = g.laplacian();
        for i in 0..3 {
            assert!(lap.row(i).iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let one = Matrix::from_vec(1, 1, vec![0.0]);
        assert!(build_graph(&one, 1.0, 0.0).is_err());
        let two = Matrix::from_vec(2, 1, vec![0.0, f64::NAN]);
        assert!(build_graph(&two, 1.0, 0.0).is_err());
        let ok = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
        assert!(build_graph(&ok, 0.0, 0.0).is_err());
    }

    fn step_problem(count: usize) -> (Vec<f64>, Vec<f64>) {
        let coords: Vec<f64> = (0..count).map(|i| i as f64 / (count - 1) as f64).collect();
        let mut u = vec![0.0; count];
        u[count / 2] = 10.0;
        (coords, u)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SuperGaussianConfig::new(1, 16, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let coords = [0.05, 0.13, 0.31, 0.4, 0.52, 0.66, 0.8, 0.97];
        let u = [0.1, 0.9, 0.4, 2.0, 1.1, 0.3, 0.0, 1.5];
        let s: Vec<f64> = (0..8).map(|k| (cfg.initial_sigma() * (0.6 + 0.1 * k as f64)).ln()).collect();
        for (ld, la) in [(0.0, 0.0), (0.0, 0.4), (1.0, 0.1), (0.5, 0.0)] {
            for normalize in [true, false] {
                let obj = GraphObjectiveConfig {
                    lambda_deg: ld,
                    lambda_adj: la,
                    normalize_embeddings: normalize,
                    bandwidth: Bandwidth::MedianPairwise,
                    ..GraphObjectiveConfig::default()
                };
                let chk = analytic_vs_numeric_grad(&coords, &u, &cfg, &obj, &s, 1e-5).unwrap();
                assert!(chk.max_rel_err < 1e-4, "ld={ld} la={la} err={}", chk.max_rel_err);
            }
        }
    }

    #[test]
    fn constant_u_has_zero_gradient_and_keeps_sigma() {
        let cfg = SuperGaussianConfig::new(1, 32, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let coords: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let u = vec![0.7; 12];
        let obj = GraphObjectiveConfig {
            lambda_adj: 0.0,
            iterations: 50,
            ..GraphObjectiveConfig::default()
        };
        let s = initial_s(&cfg, 12);
        let grad = objective_gradient(&coords, &u, &cfg, &obj, &s).unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
        let run = optimize_sigma(&coords, &u, &cfg, &obj).unwrap();
        assert!(run.trace.iter().all(|r| r.tau == 0.0));
        let init = cfg.initial_sigma();
        assert!(run.field.as_slice().iter().all(|s| (s / init - 1.0).abs() < 0.01));
    }

    #[test]
    fn step_signal_sharpens_at_the_step() {
        let cfg = SuperGaussianConfig::new(1, 64, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let (coords, u) = step_problem(64);
        let obj = GraphObjectiveConfig {
            iterations: 200,
            ..GraphObjectiveConfig::default()
        };
        let run = optimize_sigma(&coords, &u, &cfg, &obj).unwrap();
        let sig = run.field.as_slice();
        let mut rest: Vec<f64> = sig.iter().enumerate().filter(|(i, _)| *i != 32).map(|(_, v)| *v).collect();
        assert!(sig[32] < median(&mut rest));
        assert!(run.trace[200].tau_bar < run.trace[0].tau_bar);
        assert_eq!(run.trace.len(), 201);
        assert!(sig.iter().all(|s| *s >= cfg.sigma_min()));
    }

    #[test]
    fn unregularized_objective_shrinks_edges() {
        let cfg = SuperGaussianConfig::new(1, 64, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let coords: Vec<f64> = (0..48).map(|i| i as f64 / 47.0).collect();
        let u: Vec<f64> = coords.iter().map(|x| (9.0 * x).sin().abs() + x).collect();
        let obj = GraphObjectiveConfig {
            lambda_adj: 0.0,
            iterations: 100,
            ..GraphObjectiveConfig::default()
        };
        let run = optimize_sigma(&coords, &u, &cfg, &obj).unwrap();
        assert!(run.final_mean_weight < run.initial_mean_weight);
    }

    #[test]
    fn cap_is_enforced() {
        let cfg = SuperGaussianConfig::new(1, 64, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let coords: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let u: Vec<f64> = coords.iter().map(|x| (20.0 * x).sin()).collect();
        let obj = GraphObjectiveConfig {
            lambda_adj: 1.0,
            iterations: 100,
            sigma_cap: Some(3.0),
            ..GraphObjectiveConfig::default()
        };
        let run = optimize_sigma(&coords, &u, &cfg, &obj).unwrap();
        let cap = 3.0 * cfg.center_spacing();
        assert!(run.field.as_slice().iter().all(|s| *s <= cap * (1.0 + 1e-12)));
    }

    #[test]
    fn graph_size_cap() {
        let cfg = SuperGaussianConfig::new(1, 16, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let (coords, u) = step_problem(20);
        let obj = GraphObjectiveConfig {
            max_graph_size: 10,
            ..GraphObjectiveConfig::default()
        };
        assert!(matches!(
            optimize_sigma(&coords, &u, &cfg, &obj),
            Err(Error::GraphTooLarge { got: 20, cap: 10 })
        ));
    }

    #[test]
    fn lattice_tiles_cover_everything() {
        let cfg = SuperGaussianConfig::new(2, 32, 2.0, EmbedMode::PerAxis, None, 1e-3).unwrap();
        let shape = [10, 7];
        let mut coords = Vec::new();
        let mut u = Vec::new();
        for r in 0..10 {
            for c in 0..7 {
                coords.push(r as f64 / 9.0);
                coords.push(c as f64 / 6.0);
                u.push(if r == 4 { 3.0 } else { (c as f64 * 0.2).sin() });
            }
        }
        let obj = GraphObjectiveConfig {
            iterations: 20,
            ..GraphObjectiveConfig::default()
        };
        let out = optimize_sigma_lattice(&shape, &coords, &u, &cfg, &obj, 4).unwrap();
        assert_eq!(out.tiles.len(), 3 * 2);
        assert_eq!(out.field.len(), 70);
        assert!(out.field.as_slice().iter().all(|s| *s > 0.0));
    }

    #[test]
    fn trace_csv_has_header() {
        let rows = [TraceRow {
            iteration: 0,
            tau: 1.5,
            adj_norm: 2.0,
            tau_bar: 1.3,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,tau,adj_norm,tau_bar\n0,1.5,2,1.3\n");
    }
}
