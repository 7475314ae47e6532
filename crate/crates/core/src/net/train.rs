//! Full-batch training runs and coordinate recovery.

use std::io::Write;

use super::adam::{AdamConfig, AdamState};
use super::{MlpModel, DEFAULT_DEPTH, DEFAULT_HIDDEN};
use crate::embedders::{normalize_blocks, normalize_blocks_backward, RffConfig, SuperGaussianConfig};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::par;
use crate::sigma_model::{interpolate_sigma, SigmaNodes};
use crate::signals::{psnr, SampledSignal, SplitPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    FixedEmbedding,
    EndToEndSigma,
    /// Trained like `FixedEmbedding`; the model is then used for recovery.
    CoordinateRecovery,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_embedding" => Ok(Self::FixedEmbedding),
            "end_to_end_sigma" => Ok(Self::EndToEndSigma),
            "coordinate_recovery" => Ok(Self::CoordinateRecovery),
            _ => Err(Error::Config(format!("unknown training mode '{s}'"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::FixedEmbedding => "fixed_embedding",
            Self::EndToEndSigma => "end_to_end_sigma",
            Self::CoordinateRecovery => "coordinate_recovery",
        })
    }
}

/// A super-Gaussian embedder with σ known at `nodes` and interpolated elsewhere.
#[derive(Clone, Debug)]
pub struct SgInput {
    pub cfg: SuperGaussianConfig,
    pub nodes: SigmaNodes,
    pub sigma: Vec<f64>,
    /// Unit-normalize each axis block of the embedding.
    pub normalize: bool,
}

impl SgInput {
    pub fn new(cfg: SuperGaussianConfig, node_coords: &[f64], sigma: Vec<f64>, normalize: bool) -> Result<Self> {
        let nodes = SigmaNodes::from_coords(node_coords, cfg.n_dims_in())?;
        if nodes.len() != sigma.len() {
            return Err(Error::LengthMismatch {
                left: sigma.len(),
                right: nodes.len(),
            });
        }
        if let Some(s) = sigma.iter().find(|s| !(**s >= cfg.sigma_min())) {
            return Err(Error::SigmaBelowFloor {
                sigma: *s,
                floor: cfg.sigma_min(),
            });
        }
        Ok(Self {
            cfg,
            nodes,
            sigma,
            normalize,
        })
    }

    pub fn sigma_at(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let mut s = interpolate_sigma(&self.nodes, &self.sigma, coords)?;
        let floor = self.cfg.sigma_min();
        s.iter_mut().for_each(|v| *v = v.max(floor));
        Ok(s)
    }
}

/// What the MLP sees for a coordinate.
#[derive(Clone, Debug)]
pub enum InputSource {
    /// Raw coordinates (no positional embedding).
    Coordinates { n_dims: usize },
    Rff(RffConfig),
    SuperGaussian(SgInput),
}

/// Features plus what the coordinate backward pass needs.
struct Features {
    x: Matrix,
    sigma: Vec<f64>,
    norms: Vec<f64>,
}

impl InputSource {
    pub fn n_dims_in(&self) -> usize {
        match self {
            Self::Coordinates { n_dims } => *n_dims,
            Self::Rff(c) => c.n_dims_in(),
            Self::SuperGaussian(sg) => sg.cfg.n_dims_in(),
        }
    }

    pub fn d_out(&self) -> usize {
        match self {
            Self::Coordinates { n_dims } => *n_dims,
            Self::Rff(c) => c.d_embed(),
            Self::SuperGaussian(sg) => sg.cfg.d_embed(),
        }
    }

    /// Features for flat coordinates.
    pub fn embed(&self, coords: &[f64]) -> Result<Matrix> {
        Ok(self.features(coords)?.x)
    }

    fn features(&self, coords: &[f64]) -> Result<Features> {
        let n = self.n_dims_in();
        if coords.len() % n != 0 {
            return Err(Error::LengthMismatch {
                left: coords.len(),
                right: n,
            });
        }
        Ok(match self {
            Self::Coordinates { n_dims } => Features {
                x: Matrix::from_vec(coords.len() / n_dims, *n_dims, coords.to_vec()),
                sigma: Vec::new(),
                norms: Vec::new(),
            },
            Self::Rff(c) => Features {
                x: c.embed_batch(coords),
                sigma: Vec::new(),
                norms: Vec::new(),
            },
            Self::SuperGaussian(sg) => {
                let sigma = sg.sigma_at(coords)?;
                let (mut x, _) = sg.cfg.embed_rows(coords, &sigma, false);
                let norms = if sg.normalize {
                    normalize_blocks(&mut x, sg.cfg.block_len())
                } else {
                    Vec::new()
                };
                Features { x, sigma, norms }
            }
        })
    }

    /// Pulls `d loss / d features` back to the coordinates (σ held fixed).
    fn coordinate_gradient(&self, coords: &[f64], feats: &Features, mut bar: Matrix) -> Vec<f64> {
        let n = self.n_dims_in();
        let d = self.d_out();
        let count = feats.x.rows();
        if let Self::Coordinates { .. } = self {
            return bar.into_vec();
        }
        if let Self::SuperGaussian(sg) = self {
            if sg.normalize {
                normalize_blocks_backward(&feats.x, &feats.norms, &mut bar, sg.cfg.block_len());
            }
        }
        let mut out = vec![0.0; count * n];
        par::for_each_chunk_mut(&mut out, n, |i, g| {
            let x = &coords[i * n..(i + 1) * n];
            let mut jac = vec![0.0; d * n];
            match self {
                Self::Rff(c) => c.jacobian_into(x, &mut jac),
                Self::SuperGaussian(sg) => sg.cfg.jacobian_into(x, feats.sigma[i], &mut jac),
                Self::Coordinates { .. } => unreachable!(),
            }
            let b = bar.row(i);
            for (k, bk) in b.iter().enumerate() {
                for (a, ga) in g.iter_mut().enumerate() {
                    *ga += bk * jac[k * n + a];
                }
            }
        });
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub hidden: usize,
    pub depth: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Adam step size for log σ in end-to-end mode.
    pub sigma_lr: f64,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            depth: DEFAULT_DEPTH,
            epochs: 2000,
            adam: AdamConfig::default(),
            sigma_lr: 3e-3,
            mode: TrainMode::FixedEmbedding,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub mode: TrainMode,
    pub epochs: usize,
    /// Full-batch loss before each update.
    pub loss_trace: Vec<f64>,
    pub train_psnr: f64,
    /// `None` when the split has no test points.
    pub test_psnr: Option<f64>,
    pub model: MlpModel,
    /// The input map after training (σ updated in end-to-end mode).
    pub source: InputSource,
    /// Predictions on the whole lattice, clamped to `[0,1]`.
    pub predictions: Vec<f64>,
}

pub fn train(signal: &SampledSignal, split: &SplitPlan, source: &InputSource, run: &RunConfig) -> Result<TrainRun> {
    if split.train_idx.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if source.n_dims_in() != signal.n_dims_in() {
        return Err(Error::LengthMismatch {
            left: source.n_dims_in(),
            right: signal.n_dims_in(),
        });
    }
    let m = signal.n_dims_out();
    let count = split.train_idx.len();
    let coords = signal.gather_coords(&split.train_idx);
    let targets = Matrix::from_vec(count, m, signal.gather_values(&split.train_idx));
    let mut model = MlpModel::new(source.d_out(), run.hidden, run.depth, m, run.seed)?;
    let mut adam = AdamState::new(run.adam.clone(), &model.param_shapes());
    let mut trace = Vec::with_capacity(run.epochs);
    let check = |loss: f64, epoch: usize| {
        if loss.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteLoss { iteration: epoch })
        }
    };

    let final_source = match run.mode {
        TrainMode::EndToEndSigma => {
            let InputSource::SuperGaussian(sg) = source else {
                return Err(Error::Missing("end-to-end σ training needs a super-Gaussian embedder".into()));
            };
            let floor = sg.cfg.sigma_min();
            let mut s: Vec<f64> = sg
                .sigma_at(&coords)?
                .iter()
                .map(|v| (v - floor).max(1e-300).ln())
                .collect();
            let mut sigma_adam = AdamState::new(
                AdamConfig {
                    lr: run.sigma_lr,
                    weight_decay: 0.0,
                    ..AdamConfig::default()
                },
                &[count],
            );
            let block = sg.cfg.block_len();
            for epoch in 0..run.epochs {
                let sigma: Vec<f64> = s.iter().map(|v| floor + v.exp()).collect();
                let (mut x, deriv) = sg.cfg.embed_rows(&coords, &sigma, true);
                let deriv = deriv.expect("derivative requested");
                let norms = if sg.normalize {
                    normalize_blocks(&mut x, block)
                } else {
                    Vec::new()
                };
                let g = model.backward(&x, &targets, true)?;
                check(g.loss, epoch)?;
                trace.push(g.loss);
                let mut xbar = g.input.clone().expect("input gradient requested");
                if sg.normalize {
                    normalize_blocks_backward(&x, &norms, &mut xbar, block);
                }
                let sbar: Vec<f64> = (0..count)
                    .map(|i| {
                        let dot: f64 = xbar.row(i).iter().zip(deriv.row(i)).map(|(a, b)| a * b).sum();
                        dot * s[i].exp()
                    })
                    .collect();
                adam.step(&mut model.params_mut(), &g.as_slices());
                sigma_adam.step(&mut [&mut s], &[&sbar]);
            }
            let sigma = s.iter().map(|v| floor + v.exp()).collect();
            Some(InputSource::SuperGaussian(SgInput::new(
                sg.cfg.clone(),
                &coords,
                sigma,
                sg.normalize,
            )?))
        }
        TrainMode::FixedEmbedding | TrainMode::CoordinateRecovery => {
            let x = source.embed(&coords)?;
            for epoch in 0..run.epochs {
                let g = model.backward(&x, &targets, false)?;
                check(g.loss, epoch)?;
                trace.push(g.loss);
                adam.step(&mut model.params_mut(), &g.as_slices());
            }
            None
        }
    };
    let source = final_source.unwrap_or_else(|| source.clone());
    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters after training".into()));
    }
    let mut predictions = model.forward(&source.embed(signal.coords())?)?.into_vec();
    predictions.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    let gather = |idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| predictions[i * m..(i + 1) * m].iter().copied())
            .collect()
    };
    let train_psnr = psnr(&gather(&split.train_idx), &signal.gather_values(&split.train_idx))?;
    let test_psnr = if split.test_idx.is_empty() {
        None
    } else {
        Some(psnr(&gather(&split.test_idx), &signal.gather_values(&split.test_idx))?)
    };
    Ok(TrainRun {
        mode: run.mode,
        epochs: run.epochs,
        loss_trace: trace,
        train_psnr,
        test_psnr,
        model,
        source,
        predictions,
    })
}

pub fn write_loss_csv<W: Write>(trace: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "loss"])?;
    for (k, l) in trace.iter().enumerate() {
        out.write_record(&[k.to_string(), l.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("loss csv", e))?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { steps: 1000, lr: 1e-2 }
    }
}

#[derive(Clone, Debug)]
pub struct Recovery {
    pub coords: Vec<f64>,
    pub initial_psnr: f64,
    pub psnr: f64,
    pub loss_trace: Vec<f64>,
}

/// Loss and `d loss / d coords` of a frozen model at `coords`.
pub fn coordinate_loss_gradient(
    model: &MlpModel,
    source: &InputSource,
    coords: &[f64],
    truth: &Matrix,
) -> Result<(f64, Vec<f64>)> {
    let feats = source.features(coords)?;
    let g = model.backward(&feats.x, truth, true)?;
    let bar = g.input.expect("input gradient requested");
    Ok((g.loss, source.coordinate_gradient(coords, &feats, bar)))
}

/// Adam on the input coordinates of a frozen model, clamped to the unit box.
pub fn recover_coordinates(
    model: &MlpModel,
    source: &InputSource,
    start: &[f64],
    truth: &[f64],
    cfg: &RecoveryConfig,
) -> Result<Recovery> {
    let n = source.n_dims_in();
    let m = model.d_out();
    let count = start.len() / n;
    if start.len() % n != 0 || truth.len() != count * m {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: count * m,
        });
    }
    if model.d_in() != source.d_out() {
        return Err(Error::LengthMismatch {
            left: model.d_in(),
            right: source.d_out(),
        });
    }
    let target = Matrix::from_vec(count, m, truth.to_vec());
    let eval = |x: &[f64]| -> Result<f64> {
        let mut p = model.forward(&source.embed(x)?)?.into_vec();
        p.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        psnr(&p, truth)
    };
    let initial_psnr = eval(start)?;
    let mut x = start.to_vec();
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
        &[x.len()],
    );
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = coordinate_loss_gradient(model, source, &x, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: step });
        }
        trace.push(loss);
        adam.step(&mut [&mut x], &[&grad]);
        x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Ok(Recovery {
        psnr: eval(&x)?,
        coords: x,
        initial_psnr,
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedders::EmbedMode;
    use crate::signals::{make_split, SplitScheme};

    fn ramp(n: usize) -> SampledSignal {
        SampledSignal::from_grid(vec![n], 1, (0..n).map(|i| 0.2 + 0.5 * i as f64 / (n - 1) as f64).collect()).unwrap()
    }

    fn small_run(mode: TrainMode, epochs: usize) -> RunConfig {
        RunConfig {
            hidden: 16,
            depth: 2,
            epochs,
            adam: AdamConfig::with_lr(1e-2),
            mode,
            ..RunConfig::default()
        }
    }

    #[test]
    fn loss_trace_has_one_entry_per_epoch() {
        let s = ramp(32);
        let split = make_split(&s, SplitScheme::Regular, 0.5, 0).unwrap();
        let r = train(&s, &split, &InputSource::Coordinates { n_dims: 1 }, &small_run(TrainMode::FixedEmbedding, 37)).unwrap();
        assert_eq!(r.loss_trace.len(), 37);
        assert_eq!(r.predictions.len(), 32);
        assert!(r.test_psnr.is_some());
        let mut buf = Vec::new();
        write_loss_csv(&r.loss_trace[..2], &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("epoch,loss\n0,"));
    }

    #[test]
    fn end_to_end_requires_super_gaussian() {
        let s = ramp(8);
        let split = make_split(&s, SplitScheme::Regular, 0.5, 0).unwrap();
        let r = train(&s, &split, &InputSource::Coordinates { n_dims: 1 }, &small_run(TrainMode::EndToEndSigma, 2));
        assert!(matches!(r, Err(Error::Missing(_))));
    }

    #[test]
    fn end_to_end_moves_sigma() {
        let s = ramp(32);
        let split = make_split(&s, SplitScheme::Regular, 0.5, 0).unwrap();
        let cfg = SuperGaussianConfig::new(1, 32, 2.0, EmbedMode::Projected, None, 1e-3).unwrap();
        let coords = s.gather_coords(&split.train_idx);
        let init = vec![cfg.initial_sigma(); coords.len()];
        let src = InputSource::SuperGaussian(SgInput::new(cfg, &coords, init.clone(), true).unwrap());
        let r = train(&s, &split, &src, &small_run(TrainMode::EndToEndSigma, 20)).unwrap();
        let InputSource::SuperGaussian(sg) = &r.source else { panic!() };
        assert!(sg.sigma.iter().zip(&init).any(|(a, b)| a != b));
        assert!(sg.sigma.iter().all(|v| *v >= 1e-3));
    }

    #[test]
    fn identity_start_stays_put() {
        let s = ramp(16);
        let split = make_split(&s, SplitScheme::Regular, 1.0, 0).unwrap();
        let r = train(&s, &split, &InputSource::Coordinates { n_dims: 1 }, &small_run(TrainMode::CoordinateRecovery, 300)).unwrap();
        // At the fitted optimum of a linear target the coordinates are already best.
        let rec = recover_coordinates(
            &r.model,
            &r.source,
            s.coords(),
            s.values(),
            &RecoveryConfig { steps: 5, lr: 1e-6 },
        )
        .unwrap();
        assert!((rec.psnr - rec.initial_psnr).abs() < 0.05);
        assert!(rec.coords.iter().zip(s.coords()).all(|(a, b)| (a - b).abs() < 1e-4));
    }
}
