//! Experiment orchestration: loads signals, builds σ per variant, trains,
//! and writes reports.
//!
//! Every run is a pure function of its spec. Jobs execute in spec order and
//! rows are appended in that order, so a rerun writes the same report bytes
//! (the wall-time column stays blank unless `wall_time = true`).

mod report;
mod spec;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embedders::{EmbedderSettings, RffConfig, SuperGaussianConfig};
use crate::error::{Error, Result};
use crate::graphlap::{optimize_sigma, optimize_sigma_lattice};
use crate::net::{
    recover_coordinates, train, write_loss_csv, InputSource, Recovery, RunConfig, SgInput, TrainMode,
    TrainRun,
};
use crate::par;
use crate::sigma_model::{bin_pairs, fit_polynomial, residual_rms, spearman, SigmaPolynomial};
use crate::signals::synth::{image_2d, signal_1d};
use crate::signals::{
    jacobian_frobenius, load_signal, make_split, netpbm, ssim, GrayImage, SampledSignal, SignalKind,
    SplitPlan, SplitScheme,
};

pub use report::{GroupMean, Report, ReportRow, REPORT_HEADER};
pub use spec::{spec_from_overrides, Experiment, ExperimentSpec, Overrides, Variant};

/// A signal and the id used in reports and file names.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedSignal {
    pub id: String,
    pub signal: SampledSignal,
}

/// Loads `spec.signals`, or generates the seeded synthetic set when none are given.
/// 2D images are rescaled to `size × size`.
pub fn load_signals(spec: &ExperimentSpec) -> Result<Vec<NamedSignal>> {
    if spec.signals.is_empty() {
        return Ok(synthetic_signals(spec));
    }
    let mut out: Vec<NamedSignal> = Vec::with_capacity(spec.signals.len());
    for path in &spec.signals {
        let kind = SignalKind::from_path(path)
            .ok_or_else(|| Error::Config(format!("cannot tell the kind of {}", path.display())))?;
        let mut signal = load_signal(path, kind)?;
        if signal.n_dims_in() != spec.dims {
            return Err(Error::Config(format!(
                "{} is {}D, experiment expects {}D",
                path.display(),
                signal.n_dims_in(),
                spec.dims
            )));
        }
        if spec.dims == 2 && signal.grid_shape() != [spec.size, spec.size] {
            signal = resize_bilinear(&signal, spec.size, spec.size)?;
        }
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "signal".into());
        let id = if out.iter().any(|s| s.id == stem) {
            format!("{stem}_{}", out.len())
        } else {
            stem
        };
        out.push(NamedSignal { id, signal });
    }
    Ok(out)
}

fn synthetic_signals(spec: &ExperimentSpec) -> Vec<NamedSignal> {
    (0..spec.synthetic_count as u64)
        .map(|k| {
            let seed = spec.synthetic_seed.wrapping_add(k);
            if spec.dims == 1 {
                NamedSignal {
                    id: format!("syn1d_{seed}"),
                    signal: signal_1d(seed, spec.length),
                }
            } else {
                let cat = spec.categories[k as usize % spec.categories.len()];
                NamedSignal {
                    id: format!("{cat}_{seed}"),
                    signal: image_2d(seed, spec.size, spec.channels, cat),
                }
            }
        })
        .collect()
}

/// Bilinear resampling of a 2D signal onto a `rows × cols` lattice.
pub fn resize_bilinear(signal: &SampledSignal, rows: usize, cols: usize) -> Result<SampledSignal> {
    let shape = signal.grid_shape();
    if shape.len() != 2 {
        return Err(Error::Config("only 2D signals can be resized".into()));
    }
    let (h, w) = (shape[0], shape[1]);
    let m = signal.n_dims_out();
    let src = signal.values();
    let sample = |pos: f64, extent: usize| -> (usize, usize, f64) {
        let p = pos * (extent - 1) as f64;
        let i0 = (p.floor() as usize).min(extent - 1);
        let i1 = (i0 + 1).min(extent - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut values = Vec::with_capacity(rows * cols * m);
    for r in 0..rows {
        let (r0, r1, fr) = sample(r as f64 / (rows - 1).max(1) as f64, h);
        for c in 0..cols {
            let (c0, c1, fc) = sample(c as f64 / (cols - 1).max(1) as f64, w);
            for ch in 0..m {
                let at = |i: usize, j: usize| src[(i * w + j) * m + ch];
                let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
                let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
                values.push(top * (1.0 - fr) + bottom * fr);
            }
        }
    }
    SampledSignal::from_grid(vec![rows, cols], m, values)
}

fn sg_config(spec: &ExperimentSpec) -> Result<SuperGaussianConfig> {
    EmbedderSettings {
        d_embed: spec.d_embed,
        exponent: spec.exponent,
        ..EmbedderSettings::default()
    }
    .super_gaussian(spec.dims)
}

fn rff_config(spec: &ExperimentSpec, sigma_r: f64) -> Result<RffConfig> {
    RffConfig::new(spec.dims, spec.d_embed, sigma_r, spec.seed)
}

/// File-name-safe run id.
fn run_id(parts: &[&str]) -> String {
    parts
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

fn create_out_dir(spec: &ExperimentSpec) -> Result<()> {
    std::fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))
}

/// One split cell of a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub depth: usize,
    pub fraction: f64,
    pub scheme: SplitScheme,
}

impl Cell {
    fn tag(&self) -> String {
        format!("d{}_f{}_{}", self.depth, self.fraction, self.scheme)
    }
}

/// The cells of `spec` in row order: scheme, then fraction, then depth.
pub fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let mut out = Vec::new();
    for &scheme in &spec.schemes {
        for &fraction in &spec.fractions {
            for &depth in &spec.depths {
                out.push(Cell {
                    depth,
                    fraction,
                    scheme,
                });
            }
        }
    }
    out
}

/// A signal with its split, training coordinates and gradient norm there.
struct Prepared<'a> {
    named: &'a NamedSignal,
    split: SplitPlan,
    coords: Vec<f64>,
    /// Gradient norm of the channel mean, sampled at the training points.
    g: Vec<f64>,
}

fn prepare<'a>(named: &'a NamedSignal, cell: &Cell, seed: u64) -> Result<Prepared<'a>> {
    let split = make_split(&named.signal, cell.scheme, cell.fraction, seed)?;
    let coords = named.signal.gather_coords(&split.train_idx);
    let field = jacobian_frobenius(&named.signal.channel_mean());
    let g = split.train_idx.iter().map(|&i| field.0[i]).collect();
    Ok(Prepared {
        named,
        split,
        coords,
        g,
    })
}

/// A finished training job.
struct Fitted {
    run: TrainRun,
    param: Option<f64>,
    secs: f64,
}

/// Runs the variants of one cell over all signals, choosing hyperparameters
/// as each variant prescribes.
struct CellRunner<'a> {
    spec: &'a ExperimentSpec,
    cell: Cell,
    cfg: SuperGaussianConfig,
    model: Option<&'a SigmaPolynomial>,
    prepared: Vec<Result<Prepared<'a>>>,
    /// Per signal: best (σ_R, repeat-0 run) of the σ_R grid.
    rff_choice: Vec<Option<std::result::Result<(f64, Option<Fitted>), String>>>,
    /// Global uniform σ (in spacings) and the repeat-0 run per signal.
    uniform_choice: Option<std::result::Result<(f64, Vec<Option<Fitted>>), String>>,
}

impl<'a> CellRunner<'a> {
    fn new(
        spec: &'a ExperimentSpec,
        signals: &'a [NamedSignal],
        cell: Cell,
        model: Option<&'a SigmaPolynomial>,
    ) -> Result<Self> {
        let prepared: Vec<_> = signals.iter().map(|s| prepare(s, &cell, spec.seed)).collect();
        Ok(Self {
            spec,
            cell,
            cfg: sg_config(spec)?,
            model,
            rff_choice: (0..prepared.len()).map(|_| None).collect(),
            uniform_choice: None,
            prepared,
        })
    }

    fn run_config(&self, mode: TrainMode, repeat: usize) -> RunConfig {
        RunConfig {
            hidden: self.spec.hidden,
            depth: self.cell.depth,
            epochs: self.spec.epochs,
            adam: self.spec.adam.clone(),
            sigma_lr: self.spec.sigma_lr,
            mode,
            seed: self.spec.seed.wrapping_add(repeat as u64),
        }
    }

    fn fit(&self, p: &Prepared, source: &InputSource, mode: TrainMode, repeat: usize) -> Result<Fitted> {
        let t = Instant::now();
        let run = train(&p.named.signal, &p.split, source, &self.run_config(mode, repeat))?;
        Ok(Fitted {
            run,
            param: None,
            secs: t.elapsed().as_secs_f64(),
        })
    }

    fn sg_source(&self, p: &Prepared, sigma: Vec<f64>) -> Result<InputSource> {
        Ok(InputSource::SuperGaussian(SgInput::new(
            self.cfg.clone(),
            &p.coords,
            sigma,
            self.spec.normalize_input,
        )?))
    }

    fn uniform_source(&self, p: &Prepared, spacings: f64) -> Result<InputSource> {
        let s = (spacings * self.cfg.center_spacing()).max(self.cfg.sigma_min());
        self.sg_source(p, vec![s; p.split.train_idx.len()])
    }

    /// σ from graph optimization on this signal's training points.
    fn analytic_sigma(&self, p: &Prepared) -> Result<Vec<f64>> {
        let graph = &self.spec.graph;
        if p.split.train_idx.len() <= graph.max_graph_size {
            return Ok(optimize_sigma(&p.coords, &p.g, &self.cfg, graph)?.field.into_vec());
        }
        let stride = p.split.stride.as_ref().ok_or_else(|| {
            Error::Config("graph-trained σ on large random splits is not supported".into())
        })?;
        let shape = p.named.signal.sublattice(stride)?.grid_shape().to_vec();
        Ok(optimize_sigma_lattice(&shape, &p.coords, &p.g, &self.cfg, graph, self.spec.tile)?
            .field
            .into_vec())
    }

    fn ensure_rff(&mut self, i: usize) {
        if self.rff_choice[i].is_some() {
            return;
        }
        let choice = match &self.prepared[i] {
            Err(e) => Err(e.to_string()),
            Ok(p) => {
                let mut best: Option<(f64, Fitted)> = None;
                let mut last_err = None;
                for &sr in &self.spec.rff_grid {
                    let res = rff_config(self.spec, sr)
                        .and_then(|c| self.fit(p, &InputSource::Rff(c), TrainMode::FixedEmbedding, 0));
                    match res {
                        Ok(f) => {
                            if best.as_ref().is_none_or(|(_, b)| f.run.train_psnr > b.run.train_psnr) {
                                best = Some((sr, f));
                            }
                        }
                        Err(e) => last_err = Some(e.to_string()),
                    }
                }
                best.map(|(sr, f)| (sr, Some(f)))
                    .ok_or_else(|| last_err.unwrap_or_else(|| "empty σ_R grid".into()))
            }
        };
        self.rff_choice[i] = Some(choice);
    }

    /// Global σ minimizing the mean training MSE over all signals.
    fn ensure_uniform(&mut self) {
        if self.uniform_choice.is_some() {
            return;
        }
        let mut best: Option<(f64, f64, Vec<Option<Fitted>>)> = None;
        let mut last_err = None;
        for &m in &self.spec.uniform_grid {
            let mut runs = Vec::with_capacity(self.prepared.len());
            let mut mse = 0.0;
            let mut count = 0usize;
            for p in &self.prepared {
                let Ok(p) = p else {
                    runs.push(None);
                    continue;
                };
                match self
                    .uniform_source(p, m)
                    .and_then(|s| self.fit(p, &s, TrainMode::FixedEmbedding, 0))
                {
                    Ok(f) => {
                        mse += 10f64.powf(-f.run.train_psnr / 10.0);
                        count += 1;
                        runs.push(Some(f));
                    }
                    Err(e) => {
                        last_err = Some(e.to_string());
                        runs.push(None);
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let mean = mse / count as f64;
            if best.as_ref().is_none_or(|(_, b, _)| mean < *b) {
                best = Some((m, mean, runs));
            }
        }
        self.uniform_choice = Some(
            best.map(|(m, _, runs)| (m, runs))
                .ok_or_else(|| last_err.unwrap_or_else(|| "no signal trained".into())),
        );
    }

    /// Trains signal `i` with `variant` for `repeat`.
    fn job(&mut self, i: usize, variant: Variant, repeat: usize) -> Result<Fitted> {
        let fail = |m: &str| Error::Config(m.to_string());
        if let Err(e) = &self.prepared[i] {
            return Err(fail(&e.to_string()));
        }
        match variant {
            Variant::RffMatched | Variant::RffUnmatched => {
                let j = if variant == Variant::RffMatched { i } else { 0 };
                self.ensure_rff(j);
                let sr = match self.rff_choice[j].as_mut().expect("filled above") {
                    Err(e) => return Err(fail(e)),
                    Ok((sr, cached)) => {
                        if i == j && repeat == 0 {
                            if let Some(mut f) = cached.take() {
                                f.param = Some(*sr);
                                return Ok(f);
                            }
                        }
                        *sr
                    }
                };
                let p = self.prepared[i].as_ref().expect("checked above");
                let mut f = self.fit(p, &InputSource::Rff(rff_config(self.spec, sr)?), TrainMode::FixedEmbedding, repeat)?;
                f.param = Some(sr);
                Ok(f)
            }
            Variant::SgUniform => {
                self.ensure_uniform();
                let m = match self.uniform_choice.as_mut().expect("filled above") {
                    Err(e) => return Err(fail(e)),
                    Ok((m, runs)) => {
                        if repeat == 0 {
                            if let Some(mut f) = runs[i].take() {
                                f.param = Some(*m);
                                return Ok(f);
                            }
                        }
                        *m
                    }
                };
                let p = self.prepared[i].as_ref().expect("checked above");
                let mut f = self.fit(p, &self.uniform_source(p, m)?, TrainMode::FixedEmbedding, repeat)?;
                f.param = Some(m);
                Ok(f)
            }
            Variant::NoPe => {
                let p = self.prepared[i].as_ref().expect("checked above");
                let src = InputSource::Coordinates { n_dims: self.spec.dims };
                self.fit(p, &src, TrainMode::FixedEmbedding, repeat)
            }
            Variant::SgEndToEnd => {
                // Starts from the uniform baseline's σ and trains it per point.
                self.ensure_uniform();
                let m = match self.uniform_choice.as_ref().expect("filled above") {
                    Err(e) => return Err(fail(e)),
                    Ok((m, _)) => *m,
                };
                let p = self.prepared[i].as_ref().expect("checked above");
                let mut f = self.fit(p, &self.uniform_source(p, m)?, TrainMode::EndToEndSigma, repeat)?;
                f.param = Some(m);
                Ok(f)
            }
            Variant::SgBeta => {
                let model = self
                    .model
                    .ok_or_else(|| Error::Missing(format!("σ polynomial model for {}D signals", self.spec.dims)))?;
                let p = self.prepared[i].as_ref().expect("checked above");
                let s = p.g.iter().map(|&g| model.predict(g).max(self.cfg.sigma_min())).collect();
                self.fit(p, &self.sg_source(p, s)?, TrainMode::FixedEmbedding, repeat)
            }
            Variant::SgAnalytic => {
                let p = self.prepared[i].as_ref().expect("checked above");
                let t = Instant::now();
                let s = self.analytic_sigma(p)?;
                let mut f = self.fit(p, &self.sg_source(p, s)?, TrainMode::FixedEmbedding, repeat)?;
                f.secs += t.elapsed().as_secs_f64();
                Ok(f)
            }
        }
    }
}

/// Where run artifacts go.
struct Artifacts<'a> {
    spec: &'a ExperimentSpec,
}

impl Artifacts<'_> {
    fn loss(&self, id: &str, trace: &[f64]) -> Result<()> {
        if !self.spec.write_loss {
            return Ok(());
        }
        let path = self.spec.out.join(format!("loss_{id}.csv"));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_loss_csv(trace, std::io::BufWriter::new(f))
    }

    fn recon(&self, id: &str, signal: &SampledSignal, values: &[f64]) -> Result<()> {
        if !self.spec.write_recon || signal.n_dims_in() != 2 {
            return Ok(());
        }
        let ext = if signal.n_dims_out() == 1 { "pgm" } else { "ppm" };
        let path = self.spec.out.join(format!("recon_{id}.{ext}"));
        netpbm::write_values(&path, signal.grid_shape(), signal.n_dims_out(), values)
    }
}

fn image_ssim(signal: &SampledSignal, pred: &[f64]) -> Result<Option<f64>> {
    let shape = signal.grid_shape();
    if shape.len() != 2 {
        return Ok(None);
    }
    let (h, w, m) = (shape[0], shape[1], signal.n_dims_out());
    let a = GrayImage::from_channels(w, h, m, pred)?;
    let b = GrayImage::from_channels(w, h, m, signal.values())?;
    match ssim(&a, &b) {
        Ok(v) => Ok(Some(v)),
        Err(Error::ImageTooSmall { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn base_row(spec: &ExperimentSpec, cell: &Cell, signal: &str, variant: &str, repeat: usize) -> ReportRow {
    ReportRow {
        experiment: spec.experiment.to_string(),
        signal: signal.to_string(),
        variant: variant.to_string(),
        depth: cell.depth,
        fraction: cell.fraction,
        scheme: cell.scheme.to_string(),
        seed: spec.seed.wrapping_add(repeat as u64),
        train_psnr: None,
        test_psnr: None,
        ssim: None,
        wall_time: None,
        param: None,
        error: None,
    }
}

/// Loads the σ model named in the spec, or `sigma_model_<dims>.csv` in the
/// output directory when present.
pub fn find_sigma_model(spec: &ExperimentSpec) -> Result<Option<SigmaPolynomial>> {
    let path = match &spec.sigma_model {
        Some(p) => p.clone(),
        None => {
            let p = spec.out.join(sigma_model_file(spec.dims));
            if !p.exists() {
                return Ok(None);
            }
            p
        }
    };
    let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    SigmaPolynomial::read_csv(std::io::BufReader::new(f)).map(Some)
}

pub fn sigma_model_file(dims: usize) -> String {
    format!("sigma_model_{dims}.csv")
}

/// Trains every (cell, signal, variant, repeat) of an encoding grid.
fn run_encoding_grid(spec: &ExperimentSpec, signals: &[NamedSignal]) -> Result<Report> {
    create_out_dir(spec)?;
    let model = find_sigma_model(spec)?;
    let art = Artifacts { spec };
    let mut report = Report::default();
    for cell in cells(spec) {
        let mut runner = CellRunner::new(spec, signals, cell, model.as_ref())?;
        for (i, named) in signals.iter().enumerate() {
            for &variant in &spec.variants {
                for repeat in 0..spec.repeats {
                    let mut row = base_row(spec, &cell, &named.id, variant.name(), repeat);
                    let id = run_id(&[spec.experiment.name(), &named.id, variant.name(), &cell.tag(), &format!("r{repeat}")]);
                    let outcome = runner.job(i, variant, repeat).and_then(|f| {
                        art.loss(&id, &f.run.loss_trace)?;
                        art.recon(&id, &named.signal, &f.run.predictions)?;
                        let s = image_ssim(&named.signal, &f.run.predictions)?;
                        Ok((f, s))
                    });
                    match outcome {
                        Ok((f, s)) => {
                            row.train_psnr = Some(f.run.train_psnr);
                            row.test_psnr = f.run.test_psnr;
                            row.ssim = s;
                            row.param = f.param;
                            row.wall_time = spec.wall_time.then_some(f.secs);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    report.push(row);
                }
            }
        }
    }
    Ok(report)
}

pub fn run_encode1d(spec: &ExperimentSpec) -> Result<Report> {
    expect_experiment(spec, Experiment::Encode1d)?;
    run_encoding_grid(spec, &load_signals(spec)?)
}

pub fn run_encode2d(spec: &ExperimentSpec) -> Result<Report> {
    expect_experiment(spec, Experiment::Encode2d)?;
    run_encoding_grid(spec, &load_signals(spec)?)
}

pub fn run_expressiveness(spec: &ExperimentSpec) -> Result<Report> {
    expect_experiment(spec, Experiment::Expressiveness)?;
    run_encoding_grid(spec, &load_signals(spec)?)
}

fn expect_experiment(spec: &ExperimentSpec, e: Experiment) -> Result<()> {
    if spec.experiment != e {
        return Err(Error::Config(format!("spec is for {}, not {e}", spec.experiment)));
    }
    Ok(())
}

/// σ_R sweep: one row per (cell, signal, σ_R, repeat); `param` holds σ_R.
pub fn run_sweep_rff(spec: &ExperimentSpec) -> Result<Report> {
    expect_experiment(spec, Experiment::SweepRff)?;
    create_out_dir(spec)?;
    let signals = load_signals(spec)?;
    let art = Artifacts { spec };
    let mut report = Report::default();
    for cell in cells(spec) {
        let runner = CellRunner::new(spec, &signals, cell, None)?;
        for (named, prepared) in signals.iter().zip(&runner.prepared) {
            for &sr in &spec.rff_grid {
                for repeat in 0..spec.repeats {
                    let mut row = base_row(spec, &cell, &named.id, "rff", repeat);
                    row.param = Some(sr);
                    let id = run_id(&[spec.experiment.name(), &named.id, &format!("sr{sr}"), &cell.tag(), &format!("r{repeat}")]);
                    let outcome = match prepared {
                        Err(e) => Err(Error::Config(e.to_string())),
                        Ok(p) => rff_config(spec, sr)
                            .and_then(|c| runner.fit(p, &InputSource::Rff(c), TrainMode::FixedEmbedding, repeat))
                            .and_then(|f| art.loss(&id, &f.run.loss_trace).map(|_| f)),
                    };
                    match outcome {
                        Ok(f) => {
                            row.train_psnr = Some(f.run.train_psnr);
                            row.test_psnr = f.run.test_psnr;
                            row.wall_time = spec.wall_time.then_some(f.secs);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    report.push(row);
                }
            }
        }
    }
    Ok(report)
}

/// Per signal, the σ_R with the highest mean test PSNR in a sweep report
/// (train PSNR when there is no test set). Signals appear in report order.
pub fn best_rff_per_signal(report: &Report) -> Vec<(String, f64)> {
    let mut signals: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !signals.contains(&r.signal.as_str()) {
            signals.push(&r.signal);
        }
    }
    signals
        .into_iter()
        .filter_map(|s| {
            let mut params: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.signal == s && !r.is_error())
                .filter_map(|r| r.param)
                .collect();
            params.dedup();
            params
                .into_iter()
                .filter_map(|p| {
                    let m = report.mean_where(|r| r.signal == s && r.param == Some(p))?;
                    let score = if m.test.is_finite() && m.test > 0.0 { m.test } else { m.train };
                    Some((p, score))
                })
                .fold(None, |best: Option<(f64, f64)>, (p, v)| match best {
                    Some((_, bv)) if bv >= v => best,
                    _ => Some((p, v)),
                })
                .map(|(p, _)| (s.to_string(), p))
        })
        .collect()
}

/// Coordinate recovery: fit each signal, shuffle its training coordinates,
/// and descend on them. `train_psnr` is the fit, `test_psnr` the recovery.
pub fn run_recover(spec: &ExperimentSpec) -> Result<Report> {
    expect_experiment(spec, Experiment::Recover)?;
    create_out_dir(spec)?;
    let signals = load_signals(spec)?;
    let model = find_sigma_model(spec)?;
    let art = Artifacts { spec };
    let mut report = Report::default();
    for cell in cells(spec) {
        let mut runner = CellRunner::new(spec, &signals, cell, model.as_ref())?;
        for (i, named) in signals.iter().enumerate() {
            for &variant in &spec.variants {
                for repeat in 0..spec.repeats {
                    let mut row = base_row(spec, &cell, &named.id, variant.name(), repeat);
                    let id = run_id(&[spec.experiment.name(), &named.id, variant.name(), &cell.tag(), &format!("r{repeat}")]);
                    let outcome = runner.job(i, variant, repeat).and_then(|f| {
                        let t = Instant::now();
                        let p = runner.prepared[i].as_ref().map_err(|e| Error::Config(e.to_string()))?;
                        let rec = recover_shuffled(spec, p, &f.run, repeat)?;
                        art.loss(&id, &rec.loss_trace)?;
                        let mut values = f.run.model.forward(&f.run.source.embed(&rec.coords)?)?.into_vec();
                        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                        if p.split.train_idx.len() == named.signal.len() {
                            art.recon(&id, &named.signal, &values)?;
                        }
                        Ok((f, rec, t.elapsed().as_secs_f64()))
                    });
                    match outcome {
                        Ok((f, rec, secs)) => {
                            row.train_psnr = Some(f.run.train_psnr);
                            row.test_psnr = Some(rec.psnr);
                            row.param = f.param;
                            row.wall_time = spec.wall_time.then_some(f.secs + secs);
                        }
                        Err(e) => row.error = Some(e.to_string()),
                    }
                    report.push(row);
                }
            }
        }
    }
    Ok(report)
}

fn recover_shuffled(spec: &ExperimentSpec, p: &Prepared, run: &TrainRun, repeat: usize) -> Result<Recovery> {
    let n = spec.dims;
    let count = p.split.train_idx.len();
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(repeat as u64) ^ 0x7265_636f);
    order.shuffle(&mut rng);
    let start: Vec<f64> = order
        .iter()
        .flat_map(|&k| p.coords[k * n..(k + 1) * n].iter().copied())
        .collect();
    let truth = p.named.signal.gather_values(&p.split.train_idx);
    recover_coordinates(&run.model, &run.source, &start, &truth, &spec.recovery)
}

/// Harvested pairs and the polynomial fitted to them.
#[derive(Clone, Debug)]
pub struct SigmaFit {
    pub dims: usize,
    pub model: SigmaPolynomial,
    /// Raw `(g, σ)` pairs, signal by signal.
    pub pairs: Vec<(f64, f64)>,
    /// Equal-count bin means the polynomial is fitted to.
    pub binned: Vec<(f64, f64)>,
    pub signals: usize,
    pub spearman_raw: f64,
    pub spearman_binned: f64,
    /// Residual RMS over the binned pairs.
    pub residual_rms: f64,
    /// Population standard deviation of the binned σ.
    pub sigma_std: f64,
    pub residual_rms_raw: f64,
    pub sigma_std_raw: f64,
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Runs the graph objective on every dev signal's training points and
/// collects `(g, σ)` at each of them.
pub fn harvest_pairs(spec: &ExperimentSpec, signals: &[NamedSignal]) -> Result<Vec<(f64, f64)>> {
    let cell = Cell {
        depth: spec.depths[0],
        fraction: spec.fractions[0],
        scheme: spec.schemes[0],
    };
    let runner = CellRunner::new(spec, signals, cell, None)?;
    let sigmas = par::map_slice(&runner.prepared, |p| match p {
        Ok(p) => runner.analytic_sigma(p).map(|s| p.g.iter().copied().zip(s).collect::<Vec<_>>()),
        Err(e) => Err(Error::Config(e.to_string())),
    });
    let mut pairs = Vec::new();
    for s in sigmas {
        pairs.extend(s?);
    }
    Ok(pairs)
}

/// Bins the pairs and fits the polynomial; σ is bounded by the graph cap.
pub fn fit_sigma_pairs(spec: &ExperimentSpec, pairs: Vec<(f64, f64)>, signals: usize) -> Result<SigmaFit> {
    let cfg = sg_config(spec)?;
    let binned = bin_pairs(&pairs, spec.bins);
    let sigma_max = spec
        .graph
        .sigma_cap
        .map_or(crate::sigma_model::DEFAULT_SIGMA_MAX, |c| c * cfg.center_spacing());
    let model = fit_polynomial(&binned, spec.poly_terms, spec.ridge)?
        .with_bounds(cfg.sigma_min(), sigma_max.max(cfg.sigma_min()))?;
    let col = |v: &[(f64, f64)], k: usize| -> Vec<f64> {
        v.iter().map(|p| if k == 0 { p.0 } else { p.1 }).collect()
    };
    Ok(SigmaFit {
        dims: spec.dims,
        spearman_raw: spearman(&col(&pairs, 0), &col(&pairs, 1)),
        spearman_binned: spearman(&col(&binned, 0), &col(&binned, 1)),
        residual_rms: residual_rms(&model, &binned),
        sigma_std: population_std(&col(&binned, 1)),
        residual_rms_raw: residual_rms(&model, &pairs),
        sigma_std_raw: population_std(&col(&pairs, 1)),
        model,
        binned,
        pairs,
        signals,
    })
}

/// Harvests pairs from the dev signals, fits the model and writes
/// `sigma_model_<dims>.csv`, `sigma_pairs_<dims>.csv` and `sigma_fit_<dims>.csv`.
pub fn run_sigma_dev_fit(spec: &ExperimentSpec) -> Result<SigmaFit> {
    expect_experiment(spec, Experiment::SigmaDevFit)?;
    create_out_dir(spec)?;
    let signals = load_signals(spec)?;
    let pairs = harvest_pairs(spec, &signals)?;
    let fit = fit_sigma_pairs(spec, pairs, signals.len())?;
    write_sigma_fit(&spec.out, &fit)?;
    Ok(fit)
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

pub fn write_sigma_fit(dir: &Path, fit: &SigmaFit) -> Result<()> {
    let d = fit.dims;
    fit.model.write_csv(create_file(&dir.join(sigma_model_file(d)))?)?;
    let mut w = csv::Writer::from_writer(create_file(&dir.join(format!("sigma_pairs_{d}.csv")))?);
    w.write_record(["g", "sigma", "binned"])?;
    for (g, s) in &fit.pairs {
        w.write_record([g.to_string(), s.to_string(), "0".into()])?;
    }
    for (g, s) in &fit.binned {
        w.write_record([g.to_string(), s.to_string(), "1".into()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    let mut w = csv::Writer::from_writer(create_file(&dir.join(format!("sigma_fit_{d}.csv")))?);
    w.write_record(["key", "value"])?;
    let rows: [(&str, f64); 8] = [
        ("signals", fit.signals as f64),
        ("pairs", fit.pairs.len() as f64),
        ("spearman_raw", fit.spearman_raw),
        ("spearman_binned", fit.spearman_binned),
        ("residual_rms", fit.residual_rms),
        ("sigma_std", fit.sigma_std),
        ("residual_rms_raw", fit.residual_rms_raw),
        ("sigma_std_raw", fit.sigma_std_raw),
    ];
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(dir, e))?;
    Ok(())
}

/// What [`run`] produced.
#[derive(Clone, Debug)]
pub enum Outcome {
    Report(Report),
    SigmaFit(SigmaFit),
}

/// Dispatches on `spec.experiment` and writes `report.csv` (or the σ-model
/// files) into `spec.out`. Returns the output path of the main artifact.
pub fn run(spec: &ExperimentSpec) -> Result<(Outcome, PathBuf)> {
    let report = match spec.experiment {
        Experiment::Encode1d => run_encode1d(spec)?,
        Experiment::Encode2d => run_encode2d(spec)?,
        Experiment::Expressiveness => run_expressiveness(spec)?,
        Experiment::SweepRff => {
            let r = run_sweep_rff(spec)?;
            let mut w = csv::Writer::from_writer(create_file(&spec.out.join("rff_best.csv"))?);
            w.write_record(["signal", "sigma_r"])?;
            for (s, p) in best_rff_per_signal(&r) {
                w.write_record([s, p.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&spec.out, e))?;
            r
        }
        Experiment::Recover => run_recover(spec)?,
        Experiment::SigmaDevFit => {
            let fit = run_sigma_dev_fit(spec)?;
            return Ok((Outcome::SigmaFit(fit), spec.out.join(sigma_model_file(spec.dims))));
        }
    };
    let path = spec.out.join("report.csv");
    report.write_csv(create_file(&path)?)?;
    Ok((Outcome::Report(report), path))
}
