//! Experiment specification files (`key = value`).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graphlap::{Bandwidth, GraphObjectiveConfig};
use crate::kv::KvMap;
use crate::net::{AdamConfig, RecoveryConfig, DEFAULT_HIDDEN};
use crate::signals::synth::ImageCategory;
use crate::signals::SplitScheme;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Encode1d,
    Encode2d,
    Expressiveness,
    SigmaDevFit,
    Recover,
    SweepRff,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Self::Encode1d,
        Self::Encode2d,
        Self::Expressiveness,
        Self::SigmaDevFit,
        Self::Recover,
        Self::SweepRff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Encode1d => "encode1d",
            Self::Encode2d => "encode2d",
            Self::Expressiveness => "expressiveness",
            Self::SigmaDevFit => "sigma_dev_fit",
            Self::Recover => "recover",
            Self::SweepRff => "sweep_rff",
        }
    }

    /// Variants the experiment accepts.
    pub fn allowed_variants(self) -> &'static [Variant] {
        use Variant::*;
        match self {
            Self::Encode1d | Self::Encode2d => &Variant::ALL,
            Self::Expressiveness => &[RffMatched, SgUniform, SgBeta, NoPe],
            Self::SigmaDevFit => &[SgAnalytic],
            Self::Recover => &[RffMatched, RffUnmatched, SgUniform, SgBeta],
            Self::SweepRff => &[RffMatched],
        }
    }

    fn default_variants(self) -> Vec<Variant> {
        use Variant::*;
        match self {
            Self::Encode1d | Self::Encode2d => Variant::ALL.to_vec(),
            Self::Expressiveness => vec![RffMatched, SgUniform, SgBeta],
            Self::SigmaDevFit => vec![SgAnalytic],
            Self::Recover => vec![SgUniform, RffMatched],
            Self::SweepRff => vec![RffMatched],
        }
    }

    fn default_dims(self) -> usize {
        match self {
            Self::Encode1d | Self::SigmaDevFit | Self::SweepRff => 1,
            Self::Encode2d | Self::Expressiveness | Self::Recover => 2,
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Variant {
    NoPe,
    RffMatched,
    RffUnmatched,
    SgUniform,
    SgEndToEnd,
    SgBeta,
    SgAnalytic,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Self::NoPe,
        Self::RffMatched,
        Self::RffUnmatched,
        Self::SgUniform,
        Self::SgEndToEnd,
        Self::SgBeta,
        Self::SgAnalytic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::NoPe => "no_pe",
            Self::RffMatched => "rff_matched",
            Self::RffUnmatched => "rff_unmatched",
            Self::SgUniform => "sg_uniform",
            Self::SgEndToEnd => "sg_endtoend",
            Self::SgBeta => "sg_beta",
            Self::SgAnalytic => "sg_analytic",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything one experiment run needs. Unset keys take per-experiment defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Signal files; empty means the seeded synthetic set.
    pub signals: Vec<PathBuf>,
    pub dims: usize,
    pub synthetic_count: usize,
    pub synthetic_seed: u64,
    /// 1D signal length.
    pub length: usize,
    /// 2D image side; loaded images are rescaled to it.
    pub size: usize,
    pub channels: usize,
    pub categories: Vec<ImageCategory>,
    pub variants: Vec<Variant>,
    pub schemes: Vec<SplitScheme>,
    pub fractions: Vec<f64>,
    pub depths: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
    pub epochs: usize,
    pub hidden: usize,
    pub adam: AdamConfig,
    pub sigma_lr: f64,
    pub d_embed: usize,
    pub exponent: f64,
    /// Unit-normalize super-Gaussian features before the MLP.
    pub normalize_input: bool,
    /// Uniform-σ candidates in center spacings.
    pub uniform_grid: Vec<f64>,
    pub rff_grid: Vec<f64>,
    pub sigma_model: Option<PathBuf>,
    pub graph: GraphObjectiveConfig,
    pub tile: usize,
    pub poly_terms: usize,
    pub ridge: f64,
    pub bins: usize,
    pub recovery: RecoveryConfig,
    pub write_loss: bool,
    pub write_recon: bool,
    /// Fill the wall-time column (makes reports run-dependent).
    pub wall_time: bool,
    pub out: PathBuf,
}

/// Command-line overrides, applied after the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub signal: Option<String>,
    pub variant: Option<String>,
    pub depth: Option<String>,
    pub fraction: Option<String>,
    pub scheme: Option<String>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub out: Option<PathBuf>,
}

const KNOWN_KEYS: &[&str] = &[
    "experiment", "signals", "dims", "synthetic_count", "synthetic_seed", "length", "size",
    "channels", "categories", "variants", "scheme", "fraction", "depth", "repeats", "seed",
    "epochs", "hidden", "lr", "weight_decay", "sigma_lr", "d_embed", "b", "normalize_input",
    "uniform_grid", "rff_grid", "sigma_model", "lambda_adj", "lambda_deg", "graph_iterations",
    "graph_lr", "sigma_cap", "bandwidth_scale", "tile", "poly_terms", "ridge", "bins",
    "recover_steps", "recover_lr", "write_loss", "write_recon", "wall_time", "out",
];

impl ExperimentSpec {
    /// Defaults for `experiment` with no file.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut kv = KvMap::default();
        kv.insert("experiment", experiment);
        Self::from_kv(&kv).expect("defaults are valid")
    }

    pub fn from_file(path: &Path, experiment: Option<Experiment>, ov: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut kv = KvMap::parse(&text)?;
        if let Some(e) = experiment {
            if let Some(file_exp) = kv.get::<Experiment>("experiment")? {
                if file_exp != e {
                    return Err(Error::Config(format!(
                        "spec file is for '{file_exp}', command asked for '{e}'"
                    )));
                }
            }
            kv.insert("experiment", e);
        }
        apply_overrides(&mut kv, ov);
        let mut spec = Self::from_kv(&kv)?;
        if spec.signals.iter().any(|p| p.is_relative()) {
            let base = path.parent().unwrap_or(Path::new("."));
            spec.signals = spec
                .signals
                .iter()
                .map(|p| if p.is_relative() && !p.exists() { base.join(p) } else { p.clone() })
                .collect();
        }
        Ok(spec)
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KNOWN_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown spec key '{k}'")));
        }
        let experiment: Experiment = kv
            .get("experiment")?
            .ok_or_else(|| Error::Missing("experiment".into()))?;
        let dims = kv.get_or("dims", experiment.default_dims())?;
        let (count, fractions, depths, schemes, size, seed_base) = match experiment {
            Experiment::Encode1d => (5, vec![0.5], vec![4], vec![SplitScheme::Regular], 120, 0),
            Experiment::Encode2d => (5, vec![0.25], vec![4], vec![SplitScheme::Regular], 120, 0),
            Experiment::Expressiveness => (
                1,
                vec![0.25, 0.10],
                vec![1, 2, 3],
                vec![SplitScheme::Regular, SplitScheme::Random],
                120,
                0,
            ),
            Experiment::SigmaDevFit => (
                20,
                vec![if dims == 1 { 0.5 } else { 0.25 }],
                vec![4],
                vec![SplitScheme::Regular],
                if dims == 1 { 64 } else { 120 },
                1000,
            ),
            Experiment::Recover => (3, vec![1.0], vec![4], vec![SplitScheme::Regular], 48, 0),
            Experiment::SweepRff => (5, vec![0.5], vec![4], vec![SplitScheme::Regular], 120, 0),
        };
        let graph_default = GraphObjectiveConfig::for_dims(dims);
        let nn_scale = match graph_default.bandwidth {
            Bandwidth::NearestNeighbor(s) => s,
            _ => 0.5,
        };
        let recovery_default = RecoveryConfig::default();
        let adam_default = AdamConfig::default();
        let spec = Self {
            experiment,
            signals: kv
                .get_list::<String>("signals")?
                .unwrap_or_default()
                .into_iter()
                .filter(|s| !s.is_empty())
                .map(PathBuf::from)
                .collect(),
            dims,
            synthetic_count: kv.get_or("synthetic_count", count)?,
            synthetic_seed: kv.get_or("synthetic_seed", seed_base)?,
            length: kv.get_or("length", 512)?,
            size: kv.get_or("size", size)?,
            channels: kv.get_or("channels", 1)?,
            categories: kv
                .get_list::<String>("categories")?
                .unwrap_or_else(|| vec!["natural".into()])
                .iter()
                .map(|c| parse_category(c))
                .collect::<Result<_>>()?,
            variants: kv
                .get_list("variants")?
                .unwrap_or_else(|| experiment.default_variants()),
            schemes: kv.get_list("scheme")?.unwrap_or(schemes),
            fractions: kv.get_list("fraction")?.unwrap_or(fractions),
            depths: kv.get_list("depth")?.unwrap_or(depths),
            repeats: kv.get_or("repeats", 1)?,
            seed: kv.get_or("seed", 0)?,
            epochs: kv.get_or("epochs", 2000)?,
            hidden: kv.get_or("hidden", DEFAULT_HIDDEN)?,
            adam: AdamConfig {
                lr: kv.get_or("lr", adam_default.lr)?,
                weight_decay: kv.get_or("weight_decay", adam_default.weight_decay)?,
                ..adam_default
            },
            sigma_lr: kv.get_or("sigma_lr", 3e-3)?,
            d_embed: kv.get_or("d_embed", crate::embedders::DEFAULT_D_EMBED)?,
            exponent: kv.get_or("b", crate::embedders::DEFAULT_EXPONENT)?,
            normalize_input: kv.get_or("normalize_input", true)?,
            uniform_grid: kv.get_list("uniform_grid")?.unwrap_or_else(|| vec![1.0, 2.0, 4.0]),
            rff_grid: kv
                .get_list("rff_grid")?
                .unwrap_or_else(|| (0..7).map(|k| f64::from(1u32 << k)).collect()),
            sigma_model: kv.get::<String>("sigma_model")?.map(PathBuf::from),
            graph: GraphObjectiveConfig {
                lambda_adj: kv.get_or("lambda_adj", graph_default.lambda_adj)?,
                lambda_deg: kv.get_or("lambda_deg", graph_default.lambda_deg)?,
                iterations: kv.get_or("graph_iterations", graph_default.iterations)?,
                step_size: kv.get_or("graph_lr", graph_default.step_size)?,
                bandwidth: Bandwidth::NearestNeighbor(kv.get_or("bandwidth_scale", nn_scale)?),
                sigma_cap: match kv.get_str("sigma_cap") {
                    Some("none") => None,
                    _ => Some(kv.get_or("sigma_cap", graph_default.sigma_cap.unwrap_or(8.0))?),
                },
                ..graph_default
            },
            tile: kv.get_or("tile", crate::graphlap::DEFAULT_TILE)?,
            poly_terms: kv.get_or("poly_terms", crate::sigma_model::DEFAULT_TERMS)?,
            ridge: kv.get_or("ridge", crate::sigma_model::DEFAULT_RIDGE)?,
            bins: kv.get_or("bins", 20)?,
            recovery: RecoveryConfig {
                steps: kv.get_or("recover_steps", recovery_default.steps)?,
                lr: kv.get_or("recover_lr", recovery_default.lr)?,
            },
            write_loss: kv.get_or("write_loss", true)?,
            write_recon: kv.get_or("write_recon", true)?,
            wall_time: kv.get_or("wall_time", false)?,
            out: kv.get_or("out", PathBuf::from("out"))?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if !(1..=2).contains(&self.dims) {
            return bad(format!("dims must be 1 or 2, got {}", self.dims));
        }
        let needs_dims = match self.experiment {
            Experiment::Encode1d => Some(1),
            Experiment::Encode2d | Experiment::Expressiveness => Some(2),
            _ => None,
        };
        if let Some(d) = needs_dims {
            if self.dims != d {
                return bad(format!("{} runs on {d}D signals", self.experiment));
            }
        }
        if self.variants.is_empty() {
            return bad("no variants selected".into());
        }
        let allowed = self.experiment.allowed_variants();
        if let Some(v) = self.variants.iter().find(|v| !allowed.contains(v)) {
            return bad(format!("variant {v} is not valid for {}", self.experiment));
        }
        if self.schemes.is_empty() || self.fractions.is_empty() || self.depths.is_empty() {
            return bad("scheme, fraction and depth lists must be non-empty".into());
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return bad(format!("fraction {f} not in (0,1]"));
        }
        if self.depths.contains(&0) {
            return bad("depth must be >= 1".into());
        }
        if !matches!(self.channels, 1 | 3) {
            return bad(format!("channels must be 1 or 3, got {}", self.channels));
        }
        if self.signals.is_empty() && self.synthetic_count == 0 {
            return bad("no signals: give signals= or synthetic_count >= 1".into());
        }
        if self.dims == 1 && self.length < 2 || self.dims == 2 && self.size < 2 {
            return bad("signals need at least 2 samples per axis".into());
        }
        if self.uniform_grid.is_empty() || self.uniform_grid.iter().any(|s| !(*s > 0.0)) {
            return bad("uniform_grid needs positive entries".into());
        }
        if self.rff_grid.is_empty() || self.rff_grid.iter().any(|s| !(*s > 0.0)) {
            return bad("rff_grid needs positive entries".into());
        }
        if self.hidden == 0 && self.depths.iter().any(|d| *d > 1) {
            return bad("hidden width must be >= 1".into());
        }
        if self.bins < 2 || self.poly_terms == 0 {
            return bad("bins must be >= 2 and poly_terms >= 1".into());
        }
        Ok(())
    }

    /// The spec rendered back to `key=value` text.
    pub fn to_kv(&self) -> KvMap {
        let join = |v: Vec<String>| v.join(",");
        let mut kv = KvMap::default();
        kv.insert("experiment", self.experiment);
        kv.insert(
            "signals",
            join(self.signals.iter().map(|p| p.display().to_string()).collect()),
        );
        kv.insert("dims", self.dims);
        kv.insert("synthetic_count", self.synthetic_count);
        kv.insert("synthetic_seed", self.synthetic_seed);
        kv.insert("length", self.length);
        kv.insert("size", self.size);
        kv.insert("channels", self.channels);
        kv.insert("categories", join(self.categories.iter().map(|c| c.to_string()).collect()));
        kv.insert("variants", join(self.variants.iter().map(|v| v.to_string()).collect()));
        kv.insert("scheme", join(self.schemes.iter().map(|s| s.to_string()).collect()));
        kv.insert("fraction", join(self.fractions.iter().map(|f| f.to_string()).collect()));
        kv.insert("depth", join(self.depths.iter().map(|d| d.to_string()).collect()));
        kv.insert("repeats", self.repeats);
        kv.insert("seed", self.seed);
        kv.insert("epochs", self.epochs);
        kv.insert("hidden", self.hidden);
        kv.insert("lr", self.adam.lr);
        kv.insert("weight_decay", self.adam.weight_decay);
        kv.insert("sigma_lr", self.sigma_lr);
        kv.insert("d_embed", self.d_embed);
        kv.insert("b", self.exponent);
        kv.insert("normalize_input", self.normalize_input);
        kv.insert("uniform_grid", join(self.uniform_grid.iter().map(|v| v.to_string()).collect()));
        kv.insert("rff_grid", join(self.rff_grid.iter().map(|v| v.to_string()).collect()));
        if let Some(p) = &self.sigma_model {
            kv.insert("sigma_model", p.display());
        }
        kv.insert("lambda_adj", self.graph.lambda_adj);
        kv.insert("lambda_deg", self.graph.lambda_deg);
        kv.insert("graph_iterations", self.graph.iterations);
        kv.insert("graph_lr", self.graph.step_size);
        if let Bandwidth::NearestNeighbor(s) = self.graph.bandwidth {
            kv.insert("bandwidth_scale", s);
        }
        kv.insert(
            "sigma_cap",
            self.graph.sigma_cap.map_or("none".to_string(), |c| c.to_string()),
        );
        kv.insert("tile", self.tile);
        kv.insert("poly_terms", self.poly_terms);
        kv.insert("ridge", self.ridge);
        kv.insert("bins", self.bins);
        kv.insert("recover_steps", self.recovery.steps);
        kv.insert("recover_lr", self.recovery.lr);
        kv.insert("write_loss", self.write_loss);
        kv.insert("write_recon", self.write_recon);
        kv.insert("wall_time", self.wall_time);
        kv.insert("out", self.out.display());
        kv
    }
}

fn apply_overrides(kv: &mut KvMap, ov: &Overrides) {
    if let Some(s) = &ov.signal {
        kv.insert("signals", s);
    }
    if let Some(v) = &ov.variant {
        kv.insert("variants", v);
    }
    if let Some(d) = &ov.depth {
        kv.insert("depth", d);
    }
    if let Some(f) = &ov.fraction {
        kv.insert("fraction", f);
    }
    if let Some(s) = &ov.scheme {
        kv.insert("scheme", s);
    }
    if let Some(s) = ov.seed {
        kv.insert("seed", s);
    }
    if let Some(e) = ov.epochs {
        kv.insert("epochs", e);
    }
    if let Some(o) = &ov.out {
        kv.insert("out", o.display());
    }
}

/// Builds a spec from defaults plus overrides, without a file.
pub fn spec_from_overrides(experiment: Experiment, ov: &Overrides) -> Result<ExperimentSpec> {
    let mut kv = KvMap::default();
    kv.insert("experiment", experiment);
    apply_overrides(&mut kv, ov);
    ExperimentSpec::from_kv(&kv)
}

fn parse_category(s: &str) -> Result<ImageCategory> {
    match s {
        "natural" => Ok(ImageCategory::Natural),
        "text" => Ok(ImageCategory::Text),
        "noise" => Ok(ImageCategory::Noise),
        _ => Err(Error::Config(format!("unknown image category '{s}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("encode3d".parse::<Experiment>().is_err());
    }

    #[test]
    fn per_experiment_defaults() {
        let s = ExperimentSpec::defaults(Experiment::Expressiveness);
        assert_eq!(s.depths, vec![1, 2, 3]);
        assert_eq!(s.fractions, vec![0.25, 0.10]);
        assert_eq!(s.dims, 2);
        let s = ExperimentSpec::defaults(Experiment::Encode1d);
        assert_eq!((s.dims, s.length, s.fractions[0]), (1, 512, 0.5));
        assert_eq!(s.variants.len(), 7);
    }

    #[test]
    fn rejects_invalid_specs() {
        let parse = |t: &str| ExperimentSpec::from_kv(&KvMap::parse(t).unwrap());
        assert!(parse("experiment=encode1d\nrepeats=0").is_err());
        assert!(parse("experiment=expressiveness\nvariants=sg_endtoend").is_err());
        assert!(parse("experiment=encode1d\ndims=2").is_err());
        assert!(parse("experiment=encode1d\nfraction=1.5").is_err());
        assert!(parse("experiment=encode1d\ncolour=red").is_err());
        assert!(parse("variants=no_pe").is_err());
        assert!(parse("experiment=encode1d\nvariants=no_pe,sg_beta\ndepth=2,3").is_ok());
    }

    #[test]
    fn kv_round_trip_and_overrides() {
        let ov = Overrides {
            variant: Some("no_pe,sg_uniform".into()),
            epochs: Some(7),
            seed: Some(3),
            ..Default::default()
        };
        let s = spec_from_overrides(Experiment::Encode1d, &ov).unwrap();
        assert_eq!(s.variants, vec![Variant::NoPe, Variant::SgUniform]);
        assert_eq!((s.epochs, s.seed), (7, 3));
        let again = ExperimentSpec::from_kv(&s.to_kv()).unwrap();
        assert_eq!(again, s);
    }
}
