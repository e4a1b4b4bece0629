//! Experiment configuration: a typed view of the INI file with a fixed
//! schema. Every effective value is written back by [`ExperimentConfig::to_ini`],
//! so a report's embedded echo re-creates the run exactly.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::baselines::{AmConfig, NmfConfig, SupervisedConfig};
use crate::error::{Error, Result};
use crate::harness::ini::Ini;
use crate::latent::LmConfig;
use crate::models::{DiscriminatorConfig, GeneratorConfig, MaskConfig};
use crate::nes::NesConfig;
use crate::signal::{ClassSplit, Family, IdxProtocol, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Const,
    Nmf,
    Am,
    Lm,
    Lmm,
    Nes,
    AmNes,
    LmmNes,
    Supervised,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Const,
        Method::Nmf,
        Method::Am,
        Method::Lm,
        Method::Lmm,
        Method::Nes,
        Method::AmNes,
        Method::LmmNes,
        Method::Supervised,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Const => "const",
            Method::Nmf => "nmf",
            Method::Am => "am",
            Method::Lm => "lm",
            Method::Lmm => "lmm",
            Method::Nes => "nes",
            Method::AmNes => "am+nes",
            Method::LmmNes => "lmm+nes",
            Method::Supervised => "supervised",
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Method::Nes | Method::AmNes | Method::LmmNes)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown method `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdxSource {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test: Option<(PathBuf, PathBuf)>,
    pub protocol: IdxProtocol,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    /// A directory written by `gen-data`.
    Directory(PathBuf),
    Idx(IdxSource),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub dataset: DatasetSource,
    /// Where `gen-data` writes the dataset.
    pub dataset_out: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Evaluation samples written as images next to the report.
    pub dump: usize,
    pub nes: NesConfig,
    pub nmf: NmfConfig,
    pub am: AmConfig,
    pub lm: LmConfig,
    /// Resolution the latent model works at when it differs from the data.
    pub lm_shape: Option<[usize; 2]>,
    pub supervised: SupervisedConfig,
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("experiment", &["method", "seed", "out", "dump"]),
    (
        "dataset",
        &[
            "family",
            "path",
            "idx_images",
            "idx_labels",
            "idx_test_images",
            "idx_test_labels",
            "split",
            "n_b",
            "n_y",
            "n_eval",
            "shape",
            "intensity_min",
            "intensity_max",
            "noise_sigma",
            "base_family",
            "out",
        ],
    ),
    ("mask", &["hidden", "lr", "batch_size"]),
    (
        "nes",
        &["iterations", "epochs", "init_fraction", "resample_each_epoch", "warm_start"],
    ),
    ("nmf", &["bases", "sparsity", "train_iters", "separate_iters"]),
    ("am", &["disc_hidden", "disc_lr", "power_iters", "prior_weight", "epochs"]),
    (
        "lm",
        &[
            "latent_dim",
            "hidden",
            "range",
            "stage1_epochs",
            "stage2_epochs",
            "infer_steps",
            "code_lr",
            "weight_lr",
            "batch_size",
            "working_shape",
        ],
    ),
    ("supervised", &["epochs"]),
];

fn check_schema(ini: &Ini) -> Result<()> {
    for section in ini.sections() {
        let Some((_, keys)) = SCHEMA.iter().find(|(s, _)| *s == section) else {
            return Err(Error::Config(format!("unknown section [{section}]")));
        };
        if let Some(k) = ini.keys(section).find(|k| !keys.contains(k)) {
            return Err(Error::Config(format!("unknown key `{section}.{k}`")));
        }
    }
    Ok(())
}

struct Reader<'a> {
    ini: &'a Ini,
}

impl Reader<'_> {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.ini.get(section, key)
    }

    fn required(&self, section: &str, key: &str) -> Result<&str> {
        self.raw(section, key)
            .ok_or_else(|| Error::Config(format!("missing required key `{section}.{key}`")))
    }

    fn parse<T: FromStr>(&self, section: &str, key: &str, text: &str) -> Result<T> {
        text.parse()
            .map_err(|_| Error::Config(format!("`{section}.{key}`: cannot parse `{text}`")))
    }

    fn opt<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key).map(|v| self.parse(section, key, v)).transpose()
    }

    fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.opt(section, key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let v = self.required(section, key)?;
        self.parse(section, key, v)
    }

    fn list(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.raw(section, key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|p| self.parse(section, key, p.trim()))
                .collect(),
        }
    }

    fn shape(&self, section: &str, key: &str) -> Result<Option<[usize; 2]>> {
        self.raw(section, key).map(|v| parse_shape(v).map_err(|_| {
            Error::Config(format!("`{section}.{key}`: expected ROWSxCOLS, got `{v}`"))
        })).transpose()
    }
}

pub fn parse_shape(text: &str) -> Result<[usize; 2]> {
    let bad = || Error::Config(format!("expected ROWSxCOLS, got `{text}`"));
    let (r, c) = text.trim().split_once('x').ok_or_else(bad)?;
    let (r, c): (usize, usize) = (r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?);
    if r == 0 || c == 0 {
        return Err(bad());
    }
    Ok([r, c])
}

fn parse_split(text: &str) -> Result<ClassSplit> {
    match text {
        "low-observed" => Ok(ClassSplit::LowObserved),
        "high-observed" => Ok(ClassSplit::HighObserved),
        other => Err(Error::Config(format!(
            "`dataset.split`: expected low-observed or high-observed, got `{other}`"
        ))),
    }
}

fn split_name(split: ClassSplit) -> &'static str {
    match split {
        ClassSplit::LowObserved => "low-observed",
        ClassSplit::HighObserved => "high-observed",
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Defaults for everything except the dataset, method and seed.
    pub fn new(method: Method, mut dataset: DatasetSource, seed: u64) -> Self {
        if let DatasetSource::Synthetic(s) = &mut dataset {
            s.sample_shape = Some(s.shape());
        }
        let mut cfg = ExperimentConfig {
            method,
            seed,
            dataset,
            dataset_out: None,
            out: None,
            dump: 8,
            nes: NesConfig::default(),
            nmf: NmfConfig::default(),
            am: AmConfig::default(),
            lm: LmConfig::default(),
            lm_shape: None,
            supervised: SupervisedConfig::default(),
        };
        cfg.set_seed(seed);
        cfg
    }

    /// The one seed drives the dataset and every method.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        match &mut self.dataset {
            DatasetSource::Synthetic(s) => s.seed = seed,
            DatasetSource::Idx(i) => i.protocol.seed = seed,
            DatasetSource::Directory(_) => {}
        }
        self.nes.seed = seed;
        self.nmf.seed = seed;
        self.am.seed = seed;
        self.lm.seed = seed;
        self.supervised.seed = seed;
    }

    /// Mask architecture shared by every mask-based method.
    pub fn set_mask(&mut self, mask: MaskConfig) {
        self.nes.mask = mask.clone();
        self.am.mask = mask.clone();
        self.supervised.mask = mask;
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_ini(&Ini::parse(text)?)
    }

    pub fn from_ini(ini: &Ini) -> Result<Self> {
        check_schema(ini)?;
        let r = Reader { ini };
        let method: Method = r.required("experiment", "method")?.parse()?;
        let seed: u64 = r.req("experiment", "seed")?;

        let ds = "dataset";
        let sources = ["family", "path", "idx_images"]
            .iter()
            .filter(|k| r.raw(ds, k).is_some())
            .count();
        if sources != 1 {
            return Err(Error::Config(
                "dataset needs exactly one of `dataset.family`, `dataset.path`, `dataset.idx_images`".into(),
            ));
        }
        let dataset = if let Some(fam) = r.raw(ds, "family") {
            let family: Family = fam.parse()?;
            let mut s = SynthConfig::new(family, r.req(ds, "n_b")?, r.req(ds, "n_y")?, r.req(ds, "n_eval")?, seed);
            s.sample_shape = Some(r.shape(ds, "shape")?.unwrap_or_else(|| s.shape()));
            s.intensity = [
                r.or(ds, "intensity_min", s.intensity[0])?,
                r.or(ds, "intensity_max", s.intensity[1])?,
            ];
            s.noise_sigma = r.or(ds, "noise_sigma", s.noise_sigma)?;
            if let Some(b) = r.raw(ds, "base_family") {
                s.base_family = b.parse()?;
            }
            s.validate()?;
            DatasetSource::Synthetic(s)
        } else if let Some(p) = r.raw(ds, "path") {
            DatasetSource::Directory(PathBuf::from(p))
        } else {
            let defaults = IdxProtocol::default();
            let test = match (r.raw(ds, "idx_test_images"), r.raw(ds, "idx_test_labels")) {
                (Some(i), Some(l)) => Some((PathBuf::from(i), PathBuf::from(l))),
                (None, None) => None,
                _ => {
                    return Err(Error::Config(
                        "`dataset.idx_test_images` and `dataset.idx_test_labels` go together".into(),
                    ))
                }
            };
            DatasetSource::Idx(IdxSource {
                train_images: PathBuf::from(r.required(ds, "idx_images")?),
                train_labels: PathBuf::from(r.required(ds, "idx_labels")?),
                test,
                protocol: IdxProtocol {
                    split: r.raw(ds, "split").map(parse_split).transpose()?.unwrap_or(defaults.split),
                    n_b: r.or(ds, "n_b", defaults.n_b)?,
                    n_y: r.or(ds, "n_y", defaults.n_y)?,
                    n_eval: r.or(ds, "n_eval", defaults.n_eval)?,
                    seed,
                },
            })
        };

        let mut cfg = ExperimentConfig::new(method, dataset, seed);
        cfg.dataset_out = r.raw(ds, "out").map(PathBuf::from);
        cfg.out = r.raw("experiment", "out").map(PathBuf::from);
        cfg.dump = r.or("experiment", "dump", cfg.dump)?;

        let d = MaskConfig::default();
        cfg.set_mask(MaskConfig {
            hidden: r.list("mask", "hidden", &d.hidden)?,
            lr: r.or("mask", "lr", d.lr)?,
            batch_size: r.or("mask", "batch_size", d.batch_size)?,
        });

        let n = &mut cfg.nes;
        n.iterations = r.or("nes", "iterations", n.iterations)?;
        n.epochs = r.or("nes", "epochs", n.epochs)?;
        n.init_fraction = r.or("nes", "init_fraction", n.init_fraction)?;
        n.resample_each_epoch = r.or("nes", "resample_each_epoch", n.resample_each_epoch)?;
        n.warm_start = r.or("nes", "warm_start", n.warm_start)?;
        n.validate()?;

        let m = &mut cfg.nmf;
        m.bases = r.or("nmf", "bases", m.bases)?;
        m.sparsity = r.or("nmf", "sparsity", m.sparsity)?;
        m.train_iters = r.or("nmf", "train_iters", m.train_iters)?;
        m.separate_iters = r.or("nmf", "separate_iters", m.separate_iters)?;
        m.validate()?;

        let a = &mut cfg.am;
        let dd = DiscriminatorConfig::default();
        a.disc = DiscriminatorConfig {
            hidden: r.list("am", "disc_hidden", &dd.hidden)?,
            power_iters: r.or("am", "power_iters", dd.power_iters)?,
        };
        a.disc_lr = r.or("am", "disc_lr", a.disc_lr)?;
        a.prior_weight = r.or("am", "prior_weight", a.prior_weight)?;
        a.epochs = r.or("am", "epochs", a.epochs)?;
        a.validate()?;

        let l = &mut cfg.lm;
        let gd = GeneratorConfig::default();
        l.generator = GeneratorConfig {
            latent_dim: r.or("lm", "latent_dim", gd.latent_dim)?,
            hidden: r.list("lm", "hidden", &gd.hidden)?,
            range: r.or("lm", "range", gd.range)?,
        };
        l.stage1_epochs = r.or("lm", "stage1_epochs", l.stage1_epochs)?;
        l.stage2_epochs = r.or("lm", "stage2_epochs", l.stage2_epochs)?;
        l.infer_steps = r.or("lm", "infer_steps", l.infer_steps)?;
        l.code_lr = r.or("lm", "code_lr", l.code_lr)?;
        l.weight_lr = r.or("lm", "weight_lr", l.weight_lr)?;
        l.batch_size = r.or("lm", "batch_size", l.batch_size)?;
        l.validate()?;
        cfg.lm_shape = r.shape("lm", "working_shape")?;

        cfg.supervised.epochs = r.or("supervised", "epochs", cfg.supervised.epochs)?;
        if cfg.supervised.epochs == 0 {
            return Err(Error::Config("`supervised.epochs` must be positive".into()));
        }
        Ok(cfg)
    }

    /// Every effective setting, in the same schema `parse` reads.
    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        ini.set("experiment", "method", self.method);
        ini.set("experiment", "seed", self.seed);
        ini.set("experiment", "dump", self.dump);
        if let Some(o) = &self.out {
            ini.set("experiment", "out", o.display());
        }
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                ini.set("dataset", "family", s.family);
                ini.set("dataset", "n_b", s.n_b);
                ini.set("dataset", "n_y", s.n_y);
                ini.set("dataset", "n_eval", s.n_eval);
                let [h, w] = s.shape();
                ini.set("dataset", "shape", format!("{h}x{w}"));
                ini.set("dataset", "intensity_min", s.intensity[0]);
                ini.set("dataset", "intensity_max", s.intensity[1]);
                ini.set("dataset", "noise_sigma", s.noise_sigma);
                ini.set("dataset", "base_family", s.base_family);
            }
            DatasetSource::Directory(p) => ini.set("dataset", "path", p.display()),
            DatasetSource::Idx(i) => {
                ini.set("dataset", "idx_images", i.train_images.display());
                ini.set("dataset", "idx_labels", i.train_labels.display());
                if let Some((ti, tl)) = &i.test {
                    ini.set("dataset", "idx_test_images", ti.display());
                    ini.set("dataset", "idx_test_labels", tl.display());
                }
                ini.set("dataset", "split", split_name(i.protocol.split));
                ini.set("dataset", "n_b", i.protocol.n_b);
                ini.set("dataset", "n_y", i.protocol.n_y);
                ini.set("dataset", "n_eval", i.protocol.n_eval);
            }
        }
        if let Some(o) = &self.dataset_out {
            ini.set("dataset", "out", o.display());
        }
        let mask = &self.nes.mask;
        ini.set("mask", "hidden", join(&mask.hidden));
        ini.set("mask", "lr", mask.lr);
        ini.set("mask", "batch_size", mask.batch_size);
        let n = &self.nes;
        ini.set("nes", "iterations", n.iterations);
        ini.set("nes", "epochs", n.epochs);
        ini.set("nes", "init_fraction", n.init_fraction);
        ini.set("nes", "resample_each_epoch", n.resample_each_epoch);
        ini.set("nes", "warm_start", n.warm_start);
        let m = &self.nmf;
        ini.set("nmf", "bases", m.bases);
        ini.set("nmf", "sparsity", m.sparsity);
        ini.set("nmf", "train_iters", m.train_iters);
        ini.set("nmf", "separate_iters", m.separate_iters);
        let a = &self.am;
        ini.set("am", "disc_hidden", join(&a.disc.hidden));
        ini.set("am", "power_iters", a.disc.power_iters);
        ini.set("am", "disc_lr", a.disc_lr);
        ini.set("am", "prior_weight", a.prior_weight);
        ini.set("am", "epochs", a.epochs);
        let l = &self.lm;
        ini.set("lm", "latent_dim", l.generator.latent_dim);
        ini.set("lm", "hidden", join(&l.generator.hidden));
        ini.set("lm", "range", l.generator.range);
        ini.set("lm", "stage1_epochs", l.stage1_epochs);
        ini.set("lm", "stage2_epochs", l.stage2_epochs);
        ini.set("lm", "infer_steps", l.infer_steps);
        ini.set("lm", "code_lr", l.code_lr);
        ini.set("lm", "weight_lr", l.weight_lr);
        ini.set("lm", "batch_size", l.batch_size);
        if let Some([h, w]) = self.lm_shape {
            ini.set("lm", "working_shape", format!("{h}x{w}"));
        }
        ini.set("supervised", "epochs", self.supervised.epochs);
        ini
    }
}
