//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Lists are comma separated. Unknown and repeated keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::experiment::ExperimentConfig;
use crate::synthdata::{AttributeSpec, ConfoundSpec, GeneratorConfig};
use crate::trainer::{SamplerMode, TrainConfig};

/// Every key the parser accepts.
pub const KEYS: &[&str] = &[
    // generator
    "n",
    "input_dim",
    "classes",
    "confounds",
    "aligned_ratio",
    "confound_signal_scale",
    "target_signal_scale",
    "noise_sigma",
    "data_seed",
    "test_n",
    // augmentation
    "jitter_sigma",
    "mask_fraction",
    "scale_low",
    "scale_high",
    // model and objective
    "encoder_hidden",
    "head_hidden",
    "representation_dim",
    "projection_dim",
    "temperature",
    "batch_size",
    "symmetrize",
    // sampler
    "gamma",
    "percentile",
    "floor",
    "warmup_epochs",
    "update_every",
    "ema_weight",
    // training
    "mode",
    "oracle_confound",
    "epochs",
    "batches_per_epoch",
    "lr_max",
    "weight_decay",
    "lr_warmup_epochs",
    "threads",
    "seeds",
    // probing
    "probe_max_iter",
    "probe_tolerance",
    "probe_fit_bias",
    // output
    "output_dir",
];

/// Parsed but uninterpreted key/value pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config(format!("line {}: unknown key '{key}'", lineno + 1)));
            }
            if values.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: key '{key}' given twice", lineno + 1)));
            }
        }
        Ok(Self { values })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Fails naming every missing key.
    pub fn require(&self, keys: &[&str]) -> Result<()> {
        let missing: Vec<&str> = keys.iter().copied().filter(|k| !self.contains(k)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("missing required keys: {}", missing.join(", "))))
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{v}'"))))
            .transpose()
    }

    fn set<T: FromStr>(&self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some(raw) = self.raw(key) else { return Ok(None) };
        if raw.is_empty() {
            return Ok(Some(Vec::new()));
        }
        raw.split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<T>().map_err(|_| Error::Config(format!("key '{key}': cannot parse '{item}'")))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

/// Sampler hyperparameter bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Recipe {
    /// `γ = 10`, `r = 0.01`, update every 20 epochs.
    CifarLike,
    /// `γ = 10`, `r = 0.1`, update every 2 epochs.
    CelebaLike,
}

impl Recipe {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cifar-like" => Ok(Recipe::CifarLike),
            "celeba-like" => Ok(Recipe::CelebaLike),
            other => Err(Error::Config(format!("unknown recipe '{other}'"))),
        }
    }

    pub fn apply(self, train: &mut TrainConfig) {
        let (r, every) = match self {
            Recipe::CifarLike => (0.01, 20),
            Recipe::CelebaLike => (0.1, 2),
        };
        train.scaling.gamma = 10.0;
        train.scaling.percentile = r;
        train.schedule.update_every = every;
        train.schedule.warmup_epochs = 50;
    }
}

/// Everything a subcommand needs, resolved from defaults, an optional
/// recipe, and the config file, in that order of precedence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Settings {
    pub fn resolve(file: &ConfigFile, recipe: Option<Recipe>) -> Result<Self> {
        let mut train = TrainConfig::default();
        if let Some(r) = recipe {
            r.apply(&mut train);
        }

        let mut gen = GeneratorConfig::default();
        file.set("n", &mut gen.n)?;
        file.set("input_dim", &mut gen.input_dim)?;
        file.set("target_signal_scale", &mut gen.target_signal_scale)?;
        file.set("noise_sigma", &mut gen.noise_sigma)?;
        file.set("data_seed", &mut gen.seed)?;
        let classes: usize = file.get("classes")?.unwrap_or(gen.target.cardinality);
        let n_confounds: usize = file.get("confounds")?.unwrap_or(gen.confounds.len());
        let k: f64 = file.get("aligned_ratio")?.unwrap_or(gen.confounds[0].aligned_ratio);
        let scale: f64 = file.get("confound_signal_scale")?.unwrap_or(gen.confounds[0].signal_scale);
        gen.target = AttributeSpec::new("target", classes);
        gen.confounds = (0..n_confounds)
            .map(|j| ConfoundSpec {
                attribute: AttributeSpec::new(format!("confound{j}"), classes),
                aligned_ratio: k,
                signal_scale: scale,
            })
            .collect();
        gen.validate()?;
        let test_n = file.get("test_n")?.unwrap_or(2000);

        let a = &mut train.augment;
        file.set("jitter_sigma", &mut a.jitter_sigma)?;
        file.set("mask_fraction", &mut a.mask_fraction)?;
        file.set("scale_low", &mut a.scale_low)?;
        file.set("scale_high", &mut a.scale_high)?;
        if let Some(v) = file.list("encoder_hidden")? {
            train.encoder_hidden = v;
        }
        if let Some(v) = file.list("head_hidden")? {
            train.head_hidden = v;
        }
        let s = &mut train.ssl;
        file.set("representation_dim", &mut s.representation_dim)?;
        file.set("projection_dim", &mut s.projection_dim)?;
        file.set("temperature", &mut s.temperature)?;
        file.set("batch_size", &mut s.batch_size)?;
        file.set("symmetrize", &mut s.symmetrize)?;
        file.set("gamma", &mut train.scaling.gamma)?;
        file.set("percentile", &mut train.scaling.percentile)?;
        file.set("floor", &mut train.scaling.floor)?;
        file.set("warmup_epochs", &mut train.schedule.warmup_epochs)?;
        file.set("update_every", &mut train.schedule.update_every)?;
        file.set("ema_weight", &mut train.ema_weight)?;
        if let Some(m) = file.raw("mode") {
            train.mode = SamplerMode::parse(m)?;
        }
        file.set("oracle_confound", &mut train.oracle_confound)?;
        file.set("epochs", &mut train.epochs)?;
        if let Some(b) = file.get("batches_per_epoch")? {
            train.batches_per_epoch = Some(b);
        }
        file.set("lr_max", &mut train.lr_max)?;
        file.set("weight_decay", &mut train.weight_decay)?;
        file.set("lr_warmup_epochs", &mut train.lr_warmup_epochs)?;
        file.set("threads", &mut train.threads)?;
        let seeds = file.list("seeds")?.unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        train.seed = seeds[0];
        train.validate()?;

        let mut probe = ProbeConfig::default();
        file.set("probe_max_iter", &mut probe.max_iter)?;
        file.set("probe_tolerance", &mut probe.tolerance)?;
        file.set("probe_fit_bias", &mut probe.fit_bias)?;

        Ok(Self {
            experiment: ExperimentConfig { generator: gen, test_n, train, probe },
            seeds,
            output_dir: file.raw("output_dir").map(PathBuf::from),
        })
    }

    /// Training config for one seed of the list.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.experiment.train.clone() }
    }
}
