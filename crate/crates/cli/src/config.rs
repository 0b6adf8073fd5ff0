//! Experiment configuration files: `[data]`, `[model]`, `[train]` and
//! `[output]` sections of flat keys, each overridable from the command line
//! with `--set section.key=value`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use epidg::bank::ArchSpec;
use epidg::data::{
    gen_synthetic_heterogeneous, gen_synthetic_homogeneous, load_feature_csv, read_domains_csv, CsvOptions,
    DomainData, HeteroSpec, HomogSpec, MultiDomainDataset,
};
use epidg::nn::{seeded_rng, LrSchedule};
use epidg::train::{Preset, TrainConfig, Variant};
use epidg::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    SynthHomog,
    SynthHetero,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default)]
    pub seed: u64,
    // Synthetic generators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_spaces: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_domain: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_spread: Option<f64>,
    // Feature files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub homogeneous: Option<bool>,
    #[serde(default, skip_serializing_if = "HashMap::is_empty")]
    pub declared_classes: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_point: Option<usize>,
    #[serde(default)]
    pub stem_layers: usize,
}

/// A schedule written either as a bare number or in the textual forms
/// accepted by [`LrSchedule::parse`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleValue {
    Number(f64),
    Text(String),
}

impl ScheduleValue {
    fn resolve(&self, key: &str) -> Result<LrSchedule> {
        let s = match self {
            ScheduleValue::Number(v) => LrSchedule::constant(*v),
            ScheduleValue::Text(t) => {
                LrSchedule::parse(t).map_err(|e| Error::Config(format!("train.{key}: {e}")))?
            }
        };
        s.validate().map_err(|e| Error::Config(format!("train.{key}: {e}")))?;
        Ok(s)
    }
}

/// Every key is optional and falls back to the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<ScheduleValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda2: Option<ScheduleValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda3: Option<ScheduleValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<ScheduleValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_includes_agnostic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_specific: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Periodic checkpoint cadence as a fraction of `total_iters`; 0 keeps
    /// only the final checkpoint.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: f64,
}

fn default_checkpoint_every() -> f64 {
    0.1
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Parses the right-hand side of `--set key=value` as a TOML value, falling
/// back to a plain string so that `variant=FCR` works without quotes.
fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let (section, field) = key
        .trim()
        .split_once('.')
        .ok_or_else(|| Error::Config(format!("override key '{key}' must be section.key")))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(Error::Config(format!("'{section}' is not a section")));
    };
    sec.insert(field.to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {e}", origin.display())))?;
        cfg.train_config()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are resolved against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text, path, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in cfg.data.paths.iter_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    /// The preset with every key present in `[train]` applied on top.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.train;
        let preset: Preset = t.preset.as_deref().unwrap_or("synth").parse()?;
        let mut c = TrainConfig::preset(preset);
        if let Some(v) = &t.lambda1 {
            c.lambda1 = v.resolve("lambda1")?;
        }
        if let Some(v) = &t.lambda2 {
            c.lambda2 = v.resolve("lambda2")?;
        }
        if let Some(v) = &t.lambda3 {
            c.lambda3 = v.resolve("lambda3")?;
        }
        if let Some(v) = &t.alpha {
            c.alpha = v.resolve("alpha")?;
        }
        if let Some(total) = t.total_iters {
            c.total_iters = total;
            if t.warmup_iters.is_none() {
                c.warmup_iters = total / 20;
            }
        }
        macro_rules! copy {
            ($($f:ident),*) => { $( if let Some(v) = t.$f { c.$f = v; } )* };
        }
        copy!(momentum, weight_decay, batch_size, warmup_iters, warmup_includes_agnostic, seed, eval_every, fixed_specific);
        if let Some(v) = &t.variant {
            c.variant = v.parse::<Variant>()?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn arch(&self, input_dim: usize) -> ArchSpec {
        let mut a = ArchSpec::new(input_dim, self.model.hidden.clone()).with_stem(self.model.stem_layers);
        a.split_point = self.model.split_point;
        a
    }

    pub fn homogeneous(&self) -> bool {
        match self.data.source {
            DataSource::SynthHomog => true,
            DataSource::SynthHetero => false,
            DataSource::Csv => self.data.homogeneous.unwrap_or(true),
        }
    }

    fn require<T: Copy>(v: Option<T>, key: &str) -> Result<T> {
        v.ok_or_else(|| Error::Config(format!("data.{key} is required for this data source")))
    }

    fn reject(&self, present: bool, key: &str) -> Result<()> {
        if present {
            return Err(Error::Config(format!(
                "data.{key} does not apply to data source {:?}",
                self.data.source
            )));
        }
        Ok(())
    }

    /// The dataset as configured: generated or read from feature files.
    pub fn dataset(&self) -> Result<MultiDomainDataset> {
        let d = &self.data;
        match d.source {
            DataSource::SynthHomog => {
                self.reject(d.label_spaces.is_some(), "label_spaces")?;
                self.reject(d.target_classes.is_some(), "target_classes")?;
                self.reject(!d.paths.is_empty(), "paths")?;
                let mut spec = HomogSpec::new(
                    Self::require(d.domains, "domains")?,
                    Self::require(d.classes, "classes")?,
                    Self::require(d.dim, "dim")?,
                    Self::require(d.per_domain, "per_domain")?,
                    Self::require(d.shift, "shift")?,
                );
                if let Some(s) = d.class_spread {
                    spec.class_spread = s;
                }
                gen_synthetic_homogeneous(&spec, &mut seeded_rng(d.seed))
            }
            DataSource::SynthHetero => {
                self.reject(d.classes.is_some(), "classes")?;
                self.reject(!d.paths.is_empty(), "paths")?;
                let label_spaces = d
                    .label_spaces
                    .clone()
                    .ok_or_else(|| Error::Config("data.label_spaces is required for synth-hetero".into()))?;
                if let Some(n) = d.domains {
                    if n != label_spaces.len() {
                        return Err(Error::Config(format!(
                            "data.domains = {n} but label_spaces lists {}",
                            label_spaces.len()
                        )));
                    }
                }
                let spec = HeteroSpec {
                    label_spaces,
                    target_label_space: Self::require(d.target_classes, "target_classes")?,
                    dim: Self::require(d.dim, "dim")?,
                    per_domain: Self::require(d.per_domain, "per_domain")?,
                    shift_strength: Self::require(d.shift, "shift")?,
                    class_spread: d.class_spread.unwrap_or(1.0),
                };
                gen_synthetic_heterogeneous(&spec, &mut seeded_rng(d.seed))
            }
            DataSource::Csv => {
                if d.paths.is_empty() {
                    return Err(Error::Config("data.paths is required for csv data".into()));
                }
                let target = d
                    .target
                    .clone()
                    .ok_or_else(|| Error::Config("data.target is required for csv data".into()))?;
                let mut opts = CsvOptions::new(target, self.homogeneous(), d.seed);
                opts.classes = d.declared_classes.clone();
                load_feature_csv(&d.paths, &opts)
            }
        }
    }

    /// Every domain (sources then target) for leave-one-domain-out sweeps.
    pub fn all_domains(&self) -> Result<Vec<DomainData>> {
        match self.data.source {
            DataSource::Csv => read_domains_csv(
                &self.data.paths,
                self.homogeneous(),
                &self.data.declared_classes,
                self.data.seed,
            ),
            _ => Ok(self.dataset()?.all_domains().into_iter().cloned().collect()),
        }
    }
}
