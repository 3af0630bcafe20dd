//! One TOML file drives every subcommand. Every key has a default and unknown
//! keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitSchedule;
use crate::isosurface::IsoConfig;
use crate::mesh::{icosphere, Units};
use crate::metrics::MetricSampling;
use crate::neural::TrainConfig;
use crate::validity::ValidityThresholds;
use crate::voxel::SynthParams;
use crate::TriMesh;

use super::CfdMaterial;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Output directory used when a subcommand gets no `--out`.
    pub out_dir: PathBuf,
    /// Template mesh file; the icosphere template is used when unset.
    pub template: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { out_dir: PathBuf::from("out"), template: None }
    }
}

/// Icosphere template used when no template file is configured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    /// Subdivision level; 2 gives the 162-vertex sphere.
    pub level: u32,
    /// Radius in normalized coordinates.
    pub radius: f64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig { level: 2, radius: 0.5 }
    }
}

/// Synthetic cases generated for `train`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainData {
    pub train_cases: usize,
    pub test_cases: usize,
    pub dims: usize,
}

impl Default for TrainData {
    fn default() -> Self {
        TrainData { train_cases: 20, test_cases: 5, dims: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seed of every stochastic step. Sub-block seeds follow it.
    pub seed: u64,
    /// Units of meshes written by `fit` and `export`.
    pub units: Units,
    pub paths: Paths,
    pub synth: SynthParams,
    pub iso: IsoConfig,
    pub template: TemplateConfig,
    pub fit: FitSchedule,
    pub train: TrainConfig,
    pub train_data: TrainData,
    pub metrics: MetricSampling,
    pub validity: ValidityThresholds,
    pub material: CfdMaterial,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            units: Units::Mm,
            paths: Paths::default(),
            synth: SynthParams::default(),
            iso: IsoConfig::default(),
            template: TemplateConfig::default(),
            fit: FitSchedule::default(),
            train: TrainConfig::default(),
            train_data: TrainData::default(),
            metrics: MetricSampling::default(),
            validity: ValidityThresholds::default(),
            material: CfdMaterial::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(e, text, path))?;
        cfg.normalized()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `key=value` overrides, where `key` is a dotted path such as
    /// `fit.convergence_tol`. Values use TOML syntax; bare words are strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<RunConfig> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        // sub-block seeds are cleared so a new top-level seed propagates
        let mut base = self.clone();
        (base.synth.seed, base.fit.rng_seed, base.train.seed, base.metrics.seed) = (0, 0, 0, 0);
        let mut root = toml::Value::try_from(&base).expect("config serializes");
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside a table")))?;
                if i + 1 == parts.len() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let text = toml::to_string(&root).expect("value serializes");
        RunConfig::from_toml(&text, Path::new("<overrides>"))
    }

    /// Checks every block and propagates the top-level seed.
    fn normalized(self) -> Result<RunConfig> {
        let seeds = [("synth.seed", self.synth.seed), ("fit.rng_seed", self.fit.rng_seed), ("train.seed", self.train.seed), ("metrics.seed", self.metrics.seed)];
        for (name, s) in seeds {
            if s != 0 && s != self.seed {
                return Err(Error::Config(format!("`{name}` = {s} conflicts with seed = {}; set seeds with the top-level `seed` key", self.seed)));
            }
        }
        let seed = self.seed;
        self.with_seed(seed).validate()
    }

    pub fn with_seed(mut self, seed: u64) -> RunConfig {
        self.seed = seed;
        self.synth.seed = seed;
        self.fit.rng_seed = seed;
        self.train.seed = seed;
        self.metrics.seed = seed;
        self
    }

    pub fn validate(self) -> Result<RunConfig> {
        self.synth.validate()?;
        self.iso.validate()?;
        self.fit.validate()?;
        self.train.net.validate()?;
        self.train.rec.validate()?;
        self.train.ext.validate()?;
        self.validity.validate()?;
        if !(self.template.radius > 0.0 && self.template.radius < 1.0) {
            return Err(Error::Config("template.radius must lie in (0,1)".into()));
        }
        if self.train_data.dims % 4 != 0 || self.train_data.dims < 8 {
            return Err(Error::Config("train_data.dims must be a multiple of 4 and at least 8".into()));
        }
        Ok(self)
    }

    /// The configured template file, or the icosphere template.
    pub fn template_mesh(&self) -> Result<TriMesh> {
        match &self.paths.template {
            Some(p) => crate::mesh::load_template(p),
            None => {
                let r = self.template.radius;
                let m = icosphere(self.template.level).map_positions(|p| p * r);
                crate::mesh::validate_template(&m)?;
                Ok(m)
            }
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn toml_error(e: toml::de::Error, text: &str, path: &Path) -> Error {
    let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1).unwrap_or(0);
    Error::parse(path, line, e.message().to_string())
}
