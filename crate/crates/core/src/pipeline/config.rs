//! Run configuration (TOML).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{ModelKind, ModelSpec};
use crate::casegen::{standard_matrix, validate_matrix, MatrixRow, DEFAULT_K, DEFAULT_HISTORIES};
use crate::cohort::ProxySchema;
use crate::curves::CurveParams;
use crate::ingest::{Domain, PreprocessRules, StoreManifest};
use crate::metrics::ScoringPolicy;
use crate::synth::SynthSpec;

#[derive(Debug, Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

/// Exactly one of `store`, `movielens`, `lastfm` or `synth`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// A canonical TSV store written by `ingest`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<PathBuf>,
    /// Directory holding `users.dat`, `movies.dat`, `ratings.dat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movielens: Option<PathBuf>,
    /// Directory holding the Last.fm 1K TSV files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lastfm: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    /// Ground-truth sidecar for a stored synthetic dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<PathBuf>,
    /// Preprocessing for raw sources; the domain's rules when absent.
    /// `preprocess = {}` disables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessRules>,
}

impl DatasetSource {
    fn count(&self) -> usize {
        [self.store.is_some(), self.movielens.is_some(), self.lastfm.is_some(), self.synth.is_some()]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn domain(&self) -> Result<Domain, ConfigError> {
        if self.movielens.is_some() {
            return Ok(Domain::Movies);
        }
        if self.lastfm.is_some() {
            return Ok(Domain::Music);
        }
        if let Some(s) = &self.synth {
            return Ok(s.domain);
        }
        let dir = self.store.as_ref().expect("validated source");
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let manifest: StoreManifest =
            serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Ok(manifest.domain)
    }
}

/// Setting × setup × h × count. `rows`, when given, replaces the grid built
/// from `histories` and `count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(default = "default_histories")]
    pub histories: Vec<usize>,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<MatrixRow>>,
}

fn default_histories() -> Vec<usize> {
    DEFAULT_HISTORIES.to_vec()
}
fn default_count() -> usize {
    300
}
fn default_k() -> usize {
    DEFAULT_K
}
fn default_in_flight() -> usize {
    8
}

impl Default for MatrixSpec {
    fn default() -> Self {
        MatrixSpec {
            histories: default_histories(),
            count: default_count(),
            rows: None,
        }
    }
}

impl MatrixSpec {
    pub fn rows(&self, schema: &ProxySchema) -> Vec<MatrixRow> {
        self.rows
            .clone()
            .unwrap_or_else(|| standard_matrix(schema, &self.histories, self.count))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub policy: ScoringPolicy,
    /// Bound on concurrent rank calls.
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    pub output: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<PathBuf>,
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<ProxySchema>,
    #[serde(default)]
    pub matrix: MatrixSpec,
    #[serde(default)]
    pub curves: CurveParams,
    pub models: Vec<ModelSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(e.to_string()))
    }

    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        let d = &mut self.dataset;
        for p in [&mut d.store, &mut d.movielens, &mut d.lastfm, &mut d.ground_truth, &mut self.prompt_template]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn schema(&self) -> Result<ProxySchema, ConfigError> {
        if let Some(s) = &self.schema {
            return Ok(s.clone());
        }
        if let Some(s) = &self.dataset.synth {
            return Ok(s.schema());
        }
        Ok(ProxySchema::for_domain(self.dataset.domain()?))
    }

    pub fn matrix_rows(&self) -> Result<Vec<MatrixRow>, ConfigError> {
        Ok(self.matrix.rows(&self.schema()?))
    }

    /// Preprocessing actually applied to the source.
    pub fn preprocess_rules(&self) -> PreprocessRules {
        match (&self.dataset.preprocess, &self.dataset) {
            (Some(r), _) => r.clone(),
            (None, d) if d.movielens.is_some() => PreprocessRules::movies(),
            (None, d) if d.lastfm.is_some() => PreprocessRules::music(),
            _ => PreprocessRules::none(),
        }
    }

    pub fn has_ground_truth(&self) -> bool {
        self.dataset.synth.is_some() || self.dataset.ground_truth.is_some()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.dataset.count() {
            1 => {}
            0 => return err("dataset needs one of store, movielens, lastfm, synth"),
            _ => return err("dataset sources store, movielens, lastfm and synth are exclusive"),
        }
        if let Some(s) = &self.dataset.synth {
            s.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        if self.k == 0 || self.k % 2 == 1 {
            return err(format!("k must be a positive even number, got {}", self.k));
        }
        if self.max_in_flight == 0 {
            return err("max_in_flight must be at least 1");
        }
        if self.matrix.count == 0 {
            return err("matrix count must be at least 1");
        }
        let c = &self.curves;
        if c.bins == 0 || c.window == 0 {
            return err("curve bins and window must be positive");
        }
        if self.models.is_empty() {
            return err("at least one model is required");
        }
        let mut names = BTreeSet::new();
        for m in &self.models {
            m.validate().map_err(|e| ConfigError(e.to_string()))?;
            if !names.insert(m.name.as_str()) {
                return err(format!("duplicate model name {}", m.name));
            }
            if m.kind == ModelKind::GroupOracle && !self.has_ground_truth() {
                return err(format!("model {} needs synthetic ground truth", m.name));
            }
        }
        let schema = self.schema()?;
        schema.validate(None).map_err(|e| ConfigError(e.to_string()))?;
        validate_matrix(&schema, &self.matrix_rows()?, self.k).map_err(|e| ConfigError(e.to_string()))?;
        Ok(())
    }

    /// The config with every default spelled out, in TOML.
    pub fn effective_toml(&self) -> String {
        let mut resolved = self.clone();
        if resolved.dataset.synth.is_none() && resolved.dataset.store.is_none() {
            resolved.dataset.preprocess = Some(self.preprocess_rules());
        }
        if resolved.schema.is_none() {
            resolved.schema = self.schema().ok();
        }
        toml::to_string(&resolved).expect("config serializes")
    }
}
