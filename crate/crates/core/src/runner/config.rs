//! Experiment configuration, read from TOML.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Every section except `[[models]]` and `alignments` has defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::evalmetrics::AucScheme;
use crate::phonepatterns::{self, ConfoundPolicy, ContrastKind, ContrastSpec, PatternError, Place};
use crate::reprstore::LayerStore;
use crate::xval::{default_lambdas, CvOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seven-column phone alignment TSV.
    pub alignments: PathBuf,
    #[serde(default = "yes")]
    pub include_pseudowords: bool,
    #[serde(default = "all_places")]
    pub places: Vec<Place>,
    #[serde(default)]
    pub confound_policy: ConfoundPolicy,
    /// Shuffle class labels within each contrast before probing.
    #[serde(default)]
    pub permute_labels: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub contrasts: ContrastsConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub pca: PcaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    /// One store per layer; layer ids come from the store headers.
    pub layers: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSet {
    Phonemic,
    Phonetic,
    /// All four controls.
    Controls,
    ConsonantVowel,
    Stress,
    DistantBefore,
    DistantAfter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomContrast {
    pub name: String,
    pub kind: ContrastKind,
    #[serde(default)]
    pub place: Option<Place>,
    pub group1: Vec<String>,
    pub group2: Vec<String>,
    #[serde(default)]
    pub confound: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastsConfig {
    #[serde(default = "default_builtins")]
    pub builtin: Vec<BuiltinSet>,
    #[serde(default)]
    pub custom: Vec<CustomContrast>,
}

impl Default for ContrastsConfig {
    fn default() -> Self {
        Self {
            builtin: default_builtins(),
            custom: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    #[serde(default = "ten")]
    pub outer_folds: usize,
    #[serde(default = "five")]
    pub inner_folds: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub auc: AucScheme,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            outer_folds: 10,
            inner_folds: 5,
            lambdas: default_lambdas(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            auc: AucScheme::default(),
        }
    }
}

impl CvConfig {
    pub fn options(&self, fold_pca: Option<usize>) -> CvOptions {
        CvOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            scheme: self.auc,
            fold_pca,
        }
    }

    fn validate(&self, what: &str) -> Result<(), RunError> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(RunError::Config(format!("{what}: fold counts must be at least 2")));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(RunError::Config(format!(
                "{what}: lambdas must be a nonempty list of finite nonnegative values"
            )));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) || self.max_iter == 0 {
            return Err(RunError::Config(format!("{what}: tol and max_iter must be positive")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaMode {
    #[default]
    Off,
    /// Reduce every layer to `dim` components.
    Fixed,
    /// Choose the dimensionality per model by the control score, then probe
    /// at that dimensionality.
    Select,
}

/// Rows used to fit the principal axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaPopulation {
    /// Pooled vectors of every stimulus token in the experiment, once per layer.
    #[default]
    Stimuli,
    /// The outer training rows of each fold.
    Fold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PcaConfig {
    #[serde(default)]
    pub mode: PcaMode,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub population: PcaPopulation,
    /// Cross-validation used while scoring controls across the grid;
    /// defaults to `[cv]`.
    #[serde(default)]
    pub search: Option<CvConfig>,
}

fn yes() -> bool {
    true
}
fn ten() -> usize {
    10
}
fn five() -> usize {
    5
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    10_000
}
fn all_places() -> Vec<Place> {
    vec![Place::Labial, Place::Alveolar, Place::Velar]
}
fn default_output() -> PathBuf {
    PathBuf::from("results")
}
fn default_builtins() -> Vec<BuiltinSet> {
    vec![BuiltinSet::Phonemic, BuiltinSet::Phonetic, BuiltinSet::Controls]
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always serializable")
    }

    /// Reads a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.alignments);
        fix(&mut self.output);
        for m in &mut self.models {
            m.layers.iter_mut().for_each(fix);
        }
    }

    /// Checks settings and that every referenced file exists with unique
    /// layer ids per model.
    pub fn validate(&self) -> Result<(), RunError> {
        self.cv.validate("[cv]")?;
        if let Some(s) = &self.pca.search {
            s.validate("[pca.search]")?;
        }
        match (self.pca.mode, self.pca.dim) {
            (PcaMode::Fixed, None) | (PcaMode::Fixed, Some(0)) => {
                return Err(RunError::Config("pca.mode = \"fixed\" needs a positive pca.dim".into()))
            }
            (PcaMode::Select, _) if self.pca.population == PcaPopulation::Fold => {
                return Err(RunError::Config(
                    "pca.mode = \"select\" fits axes on the stimulus population; use population = \"stimuli\"".into(),
                ))
            }
            _ => {}
        }
        if self.places.is_empty() {
            return Err(RunError::Config("places must not be empty".into()));
        }
        if self.models.is_empty() {
            return Err(RunError::Config("at least one [[models]] entry is required".into()));
        }
        if !self.alignments.is_file() {
            return Err(RunError::Config(format!(
                "alignment file {} does not exist",
                self.alignments.display()
            )));
        }
        let mut ids = BTreeSet::new();
        for m in &self.models {
            if !ids.insert(&m.id) {
                return Err(RunError::Config(format!("model id '{}' appears twice", m.id)));
            }
            if m.layers.is_empty() {
                return Err(RunError::Config(format!("model '{}' lists no layers", m.id)));
            }
            let mut layers = BTreeSet::new();
            for path in &m.layers {
                if !path.is_file() {
                    return Err(RunError::Config(format!(
                        "model '{}': store {} does not exist",
                        m.id,
                        path.display()
                    )));
                }
                let header = LayerStore::load_header(path).map_err(|e| RunError::Store {
                    path: path.clone(),
                    source: e,
                })?;
                if !layers.insert(header.layer_id) {
                    return Err(RunError::Config(format!(
                        "model '{}': layer id {} appears in more than one store",
                        m.id, header.layer_id
                    )));
                }
            }
        }
        self.contrast_specs()?;
        Ok(())
    }

    /// Contrast specs in run order: built-ins (place-specific ones expanded
    /// over `places`), then custom contrasts.
    pub fn contrast_specs(&self) -> Result<Vec<ContrastSpec>, RunError> {
        let mut specs = Vec::new();
        let policy = self.confound_policy;
        for set in &self.contrasts.builtin {
            match set {
                BuiltinSet::Phonemic => specs.extend(self.places.iter().map(|&p| phonepatterns::phonemic(p, policy))),
                BuiltinSet::Phonetic => specs.extend(self.places.iter().map(|&p| phonepatterns::phonetic(p, policy))),
                BuiltinSet::Controls => specs.extend(phonepatterns::controls()),
                BuiltinSet::ConsonantVowel => specs.push(phonepatterns::consonant_vowel()),
                BuiltinSet::Stress => specs.push(phonepatterns::stress()),
                BuiltinSet::DistantBefore => specs.push(phonepatterns::distant_before()),
                BuiltinSet::DistantAfter => specs.push(phonepatterns::distant_after()),
            }
        }
        for c in &self.contrasts.custom {
            let g1: Vec<&str> = c.group1.iter().map(String::as_str).collect();
            let g2: Vec<&str> = c.group2.iter().map(String::as_str).collect();
            let conf: Option<Vec<&str>> = c.confound.as_ref().map(|v| v.iter().map(String::as_str).collect());
            let spec = ContrastSpec::parse(&c.name, c.kind, c.place, &g1, &g2, conf.as_deref())
                .and_then(|s| phonepatterns::check_literals(&s).map(|_| s))
                .map_err(|e| match e {
                    PatternError::InvalidSpec { .. } => RunError::Config(e.to_string()),
                    _ => RunError::Config(format!("contrast '{}': {e}", c.name)),
                })?;
            specs.push(spec);
        }
        let mut seen = BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.id()) {
                return Err(RunError::Config(format!("contrast '{}' is listed twice", s.id())));
            }
        }
        if specs.is_empty() {
            return Err(RunError::Config("no contrasts selected".into()));
        }
        Ok(specs)
    }

    pub fn search_cv(&self) -> &CvConfig {
        self.pca.search.as_ref().unwrap_or(&self.cv)
    }
}
