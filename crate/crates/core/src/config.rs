//! Experiment configuration files.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::genset::{InfoType, Role, TaskSpec, Template};
use crate::probe::ProbeConfig;
use crate::rng::Stream;

pub const DEFAULT_RUNS: usize = 50;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One task as written in the config; omitted sizes and seed take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub info_type: InfoType,
    pub target_role: Role,
    #[serde(default = "default_template")]
    pub template: Template,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

fn default_template() -> Template {
    Template::Base
}

fn default_layer() -> i32 {
    -1
}

fn default_runs() -> usize {
    DEFAULT_RUNS
}

/// Where an encoder's embeddings come from.
///
/// `container` is a path template in which `{task}` is replaced by the task
/// id. When the container is missing and `command` is set, the command is run
/// with `{sentences}`, `{out}`, `{layer}` and `{task}` substituted in each
/// argument. `glove` names a text vector file used for context-free lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderEntry {
    pub id: String,
    #[serde(default = "default_layer")]
    pub layer: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub glove: Option<PathBuf>,
}

impl EncoderEntry {
    pub fn container_path(&self, base: &Path, task_id: &str) -> Option<PathBuf> {
        self.container
            .as_ref()
            .map(|t| base.join(t.replace("{task}", task_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub lexicon: PathBuf,
    pub tasks: Vec<TaskEntry>,
    pub encoders: Vec<EncoderEntry>,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Encoders whose shared vocabulary the lexicon is restricted to.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub required_encoders: BTreeSet<String>,
    /// Probed roles; defaults to the five base-template positions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probed_roles: Option<Vec<Role>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Directory relative paths resolve against; set by [`load_config`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
        path: path.to_owned(),
        source,
    })?;
    cfg.base_dir = path.parent().map(Path::to_owned).unwrap_or_default();
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.base_dir.join(p)
    }

    pub fn lexicon_path(&self) -> PathBuf {
        self.resolve(&self.lexicon)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn roles(&self) -> Vec<Role> {
        self.probed_roles.clone().unwrap_or_else(|| Role::CORE.to_vec())
    }

    /// Task seed when the entry does not fix one.
    pub fn derived_task_seed(&self, info: InfoType, role: Role, template: Template) -> u64 {
        Stream::root(self.seed)
            .tag("task")
            .tag(&format!("{info}_{role}_{template}"))
            .seed()
    }

    pub fn task_specs(&self) -> Vec<TaskSpec> {
        self.tasks
            .iter()
            .map(|t| {
                let seed = t
                    .seed
                    .unwrap_or_else(|| self.derived_task_seed(t.info_type, t.target_role, t.template));
                let mut spec = match t.k {
                    Some(k) => TaskSpec::with_k(t.info_type, t.target_role, t.template, k, seed),
                    None => TaskSpec::new(t.info_type, t.target_role, t.template, seed),
                };
                if let Some(n) = t.n_train {
                    spec.n_train = n;
                }
                if let Some(n) = t.n_test {
                    spec.n_test = n;
                }
                spec
            })
            .collect()
    }

    /// Structural checks plus existence of every referenced input file.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.tasks.is_empty() {
            return bad("task list is empty".into());
        }
        if self.runs < 2 {
            return bad(format!("run count must be at least 2, got {}", self.runs));
        }
        if self.workers == Some(0) {
            return bad("workers must be positive".into());
        }
        self.probe.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut ids = HashSet::new();
        for spec in self.task_specs() {
            if !ids.insert(spec.id()) {
                return bad(format!("task {} listed twice", spec.id()));
            }
            spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        let lex = self.lexicon_path();
        if !lex.is_file() {
            return bad(format!("lexicon {} does not exist", lex.display()));
        }
        let mut enc_ids = HashSet::new();
        for e in &self.encoders {
            if !enc_ids.insert(e.id.as_str()) {
                return bad(format!("encoder {} listed twice", e.id));
            }
            if e.id.contains('/') {
                return bad(format!("encoder id {} must not contain '/'", e.id));
            }
            match (&e.container, &e.glove) {
                (Some(_), None) => {}
                (None, Some(g)) => {
                    let p = self.resolve(g);
                    if !p.is_file() {
                        return bad(format!("glove file {} does not exist", p.display()));
                    }
                    if e.command.is_some() {
                        return bad(format!("encoder {}: command needs a container path", e.id));
                    }
                }
                _ => return bad(format!("encoder {}: set exactly one of container or glove", e.id)),
            }
            if e.command.as_ref().is_some_and(Vec::is_empty) {
                return bad(format!("encoder {}: empty command", e.id));
            }
        }
        if self.encoders.is_empty() {
            return bad("encoder list is empty".into());
        }
        Ok(())
    }
}
