//! JSON config files. Run configs mirror the library config field names and
//! may also name the input files; relative paths resolve against the config
//! file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fewlabel::pairwise::PairwiseConfig;
use fewlabel::pipeline::MethodSpec;
use fewlabel::ExperimentConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};

/// Input files a run config may name alongside its parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InputPaths {
    pub embeddings: Option<PathBuf>,
    pub clustering: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

fn read_object(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))? {
        Value::Object(map) => Ok(map),
        _ => bail!("{} must hold a JSON object", path.display()),
    }
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

fn take_path(map: &mut Map<String, Value>, key: &str, base: &Path) -> Result<Option<PathBuf>> {
    match map.remove(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(resolve(base, s.into()))),
        Some(other) => bail!("`{key}` must be a path string, got {other}"),
    }
}

/// Splits a run config into its input paths and typed parameters.
pub fn load_run_config<T: DeserializeOwned>(path: &Path) -> Result<(InputPaths, T)> {
    let mut map = read_object(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let paths = InputPaths {
        embeddings: take_path(&mut map, "embeddings", base)?,
        clustering: take_path(&mut map, "clustering", base)?,
        truth: take_path(&mut map, "truth", base)?,
    };
    let config = serde_json::from_value(Value::Object(map))
        .with_context(|| format!("invalid config in {}", path.display()))?;
    Ok((paths, config))
}

pub fn load_experiment(path: Option<&Path>) -> Result<(InputPaths, ExperimentConfig)> {
    match path {
        Some(p) => load_run_config(p),
        None => Ok((InputPaths::default(), ExperimentConfig::default())),
    }
}

pub fn load_pairwise(path: Option<&Path>) -> Result<(InputPaths, PairwiseConfig)> {
    match path {
        Some(p) => load_run_config(p),
        None => Ok((InputPaths::default(), PairwiseConfig::default())),
    }
}

fn default_methods() -> Vec<MethodSpec> {
    vec![MethodSpec::random_baseline(), MethodSpec::random_fixmatch_pseudo()]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

/// A benchmark grid: every method on every clustering and seed.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub embeddings: PathBuf,
    pub truth: PathBuf,
    pub clusterings: Vec<PathBuf>,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let map = read_object(path)?;
        let mut cfg: SuiteConfig = serde_json::from_value(Value::Object(map))
            .with_context(|| format!("invalid suite config in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.embeddings = resolve(base, cfg.embeddings);
        cfg.truth = resolve(base, cfg.truth);
        cfg.clusterings = cfg.clusterings.into_iter().map(|p| resolve(base, p)).collect();
        Ok(cfg)
    }
}
