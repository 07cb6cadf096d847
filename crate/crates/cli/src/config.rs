//! Run configuration: one TOML file with a section per module. Command-line
//! flags take precedence over file values.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ngmm::domain::ColumnMap;
use ngmm::hazard::NgmmOptions;
use ngmm::inference::InferenceOptions;
use ngmm::synth::SynthSpec;
use ngmm::trainer::TrainConfig;
use ngmm::HyperParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workers: Option<usize>,
    pub catalog: CatalogConfig,
    pub synth: SynthSpec,
    pub split: SplitConfig,
    pub lmm: LmmConfig,
    pub tune: TuneConfig,
    pub inference: InferenceOptions,
    pub predict: PredictConfig,
    pub hazard: HazardConfig,
    pub damage: DamageConfig,
    /// Model parameters used by predict, interpolate and hazard.
    pub params: Option<HyperParams>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub dir: Option<PathBuf>,
    pub excluded_scenarios: Vec<String>,
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Existing split manifest; when unset, commands use every record.
    pub file: Option<PathBuf>,
    pub site_test_frac: f64,
    pub scenario_test_frac: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            file: None,
            site_test_frac: 0.2,
            scenario_test_frac: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmmConfig {
    pub lower: f64,
    pub upper: f64,
    /// Divide the fitted components by the centering factor.
    pub centering_correction: bool,
}

impl Default for LmmConfig {
    fn default() -> Self {
        Self {
            lower: 1e-8,
            upper: 1e2,
            centering_correction: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TuneConfig {
    /// Preset used as the starting point when no `init` file is given.
    pub preset: String,
    pub init: Option<PathBuf>,
    /// `lmm.json` whose primary components replace the preset values.
    pub lmm: Option<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            preset: "ngmm1".into(),
            init: None,
            lmm: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Seed for ground-motion field realizations at facilities.
    pub fields_seed: u64,
    pub realizations: usize,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            fields_seed: 0,
            realizations: 100,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HazardConfig {
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_points: usize,
    pub write_realizations: bool,
    #[serde(flatten)]
    pub ngmm: NgmmOptions,
}

impl Default for HazardConfig {
    fn default() -> Self {
        Self {
            grid_min: 1e-3,
            grid_max: 3.0,
            grid_points: 40,
            write_realizations: false,
            ngmm: NgmmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DamageConfig {
    pub draws_per_field: usize,
    pub seed: u64,
}

impl Default for DamageConfig {
    fn default() -> Self {
        Self {
            draws_per_field: 1,
            seed: 0,
        }
    }
}

/// Parsed config plus the raw table, used to tell which keys the file set.
pub struct Loaded {
    pub config: Config,
    pub raw: toml::Table,
    pub path: Option<PathBuf>,
    pub digest: Option<String>,
}

impl Loaded {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self {
                config: Config::default(),
                raw: toml::Table::new(),
                path: None,
                digest: None,
            });
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let raw: toml::Table = toml::from_str(&text).with_context(|| format!("{}: invalid TOML", path.display()))?;
        let config: Config = toml::from_str(&text).with_context(|| format!("{}: invalid config", path.display()))?;
        let known = toml::Table::try_from(&config).context("cannot re-render the config")?;
        if let Some(key) = unknown_key(&raw, &known, "") {
            bail!("{}: unknown config key `{key}`", path.display());
        }
        Ok(Self {
            config,
            raw,
            path: Some(path.to_path_buf()),
            digest: Some(crate::run::sha256_hex(text.as_bytes())),
        })
    }
}

/// First key of `raw` that the parsed config does not know. Sections with
/// flattened structs accept any key during parsing, so this check runs on
/// the re-rendered config.
fn unknown_key(raw: &toml::Table, known: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in raw {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match (v, known.get(k)) {
            (_, None) => return Some(path),
            (toml::Value::Table(a), Some(toml::Value::Table(b))) => {
                if let Some(p) = unknown_key(a, b, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// A config value set from the command line.
#[derive(Debug, Clone, Serialize)]
pub struct Override {
    pub key: String,
    pub value: String,
    /// The file also set this key; the command-line value won.
    pub replaced_file_value: bool,
}

pub struct Overrides {
    raw: toml::Table,
    pub list: Vec<Override>,
}

impl Overrides {
    pub fn new(raw: toml::Table) -> Self {
        Self { raw, list: Vec::new() }
    }

    /// Whether the file sets the dotted key, e.g. `tune.epochs`.
    pub fn file_sets(&self, key: &str) -> bool {
        let mut node: Option<&toml::Value> = None;
        let mut table = Some(&self.raw);
        for part in key.split('.') {
            node = table.and_then(|t| t.get(part));
            table = node.and_then(|v| v.as_table());
        }
        node.is_some()
    }

    /// Applies `value` to `target` when the flag was given.
    pub fn apply<T: Serialize>(&mut self, key: &str, target: &mut T, value: Option<T>) {
        let Some(v) = value else { return };
        let json = |x: &T| serde_json::to_string(x).unwrap_or_default();
        let from_file = self.file_sets(key);
        if from_file {
            eprintln!(
                "note: command-line value for `{key}` overrides the config file ({} -> {})",
                json(target),
                json(&v)
            );
        }
        self.list.push(Override {
            key: key.to_string(),
            value: json(&v),
            replaced_file_value: from_file,
        });
        *target = v;
    }
}
