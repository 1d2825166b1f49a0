use std::path::{Path, PathBuf};

use mfbd_core::ensemble::Initial;
use mfbd_core::phylo::LoglikOptions;
use mfbd_core::presets::{self, Interaction};
use mfbd_core::{ModelSpec, SamplingSpec, ScfConfig, TruncatedLattice};
use serde::Deserialize;

pub const DEFAULT_GRID: usize = 201;
pub const DEFAULT_OUT_DIR: &str = "out";

/// The whole configuration file. Sections a subcommand does not use are
/// ignored.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    #[serde(default)]
    pub sampling: Option<SamplingSpec>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub scf: ScfConfig,
    #[serde(default)]
    pub steady: SteadySection,
    #[serde(default)]
    pub master: Option<MasterSection>,
    #[serde(default)]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default)]
    pub loglik: LoglikSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Either explicit parameters or `{"preset": ..., "interaction": ...}`.
#[derive(Debug, Deserialize)]
#[serde(transparent)]
pub struct ModelSource(serde_json::Value);

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Figure1,
    Logistic,
    TwoType,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetRef {
    preset: PresetName,
    #[serde(default)]
    interaction: Option<Interaction>,
}

impl ModelSource {
    pub fn resolve(&self) -> Result<ModelSpec, String> {
        if self.0.get("preset").is_none() {
            let spec: ModelSpec = serde_json::from_value(self.0.clone()).map_err(|e| format!("model: {e}"))?;
            return Ok(spec.normalized());
        }
        let r: PresetRef = serde_json::from_value(self.0.clone()).map_err(|e| format!("model: {e}"))?;
        match (r.preset, r.interaction) {
            (PresetName::Figure1, Some(i)) => Ok(presets::figure1(i)),
            (PresetName::Figure1, None) => Err("model: preset figure1 needs an \"interaction\"".into()),
            (PresetName::Logistic, None) => Ok(presets::logistic()),
            (PresetName::TwoType, None) => Ok(presets::two_type_interacting()),
            (_, Some(_)) => Err("model: \"interaction\" only applies to the figure1 preset".into()),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadySection {
    /// Starting points for Newton; defaults to `r0` and the terminal SCF value.
    #[serde(default)]
    pub guesses: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MasterSection {
    pub kappa: u32,
    pub initial: MasterInitial,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MasterInitial {
    /// All mass on one state.
    Point(Vec<u32>),
    /// Explicit `(state, probability)` pairs.
    States(Vec<WeightedState>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedState {
    pub y: Vec<u32>,
    pub p: f64,
}

impl MasterInitial {
    pub fn vector(&self, lattice: &TruncatedLattice) -> Result<Vec<f64>, String> {
        match self {
            MasterInitial::Point(y) => lattice.point_mass(y).map_err(|e| e.to_string()),
            MasterInitial::States(list) => {
                let mut v = vec![0.0; lattice.len()];
                for ws in list {
                    let s = lattice
                        .try_index(&ws.y)
                        .ok_or_else(|| format!("initial state {:?} is outside the lattice", ws.y))?;
                    v[s] += ws.p;
                }
                Ok(v)
            }
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub replicas: usize,
    #[serde(default)]
    pub seed: u64,
    pub initial: Initial,
    /// Number of evenly spaced checkpoints, or explicit times.
    #[serde(default)]
    pub checkpoints: Option<Checkpoints>,
    #[serde(default)]
    pub histogram: bool,
    #[serde(default)]
    pub max_events: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum Checkpoints {
    Count(usize),
    Times(Vec<f64>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoglikSection {
    /// Newick file, relative to the configuration file.
    #[serde(default)]
    pub tree: Option<PathBuf>,
    #[serde(default)]
    pub condition_on_observation: Option<bool>,
    #[serde(default)]
    pub fossil_uses_meanfield_rate: Option<bool>,
}

impl LoglikSection {
    pub fn options(&self, scf: ScfConfig) -> LoglikOptions {
        let mut o = LoglikOptions {
            scf,
            ..LoglikOptions::default()
        };
        if let Some(c) = self.condition_on_observation {
            o.condition_on_observation = c;
        }
        if let Some(f) = self.fossil_uses_meanfield_rate {
            o.fossil_uses_meanfield_rate = f;
        }
        o
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Number of evenly spaced output times, endpoints included.
    #[serde(default)]
    pub grid: Option<usize>,
}

pub fn load(path: &Path) -> Result<RunConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Relative paths in the file are taken from the file's directory.
pub fn relative_to(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}
