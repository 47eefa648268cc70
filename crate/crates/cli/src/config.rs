//! The single run configuration shared by every subcommand.

use std::path::Path;

use evload_core::features::FeatureOptions;
use evload_core::gridval::{LoadScaling, DEFAULT_MAX_ITER, DEFAULT_TOL};
use evload_core::spectral::{DEFAULT_MAX_PERIOD, DEFAULT_TOP_K};
use evload_core::synth::SynthConfig;
use evload_core::{Error, Result, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub ingest: IngestSection,
    pub features: FeatureOptions,
    pub analyze: AnalyzeSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub grid: GridSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub min_kwh: f64,
    /// Upper plausibility bound per interval. Required before preprocessing.
    pub max_kwh: Option<f64>,
    pub columns: evload_core::ingest::ColumnMapping,
}

impl Default for IngestSection {
    fn default() -> Self {
        Self {
            min_kwh: 0.0,
            max_kwh: None,
            columns: Default::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeSection {
    pub column: String,
    pub top_k: usize,
    pub max_period: f64,
    pub rolling_column: String,
    pub rolling_windows: Vec<usize>,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            column: "crr".into(),
            top_k: DEFAULT_TOP_K,
            max_period: DEFAULT_MAX_PERIOD,
            rolling_column: "na".into(),
            rolling_windows: vec![7, 14, 30],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub columns: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            columns: vec!["na".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSection {
    pub n_buses: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub scaling: LoadScaling,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            n_buses: 5,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            scaling: LoadScaling::default(),
        }
    }
}

impl RunConfig {
    /// Read TOML, or JSON when the file ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
        }
    }

    /// The `--seed` flag wins over the file, which wins over the default.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        let seed = flag.or(self.seed).unwrap_or(evload_core::DEFAULT_SEED);
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.train.seed = seed;
        seed
    }
}
