//! Run configuration: one JSON document, overridden by command-line flags.

use std::path::{Path, PathBuf};

use freezeout::freezing::{Bins, DEFAULT_BAND};
use freezeout::models::ModelConfig;
use freezeout::trajectory::UnravelingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Trajectory,
    Ensemble,
    SweepGamma,
    Spectrum,
    SteadyStates,
    DetectTraceless,
    ValidateModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub unraveling: UnravelingConfig,
    /// Filled in from the subcommand.
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_n_traj")]
    pub n_traj: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub emission: Emission,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub spectral: Spectral,
}

fn default_n_traj() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Emission {
    pub bins: Bins,
    /// Times at which ensemble coherence matrices are written; `t_max` if empty.
    pub snapshot_times: Vec<f64>,
    /// Log-weight band for non-freezing pairs.
    pub band: f64,
    /// Track evolution products for `singulars.csv`.
    pub singulars: bool,
}

impl Default for Emission {
    fn default() -> Self {
        Self { bins: Bins::default(), snapshot_times: Vec::new(), band: DEFAULT_BAND, singulars: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub gammas: Vec<f64>,
    /// Subspaces the ensembles start across.
    pub pair: (usize, usize),
    /// Sector whose gap is reported, if not `pair`.
    #[serde(default)]
    pub gap_pair: Option<(usize, usize)>,
    #[serde(default = "default_gap_multiple")]
    pub t_max_gap_multiple: f64,
    #[serde(default = "default_fit_range")]
    pub fit_range: (f64, f64),
    #[serde(default = "default_gap_tol")]
    pub gap_tol: f64,
    /// Constant to compare the fitted one against.
    #[serde(default)]
    pub reference_c: Option<f64>,
}

fn default_gap_multiple() -> f64 {
    300.0
}

fn default_fit_range() -> (f64, f64) {
    (0.05, 0.5)
}

fn default_gap_tol() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Spectral {
    /// Sector tolerance relative to the spectral radius.
    pub rel_tol: Option<f64>,
    /// Sectors to diagonalize; all `alpha <= alpha'` if absent.
    pub pairs: Option<Vec<(usize, usize)>>,
    /// Largest sector (`d_alpha * d_alpha'`) the traceless oracle will take on.
    pub max_sector_dim: usize,
    pub steady_tol: f64,
    pub similarity_tol: f64,
}

impl Default for Spectral {
    fn default() -> Self {
        Self { rel_tol: None, pairs: None, max_sector_dim: 2500, steady_tol: 1e-10, similarity_tol: 1e-10 }
    }
}

/// Flag values; each one set replaces the config field.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub n_traj: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("bad config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides, experiment: Experiment) {
        if let Some(s) = o.seed {
            self.unraveling.seed = s;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(n) = o.n_traj {
            self.n_traj = n;
        }
        if let Some(t) = o.threads {
            self.threads = Some(t);
        }
        self.experiment = Some(experiment);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.unraveling.validate()?;
        if self.n_traj == 0 {
            return Err(CliError::config("n_traj must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(CliError::config("threads must be at least 1"));
        }
        if !(self.emission.band > 0.0) {
            return Err(CliError::config("emission.band must be positive"));
        }
        Ok(())
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    /// Canonical one-line serialization, as embedded in every artifact.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
