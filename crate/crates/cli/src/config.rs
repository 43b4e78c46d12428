//! Experiment configuration as read from JSON.

use std::path::{Path, PathBuf};

use corrnqs::ansatz::{
    auto_embedding_dim, Activation, Ansatz, CorrelatorTransformer, CqsArchitecture, FeedForward, FfnnArchitecture,
    HeadMode,
};
use corrnqs::hamiltonian::{build_ising, build_tfim, build_toric, HamiltonianSpec};
use corrnqs::lattice::{LatticeGeometry, SectorConstraint, DEFAULT_P_LOOP};
use corrnqs::vmc::{SamplerConfig, SrConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io, CliError, Context, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Train,
    Ed,
    EdCorr,
    Fourier,
    Sector,
    Figure,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Train => "train",
            Task::Ed => "ed",
            Task::EdCorr => "ed-corr",
            Task::Fourier => "fourier",
            Task::Sector => "sector",
            Task::Figure => "figure",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureName {
    Fig1a,
    Fig1b,
    Fig3,
    Fig4a,
    Fig4b,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Ising {
        lattice: LatticeGeometry,
    },
    Tfim {
        lattice: LatticeGeometry,
        hx: f64,
    },
    /// Toric code on a square-links lattice.
    Toric {
        lattice: LatticeGeometry,
        hx: f64,
        #[serde(default = "yes")]
        star: bool,
        #[serde(default = "yes")]
        plaquette: bool,
        /// Restrict every computation to the Gauss-law sector.
        #[serde(default = "yes")]
        gauss_law: bool,
    },
}

impl ModelConfig {
    pub fn geometry(&self) -> &LatticeGeometry {
        match self {
            ModelConfig::Ising { lattice } | ModelConfig::Tfim { lattice, .. } | ModelConfig::Toric { lattice, .. } => {
                lattice
            }
        }
    }

    pub fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        match self {
            ModelConfig::Ising { lattice } => build_ising(lattice),
            ModelConfig::Tfim { lattice, hx } => build_tfim(lattice, *hx),
            ModelConfig::Toric { lattice, hx, star, plaquette, .. } => build_toric(lattice, *hx, *star, *plaquette),
        }
        .context("building the Hamiltonian")
    }

    pub fn constraint(&self) -> SectorConstraint {
        match self {
            ModelConfig::Toric { gauss_law: true, .. } => SectorConstraint::GaussLaw,
            _ => SectorConstraint::None,
        }
    }
}

fn default_patch() -> usize {
    4
}

fn default_target() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AnsatzConfig {
    /// Correlator transformer with `n_lay` layers. Without `e_dim` the
    /// embedding is sized so the parameter count lands near `param_target`.
    Cqs {
        n_lay: usize,
        #[serde(default)]
        e_dim: Option<usize>,
        #[serde(default = "default_patch")]
        p_size: usize,
        #[serde(default)]
        head: HeadMode,
        #[serde(default = "default_target")]
        param_target: usize,
    },
    Ffnn {
        n_hidden: usize,
        activation: Activation,
        #[serde(default)]
        bias: bool,
    },
}

impl AnsatzConfig {
    pub fn build(&self, geometry: &LatticeGeometry, seed: u64) -> Result<Ansatz> {
        let l = geometry.num_spins();
        match *self {
            AnsatzConfig::Cqs { n_lay, e_dim, p_size, head, param_target } => {
                let e_dim = e_dim.unwrap_or_else(|| auto_embedding_dim(p_size, l, n_lay, param_target));
                let arch = CqsArchitecture { n_lay, e_dim, p_size, head };
                Ok(Ansatz::Cqs(CorrelatorTransformer::new(arch, geometry, seed).context("building the ansatz")?))
            }
            AnsatzConfig::Ffnn { n_hidden, activation, bias } => Ok(Ansatz::Ffnn(
                FeedForward::new(FfnnArchitecture { n_hidden, activation, bias }, l, seed)
                    .context("building the ansatz")?,
            )),
        }
    }
}

/// Markov chain settings; the chains are seeded from the experiment seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerBlock {
    pub n_chains: usize,
    pub burn_in: usize,
    pub stride: usize,
    pub samples: usize,
    pub p_loop: f64,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        SamplerBlock { n_chains: 128, burn_in: 20, stride: 1, samples: 512, p_loop: DEFAULT_P_LOOP }
    }
}

impl SamplerBlock {
    pub fn with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_chains: self.n_chains,
            burn_in: self.burn_in,
            stride: self.stride,
            samples: self.samples,
            seed,
            p_loop: self.p_loop,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMode {
    #[default]
    Sampled,
    FullSum,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present it must agree with the task given on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ansatz: Option<AnsatzConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr: Option<SrConfig>,
    #[serde(default)]
    pub estimation: EstimationMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Exact ground energy for relative errors; computed when omitted and
    /// the problem is small enough.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_energy: Option<f64>,
    /// Truncation orders for `ed-corr`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub orders: Vec<usize>,
    /// `ed-corr` over the independent links of the spanning tree.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub restricted: bool,
    /// Stored vector or parameter blob for `fourier`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub figure: Option<FigureName>,
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        ExperimentConfig {
            task: None,
            model: None,
            ansatz: None,
            sampler: None,
            sr: None,
            estimation: EstimationMode::Sampled,
            out: None,
            seed: 1,
            reference_energy: None,
            orders: Vec::new(),
            restricted: false,
            input: None,
            figure: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::Json { path: path.into(), source })
    }

    pub fn model(&self) -> Result<&ModelConfig> {
        self.model.as_ref().ok_or_else(|| CliError::Config("a model block is required".into()))
    }

    pub fn ansatz(&self) -> Result<&AnsatzConfig> {
        self.ansatz.as_ref().ok_or_else(|| CliError::Config("an ansatz block is required".into()))
    }

    /// Structural checks that do not need any computation.
    pub fn validate(&self, task: Task) -> Result<()> {
        if let Some(t) = self.task {
            if t != task {
                return Err(CliError::Config(format!("config is for task {}, not {}", t.name(), task.name())));
            }
        }
        match task {
            Task::Figure => {
                if self.figure.is_none() {
                    return Err(CliError::Config("figure needs a figure name".into()));
                }
            }
            Task::Train => {
                self.model()?;
                self.ansatz()?;
                self.sr.clone().unwrap_or_default().validate().context("sr block")?;
                self.sampler.clone().unwrap_or_default().with_seed(self.seed).validate().context("sampler block")?;
            }
            Task::EdCorr => {
                self.model()?;
                if self.orders.is_empty() {
                    return Err(CliError::Config("ed-corr needs a non-empty orders list".into()));
                }
            }
            Task::Ed | Task::Sector => {
                self.model()?;
            }
            Task::Fourier => {
                if self.input.is_none() {
                    self.model()?;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (keys sorted, no whitespace).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}
