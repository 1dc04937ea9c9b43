use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dmft_core::approx::LazyErrorScheme;
use dmft_core::linear::LinearConfig;
use dmft_core::reference::MlpConfig;
use dmft_core::saddle::DmftConfig;
use dmft_core::TimeGrid;
use serde::{Deserialize, Serialize};

use crate::data::DataSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Dmft,
    Linear,
    TwoLayer,
    Static,
    GradIndep,
    Perturb,
    NnTrain,
    Compare,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Dmft => "dmft",
            Mode::Linear => "linear",
            Mode::TwoLayer => "two-layer",
            Mode::Static => "static",
            Mode::GradIndep => "grad-indep",
            Mode::Perturb => "perturb",
            Mode::NnTrain => "nn-train",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_steps: usize,
    pub dt: f64,
}

impl GridSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.n_steps, self.dt)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSpec {
    pub mlp: MlpConfig,
    /// Gradient steps per grid interval; the learning rate is `dt / steps_per_interval`.
    pub steps_per_interval: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { mlp: MlpConfig::default(), steps_per_interval: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSpec {
    pub gamma0s: Vec<f64>,
    #[serde(default)]
    pub scheme: SchemeName,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    #[default]
    Exact,
    Euler,
}

impl From<SchemeName> for LazyErrorScheme {
    fn from(s: SchemeName) -> Self {
        match s {
            SchemeName::Exact => LazyErrorScheme::Exact,
            SchemeName::Euler => LazyErrorScheme::Euler,
        }
    }
}

/// One experiment, as read from its JSON file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub grid: GridSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub dmft: DmftConfig,
    #[serde(default)]
    pub linear: LinearConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Read a config file and resolve every relative path in it against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.data.resolve_paths(base);
        cfg.output = Some(base.join(cfg.output.take().unwrap_or_else(|| PathBuf::from("out"))));
        Ok(cfg)
    }

    /// Set every solver and network seed.
    pub fn override_seed(&mut self, seed: u64) {
        self.dmft.seed = seed;
        if let Some(net) = &mut self.network {
            net.mlp.seed = seed;
        }
    }

    /// Mode-specific checks that must pass before any compute starts.
    pub fn validate(&self) -> Result<()> {
        self.grid.grid()?;
        self.data.validate()?;
        match self.mode {
            Mode::Dmft | Mode::GradIndep | Mode::Static => self.dmft.validate()?,
            Mode::Linear | Mode::TwoLayer => self.linear.validate()?,
            Mode::Perturb => {
                self.linear.validate()?;
                let Some(p) = &self.perturb else { bail!("mode perturb needs a \"perturb\" section") };
                if p.gamma0s.is_empty() || p.gamma0s.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
                    bail!("perturb.gamma0s must be a non-empty list of positive numbers");
                }
            }
            Mode::NnTrain | Mode::Compare => {
                let Some(net) = &self.network else { bail!("mode {} needs a \"network\" section", self.mode.name()) };
                net.mlp.validate()?;
                if net.steps_per_interval == 0 {
                    bail!("network.steps_per_interval must be positive");
                }
                if self.mode == Mode::Compare {
                    self.dmft.validate()?;
                    if (net.mlp.depth, net.mlp.gamma0, net.mlp.activation) != (self.dmft.depth, self.dmft.gamma0, self.dmft.activation) {
                        bail!("compare needs the network and the DMFT solver to share depth, gamma0 and activation");
                    }
                }
            }
        }
        Ok(())
    }
}
