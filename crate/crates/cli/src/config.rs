use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mrdib_core::{Error, Result};

/// The canonical hyperparameter grid for the loss coefficients.
pub const ALPHA_GRID: [f64; 5] = [0.0001, 0.001, 0.005, 0.01, 0.05];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub interactions: PathBuf,
    pub visual_features: PathBuf,
    pub textual_features: PathBuf,
    pub output_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields, default)]
pub struct DimsCfg {
    pub d: usize,
    pub hidden: usize,
    pub mine_hidden: usize,
}

impl Default for DimsCfg {
    fn default() -> Self {
        DimsCfg {
            d: 64,
            hidden: 256,
            mine_hidden: 128,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Alphas {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerCfg {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub k_negatives: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub mine_steps_per_model_step: usize,
}

impl Default for OptimizerCfg {
    fn default() -> Self {
        OptimizerCfg {
            learning_rate: 1e-3,
            batch_size: 2048,
            k_negatives: 4,
            max_epochs: 200,
            patience: 20,
            mine_steps_per_model_step: 1,
        }
    }
}

/// Which parts of the architecture and objective a run uses.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    #[default]
    Full,
    MibOnly,
    HostOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub dims: DimsCfg,
    #[serde(default)]
    pub alphas: Alphas,
    #[serde(default)]
    pub optimizer: OptimizerCfg,
    pub seed: u64,
    #[serde(default)]
    pub mode: RunMode,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphas.alpha1 < 0.0 || self.alphas.alpha2 < 0.0 || self.alphas.alpha3 < 0.0 {
            return Err(Error::Config("alphas must be non-negative".to_string()));
        }
        if self.dims.d == 0 || self.dims.hidden == 0 || self.dims.mine_hidden == 0 {
            return Err(Error::Config("dims must be positive".to_string()));
        }
        let o = &self.optimizer;
        if o.learning_rate <= 0.0
            || o.batch_size == 0
            || o.k_negatives == 0
            || o.max_epochs == 0
            || o.mine_steps_per_model_step == 0
        {
            return Err(Error::Config("optimizer settings must be positive".to_string()));
        }
        Ok(())
    }

    /// Loss weights as the mode interprets them: mib-only zeroes the
    /// disentanglement terms, host-only runs the bare reconstruction loss.
    pub fn effective_weights(&self) -> mrdib_core::objectives::LossWeights {
        use mrdib_core::objectives::LossWeights;
        let w = match self.mode {
            RunMode::Full => LossWeights::new(
                self.alphas.alpha1,
                self.alphas.alpha2,
                self.alphas.alpha3,
            ),
            RunMode::MibOnly => LossWeights::new(self.alphas.alpha1, 0.0, 0.0),
            RunMode::HostOnly => LossWeights::zeros(),
        };
        w.with_mine_steps(self.optimizer.mine_steps_per_model_step)
    }

    pub fn with_stack(&self) -> bool {
        self.mode != RunMode::HostOnly
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Grid specification for `sweep`: per coefficient, the set of values to
/// try. A missing or empty axis keeps the config's value fixed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub alpha1: Vec<f64>,
    pub alpha2: Vec<f64>,
    pub alpha3: Vec<f64>,
}

impl SweepSpec {
    pub fn load(path: &Path) -> Result<SweepSpec> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SweepSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for v in spec
            .alpha1
            .iter()
            .chain(&spec.alpha2)
            .chain(&spec.alpha3)
        {
            if *v < 0.0 {
                return Err(Error::Config("grid values must be non-negative".to_string()));
            }
        }
        Ok(spec)
    }

    /// The full cartesian product over the three axes given a base config.
    pub fn points(&self, base: &Alphas) -> Vec<Alphas> {
        let axis = |vals: &[f64], fallback: f64| -> Vec<f64> {
            if vals.is_empty() {
                vec![fallback]
            } else {
                vals.to_vec()
            }
        };
        let a1s = axis(&self.alpha1, base.alpha1);
        let a2s = axis(&self.alpha2, base.alpha2);
        let a3s = axis(&self.alpha3, base.alpha3);
        let mut out = Vec::new();
        for &alpha1 in &a1s {
            for &alpha2 in &a2s {
                for &alpha3 in &a3s {
                    out.push(Alphas {
                        alpha1,
                        alpha2,
                        alpha3,
                    });
                }
            }
        }
        out
    }
}
