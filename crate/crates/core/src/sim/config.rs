//! Run configuration. Serialized as TOML; every field has a default, so a
//! config file only needs the keys it changes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::CreationConfig;
use crate::error::{Error, Result};
use crate::genmodel::{HyperParams, PretrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithCreation,
    WithoutCreation,
}

impl Condition {
    pub fn creates(self) -> bool {
        matches!(self, Condition::WithCreation)
    }

    pub fn label(self) -> &'static str {
        match self {
            Condition::WithCreation => "with_creation",
            Condition::WithoutCreation => "without_creation",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with" | "with_creation" => Ok(Condition::WithCreation),
            "without" | "without_creation" => Ok(Condition::WithoutCreation),
            other => Err(Error::Config {
                key: "condition".into(),
                msg: format!("expected `with` or `without`, got `{other}`"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    pub n_cliques: usize,
    pub clique_size: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            n_cliques: 2,
            clique_size: 7,
        }
    }
}

/// Initial memory: agent `k` of `K` gets `capacity` draws from
/// `N(c_k, init_std²·I)` with `c_k` at angle `2πk/K` on a circle of radius `init_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub capacity: usize,
    pub init_radius: f64,
    pub init_std: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            capacity: 7000,
            init_radius: 2.0,
            init_std: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub lambda: f64,
    pub beta: f64,
    pub tau: f64,
    pub mc_samples: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let hp = HyperParams::default();
        ModelConfig {
            hidden: vec![64, 64],
            lambda: hp.lambda,
            beta: hp.beta,
            tau: hp.tau,
            mc_samples: hp.mc_samples,
        }
    }
}

impl ModelConfig {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            lambda: self.lambda,
            beta: self.beta,
            tau: self.tau,
            mc_samples: self.mc_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommunicationConfig {
    /// Artifacts each agent creates per step.
    pub creations_per_step: usize,
    /// Memory draws each side contributes to a joint observation set.
    pub memory_samples: usize,
}

impl Default for CommunicationConfig {
    fn default() -> Self {
        CommunicationConfig {
            creations_per_step: 6,
            memory_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub iterations: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            iterations: 5,
            lr: 1e-5,
            batch_size: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoggingConfig {
    /// Parameters and memory subsamples every this many steps.
    pub snapshot_interval: usize,
    pub snapshot_subsample: usize,
    /// Full memory dumps every this many steps (0 disables).
    pub full_buffer_interval: usize,
    /// Memory subsample size for the per-step RSA statistic.
    pub rsa_sample: usize,
}

impl Default for LoggingConfig {
    fn default() -> Self {
        LoggingConfig {
            snapshot_interval: 50,
            snapshot_subsample: 1000,
            full_buffer_interval: 500,
            rsa_sample: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub steps: usize,
    pub condition: Condition,
    pub graph: GraphConfig,
    pub memory: MemoryConfig,
    pub model: ModelConfig,
    pub communication: CommunicationConfig,
    pub update: UpdateConfig,
    pub creation: CreationConfig,
    pub pretrain: PretrainConfig,
    pub logging: LoggingConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            steps: 5000,
            condition: Condition::WithCreation,
            graph: GraphConfig::default(),
            memory: MemoryConfig::default(),
            model: ModelConfig::default(),
            communication: CommunicationConfig::default(),
            update: UpdateConfig::default(),
            creation: CreationConfig::default(),
            pretrain: PretrainConfig::default(),
            logging: LoggingConfig::default(),
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn positive_int(key: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(bad(key, "must be positive"));
    }
    Ok(())
}

fn positive_real(key: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0) {
        return Err(bad(key, format!("must be a positive finite number, got {v}")));
    }
    Ok(())
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| {
            let span = e.message().to_string();
            Error::Parse {
                what: "config".into(),
                msg: span,
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_cliques * self.graph.clique_size
    }

    pub fn validate(&self) -> Result<()> {
        positive_int("steps", self.steps)?;
        if self.graph.n_cliques < 2 {
            return Err(bad("graph.n_cliques", "must be at least 2"));
        }
        if self.graph.clique_size < 3 {
            return Err(bad("graph.clique_size", "must be at least 3"));
        }
        positive_int("memory.capacity", self.memory.capacity)?;
        positive_real("memory.init_radius", self.memory.init_radius)?;
        positive_real("memory.init_std", self.memory.init_std)?;
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(bad("model.hidden", "needs at least one positive layer width"));
        }
        positive_real("model.lambda", self.model.lambda)?;
        positive_real("model.beta", self.model.beta)?;
        positive_real("model.tau", self.model.tau)?;
        positive_int("model.mc_samples", self.model.mc_samples)?;
        positive_int(
            "communication.creations_per_step",
            self.communication.creations_per_step,
        )?;
        positive_int("communication.memory_samples", self.communication.memory_samples)?;
        positive_int("update.iterations", self.update.iterations)?;
        positive_real("update.lr", self.update.lr)?;
        positive_int("update.batch_size", self.update.batch_size)?;
        positive_int("creation.steps", self.creation.steps)?;
        positive_real("creation.lr", self.creation.lr)?;
        positive_int("pretrain.batch_size", self.pretrain.batch_size)?;
        positive_real("pretrain.lr", self.pretrain.lr)?;
        positive_int("logging.snapshot_interval", self.logging.snapshot_interval)?;
        positive_int("logging.snapshot_subsample", self.logging.snapshot_subsample)?;
        if self.logging.rsa_sample < 3 {
            return Err(bad("logging.rsa_sample", "must be at least 3"));
        }
        Ok(())
    }

    /// Center of agent `k`'s initial memory.
    pub fn init_center(&self, k: usize) -> [f64; 2] {
        let angle = 2.0 * std::f64::consts::PI * k as f64 / self.n_agents() as f64;
        [
            self.memory.init_radius * angle.cos(),
            self.memory.init_radius * angle.sin(),
        ]
    }
}
