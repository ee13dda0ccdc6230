//! Experiment configuration: environment family, policy pair, sampling
//! grid, pipeline presets, and the cell enumeration the runner and the
//! verifier share.

use prefqe_core::mdp::Policy;
use prefqe_core::net::{NetConfig, OptimizerConfig};
use prefqe_core::synthetic::{
    make_embedded_mdp, random_tabular_mdp, EmbeddedMdp, EnvConfig, EtaSampler,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment family a run draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvSpec {
    /// Latent tabular MDP embedded into an ambient space; the ambient
    /// dimension is swept by the grid.
    Embedded(EnvConfig),
    /// Random tabular MDP with one-hot embeddings and dyadic rewards.
    TabularRandom {
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        reward_resolution: u32,
        env_seed: u64,
    },
}

/// Policy described in the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicySpec {
    Uniform,
    /// Seeded random stochastic policy.
    Random {
        seed: u64,
    },
    /// Full action-probability table, probs[h-1][s][a].
    Explicit {
        probs: Vec<Vec<Vec<f64>>>,
    },
}

/// Candidate distribution for preference data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum EtaSpec {
    /// Occupancy of the behavior policy.
    #[default]
    BehaviorOccupancy,
    /// Occupancy of a separate exploration policy.
    Occupancy {
        policy: PolicySpec,
    },
    Uniform,
}

/// Sample-size and dimension sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k: Vec<usize>,
    pub k_hf: Vec<usize>,
    /// Ambient dimensions to sweep; required nonempty for embedded
    /// environments and empty for tabular ones (their dimension is fixed
    /// by the one-hot encoding).
    #[serde(default)]
    pub ambient_dims: Vec<usize>,
}

/// Network preset for one fitting stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum NetPreset {
    #[default]
    Default,
    /// Width and depth scale with the sample count and intrinsic dimension.
    RateScaled { alpha: f64 },
}

/// Optimizer settings without the seed, which the runner derives per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptSpec {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "default_cadence")]
    pub projection_cadence: usize,
}

fn default_cadence() -> usize {
    1
}

impl OptSpec {
    pub fn to_optimizer(&self, seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            projection_cadence: self.projection_cadence,
        }
    }
}

/// One trainable stage: architecture preset plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSpec {
    #[serde(default)]
    pub preset: NetPreset,
    pub opt: OptSpec,
}

/// Q-regression mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QSpec {
    Tabular,
    Net(FitSpec),
}

/// Pipeline stages as configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub reward: FitSpec,
    pub q: QSpec,
    #[serde(default)]
    pub holdout_fraction: f64,
}

/// Top-level experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub target_policy: PolicySpec,
    pub behavior_policy: PolicySpec,
    #[serde(default)]
    pub eta: EtaSpec,
    pub grid: GridSpec,
    pub seeds: Vec<u64>,
    pub pipeline: PipelineSpec,
    #[serde(default = "default_true")]
    pub emit_divergences: bool,
    #[serde(default)]
    pub probe_seed: u64,
    pub output_dir: String,
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            format!(
                "config parse error at line {}, column {}: {e}",
                e.line(),
                e.column()
            )
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Field-anchored semantic checks; the parse step already anchors
    /// syntax and shape errors to a line.
    pub fn validate(&self) -> Result<(), String> {
        // Empty axes are allowed and produce an empty grid; entries that are
        // present must be positive and distinct.
        for (name, axis) in [("grid.k", &self.grid.k), ("grid.k_hf", &self.grid.k_hf)] {
            if let Some(i) = axis.iter().position(|k| *k == 0) {
                return Err(format!(
                    "config field {name}[{i}]: entries must be positive"
                ));
            }
            for (i, k) in axis.iter().enumerate() {
                if axis[..i].contains(k) {
                    return Err(format!("config field {name}[{i}]: value {k} repeats"));
                }
            }
        }
        for (i, d) in self.grid.ambient_dims.iter().enumerate() {
            if self.grid.ambient_dims[..i].contains(d) {
                return Err(format!(
                    "config field grid.ambient_dims[{i}]: value {d} repeats"
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err("config field seeds: must be nonempty".to_string());
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return Err(format!("config field seeds[{i}]: seed {s} repeats"));
            }
        }
        match &self.env {
            EnvSpec::Embedded(cfg) => {
                if let Some(i) = self
                    .grid
                    .ambient_dims
                    .iter()
                    .position(|d| *d < cfg.intrinsic_dim)
                {
                    return Err(format!(
                        "config field grid.ambient_dims[{i}]: {} is below the intrinsic dimension {}",
                        self.grid.ambient_dims[i], cfg.intrinsic_dim
                    ));
                }
            }
            EnvSpec::TabularRandom {
                horizon,
                num_states,
                num_actions,
                ..
            } => {
                if !self.grid.ambient_dims.is_empty() {
                    return Err(
                        "config field grid.ambient_dims: must be empty for a tabular environment"
                            .to_string(),
                    );
                }
                if *horizon == 0 || *num_states == 0 || *num_actions == 0 {
                    return Err(
                        "config field env: horizon, num_states, num_actions must be positive"
                            .to_string(),
                    );
                }
            }
        }
        if !(0.0..1.0).contains(&self.pipeline.holdout_fraction) {
            return Err(format!(
                "config field pipeline.holdout_fraction: {} outside [0, 1)",
                self.pipeline.holdout_fraction
            ));
        }
        for (name, opt) in self.opt_specs() {
            if opt.learning_rate <= 0.0 || !opt.learning_rate.is_finite() {
                return Err(format!(
                    "config field {name}.learning_rate: must be positive"
                ));
            }
            if opt.batch_size == 0 || opt.epochs == 0 || opt.projection_cadence == 0 {
                return Err(format!(
                    "config field {name}: batch_size, epochs, projection_cadence must be positive"
                ));
            }
        }
        if self.output_dir.is_empty() {
            return Err("config field output_dir: must be nonempty".to_string());
        }
        Ok(())
    }

    fn opt_specs(&self) -> Vec<(&'static str, &OptSpec)> {
        let mut v = vec![("pipeline.reward.opt", &self.pipeline.reward.opt)];
        if let QSpec::Net(fit) = &self.pipeline.q {
            v.push(("pipeline.q.opt", &fit.opt));
        }
        v
    }

    /// Grid cells in canonical order: ambient dimension, then K, then K_HF.
    /// Any empty axis empties the whole grid.
    pub fn cells(&self) -> Vec<Cell> {
        let dims: Vec<Option<usize>> = match &self.env {
            EnvSpec::TabularRandom { .. } => vec![None],
            EnvSpec::Embedded(_) => self.grid.ambient_dims.iter().map(|d| Some(*d)).collect(),
        };
        let mut cells = Vec::new();
        for dim in &dims {
            for k in &self.grid.k {
                for k_hf in &self.grid.k_hf {
                    cells.push(Cell::new(self, *k, *k_hf, *dim));
                }
            }
        }
        cells
    }
}

/// One grid cell: a (K, K_HF, ambient dimension) combination with a stable
/// content hash that seeds the cell's generator streams and keys resumption.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub k: usize,
    pub k_hf: usize,
    pub ambient_dim: Option<usize>,
    pub hash: String,
}

impl Cell {
    fn new(config: &ExperimentConfig, k: usize, k_hf: usize, ambient_dim: Option<usize>) -> Self {
        #[derive(Serialize)]
        struct CellIdentity<'a> {
            env: &'a EnvSpec,
            target: &'a PolicySpec,
            behavior: &'a PolicySpec,
            eta: &'a EtaSpec,
            pipeline: &'a PipelineSpec,
            k: usize,
            k_hf: usize,
            ambient_dim: Option<usize>,
        }
        let identity = CellIdentity {
            env: &config.env,
            target: &config.target_policy,
            behavior: &config.behavior_policy,
            eta: &config.eta,
            pipeline: &config.pipeline,
            k,
            k_hf,
            ambient_dim,
        };
        let json = serde_json::to_string(&identity).expect("cell identity serializes");
        let digest = Sha256::digest(json.as_bytes());
        let hash = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Cell {
            k,
            k_hf,
            ambient_dim,
            hash,
        }
    }
}

/// Builds the environment for one cell.
pub fn build_env(spec: &EnvSpec, ambient_dim: Option<usize>) -> prefqe_core::Result<EmbeddedMdp> {
    match spec {
        EnvSpec::Embedded(cfg) => {
            let mut cfg = cfg.clone();
            if let Some(d) = ambient_dim {
                cfg.ambient_dim = d;
            }
            make_embedded_mdp(&cfg)
        }
        EnvSpec::TabularRandom {
            horizon,
            num_states,
            num_actions,
            reward_resolution,
            env_seed,
        } => Ok(EmbeddedMdp::tabular(random_tabular_mdp(
            *horizon,
            *num_states,
            *num_actions,
            *reward_resolution,
            *env_seed,
        ))),
    }
}

/// Builds a policy for an environment's shape.
pub fn build_policy(spec: &PolicySpec, env: &EmbeddedMdp) -> prefqe_core::Result<Policy> {
    let (hh, ss, aa) = (env.horizon(), env.num_states(), env.num_actions());
    match spec {
        PolicySpec::Uniform => Ok(Policy::uniform(hh, ss, aa)),
        PolicySpec::Random { seed } => Ok(Policy::seeded_random(hh, ss, aa, *seed)),
        PolicySpec::Explicit { probs } => Policy::from_table(probs.clone()),
    }
}

/// Builds the candidate sampler for preference data.
pub fn build_eta(
    spec: &EtaSpec,
    behavior: &Policy,
    env: &EmbeddedMdp,
) -> prefqe_core::Result<EtaSampler> {
    match spec {
        EtaSpec::BehaviorOccupancy => Ok(EtaSampler::Occupancy(behavior.clone())),
        EtaSpec::Occupancy { policy } => Ok(EtaSampler::Occupancy(build_policy(policy, env)?)),
        EtaSpec::Uniform => Ok(EtaSampler::Uniform),
    }
}

/// Network architecture for one stage of one cell.
pub fn build_net_config(
    preset: &NetPreset,
    stage_samples: usize,
    env: &EmbeddedMdp,
    q_stage: bool,
) -> NetConfig {
    let d_in = env.ambient_dim();
    match preset {
        NetPreset::Default => {
            if q_stage {
                NetConfig::q_default(d_in, env.horizon())
            } else {
                NetConfig::reward_default(d_in)
            }
        }
        NetPreset::RateScaled { alpha } => {
            let (lo, hi) = if q_stage {
                (-(env.horizon() as f64), env.horizon() as f64)
            } else {
                (0.0, 1.0)
            };
            NetConfig::rate_scaled(
                d_in,
                stage_samples,
                env.intrinsic_dim(),
                *alpha,
                8.0,
                lo,
                hi,
            )
        }
    }
}
