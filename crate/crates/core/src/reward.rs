//! Stage one of the pipeline: per-step reward fitting by maximum likelihood
//! on softmax choice data, followed by anchor normalization.
//!
//! Each step's network is trained independently on that step's preference
//! slice. The learned evaluator subtracts a cached evaluation at the
//! anchor pair, so the normalized reward at the anchor is exactly zero.

use crate::net::{ChoiceItem, LossBatch, NetConfig, OptimizerConfig, ReluNetwork};
use crate::seeding::derive_seed;
use crate::synthetic::{EmbeddedMdp, PreferenceDataset};
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::io::Write;

/// Per-step reward networks with anchor offsets. The normalized evaluator
/// is net output minus the stored offset; at the anchor pair the two terms
/// are the same evaluation, so the difference is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedReward {
    nets: Vec<ReluNetwork>,
    anchors: Vec<(usize, usize)>,
    offsets: Vec<f64>,
}

impl LearnedReward {
    pub fn horizon(&self) -> usize {
        self.nets.len()
    }

    pub fn net(&self, h: usize) -> &ReluNetwork {
        &self.nets[h - 1]
    }

    pub fn anchor_pair(&self, h: usize) -> (usize, usize) {
        self.anchors[h - 1]
    }

    /// The cached anchor evaluation c_h.
    pub fn anchor_offset(&self, h: usize) -> f64 {
        self.offsets[h - 1]
    }

    /// Normalized reward at an embedded point.
    pub fn evaluate_embedded(&self, h: usize, x: &[f64]) -> f64 {
        self.nets[h - 1].forward(x) - self.offsets[h - 1]
    }

    /// Normalized reward at a latent pair.
    pub fn evaluate(&self, env: &EmbeddedMdp, h: usize, s: usize, a: usize) -> f64 {
        self.evaluate_embedded(h, env.embedding(s, a))
    }

    /// JSON checkpoint: per-step network checkpoints plus anchors and
    /// offsets.
    pub fn to_checkpoint_json(&self) -> Result<String> {
        let nets: Vec<serde_json::Value> = self
            .nets
            .iter()
            .map(|n| Ok(serde_json::from_str(&n.to_checkpoint_json())?))
            .collect::<Result<_>>()?;
        let doc = serde_json::json!({
            "version": 1,
            "anchors": self.anchors,
            "offsets": self.offsets,
            "nets": nets,
        });
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: serde_json::Value = serde_json::from_str(text)?;
        let version = doc["version"].as_u64();
        if version != Some(1) {
            return Err(Error::Format {
                context: "reward checkpoint",
                detail: format!("unsupported version {version:?}"),
            });
        }
        let anchors: Vec<(usize, usize)> = serde_json::from_value(doc["anchors"].clone())?;
        let offsets: Vec<f64> = serde_json::from_value(doc["offsets"].clone())?;
        let nets_json = doc["nets"].as_array().ok_or(Error::Format {
            context: "reward checkpoint",
            detail: "nets must be an array".to_string(),
        })?;
        let nets: Vec<ReluNetwork> = nets_json
            .iter()
            .map(|v| ReluNetwork::from_checkpoint_json(&serde_json::to_string(v)?))
            .collect::<Result<_>>()?;
        if nets.len() != anchors.len() || nets.len() != offsets.len() || nets.is_empty() {
            return Err(Error::Format {
                context: "reward checkpoint",
                detail: "nets, anchors, offsets must have equal nonzero lengths".to_string(),
            });
        }
        Ok(LearnedReward {
            nets,
            anchors,
            offsets,
        })
    }
}

/// Groups a step's preference samples by (cand0, cand1, label) so repeated
/// triples become one weighted item. The weighted likelihood is identical;
/// training cost drops from K_HF to the number of distinct triples.
fn grouped_choice_items(env: &EmbeddedMdp, prefs: &PreferenceDataset, h: usize) -> Vec<ChoiceItem> {
    let mut counts: BTreeMap<(usize, usize, usize, usize, usize), f64> = BTreeMap::new();
    for p in &prefs.per_step[h - 1] {
        *counts
            .entry((p.cand0.0, p.cand0.1, p.cand1.0, p.cand1.1, p.label))
            .or_insert(0.0) += 1.0;
    }
    let (sf, af) = env.anchor_pair(h);
    let anchor_x = env.embedding(sf, af).to_vec();
    counts
        .into_iter()
        .map(|((s0, a0, s1, a1, label), weight)| ChoiceItem {
            xs: [
                env.embedding(s0, a0).to_vec(),
                env.embedding(s1, a1).to_vec(),
                anchor_x.clone(),
            ],
            label,
            weight,
        })
        .collect()
}

/// Fits one reward network per step by minimizing the choice negative
/// log-likelihood on that step's slice, then caches the anchor evaluation.
/// Deterministic per seed; steps use derived, independent streams.
pub fn fit_reward(
    env: &EmbeddedMdp,
    prefs: &PreferenceDataset,
    net_config: &NetConfig,
    opt: &OptimizerConfig,
) -> Result<LearnedReward> {
    if prefs.per_step.len() != env.horizon() {
        return Err(Error::Dimension {
            context: "preference dataset",
            detail: format!(
                "covers {} steps, environment horizon is {}",
                prefs.per_step.len(),
                env.horizon()
            ),
        });
    }
    if net_config.input_dim != env.ambient_dim() {
        return Err(Error::Dimension {
            context: "reward net input",
            detail: format!(
                "input dim {}, embedded dim {}",
                net_config.input_dim,
                env.ambient_dim()
            ),
        });
    }
    let mut nets = Vec::with_capacity(env.horizon());
    let mut anchors = Vec::with_capacity(env.horizon());
    let mut offsets = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        if prefs.per_step[h - 1].is_empty() {
            return Err(Error::Empty {
                what: "preference step slice",
            });
        }
        let items = grouped_choice_items(env, prefs, h);
        let init = ReluNetwork::new(
            net_config,
            derive_seed(opt.seed, &format!("reward-net-h{h}")),
        );
        let mut opt_h = opt.clone();
        opt_h.seed = derive_seed(opt.seed, &format!("reward-train-h{h}"));
        let trained = crate::net::train(init, &LossBatch::Choice(&items), &opt_h)
            .map_err(|e| stage_error("reward fit", h, e))?;
        let (sf, af) = env.anchor_pair(h);
        let offset = trained.forward(env.embedding(sf, af));
        nets.push(trained);
        anchors.push((sf, af));
        offsets.push(offset);
    }
    Ok(LearnedReward {
        nets,
        anchors,
        offsets,
    })
}

fn stage_error(stage: &str, h: usize, e: Error) -> Error {
    match e {
        Error::Diverged { context, loss } => Error::Diverged {
            context: format!("{stage} step {h}: {context}"),
            loss,
        },
        other => other,
    }
}

/// Empirical mean squared deviation between two reward evaluators on a
/// sample of pairs, with the standard error of the mean.
pub fn reward_mse(
    learned: &dyn Fn(usize, usize) -> f64,
    truth: &dyn Fn(usize, usize) -> f64,
    samples: &[(usize, usize)],
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty {
            what: "reward MSE sample set",
        });
    }
    let n = samples.len() as f64;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, (s, a)) in samples.iter().enumerate() {
        let d = learned(*s, *a) - truth(*s, *a);
        let sq = d * d;
        let delta = sq - mean;
        mean += delta / (i as f64 + 1.0);
        m2 += delta * (sq - mean);
    }
    let var = if samples.len() > 1 {
        m2 / (n - 1.0)
    } else {
        0.0
    };
    Ok((mean, (var / n).sqrt()))
}

/// One metrics row per (step, seed) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardMetricsRow {
    pub h: usize,
    pub seed: u64,
    pub k_hf: usize,
    pub reward_mse: f64,
    pub stderr: f64,
    pub nonzeros: usize,
}

/// CSV schema: h,seed,K_HF,reward_mse,stderr,nonzeros.
pub fn write_reward_metrics_csv<W: Write>(rows: &[RewardMetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["h", "seed", "K_HF", "reward_mse", "stderr", "nonzeros"])?;
    for r in rows {
        w.write_record(&[
            r.h.to_string(),
            r.seed.to_string(),
            r.k_hf.to_string(),
            format!("{}", r.reward_mse),
            format!("{}", r.stderr),
            r.nonzeros.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
