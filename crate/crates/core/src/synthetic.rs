//! Synthetic environment families and the two datasets the pipeline
//! consumes.
//!
//! A generated environment is a tabular latent MDP whose state-action pairs
//! are embedded into a higher-dimensional ambient space by a random
//! orthonormal frame composed with a smooth distortion. Rewards factor
//! through a smooth low-dimensional feature map and are rescaled into [0,1]
//! with the anchor pair's reward exactly zero. A tabular wrapper embeds
//! state-action pairs as one-hot vectors instead, which keeps every
//! downstream quantity exactly analyzable.

use crate::mdp::{visitation_distribution, Initial, Policy, TabularMdp};
use crate::preference::{choice_probabilities, sample_choice};
use crate::seeding::{rng_for, sample_categorical};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};

/// Anchor placement: the per-step reward argmin, or a fixed pair whose
/// reward is shifted to zero (values below it clip to zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AnchorChoice {
    ArgminPerStep,
    Fixed(usize, usize),
}

/// Initial-state condition for generated environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialChoice {
    FixedState(usize),
    UniformStates,
}

/// Generation knobs for an embedded environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub horizon: usize,
    pub num_states: usize,
    pub num_actions: usize,
    /// Latent dimension d of the state-action coordinates.
    pub intrinsic_dim: usize,
    /// Ambient dimension D of the embedded representation.
    pub ambient_dim: usize,
    /// Dimension of the reward feature map (at most intrinsic_dim).
    pub feature_dim: usize,
    /// Amplitude of the smooth coordinate distortion; keep well below 1 so
    /// the embedding stays injective.
    pub smoothness: f64,
    /// Scale of the log-weights behind each transition row; 0 gives uniform
    /// rows, larger values concentrate them.
    pub transition_concentration: f64,
    /// Required minimum pairwise distance between embedded points.
    pub embed_gap: f64,
    /// Bound B on the absolute value of embedded coordinates.
    pub coordinate_bound: f64,
    /// Bound on the reward feature coordinates.
    pub feature_bound: f64,
    /// Skip frame and distortion entirely; requires intrinsic_dim ==
    /// ambient_dim.
    pub identity_embedding: bool,
    pub anchor: AnchorChoice,
    pub initial: InitialChoice,
    pub seed: u64,
}

impl EnvConfig {
    pub fn small(seed: u64) -> Self {
        EnvConfig {
            horizon: 3,
            num_states: 5,
            num_actions: 3,
            intrinsic_dim: 2,
            ambient_dim: 6,
            feature_dim: 2,
            smoothness: 0.05,
            transition_concentration: 1.0,
            embed_gap: 1e-3,
            coordinate_bound: 1.0,
            feature_bound: 1.0,
            identity_embedding: false,
            anchor: AnchorChoice::ArgminPerStep,
            initial: InitialChoice::FixedState(0),
            seed,
        }
    }
}

/// How an environment came to be; recorded in dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EnvDescriptor {
    Generated(EnvConfig),
    Tabular {
        horizon: usize,
        num_states: usize,
        num_actions: usize,
    },
}

/// A latent tabular MDP together with an injective embedding of its
/// state-action pairs and the factorized reward's feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedMdp {
    latent: TabularMdp,
    descriptor: EnvDescriptor,
    intrinsic_dim: usize,
    ambient_dim: usize,
    feature_dim: usize,
    /// Latent coordinates u(s,a), flat-indexed by s * A + a.
    latent_coords: Vec<Vec<f64>>,
    /// Embedded coordinates x(s,a), flat-indexed by s * A + a.
    embed: Vec<Vec<f64>>,
    /// Reward features psi_h(s,a): [h-1][s * A + a].
    features: Vec<Vec<Vec<f64>>>,
    /// Realized minimum pairwise embedded distance.
    min_gap: f64,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random orthonormal D x d frame by Gram-Schmidt on Gaussian columns.
fn orthonormal_frame(ambient: usize, intrinsic: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(intrinsic);
    while cols.len() < intrinsic {
        let mut v: Vec<f64> = (0..ambient).map(|_| normal(rng)).collect();
        for c in &cols {
            let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(c) {
                *vi -= dot * ci;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            for vi in &mut v {
                *vi /= norm;
            }
            cols.push(v);
        }
    }
    cols
}

fn renormalize_row(row: &mut [f64]) {
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    let sum2: f64 = row.iter().sum();
    let last = row.len() - 1;
    row[last] += 1.0 - sum2;
}

/// Seeded random tabular MDP with rewards on a dyadic grid (multiples of
/// 1/resolution) and the anchor planted at the per-step reward argmin.
pub fn random_tabular_mdp(
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    reward_resolution: u32,
    seed: u64,
) -> TabularMdp {
    let mut rng = rng_for(seed, "tabular-env");
    let res = f64::from(reward_resolution);
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut anchor = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut ptab = vec![vec![vec![0.0; num_states]; num_actions]; num_states];
        let mut rtab = vec![vec![0.0; num_actions]; num_states];
        let mut amin = (0usize, 0usize);
        let mut rmin = f64::INFINITY;
        for s in 0..num_states {
            for a in 0..num_actions {
                for sp in 0..num_states {
                    ptab[s][a][sp] = -(rng.random::<f64>().max(1e-300)).ln();
                }
                renormalize_row(&mut ptab[s][a]);
                let r = (rng.random::<f64>() * res).floor() / res;
                rtab[s][a] = r;
                if r < rmin {
                    rmin = r;
                    amin = (s, a);
                }
            }
        }
        rtab[amin.0][amin.1] = 0.0;
        transitions.push(ptab);
        rewards.push(rtab);
        anchor.push(amin);
    }
    TabularMdp::new(
        horizon,
        num_states,
        num_actions,
        transitions,
        rewards,
        Initial::Fixed(0),
        anchor,
    )
    .expect("generated tabular mdp is valid")
}

/// Builds a generated environment: latent points on a jittered grid, smooth
/// distortion, random orthonormal frame, factorized smooth rewards rescaled
/// into [0,1] and anchored at zero. Deterministic per config.
pub fn make_embedded_mdp(config: &EnvConfig) -> Result<EmbeddedMdp> {
    let d = config.intrinsic_dim;
    let dd = config.ambient_dim;
    if d == 0 || d > dd {
        return Err(Error::Dimension {
            context: "embedding",
            detail: format!("intrinsic dim {d} must be in 1..=ambient dim {dd}"),
        });
    }
    if config.feature_dim == 0 || config.feature_dim > d {
        return Err(Error::Dimension {
            context: "reward factorization",
            detail: format!(
                "feature dim {} must be in 1..=intrinsic dim {d}",
                config.feature_dim
            ),
        });
    }
    if config.identity_embedding && d != dd {
        return Err(Error::Dimension {
            context: "identity embedding",
            detail: format!("requires intrinsic dim {d} == ambient dim {dd}"),
        });
    }
    let (hh, ss, aa) = (config.horizon, config.num_states, config.num_actions);
    let n = ss * aa;

    // Latent coordinates: each pair gets its own cell of a d-dimensional
    // grid, jittered within the cell, so distinct pairs stay separated.
    let mut rng = rng_for(config.seed, "latent-coords");
    let side = (n as f64).powf(1.0 / d as f64).ceil() as usize;
    let side = side.max(2);
    let mut cells: Vec<usize> = (0..side.pow(d as u32)).collect();
    for i in (1..cells.len()).rev() {
        let j = rng.random_range(0..=i);
        cells.swap(i, j);
    }
    let mut latent_coords = Vec::with_capacity(n);
    for idx in 0..n {
        let mut cell = cells[idx];
        let mut u = Vec::with_capacity(d);
        for _ in 0..d {
            let c = cell % side;
            cell /= side;
            u.push((c as f64 + 0.25 + 0.5 * rng.random::<f64>()) / side as f64);
        }
        latent_coords.push(u);
    }

    // Embedding: smooth distortion then orthonormal frame, rescaled to the
    // coordinate bound.
    let mut rng_e = rng_for(config.seed, "embedding");
    let embed: Vec<Vec<f64>> = if config.identity_embedding {
        latent_coords.clone()
    } else {
        let freq: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| rng_e.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let phase: Vec<f64> = (0..d).map(|_| rng_e.random::<f64>()).collect();
        let frame = orthonormal_frame(dd, d, &mut rng_e);
        latent_coords
            .iter()
            .map(|u| {
                let g: Vec<f64> = (0..d)
                    .map(|i| {
                        let arg: f64 =
                            freq[i].iter().zip(u).map(|(w, ui)| w * ui).sum::<f64>() + phase[i];
                        u[i] + config.smoothness * (std::f64::consts::TAU * arg).sin()
                    })
                    .collect();
                (0..dd)
                    .map(|row| (0..d).map(|col| frame[col][row] * g[col]).sum())
                    .collect()
            })
            .collect()
    };
    let max_coord = embed.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if max_coord > config.coordinate_bound {
        config.coordinate_bound / max_coord
    } else {
        1.0
    };
    let embed: Vec<Vec<f64>> = embed
        .into_iter()
        .map(|x| x.into_iter().map(|v| v * scale).collect())
        .collect();

    let mut min_gap = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let dist: f64 = embed[i]
                .iter()
                .zip(&embed[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist < min_gap {
                min_gap = dist;
            }
            if dist < config.embed_gap {
                return Err(Error::EmbeddingGap {
                    i,
                    j,
                    dist,
                    gap: config.embed_gap,
                });
            }
        }
    }

    // Transitions: softmax of Gaussian log-weights at the configured
    // concentration.
    let mut rng_t = rng_for(config.seed, "transitions");
    let mut transitions = Vec::with_capacity(hh);
    for _ in 0..hh {
        let mut ptab = vec![vec![vec![0.0; ss]; aa]; ss];
        for s in 0..ss {
            for a in 0..aa {
                for sp in 0..ss {
                    ptab[s][a][sp] = (config.transition_concentration * normal(&mut rng_t)).exp();
                }
                renormalize_row(&mut ptab[s][a]);
            }
        }
        transitions.push(ptab);
    }

    // Rewards factor through a smooth feature map psi_h into [0,
    // feature_bound]^feature_dim and a smooth head, then min-max rescale to
    // [0,1] and shift the anchor to exactly zero.
    let mut rng_r = rng_for(config.seed, "rewards");
    let dt = config.feature_dim;
    let bp = config.feature_bound;
    let mut rewards = Vec::with_capacity(hh);
    let mut features = Vec::with_capacity(hh);
    let mut anchors = Vec::with_capacity(hh);
    for _ in 0..hh {
        let psi_freq: Vec<Vec<f64>> = (0..dt)
            .map(|_| (0..d).map(|_| rng_r.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let psi_phase: Vec<f64> = (0..dt).map(|_| rng_r.random::<f64>()).collect();
        let head_amp: Vec<f64> = (0..dt).map(|_| rng_r.random::<f64>() * 2.0 - 1.0).collect();
        let head_phase: Vec<f64> = (0..dt).map(|_| rng_r.random::<f64>()).collect();
        let mut feat_step = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        for u in &latent_coords {
            let psi: Vec<f64> = (0..dt)
                .map(|j| {
                    let arg: f64 =
                        psi_freq[j].iter().zip(u).map(|(w, ui)| w * ui).sum::<f64>() + psi_phase[j];
                    bp * (0.5 + 0.5 * (std::f64::consts::TAU * arg).sin())
                })
                .collect();
            let f: f64 = (0..dt)
                .map(|j| head_amp[j] * (std::f64::consts::PI * (psi[j] / bp + head_phase[j])).sin())
                .sum();
            feat_step.push(psi);
            raw.push(f);
        }
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let scaled: Vec<f64> = if span > 0.0 {
            raw.iter().map(|v| (v - lo) / span).collect()
        } else {
            vec![0.0; n]
        };
        let anchor_flat = match config.anchor {
            AnchorChoice::ArgminPerStep => {
                let mut best = 0;
                for i in 1..n {
                    if scaled[i] < scaled[best] {
                        best = i;
                    }
                }
                best
            }
            AnchorChoice::Fixed(s, a) => {
                if s >= ss || a >= aa {
                    return Err(Error::Dimension {
                        context: "anchor",
                        detail: format!("({s},{a}) outside {ss}x{aa}"),
                    });
                }
                s * aa + a
            }
        };
        let offset = scaled[anchor_flat];
        let mut rtab = vec![vec![0.0; aa]; ss];
        for s in 0..ss {
            for a in 0..aa {
                rtab[s][a] = (scaled[s * aa + a] - offset).max(0.0);
            }
        }
        rewards.push(rtab);
        features.push(feat_step);
        anchors.push((anchor_flat / aa, anchor_flat % aa));
    }

    let initial = match config.initial {
        InitialChoice::FixedState(s0) => Initial::Fixed(s0),
        InitialChoice::UniformStates => Initial::Distribution(vec![1.0 / ss as f64; ss]),
    };
    let latent = TabularMdp::new(hh, ss, aa, transitions, rewards, initial, anchors)?;
    Ok(EmbeddedMdp {
        latent,
        descriptor: EnvDescriptor::Generated(config.clone()),
        intrinsic_dim: d,
        ambient_dim: dd,
        feature_dim: dt,
        latent_coords,
        embed,
        features,
        min_gap,
    })
}

impl EmbeddedMdp {
    /// Wraps a tabular MDP with one-hot embeddings: x(s,a) is the indicator
    /// of s * A + a. Exactly analyzable; used by the tabular pipeline mode.
    pub fn tabular(latent: TabularMdp) -> Self {
        let (hh, ss, aa) = (latent.horizon, latent.num_states, latent.num_actions);
        let n = ss * aa;
        let embed: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut x = vec![0.0; n];
                x[i] = 1.0;
                x
            })
            .collect();
        let features = vec![embed.clone(); hh];
        EmbeddedMdp {
            descriptor: EnvDescriptor::Tabular {
                horizon: hh,
                num_states: ss,
                num_actions: aa,
            },
            intrinsic_dim: n,
            ambient_dim: n,
            feature_dim: n,
            latent_coords: embed.clone(),
            embed,
            features,
            min_gap: std::f64::consts::SQRT_2,
            latent,
        }
    }

    pub fn latent(&self) -> &TabularMdp {
        &self.latent
    }

    pub fn descriptor(&self) -> &EnvDescriptor {
        &self.descriptor
    }

    pub fn horizon(&self) -> usize {
        self.latent.horizon
    }

    pub fn num_states(&self) -> usize {
        self.latent.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.latent.num_actions
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn min_embedding_gap(&self) -> f64 {
        self.min_gap
    }

    /// Embedded representation x(s,a).
    pub fn embedding(&self, s: usize, a: usize) -> &[f64] {
        &self.embed[s * self.latent.num_actions + a]
    }

    /// Latent coordinates u(s,a).
    pub fn latent_coords(&self, s: usize, a: usize) -> &[f64] {
        &self.latent_coords[s * self.latent.num_actions + a]
    }

    /// Reward feature values psi_h(s,a).
    pub fn features(&self, h: usize, s: usize, a: usize) -> &[f64] {
        &self.features[h - 1][s * self.latent.num_actions + a]
    }

    pub fn reward(&self, h: usize, s: usize, a: usize) -> f64 {
        self.latent.reward(h, s, a)
    }

    pub fn anchor_pair(&self, h: usize) -> (usize, usize) {
        self.latent.anchor_pair(h)
    }
}

/// One behavior-policy transition sample at some step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionSample {
    pub s: usize,
    pub a: usize,
    pub sprime: usize,
}

/// Per-step transition data: K i.i.d. draws from the behavior occupancy with
/// sampled successors.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub k: usize,
    /// per_step[h-1] has exactly k samples.
    pub per_step: Vec<Vec<TransitionSample>>,
}

/// One preference sample: two candidate pairs plus the implicit anchor in
/// slot 2, and the chosen slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreferenceSample {
    pub cand0: (usize, usize),
    pub cand1: (usize, usize),
    pub label: usize,
}

/// Per-step preference data: K_HF labeled triples.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceDataset {
    pub k_hf: usize,
    /// per_step[h-1] has exactly k_hf samples.
    pub per_step: Vec<Vec<PreferenceSample>>,
}

impl PreferenceDataset {
    /// Total negative log-likelihood of step h under an arbitrary reward
    /// function on latent pairs (the anchor's reward included).
    pub fn negative_log_likelihood<F>(
        &self,
        env: &EmbeddedMdp,
        h: usize,
        reward_fn: F,
    ) -> Result<f64>
    where
        F: Fn(usize, usize, usize) -> f64,
    {
        let (sf, af) = env.anchor_pair(h);
        let samples: Vec<(Vec<f64>, usize)> = self.per_step[h - 1]
            .iter()
            .map(|p| {
                (
                    vec![
                        reward_fn(h, p.cand0.0, p.cand0.1),
                        reward_fn(h, p.cand1.0, p.cand1.1),
                        reward_fn(h, sf, af),
                    ],
                    p.label,
                )
            })
            .collect();
        crate::preference::negative_log_likelihood(&samples)
    }
}

/// Candidate-pair distribution for the preference dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum EtaSampler {
    /// Occupancy of an exploration policy.
    Occupancy(Policy),
    /// Independent uniform over all state-action pairs.
    Uniform,
    /// Explicit per-step distributions, flat-indexed by s * A + a.
    Explicit(Vec<Vec<f64>>),
}

impl EtaSampler {
    /// Flat distribution over s * A + a at step h.
    pub fn distribution(&self, env: &EmbeddedMdp, h: usize) -> Result<Vec<f64>> {
        let (ss, aa) = (env.num_states(), env.num_actions());
        match self {
            EtaSampler::Occupancy(policy) => {
                let q = visitation_distribution(env.latent(), policy, h)?;
                Ok(q.into_iter().flatten().collect())
            }
            EtaSampler::Uniform => Ok(vec![1.0 / (ss * aa) as f64; ss * aa]),
            EtaSampler::Explicit(per_step) => {
                if per_step.len() < h {
                    return Err(Error::StepOutOfRange {
                        h,
                        horizon: per_step.len(),
                    });
                }
                let p = &per_step[h - 1];
                if p.len() != ss * aa {
                    return Err(Error::Dimension {
                        context: "eta distribution",
                        detail: format!("length {}, expected {}", p.len(), ss * aa),
                    });
                }
                let sum: f64 = p.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || p.iter().any(|v| *v < 0.0) {
                    return Err(Error::BadDistribution { sum });
                }
                Ok(p.clone())
            }
        }
    }
}

/// K i.i.d. draws per step from the behavior occupancy, with successors
/// sampled from the transition kernel. Streams are derived per step, so
/// datasets for different steps are independent.
pub fn generate_transition_dataset(
    env: &EmbeddedMdp,
    behavior: &Policy,
    k: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    if k == 0 {
        return Err(Error::Empty {
            what: "transition dataset (K = 0)",
        });
    }
    let aa = env.num_actions();
    let mut per_step = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        let occ: Vec<f64> = visitation_distribution(env.latent(), behavior, h)?
            .into_iter()
            .flatten()
            .collect();
        let mut rng = rng_for(seed, &format!("transitions-h{h}"));
        let mut samples = Vec::with_capacity(k);
        for _ in 0..k {
            let flat = sample_categorical(&occ, &mut rng);
            let (s, a) = (flat / aa, flat % aa);
            let sprime = sample_categorical(env.latent().transition(h, s, a), &mut rng);
            samples.push(TransitionSample { s, a, sprime });
        }
        per_step.push(samples);
    }
    Ok(TransitionDataset { k, per_step })
}

/// Preference dataset with labels drawn from the softmax choice model under
/// the environment's true reward.
pub fn generate_preference_dataset(
    env: &EmbeddedMdp,
    eta: &EtaSampler,
    k_hf: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    generate_preference_dataset_with_reward(env, eta, k_hf, seed, |h, s, a| env.reward(h, s, a))
}

/// Same sampling path with an arbitrary reward function, used to check that
/// constant reward shifts leave the sampled labels unchanged. The anchor's
/// reward comes from the same function.
pub fn generate_preference_dataset_with_reward<F>(
    env: &EmbeddedMdp,
    eta: &EtaSampler,
    k_hf: usize,
    seed: u64,
    reward_fn: F,
) -> Result<PreferenceDataset>
where
    F: Fn(usize, usize, usize) -> f64,
{
    if k_hf == 0 {
        return Err(Error::Empty {
            what: "preference dataset (K_HF = 0)",
        });
    }
    let aa = env.num_actions();
    let mut per_step = Vec::with_capacity(env.horizon());
    for h in 1..=env.horizon() {
        let dist = eta.distribution(env, h)?;
        let (sf, af) = env.anchor_pair(h);
        let anchor_reward = reward_fn(h, sf, af);
        let mut rng = rng_for(seed, &format!("preferences-h{h}"));
        let mut samples = Vec::with_capacity(k_hf);
        for _ in 0..k_hf {
            let f0 = sample_categorical(&dist, &mut rng);
            let f1 = sample_categorical(&dist, &mut rng);
            let cand0 = (f0 / aa, f0 % aa);
            let cand1 = (f1 / aa, f1 % aa);
            let rewards = [
                reward_fn(h, cand0.0, cand0.1),
                reward_fn(h, cand1.0, cand1.1),
                anchor_reward,
            ];
            let probs = choice_probabilities(&rewards)?;
            let label = sample_choice(&probs, &mut rng);
            samples.push(PreferenceSample {
                cand0,
                cand1,
                label,
            });
        }
        per_step.push(samples);
    }
    Ok(PreferenceDataset { k_hf, per_step })
}

/// Manifest stored next to dataset CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub env: EnvDescriptor,
    pub seed: u64,
    pub k: Option<usize>,
    pub k_hf: Option<usize>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

/// CSV schema: h,k,x[0..D-1],sprime_index.
pub fn write_transitions_csv<W: Write>(
    env: &EmbeddedMdp,
    ds: &TransitionDataset,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dd = env.ambient_dim();
    let mut header = vec!["h".to_string(), "k".to_string()];
    header.extend((0..dd).map(|i| format!("x{i}")));
    header.push("sprime_index".to_string());
    w.write_record(&header)?;
    for (hi, step) in ds.per_step.iter().enumerate() {
        for (ki, t) in step.iter().enumerate() {
            let mut rec = vec![(hi + 1).to_string(), ki.to_string()];
            rec.extend(env.embedding(t.s, t.a).iter().map(|v| fmt_f64(*v)));
            rec.push(t.sprime.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV schema: h,k,cand0_0..cand0_{D-1},cand1_0..cand1_{D-1},label.
pub fn write_preferences_csv<W: Write>(
    env: &EmbeddedMdp,
    ds: &PreferenceDataset,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let dd = env.ambient_dim();
    let mut header = vec!["h".to_string(), "k".to_string()];
    header.extend((0..dd).map(|i| format!("cand0_{i}")));
    header.extend((0..dd).map(|i| format!("cand1_{i}")));
    header.push("label".to_string());
    w.write_record(&header)?;
    for (hi, step) in ds.per_step.iter().enumerate() {
        for (ki, p) in step.iter().enumerate() {
            let mut rec = vec![(hi + 1).to_string(), ki.to_string()];
            rec.extend(
                env.embedding(p.cand0.0, p.cand0.1)
                    .iter()
                    .map(|v| fmt_f64(*v)),
            );
            rec.extend(
                env.embedding(p.cand1.0, p.cand1.1)
                    .iter()
                    .map(|v| fmt_f64(*v)),
            );
            rec.push(p.label.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Exact lookup from embedded coordinates back to the latent pair; works
/// because coordinates are written with round-trip precision and the
/// embedding is injective.
fn embedding_index(env: &EmbeddedMdp) -> HashMap<Vec<u64>, (usize, usize)> {
    let mut map = HashMap::new();
    for s in 0..env.num_states() {
        for a in 0..env.num_actions() {
            let key: Vec<u64> = env.embedding(s, a).iter().map(|v| v.to_bits()).collect();
            map.insert(key, (s, a));
        }
    }
    map
}

/// Reads back [`write_transitions_csv`] output.
pub fn read_transitions_csv<R: Read>(env: &EmbeddedMdp, input: R) -> Result<TransitionDataset> {
    let index = embedding_index(env);
    let dd = env.ambient_dim();
    let mut r = csv::Reader::from_reader(input);
    let mut per_step: Vec<Vec<TransitionSample>> = vec![Vec::new(); env.horizon()];
    for rec in r.records() {
        let rec = rec?;
        let h: usize = parse_field(&rec, 0, "h")?;
        if h == 0 || h > env.horizon() {
            return Err(Error::StepOutOfRange {
                h,
                horizon: env.horizon(),
            });
        }
        let key: Vec<u64> = (0..dd)
            .map(|i| parse_field::<f64>(&rec, 2 + i, "x").map(f64::to_bits))
            .collect::<Result<_>>()?;
        let (s, a) = *index.get(&key).ok_or(Error::Format {
            context: "transitions csv",
            detail: "embedded point does not match any state-action pair".to_string(),
        })?;
        let sprime: usize = parse_field(&rec, 2 + dd, "sprime_index")?;
        per_step[h - 1].push(TransitionSample { s, a, sprime });
    }
    let k = per_step.first().map(Vec::len).unwrap_or(0);
    if k == 0 || per_step.iter().any(|v| v.len() != k) {
        return Err(Error::Format {
            context: "transitions csv",
            detail: "steps have unequal or zero sample counts".to_string(),
        });
    }
    Ok(TransitionDataset { k, per_step })
}

/// Reads back [`write_preferences_csv`] output.
pub fn read_preferences_csv<R: Read>(env: &EmbeddedMdp, input: R) -> Result<PreferenceDataset> {
    let index = embedding_index(env);
    let dd = env.ambient_dim();
    let mut r = csv::Reader::from_reader(input);
    let mut per_step: Vec<Vec<PreferenceSample>> = vec![Vec::new(); env.horizon()];
    for rec in r.records() {
        let rec = rec?;
        let h: usize = parse_field(&rec, 0, "h")?;
        if h == 0 || h > env.horizon() {
            return Err(Error::StepOutOfRange {
                h,
                horizon: env.horizon(),
            });
        }
        let lookup = |offset: usize, index_map: &HashMap<Vec<u64>, (usize, usize)>| {
            let key: Vec<u64> = (0..dd)
                .map(|i| parse_field::<f64>(&rec, offset + i, "cand").map(f64::to_bits))
                .collect::<Result<_>>()?;
            index_map.get(&key).copied().ok_or(Error::Format {
                context: "preferences csv",
                detail: "embedded point does not match any state-action pair".to_string(),
            })
        };
        let cand0 = lookup(2, &index)?;
        let cand1 = lookup(2 + dd, &index)?;
        let label: usize = parse_field(&rec, 2 + 2 * dd, "label")?;
        if label > 2 {
            return Err(Error::Format {
                context: "preferences csv",
                detail: format!("label {label} outside 0..=2"),
            });
        }
        per_step[h - 1].push(PreferenceSample {
            cand0,
            cand1,
            label,
        });
    }
    let k_hf = per_step.first().map(Vec::len).unwrap_or(0);
    if k_hf == 0 || per_step.iter().any(|v| v.len() != k_hf) {
        return Err(Error::Format {
            context: "preferences csv",
            detail: "steps have unequal or zero sample counts".to_string(),
        });
    }
    Ok(PreferenceDataset { k_hf, per_step })
}

fn parse_field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    idx: usize,
    name: &'static str,
) -> Result<T> {
    rec.get(idx)
        .ok_or(Error::Format {
            context: "csv",
            detail: format!("missing field {name}"),
        })?
        .parse::<T>()
        .map_err(|_| Error::Format {
            context: "csv",
            detail: format!("field {name} failed to parse"),
        })
}
