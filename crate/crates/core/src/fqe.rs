//! Stage two of the pipeline: backward fitted Q-evaluation with a learned
//! reward, and the final value integral against the initial distribution.
//!
//! Each step solves a squared-error regression from embedded state-action
//! pairs to Bellman targets built from the next step's fitted Q-function.
//! Net mode trains a clipped ReLU network; tabular mode computes the exact
//! least-squares solution on one-hot inputs, which is the per-pair empirical
//! mean of the targets. Tabular mode makes every downstream quantity exactly
//! analyzable, so optimization error can be separated from statistical
//! error.

use crate::mdp::{exact_policy_value, Policy};
use crate::net::{LossBatch, NetConfig, OptimizerConfig, RegressionItem, ReluNetwork};
use crate::reward::{fit_reward, LearnedReward};
use crate::seeding::derive_seed;
use crate::synthetic::{
    EmbeddedMdp, EtaSampler, PreferenceDataset, TransitionDataset, TransitionSample,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};

/// One step's fitted Q-function.
#[derive(Debug, Clone, PartialEq)]
pub enum StepQ {
    Net(ReluNetwork),
    /// Exact least squares on one-hot inputs: the per-pair mean of the
    /// regression targets. Pairs never seen in the data stay at zero.
    Table(Vec<Vec<f64>>),
}

impl StepQ {
    pub fn evaluate(&self, env: &EmbeddedMdp, s: usize, a: usize) -> f64 {
        match self {
            StepQ::Net(net) => net.forward(env.embedding(s, a)),
            StepQ::Table(t) => t[s][a],
        }
    }
}

/// Per-step fitted Q-functions, h = 1..H. The step after the horizon is
/// identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedQ {
    steps: Vec<StepQ>,
}

impl FittedQ {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, h: usize) -> &StepQ {
        &self.steps[h - 1]
    }

    /// Q̂_h(s,a) with the convention that h = H+1 gives 0.
    pub fn evaluate(&self, env: &EmbeddedMdp, h: usize, s: usize, a: usize) -> f64 {
        if h == self.steps.len() + 1 {
            0.0
        } else {
            self.steps[h - 1].evaluate(env, s, a)
        }
    }
}

/// Policy-averaged continuation value at a successor state:
/// Σ_a' π_{h+1}(a'|s') Q̂_{h+1}(s',a'), an exact finite sum.
fn continuation_value(
    env: &EmbeddedMdp,
    qnext: Option<&StepQ>,
    policy: &Policy,
    hnext: usize,
    sprime: usize,
) -> f64 {
    match qnext {
        None => 0.0,
        Some(q) => {
            let row = policy.action_distribution(hnext, sprime);
            (0..env.num_actions())
                .map(|a| row[a] * q.evaluate(env, sprime, a))
                .sum()
        }
    }
}

/// Bellman regression target for one transition sample at step h:
/// r̂_h(s,a) plus the policy-averaged next-step value. At h = H the
/// continuation is zero; pass `None` for qnext there.
pub fn regression_target(
    env: &EmbeddedMdp,
    h: usize,
    qnext: Option<&StepQ>,
    rhat: &dyn Fn(usize, usize) -> f64,
    sample: &TransitionSample,
    policy: &Policy,
) -> f64 {
    rhat(sample.s, sample.a) + continuation_value(env, qnext, policy, h + 1, sample.sprime)
}

/// How fit_q_step solves its regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QFitMode {
    Net {
        net: NetConfig,
        opt: OptimizerConfig,
    },
    Tabular,
}

/// Fits one step's Q-function to Bellman targets. Net mode groups samples
/// that share (s, a, s') into one weighted regression item (identical input
/// and target, so the loss is unchanged); tabular mode takes per-pair means
/// in sample order.
pub fn fit_q_step(
    env: &EmbeddedMdp,
    h: usize,
    slice: &[TransitionSample],
    rhat: &dyn Fn(usize, usize) -> f64,
    qnext: Option<&StepQ>,
    policy: &Policy,
    mode: &QFitMode,
) -> Result<StepQ> {
    if slice.is_empty() {
        return Err(Error::Empty {
            what: "transition step slice",
        });
    }
    // Continuation values depend only on s', so compute each state once.
    let cont: Vec<f64> = (0..env.num_states())
        .map(|sp| continuation_value(env, qnext, policy, h + 1, sp))
        .collect();
    match mode {
        QFitMode::Tabular => {
            let (ss, aa) = (env.num_states(), env.num_actions());
            let mut sums = vec![vec![0.0; aa]; ss];
            let mut counts = vec![vec![0usize; aa]; ss];
            for t in slice {
                sums[t.s][t.a] += rhat(t.s, t.a) + cont[t.sprime];
                counts[t.s][t.a] += 1;
            }
            let mut table = vec![vec![0.0; aa]; ss];
            for s in 0..ss {
                for a in 0..aa {
                    if counts[s][a] > 0 {
                        table[s][a] = sums[s][a] / counts[s][a] as f64;
                    }
                }
            }
            Ok(StepQ::Table(table))
        }
        QFitMode::Net { net, opt } => {
            if net.input_dim != env.ambient_dim() {
                return Err(Error::Dimension {
                    context: "q net input",
                    detail: format!(
                        "input dim {}, embedded dim {}",
                        net.input_dim,
                        env.ambient_dim()
                    ),
                });
            }
            let mut groups: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
            for t in slice {
                *groups.entry((t.s, t.a, t.sprime)).or_insert(0.0) += 1.0;
            }
            let items: Vec<RegressionItem> = groups
                .into_iter()
                .map(|((s, a, sp), weight)| RegressionItem {
                    x: env.embedding(s, a).to_vec(),
                    target: rhat(s, a) + cont[sp],
                    weight,
                })
                .collect();
            let init = ReluNetwork::new(net, derive_seed(opt.seed, &format!("q-net-h{h}")));
            let mut opt_h = opt.clone();
            opt_h.seed = derive_seed(opt.seed, &format!("q-train-h{h}"));
            let trained = crate::net::train(init, &LossBatch::SquaredError(&items), &opt_h)
                .map_err(|e| stage_error("q fit", h, e))?;
            Ok(StepQ::Net(trained))
        }
    }
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

/// v̂^π = Σ_s ξ(s) Σ_a π_1(a|s) Q̂_1(s,a), an exact finite sum.
pub fn estimate_value(env: &EmbeddedMdp, q1: &StepQ, xi: &[f64], pi1: &Policy) -> f64 {
    let mut v = 0.0;
    for s in 0..env.num_states() {
        if xi[s] == 0.0 {
            continue;
        }
        let row = pi1.action_distribution(1, s);
        let mut inner = 0.0;
        for a in 0..env.num_actions() {
            inner += row[a] * q1.evaluate(env, s, a);
        }
        v += xi[s] * inner;
    }
    v
}

/// Pipeline configuration: reward stage, Q stage, and reporting knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub reward_net: NetConfig,
    pub reward_opt: OptimizerConfig,
    pub q_mode: QFitMode,
    /// Fraction of each transition slice held out for Bellman-residual
    /// reporting; 0 reports in-sample residuals.
    pub holdout_fraction: f64,
    /// Candidate distribution used for the reward MSE report.
    pub eta: PipelineEta,
}

/// Eta choice for the exact reward-MSE report; mirrors the dataset
/// samplers that have no policy payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PipelineEta {
    Uniform,
    /// Occupancy of the target policy itself.
    TargetOccupancy,
}

impl PipelineConfig {
    pub fn tabular_default(env: &EmbeddedMdp, seed: u64) -> Self {
        PipelineConfig {
            reward_net: NetConfig::reward_default(env.ambient_dim()),
            reward_opt: OptimizerConfig {
                learning_rate: 0.1,
                batch_size: 4096,
                epochs: 200,
                seed,
                projection_cadence: 1,
            },
            q_mode: QFitMode::Tabular,
            holdout_fraction: 0.0,
            eta: PipelineEta::Uniform,
        }
    }
}

/// Serializable result of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub v_hat: f64,
    pub v_true: f64,
    pub abs_err: f64,
    /// Final squared-error training loss per step (grouped batch).
    pub step_train_losses: Vec<f64>,
    /// Mean squared Bellman residual per step, on the holdout slice when one
    /// was configured and in-sample otherwise.
    pub step_bellman_residuals: Vec<f64>,
    /// Exact eta-weighted squared reward error per step.
    pub reward_mse: Vec<f64>,
    pub reward_mse_mean: f64,
}

/// Full output of a pipeline run; the report is the serializable part.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub report: EvalReport,
    pub reward: LearnedReward,
    pub q: FittedQ,
}

/// Runs the two-stage pipeline: fit all per-step rewards, run the backward
/// Q-regression loop, integrate step 1 against the initial distribution, and
/// score against the exact oracle value. Deterministic per seed.
pub fn run_pipeline(
    env: &EmbeddedMdp,
    transitions: &TransitionDataset,
    prefs: &PreferenceDataset,
    target: &Policy,
    config: &PipelineConfig,
) -> Result<PipelineRun> {
    crate::mdp::check_compatible(env.latent(), target)?;
    let hh = env.horizon();
    if transitions.per_step.len() != hh {
        return Err(Error::Dimension {
            context: "transition dataset",
            detail: format!(
                "covers {} steps, horizon is {hh}",
                transitions.per_step.len()
            ),
        });
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::Dimension {
            context: "holdout fraction",
            detail: format!("{} outside [0, 1)", config.holdout_fraction),
        });
    }

    let learned = fit_reward(env, prefs, &config.reward_net, &config.reward_opt)?;

    // Holdout split per step, derived from the Q seed.
    let q_seed = match &config.q_mode {
        QFitMode::Net { opt, .. } => opt.seed,
        QFitMode::Tabular => config.reward_opt.seed,
    };
    let mut train_slices: Vec<Vec<TransitionSample>> = Vec::with_capacity(hh);
    let mut holdout_slices: Vec<Vec<TransitionSample>> = Vec::with_capacity(hh);
    for h in 1..=hh {
        let slice = &transitions.per_step[h - 1];
        if config.holdout_fraction == 0.0 {
            train_slices.push(slice.clone());
            holdout_slices.push(Vec::new());
            continue;
        }
        let mut idx: Vec<usize> = (0..slice.len()).collect();
        let mut rng = crate::seeding::rng_for(q_seed, &format!("holdout-h{h}"));
        for i in (1..idx.len()).rev() {
            let j = rand::Rng::random_range(&mut rng, 0..=i);
            idx.swap(i, j);
        }
        let n_hold = (config.holdout_fraction * slice.len() as f64).floor() as usize;
        let (hold, tr) = idx.split_at(n_hold);
        if tr.is_empty() {
            return Err(Error::Empty {
                what: "transition training slice after holdout",
            });
        }
        holdout_slices.push(hold.iter().map(|i| slice[*i]).collect());
        train_slices.push(tr.iter().map(|i| slice[*i]).collect());
    }

    // Backward loop: fit Q_H down to Q_1.
    let mut steps: Vec<Option<StepQ>> = vec![None; hh];
    for h in (1..=hh).rev() {
        let qnext = if h == hh { None } else { steps[h].as_ref() };
        let rhat = |s: usize, a: usize| learned.evaluate(env, h, s, a);
        let fitted = fit_q_step(
            env,
            h,
            &train_slices[h - 1],
            &rhat,
            qnext,
            target,
            &config.q_mode,
        )?;
        steps[h - 1] = Some(fitted);
    }
    let steps: Vec<StepQ> = steps.into_iter().map(Option::unwrap).collect();
    let fitted = FittedQ { steps };

    let xi = env.latent().initial_distribution();
    let v_hat = estimate_value(env, fitted.step(1), &xi, target);
    let v_true = exact_policy_value(env.latent(), target)?;

    // Diagnostics: training losses, Bellman residuals, exact reward MSE.
    let mut step_train_losses = Vec::with_capacity(hh);
    let mut step_bellman_residuals = Vec::with_capacity(hh);
    let mut reward_mse = Vec::with_capacity(hh);
    for h in 1..=hh {
        let qnext = if h == hh {
            None
        } else {
            Some(fitted.step(h + 1))
        };
        let rhat = |s: usize, a: usize| learned.evaluate(env, h, s, a);
        let mse_on = |samples: &[TransitionSample]| -> f64 {
            if samples.is_empty() {
                return 0.0;
            }
            let mut acc = 0.0;
            for t in samples {
                let target_v = regression_target(env, h, qnext, &rhat, t, target);
                let d = fitted.step(h).evaluate(env, t.s, t.a) - target_v;
                acc += d * d;
            }
            acc / samples.len() as f64
        };
        step_train_losses.push(mse_on(&train_slices[h - 1]));
        step_bellman_residuals.push(if config.holdout_fraction == 0.0 {
            mse_on(&train_slices[h - 1])
        } else {
            mse_on(&holdout_slices[h - 1])
        });
        let eta = match config.eta {
            PipelineEta::Uniform => EtaSampler::Uniform.distribution(env, h)?,
            PipelineEta::TargetOccupancy => {
                EtaSampler::Occupancy(target.clone()).distribution(env, h)?
            }
        };
        let mut mse = 0.0;
        for s in 0..env.num_states() {
            for a in 0..env.num_actions() {
                let d = learned.evaluate(env, h, s, a) - env.reward(h, s, a);
                mse += eta[s * env.num_actions() + a] * d * d;
            }
        }
        reward_mse.push(mse);
    }
    let reward_mse_mean = reward_mse.iter().sum::<f64>() / hh as f64;

    let report = EvalReport {
        v_hat,
        v_true,
        abs_err: (v_hat - v_true).abs(),
        step_train_losses,
        step_bellman_residuals,
        reward_mse,
        reward_mse_mean,
    };
    Ok(PipelineRun {
        report,
        reward: learned,
        q: fitted,
    })
}

/// One summary CSV row per pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub k: usize,
    pub k_hf: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub horizon: usize,
    pub v_hat: f64,
    pub v_true: f64,
    pub abs_err: f64,
    pub reward_mse_mean: f64,
    pub runtime_s: f64,
}

pub const SUMMARY_HEADER: [&str; 11] = [
    "seed",
    "K",
    "K_HF",
    "D",
    "d",
    "H",
    "v_hat",
    "v_true",
    "abs_err",
    "reward_mse_mean",
    "runtime_s",
];

/// CSV schema: seed,K,K_HF,D,d,H,v_hat,v_true,abs_err,reward_mse_mean,runtime_s.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record(&[
            r.seed.to_string(),
            r.k.to_string(),
            r.k_hf.to_string(),
            r.ambient_dim.to_string(),
            r.intrinsic_dim.to_string(),
            r.horizon.to_string(),
            format!("{}", r.v_hat),
            format!("{}", r.v_true),
            format!("{}", r.abs_err),
            format!("{}", r.reward_mse_mean),
            format!("{}", r.runtime_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back [`write_summary_csv`] output.
pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    {
        let got = r.headers()?;
        if got.iter().ne(SUMMARY_HEADER.iter().copied()) {
            return Err(Error::Format {
                context: "summary csv",
                detail: format!("unexpected header {got:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<(
        u64,
        usize,
        usize,
        usize,
        usize,
        usize,
        f64,
        f64,
        f64,
        f64,
        f64,
    )>() {
        let (
            seed,
            k,
            k_hf,
            ambient_dim,
            intrinsic_dim,
            horizon,
            v_hat,
            v_true,
            abs_err,
            reward_mse_mean,
            runtime_s,
        ) = rec?;
        rows.push(SummaryRow {
            seed,
            k,
            k_hf,
            ambient_dim,
            intrinsic_dim,
            horizon,
            v_hat,
            v_true,
            abs_err,
            reward_mse_mean,
            runtime_s,
        });
    }
    Ok(rows)
}
