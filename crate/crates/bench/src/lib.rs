//! Shared fixtures for the criterion benchmarks: one small tabular benchmark
//! environment with its policies, probe class, and datasets at fixed sizes,
//! so every benchmark measures the same workload.

use prefqe_core::divergence::ProbeClass;
use prefqe_core::mdp::Policy;
use prefqe_core::synthetic::{
    generate_preference_dataset, generate_transition_dataset, random_tabular_mdp, EmbeddedMdp,
    EtaSampler, PreferenceDataset, TransitionDataset,
};

pub const HORIZON: usize = 3;
pub const STATES: usize = 5;
pub const ACTIONS: usize = 3;

pub fn bench_env() -> EmbeddedMdp {
    EmbeddedMdp::tabular(random_tabular_mdp(HORIZON, STATES, ACTIONS, 16, 3))
}

/// (behavior, target) pair for off-policy workloads.
pub fn bench_policies() -> (Policy, Policy) {
    (
        Policy::uniform(HORIZON, STATES, ACTIONS),
        Policy::seeded_random(HORIZON, STATES, ACTIONS, 8),
    )
}

pub fn bench_probes(env: &EmbeddedMdp) -> ProbeClass {
    let points: Vec<Vec<f64>> = (0..env.num_states())
        .flat_map(|s| (0..env.num_actions()).map(move |a| (s, a)))
        .map(|(s, a)| env.embedding(s, a).to_vec())
        .collect();
    ProbeClass::default_for_points(&points, 0).unwrap()
}

pub fn bench_transitions(env: &EmbeddedMdp, k: usize) -> TransitionDataset {
    let (behavior, _) = bench_policies();
    generate_transition_dataset(env, &behavior, k, 11).unwrap()
}

pub fn bench_preferences(env: &EmbeddedMdp, k_hf: usize) -> PreferenceDataset {
    generate_preference_dataset(env, &EtaSampler::Uniform, k_hf, 13).unwrap()
}
