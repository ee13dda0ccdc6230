//! Distribution-shift diagnostics: Pearson chi-square, a restricted
//! chi-square over a finite probe class, and the shift inequality that the
//! evaluation error bounds rest on.
//!
//! The restricted divergence takes a supremum over an infinite function
//! class; this module evaluates it over a finite probe list and reports the
//! result as a lower bound. On finite supports with exhaustive probes the
//! two coincide, which is what the exactness tests exercise.

use crate::mdp::visitation_distribution;
use crate::net::{NetConfig, ReluNetwork};
use crate::seeding::derive_seed;
use crate::synthetic::{EmbeddedMdp, EtaSampler};
use crate::{Error, Result};
use std::io::Write;

/// A probability vector over labeled atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    labels: Vec<String>,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(labels: Vec<String>, probs: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.len() != probs.len() {
            return Err(Error::Dimension {
                context: "finite distribution",
                detail: format!("{} labels, {} probabilities", labels.len(), probs.len()),
            });
        }
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::BadDistribution { sum });
        }
        Ok(FiniteDistribution { labels, probs })
    }

    /// Unlabeled support: atoms named by index.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        let labels = (0..probs.len()).map(|i| i.to_string()).collect();
        Self::new(labels, probs)
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Pearson chi-square divergence Σ_x q(x)(p(x)/q(x) - 1)². Atoms where both
/// are zero contribute nothing; an atom with q = 0 < p is a support
/// violation.
pub fn pearson_chi_square(p: &FiniteDistribution, q: &FiniteDistribution) -> Result<f64> {
    if p.labels != q.labels {
        return Err(Error::Dimension {
            context: "chi-square supports",
            detail: "distributions must share the same labeled support".to_string(),
        });
    }
    let mut total = 0.0;
    for i in 0..p.len() {
        let (pi, qi) = (p.probs[i], q.probs[i]);
        if qi == 0.0 {
            if pi != 0.0 {
                return Err(Error::SupportViolation {
                    atom: p.labels[i].clone(),
                    p: pi,
                });
            }
            continue;
        }
        let r = pi / qi - 1.0;
        total += qi * r * r;
    }
    Ok(total)
}

/// One probe: a real-valued function on the support, stored as its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub name: String,
    pub values: Vec<f64>,
}

/// A finite list of probes, all over the same support.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeClass {
    probes: Vec<Probe>,
    support_len: usize,
}

impl ProbeClass {
    pub fn from_probes(probes: Vec<Probe>) -> Result<Self> {
        let support_len = probes.first().map(|p| p.values.len()).ok_or(Error::Empty {
            what: "probe class",
        })?;
        for p in &probes {
            if p.values.len() != support_len {
                return Err(Error::Dimension {
                    context: "probe class",
                    detail: format!(
                        "probe {} has {} values, expected {support_len}",
                        p.name,
                        p.values.len()
                    ),
                });
            }
            if p.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "probe values",
                });
            }
        }
        Ok(ProbeClass {
            probes,
            support_len,
        })
    }

    /// Default surrogate for the infinite class: the constant, coordinate
    /// polynomials and trigonometric functions up to degree 4, and 64
    /// random weight-constrained ReLU networks, all evaluated at the given
    /// support points.
    pub fn default_for_points(points: &[Vec<f64>], seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty {
                what: "probe support points",
            });
        }
        let dim = points[0].len();
        if dim == 0 || points.iter().any(|p| p.len() != dim) {
            return Err(Error::Dimension {
                context: "probe support points",
                detail: "points must share a nonzero dimension".to_string(),
            });
        }
        let mut probes = Vec::new();
        probes.push(Probe {
            name: "const-1".to_string(),
            values: vec![1.0; points.len()],
        });
        for j in 0..dim {
            for k in 1..=4usize {
                probes.push(Probe {
                    name: format!("poly-x{j}^{k}"),
                    values: points.iter().map(|p| p[j].powi(k as i32)).collect(),
                });
                probes.push(Probe {
                    name: format!("sin-{k}pi-x{j}"),
                    values: points
                        .iter()
                        .map(|p| (k as f64 * std::f64::consts::PI * p[j]).sin())
                        .collect(),
                });
                probes.push(Probe {
                    name: format!("cos-{k}pi-x{j}"),
                    values: points
                        .iter()
                        .map(|p| (k as f64 * std::f64::consts::PI * p[j]).cos())
                        .collect(),
                });
            }
        }
        let cfg = NetConfig {
            input_dim: dim,
            hidden_layers: 1,
            width: 8,
            tau: 1.0,
            out_lo: -1.0,
            out_hi: 1.0,
            init_scale: 1.0,
        };
        for i in 0..64 {
            let net = ReluNetwork::new(&cfg, derive_seed(seed, &format!("probe-net-{i}")));
            probes.push(Probe {
                name: format!("relu-{i}"),
                values: points.iter().map(|p| net.forward(p)).collect(),
            });
        }
        Self::from_probes(probes)
    }

    pub fn len(&self) -> usize {
        self.probes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probes.is_empty()
    }

    pub fn support_len(&self) -> usize {
        self.support_len
    }

    pub fn probes(&self) -> &[Probe] {
        &self.probes
    }

    /// A class with one extra probe appended.
    pub fn with_probe(&self, probe: Probe) -> Result<Self> {
        let mut probes = self.probes.clone();
        probes.push(probe);
        Self::from_probes(probes)
    }

    fn contains_values(&self, g: &[f64]) -> bool {
        self.probes.iter().any(|p| p.values == g)
    }
}

/// Restricted chi-square sup_f E_{q1}[f]² / E_{q2}[f²] - 1 over the finite
/// probe list; a lower bound of the supremum over the full class. Probes
/// with E_{q2}[f²] = 0 are skipped under the 0/0 convention.
pub fn restricted_chi_square(
    q1: &FiniteDistribution,
    q2: &FiniteDistribution,
    probes: &ProbeClass,
) -> Result<f64> {
    if q1.len() != probes.support_len() || q2.len() != probes.support_len() {
        return Err(Error::Dimension {
            context: "restricted chi-square",
            detail: format!(
                "distributions over {} and {} atoms, probes over {}",
                q1.len(),
                q2.len(),
                probes.support_len()
            ),
        });
    }
    let mut best: Option<f64> = None;
    for probe in &probes.probes {
        let mean1: f64 = q1.probs.iter().zip(&probe.values).map(|(q, f)| q * f).sum();
        let second2: f64 = q2
            .probs
            .iter()
            .zip(&probe.values)
            .map(|(q, f)| q * f * f)
            .sum();
        if second2 == 0.0 {
            continue;
        }
        let ratio = mean1 * mean1 / second2;
        if best.is_none_or(|b| ratio > b) {
            best = Some(ratio);
        }
    }
    match best {
        Some(b) => Ok(b - 1.0),
        None => Err(Error::Empty {
            what: "usable probe set",
        }),
    }
}

/// Checks E_{q1}[g] ≤ √(E_{q2}[g²] (1 + χ²)) with χ² the restricted
/// divergence over a probe class containing g. Returns whether the
/// inequality holds (within 1e-12) and the slack (right side minus left).
pub fn verify_shift_bound(
    g: &[f64],
    q1: &FiniteDistribution,
    q2: &FiniteDistribution,
    probes: &ProbeClass,
) -> Result<(bool, f64)> {
    if !probes.contains_values(g) {
        return Err(Error::Format {
            context: "shift bound",
            detail: "g must belong to the probe class".to_string(),
        });
    }
    let chi = restricted_chi_square(q1, q2, probes)?;
    let lhs: f64 = q1.probs.iter().zip(g).map(|(q, f)| q * f).sum();
    let second2: f64 = q2.probs.iter().zip(g).map(|(q, f)| q * f * f).sum();
    let rhs = (second2 * (1.0 + chi)).sqrt();
    Ok((lhs <= rhs + 1e-12, rhs - lhs))
}

/// One diagnostics row: the divergence between the target occupancy and a
/// reference distribution at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRow {
    pub h: usize,
    /// "kappa1" compares against the behavior occupancy, "kappa2" against
    /// the preference candidate distribution.
    pub kind: &'static str,
    pub chi2_restricted: f64,
    pub chi2_pearson: f64,
    pub probe_count: usize,
}

/// The two shift coefficients: each is Σ_h √(1 + χ²_h) with χ² the
/// restricted divergence of the target occupancy against the behavior
/// occupancy (kappa1) or the candidate distribution (kappa2). Lower-bound
/// estimates whenever the probe class is not exhaustive.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaProfile {
    pub kappa1: f64,
    pub kappa2: f64,
    pub rows: Vec<DivergenceRow>,
}

/// Computes both shift coefficients from exact occupancies.
pub fn kappa_profile(
    env: &EmbeddedMdp,
    target: &Policy,
    behavior: &Policy,
    eta: &EtaSampler,
    probes: &ProbeClass,
) -> Result<KappaProfile> {
    let (ss, aa) = (env.num_states(), env.num_actions());
    let labels: Vec<String> = (0..ss * aa)
        .map(|i| format!("s{}-a{}", i / aa, i % aa))
        .collect();
    let dist = |v: Vec<f64>| FiniteDistribution::new(labels.clone(), v);
    let mut kappa1 = 0.0;
    let mut kappa2 = 0.0;
    let mut rows = Vec::with_capacity(2 * env.horizon());
    for h in 1..=env.horizon() {
        let q_pi = dist(
            visitation_distribution(env.latent(), target, h)?
                .into_iter()
                .flatten()
                .collect(),
        )?;
        let q_pi0 = dist(
            visitation_distribution(env.latent(), behavior, h)?
                .into_iter()
                .flatten()
                .collect(),
        )?;
        let eta_h = dist(eta.distribution(env, h)?)?;
        let chi1 = restricted_chi_square(&q_pi, &q_pi0, probes)?;
        let chi2 = restricted_chi_square(&q_pi, &eta_h, probes)?;
        kappa1 += (1.0 + chi1).sqrt();
        kappa2 += (1.0 + chi2).sqrt();
        rows.push(DivergenceRow {
            h,
            kind: "kappa1",
            chi2_restricted: chi1,
            chi2_pearson: pearson_chi_square(&q_pi, &q_pi0)?,
            probe_count: probes.len(),
        });
        rows.push(DivergenceRow {
            h,
            kind: "kappa2",
            chi2_restricted: chi2,
            chi2_pearson: pearson_chi_square(&q_pi, &eta_h)?,
            probe_count: probes.len(),
        });
    }
    Ok(KappaProfile {
        kappa1,
        kappa2,
        rows,
    })
}

use crate::mdp::Policy;

/// CSV schema: h,kind,chi2_restricted,chi2_pearson,probe_count.
pub fn write_divergence_csv<W: Write>(rows: &[DivergenceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "h",
        "kind",
        "chi2_restricted",
        "chi2_pearson",
        "probe_count",
    ])?;
    for r in rows {
        w.write_record(&[
            r.h.to_string(),
            r.kind.to_string(),
            format!("{}", r.chi2_restricted),
            format!("{}", r.chi2_pearson),
            r.probe_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use crate::synthetic::random_tabular_mdp;
    use rand::Rng;

    fn d2(p0: f64) -> FiniteDistribution {
        FiniteDistribution::new(vec!["a".into(), "b".into()], vec![p0, 1.0 - p0]).unwrap()
    }

    fn random_simplex(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n)
            .map(|_| -(rng.random::<f64>().max(1e-300)).ln())
            .collect();
        let sum: f64 = v.iter().sum();
        for x in &mut v {
            *x /= sum;
        }
        let s2: f64 = v.iter().sum();
        v[n - 1] += 1.0 - s2;
        v
    }

    #[test]
    fn pearson_identity_is_zero() {
        let p = d2(0.3);
        assert_eq!(pearson_chi_square(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn pearson_frozen_values() {
        let got = pearson_chi_square(&d2(0.5), &d2(0.25)).unwrap();
        assert!((got - 1.0 / 3.0).abs() <= 1e-15, "got {got}");
        let got2 = pearson_chi_square(&d2(1.0), &d2(0.5)).unwrap();
        assert!((got2 - 1.0).abs() <= 1e-15, "got {got2}");
    }

    #[test]
    fn pearson_zero_zero_convention() {
        let p = FiniteDistribution::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.5, 0.5, 0.0],
        )
        .unwrap();
        let q = FiniteDistribution::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![0.25, 0.75, 0.0],
        )
        .unwrap();
        let got = pearson_chi_square(&p, &q).unwrap();
        assert!((got - 1.0 / 3.0).abs() <= 1e-15);
    }

    #[test]
    fn pearson_support_violation_names_atom() {
        let p =
            FiniteDistribution::new(vec!["left".into(), "right".into()], vec![0.5, 0.5]).unwrap();
        let q =
            FiniteDistribution::new(vec!["left".into(), "right".into()], vec![1.0, 0.0]).unwrap();
        match pearson_chi_square(&p, &q) {
            Err(Error::SupportViolation { atom, p }) => {
                assert_eq!(atom, "right");
                assert_eq!(p, 0.5);
            }
            other => panic!("expected support violation, got {other:?}"),
        }
    }

    #[test]
    fn restricted_zero_at_equal_distributions_with_constant() {
        let q = d2(0.3);
        let probes = ProbeClass::from_probes(vec![
            Probe {
                name: "const".into(),
                values: vec![1.0, 1.0],
            },
            Probe {
                name: "id".into(),
                values: vec![0.0, 1.0],
            },
        ])
        .unwrap();
        let got = restricted_chi_square(&q, &q, &probes).unwrap();
        assert!(got.abs() <= 1e-15, "got {got}");
        // Without the constant probe the value can be negative but never
        // positive when the distributions agree.
        let probes2 = ProbeClass::from_probes(vec![Probe {
            name: "id".into(),
            values: vec![0.0, 1.0],
        }])
        .unwrap();
        assert!(restricted_chi_square(&q, &q, &probes2).unwrap() <= 0.0);
    }

    #[test]
    fn sign_pattern_probes_match_independent_maximizer() {
        let n = 8;
        let mut rng = rng_for(5, "sign-pattern");
        let q1 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
        let q2 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
        let probes = ProbeClass::from_probes(
            (0..1usize << n)
                .map(|mask| Probe {
                    name: format!("sign-{mask:08b}"),
                    values: (0..n)
                        .map(|i| if mask >> i & 1 == 1 { 1.0 } else { -1.0 })
                        .collect(),
                })
                .collect(),
        )
        .unwrap();
        let got = restricted_chi_square(&q1, &q2, &probes).unwrap();
        // Independent maximizer: recursive descent over the patterns.
        fn brute(i: usize, mean1: f64, second2: f64, q1: &[f64], q2: &[f64], best: &mut f64) {
            if i == q1.len() {
                if second2 > 0.0 {
                    *best = best.max(mean1 * mean1 / second2);
                }
                return;
            }
            brute(i + 1, mean1 + q1[i], second2 + q2[i], q1, q2, best);
            brute(i + 1, mean1 - q1[i], second2 + q2[i], q1, q2, best);
        }
        let mut best = f64::NEG_INFINITY;
        brute(0, 0.0, 0.0, q1.probs(), q2.probs(), &mut best);
        assert!(
            (got - (best - 1.0)).abs() <= 1e-12,
            "{got} vs {}",
            best - 1.0
        );
    }

    #[test]
    fn angle_sweep_approaches_pearson_on_two_atoms() {
        // On a 2-point support every function is a direction in the plane,
        // and the ratio is scale-invariant, so an angle sweep covers the
        // whole class. The supremum equals the Pearson divergence.
        let mut rng = rng_for(6, "angles");
        for _ in 0..5 {
            let q1 = FiniteDistribution::from_probs(random_simplex(2, &mut rng)).unwrap();
            let q2 = FiniteDistribution::from_probs(random_simplex(2, &mut rng)).unwrap();
            let probes = ProbeClass::from_probes(
                (0..10_000)
                    .map(|i| {
                        let theta = std::f64::consts::PI * i as f64 / 10_000.0;
                        Probe {
                            name: format!("angle-{i}"),
                            values: vec![theta.cos(), theta.sin()],
                        }
                    })
                    .collect(),
            )
            .unwrap();
            let restricted = restricted_chi_square(&q1, &q2, &probes).unwrap();
            let pearson = pearson_chi_square(&q1, &q2).unwrap();
            assert!(restricted <= pearson + 1e-9);
            assert!(
                pearson - restricted <= 1e-3,
                "gap {} too large",
                pearson - restricted
            );
        }
    }

    #[test]
    fn restricted_never_exceeds_pearson() {
        let mut rng = rng_for(7, "bound");
        for trial in 0..50 {
            let n = 2 + (trial % 7);
            let q1 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
            let q2 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
            let probes = ProbeClass::from_probes(
                (0..20)
                    .map(|i| Probe {
                        name: format!("rand-{i}"),
                        values: (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
                    })
                    .chain(std::iter::once(Probe {
                        name: "const".into(),
                        values: vec![1.0; n],
                    }))
                    .collect(),
            )
            .unwrap();
            let restricted = restricted_chi_square(&q1, &q2, &probes).unwrap();
            let pearson = pearson_chi_square(&q1, &q2).unwrap();
            assert!(
                restricted <= pearson + 1e-9,
                "restricted {restricted} exceeds pearson {pearson}"
            );
        }
    }

    #[test]
    fn probe_superset_never_decreases_value() {
        let mut rng = rng_for(8, "monotone");
        let n = 5;
        let q1 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
        let q2 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
        let base: Vec<Probe> = (0..10)
            .map(|i| Probe {
                name: format!("p{i}"),
                values: (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            })
            .collect();
        let small = ProbeClass::from_probes(base.clone()).unwrap();
        let small_val = restricted_chi_square(&q1, &q2, &small).unwrap();
        let grown = small
            .with_probe(Probe {
                name: "extra".into(),
                values: (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
            })
            .unwrap();
        let grown_val = restricted_chi_square(&q1, &q2, &grown).unwrap();
        assert!(grown_val >= small_val);
    }

    #[test]
    fn shift_bound_tight_for_constant_at_equal_distributions() {
        let q = d2(0.4);
        let probes = ProbeClass::from_probes(vec![Probe {
            name: "const".into(),
            values: vec![1.0, 1.0],
        }])
        .unwrap();
        let (holds, slack) = verify_shift_bound(&[1.0, 1.0], &q, &q, &probes).unwrap();
        assert!(holds);
        assert!(slack.abs() <= 1e-12, "slack {slack}");
    }

    #[test]
    fn shift_bound_holds_on_random_triples() {
        let mut rng = rng_for(9, "triples");
        let n = 8;
        for _ in 0..10_000 {
            let q1 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
            let q2 = FiniteDistribution::from_probs(random_simplex(n, &mut rng)).unwrap();
            let g: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let probes = ProbeClass::from_probes(vec![
                Probe {
                    name: "const".into(),
                    values: vec![1.0; n],
                },
                Probe {
                    name: "other".into(),
                    values: (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
                },
                Probe {
                    name: "g".into(),
                    values: g.clone(),
                },
            ])
            .unwrap();
            let (holds, slack) = verify_shift_bound(&g, &q1, &q2, &probes).unwrap();
            assert!(holds, "violated with slack {slack}");
        }
    }

    #[test]
    fn shift_bound_degenerate_zero_over_zero() {
        let q1 = FiniteDistribution::from_probs(vec![1.0, 0.0, 0.0]).unwrap();
        let q2 = FiniteDistribution::from_probs(vec![0.5, 0.5, 0.0]).unwrap();
        let g = vec![0.0, 0.0, 5.0];
        let probes = ProbeClass::from_probes(vec![
            Probe {
                name: "const".into(),
                values: vec![1.0; 3],
            },
            Probe {
                name: "g".into(),
                values: g.clone(),
            },
        ])
        .unwrap();
        let (holds, slack) = verify_shift_bound(&g, &q1, &q2, &probes).unwrap();
        assert!(holds);
        assert_eq!(slack, 0.0);
    }

    #[test]
    fn shift_bound_requires_membership() {
        let q = d2(0.5);
        let probes = ProbeClass::from_probes(vec![Probe {
            name: "const".into(),
            values: vec![1.0, 1.0],
        }])
        .unwrap();
        assert!(verify_shift_bound(&[2.0, 0.0], &q, &q, &probes).is_err());
    }

    #[test]
    fn kappa_equals_horizon_without_shift() {
        let env = EmbeddedMdp::tabular(random_tabular_mdp(3, 4, 2, 16, 10));
        let pol = Policy::uniform(3, 4, 2);
        let points: Vec<Vec<f64>> = (0..8)
            .map(|i| env.embedding(i / 2, i % 2).to_vec())
            .collect();
        let probes = ProbeClass::default_for_points(&points, 11).unwrap();
        let profile = kappa_profile(
            &env,
            &pol,
            &pol,
            &EtaSampler::Occupancy(pol.clone()),
            &probes,
        )
        .unwrap();
        assert!(
            (profile.kappa1 - 3.0).abs() <= 1e-9,
            "kappa1 {}",
            profile.kappa1
        );
        assert!(
            (profile.kappa2 - 3.0).abs() <= 1e-9,
            "kappa2 {}",
            profile.kappa2
        );
        assert_eq!(profile.rows.len(), 6);
    }

    #[test]
    fn kappa_matches_hand_computed_two_step_example() {
        // One state, two actions: occupancies are just the action
        // probabilities. Target (0.3, 0.7) against behavior (0.6, 0.4):
        // pearson = 0.6(0.5-1)^2 + 0.4(1.75-1)^2 = 0.375 at each step, so
        // kappa = 2 sqrt(1.375). An angle sweep is an exhaustive probe
        // class on a two-atom support.
        let step = vec![vec![vec![1.0]; 2]];
        let rewards = vec![vec![vec![0.0, 0.5]]; 2];
        let latent = crate::mdp::TabularMdp::new(
            2,
            1,
            2,
            vec![step.clone(), step],
            rewards,
            crate::mdp::Initial::Fixed(0),
            vec![(0, 0), (0, 0)],
        )
        .unwrap();
        let env = EmbeddedMdp::tabular(latent);
        let target = Policy::from_table(vec![vec![vec![0.3, 0.7]]; 2]).unwrap();
        let behavior = Policy::from_table(vec![vec![vec![0.6, 0.4]]; 2]).unwrap();
        let probes = ProbeClass::from_probes(
            (0..10_000)
                .map(|i| {
                    let theta = std::f64::consts::PI * i as f64 / 10_000.0;
                    Probe {
                        name: format!("angle-{i}"),
                        values: vec![theta.cos(), theta.sin()],
                    }
                })
                .collect(),
        )
        .unwrap();
        let profile = kappa_profile(
            &env,
            &target,
            &behavior,
            &EtaSampler::Occupancy(behavior.clone()),
            &probes,
        )
        .unwrap();
        let want = 2.0 * (1.375f64).sqrt();
        assert!(
            (profile.kappa1 - want).abs() <= 1e-3,
            "kappa1 {} vs {want}",
            profile.kappa1
        );
        assert!((profile.kappa2 - want).abs() <= 1e-3);
        for row in &profile.rows {
            assert!((row.chi2_pearson - 0.375).abs() <= 1e-12);
            assert!(row.chi2_restricted <= row.chi2_pearson + 1e-9);
        }
    }

    #[test]
    fn default_probe_class_composition() {
        let points: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, 0.3]).collect();
        let probes = ProbeClass::default_for_points(&points, 12).unwrap();
        // constant + (poly + sin + cos) * 4 degrees * 2 dims + 64 nets.
        assert_eq!(probes.len(), 1 + 3 * 4 * 2 + 64);
        assert!(probes.probes().iter().all(|p| p.values.len() == 6));
        assert!(probes
            .probes()
            .iter()
            .all(|p| p.values.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn divergence_csv_schema() {
        let rows = vec![DivergenceRow {
            h: 2,
            kind: "kappa1",
            chi2_restricted: 0.25,
            chi2_pearson: 0.375,
            probe_count: 161,
        }];
        let mut buf = Vec::new();
        write_divergence_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "h,kind,chi2_restricted,chi2_pearson,probe_count\n2,kappa1,0.25,0.375,161\n"
        );
    }
}
