//! Record verification: rebuilds each cell's environment from the manifest
//! and recomputes the oracle value behind every row.

use std::collections::BTreeMap;
use std::path::Path;

use prefqe_core::mdp::exact_policy_value;

use crate::config::{build_env, build_policy, Cell};
use crate::runner::{load_manifest, read_records_csv};

pub const V_TRUE_TOLERANCE: f64 = 1e-10;
pub const ABS_ERR_TOLERANCE: f64 = 1e-12;

/// Outcome of a verification pass. Problems are row-anchored messages; an
/// empty list means every record checked out.
#[derive(Debug)]
pub struct VerifyOutcome {
    pub checked: usize,
    pub problems: Vec<String>,
}

/// Verifies a records file against its sibling manifest. Errors are
/// setup-class problems (missing or unreadable inputs); data mismatches
/// come back as `problems`.
pub fn verify_records(records_path: &Path) -> Result<VerifyOutcome, String> {
    let dir = records_path
        .parent()
        .ok_or_else(|| format!("{}: no parent directory", records_path.display()))?;
    let manifest = load_manifest(&dir.join("manifest.json"))
        .map_err(|e| e.to_string())?
        .ok_or_else(|| {
            format!(
                "no manifest.json next to {}; cannot rebuild environments",
                records_path.display()
            )
        })?;
    let rows =
        read_records_csv(records_path).map_err(|e| format!("{}: {e}", records_path.display()))?;

    let config = &manifest.config;
    let cells: BTreeMap<String, Cell> = config
        .cells()
        .into_iter()
        .map(|c| (c.hash.clone(), c))
        .collect();

    // The oracle value depends on the latent model and target policy only,
    // so one computation per distinct ambient dimension covers every row.
    let mut oracle_by_dim: BTreeMap<Option<usize>, (f64, usize, usize)> = BTreeMap::new();
    let mut problems = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let line = i + 2;
        let s = &row.summary;
        let Some(cell) = cells.get(&row.cell_hash) else {
            problems.push(format!(
                "row {line} (seed {}): cell {} is not part of the manifest's grid",
                s.seed, row.cell_hash
            ));
            continue;
        };
        if s.k != cell.k || s.k_hf != cell.k_hf {
            problems.push(format!(
                "row {line} (seed {}): K/K_HF {}/{} disagree with cell {} ({}/{})",
                s.seed, s.k, s.k_hf, row.cell_hash, cell.k, cell.k_hf
            ));
            continue;
        }
        let (v_true, horizon, intrinsic) = match oracle_by_dim.get(&cell.ambient_dim) {
            Some(v) => *v,
            None => {
                let env = build_env(&config.env, cell.ambient_dim)
                    .map_err(|e| format!("cell {}: environment: {e}", row.cell_hash))?;
                let target = build_policy(&config.target_policy, &env)
                    .map_err(|e| format!("cell {}: target_policy: {e}", row.cell_hash))?;
                let v = exact_policy_value(env.latent(), &target)
                    .map_err(|e| format!("cell {}: oracle value: {e}", row.cell_hash))?;
                let entry = (v, env.horizon(), env.intrinsic_dim());
                oracle_by_dim.insert(cell.ambient_dim, entry);
                entry
            }
        };
        if s.horizon != horizon || s.intrinsic_dim != intrinsic {
            problems.push(format!(
                "row {line} (seed {}): H/d columns {}/{} disagree with the environment ({horizon}/{intrinsic})",
                s.seed, s.horizon, s.intrinsic_dim
            ));
        }
        if let Some(d) = cell.ambient_dim {
            if s.ambient_dim != d {
                problems.push(format!(
                    "row {line} (seed {}): D column {} disagrees with cell dimension {d}",
                    s.seed, s.ambient_dim
                ));
            }
        }
        let dv = (s.v_true - v_true).abs();
        if dv.is_nan() || dv > V_TRUE_TOLERANCE {
            problems.push(format!(
                "row {line} (seed {}): v_true {} is {dv:.3e} from the recomputed oracle {v_true}",
                s.seed, s.v_true
            ));
        }
        let expected_abs = (s.v_hat - s.v_true).abs();
        let da = (s.abs_err - expected_abs).abs();
        if da.is_nan() || da > ABS_ERR_TOLERANCE {
            problems.push(format!(
                "row {line} (seed {}): abs_err {} is {da:.3e} from |v_hat - v_true| = {expected_abs}",
                s.seed, s.abs_err
            ));
        }
    }

    // Completeness: every done cell must carry one row per configured seed.
    let mut rows_per_cell: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
    for row in &rows {
        rows_per_cell
            .entry(row.cell_hash.as_str())
            .or_default()
            .push(row.summary.seed);
    }
    for status in &manifest.cells {
        if status.status != "done" {
            continue;
        }
        let seeds = rows_per_cell
            .get(status.cell.hash.as_str())
            .cloned()
            .unwrap_or_default();
        if seeds != config.seeds {
            problems.push(format!(
                "cell {}: manifest marks it done but its rows cover seeds {seeds:?}, config lists {:?}",
                status.cell.hash, config.seeds
            ));
        }
    }

    Ok(VerifyOutcome {
        checked: rows.len(),
        problems,
    })
}
