//! Grid execution. Cells run one at a time with seeds fanned out over a
//! worker pool; after every completed cell the records, divergences, and
//! manifest files are rewritten atomically in canonical order, so an
//! interrupted sweep resumes by skipping cells the manifest marks done.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use prefqe_core::divergence::{kappa_profile, ProbeClass};
use prefqe_core::fqe::{
    run_pipeline, PipelineConfig, PipelineEta, QFitMode, SummaryRow, SUMMARY_HEADER,
};
use prefqe_core::seeding::derive_seed;
use prefqe_core::synthetic::{
    generate_preference_dataset, generate_transition_dataset, EmbeddedMdp, EtaSampler,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    build_env, build_eta, build_net_config, build_policy, Cell, EtaSpec, ExperimentConfig, QSpec,
};

/// Name of the environment variable that caps the worker pool.
pub const WORKERS_ENV: &str = "PREFQE_WORKERS";

/// Errors the runner distinguishes for exit codes: setup problems reject
/// the invocation outright, I/O problems abort an otherwise valid run.
#[derive(Debug)]
pub enum RunnerError {
    Setup(String),
    Io(String),
}

impl std::fmt::Display for RunnerError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunnerError::Setup(m) => write!(f, "setup error: {m}"),
            RunnerError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for RunnerError {}

/// One records.csv row: a pipeline summary tagged with its cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub summary: SummaryRow,
    pub cell_hash: String,
}

/// One divergences.csv row.
#[derive(Debug, Clone, PartialEq)]
pub struct DivRecord {
    pub h: usize,
    pub kind: String,
    pub chi2_restricted: f64,
    pub chi2_pearson: f64,
    pub probe_count: usize,
    pub cell_hash: String,
}

/// Per-cell entry in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStatus {
    pub cell: Cell,
    /// "done" or "failed".
    pub status: String,
    #[serde(default)]
    pub error: Option<String>,
    pub runtime_s: f64,
    pub seeds_done: Vec<u64>,
}

/// On-disk run state. Timestamps live here and only here; the CSV outputs
/// stay byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub created_at_epoch_s: u64,
    pub updated_at_epoch_s: u64,
    pub cells: Vec<CellStatus>,
}

/// What a run did, for the caller to report and turn into an exit code.
#[derive(Debug)]
pub struct RunReport {
    pub ran: usize,
    pub skipped: usize,
    pub failed: Vec<(Cell, String)>,
    pub records_path: PathBuf,
}

fn epoch_seconds() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Builds the worker pool; `PREFQE_WORKERS` caps its size when set.
pub fn worker_pool() -> Result<rayon::ThreadPool, RunnerError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw.parse().map_err(|_| {
            RunnerError::Setup(format!("{WORKERS_ENV}={raw:?} is not a positive integer"))
        })?;
        if n == 0 {
            return Err(RunnerError::Setup(format!(
                "{WORKERS_ENV} must be positive"
            )));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| RunnerError::Setup(format!("worker pool: {e}")))
}

/// Executes the full grid, resuming from any prior state in the output
/// directory. Returns the report even when some cells failed; the caller
/// decides the exit code.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport, RunnerError> {
    let out_dir = PathBuf::from(&config.output_dir);
    fs::create_dir_all(&out_dir)
        .map_err(|e| RunnerError::Setup(format!("output_dir {}: {e}", out_dir.display())))?;
    let manifest_path = out_dir.join("manifest.json");
    let records_path = out_dir.join("records.csv");
    let div_path = out_dir.join("divergences.csv");

    let cells = config.cells();
    let prior = load_manifest(&manifest_path)?;
    if let Some(m) = &prior {
        if m.config != *config {
            return Err(RunnerError::Setup(format!(
                "output_dir {} holds results for a different configuration; use a fresh directory",
                out_dir.display()
            )));
        }
    }
    let created_at = prior
        .as_ref()
        .map(|m| m.created_at_epoch_s)
        .unwrap_or_else(epoch_seconds);
    let mut statuses: BTreeMap<String, CellStatus> = BTreeMap::new();
    for entry in prior.iter().flat_map(|m| m.cells.iter()) {
        if entry.status == "done" {
            statuses.insert(entry.cell.hash.clone(), entry.clone());
        }
    }

    // Rows for already-done cells come from the previous files; the shortest
    // round-trip float format makes read-then-rewrite byte-identical.
    let mut records: BTreeMap<String, Vec<SummaryRow>> = BTreeMap::new();
    if !statuses.is_empty() {
        let prior_rows = read_records_csv(&records_path)
            .map_err(|e| RunnerError::Setup(format!("{}: {e}", records_path.display())))?;
        for row in prior_rows {
            records.entry(row.cell_hash).or_default().push(row.summary);
        }
        for hash in statuses.keys() {
            if !records.contains_key(hash) {
                return Err(RunnerError::Setup(format!(
                    "records.csv is missing rows for completed cell {hash}; remove {} to start over",
                    out_dir.display()
                )));
            }
        }
    }
    let mut divergences: BTreeMap<String, Vec<DivRecord>> = BTreeMap::new();
    if !statuses.is_empty() && div_path.exists() {
        for row in read_divergences_csv(&div_path)
            .map_err(|e| RunnerError::Setup(format!("{}: {e}", div_path.display())))?
        {
            divergences
                .entry(row.cell_hash.clone())
                .or_default()
                .push(row);
        }
    }

    let pool = worker_pool()?;
    let mut report = RunReport {
        ran: 0,
        skipped: 0,
        failed: Vec::new(),
        records_path: records_path.clone(),
    };

    for cell in &cells {
        if statuses.contains_key(&cell.hash) {
            report.skipped += 1;
            continue;
        }
        match run_cell(config, cell, &pool) {
            Ok(outcome) => {
                records.insert(cell.hash.clone(), outcome.rows);
                if !outcome.divergences.is_empty() {
                    divergences.insert(cell.hash.clone(), outcome.divergences);
                }
                statuses.insert(
                    cell.hash.clone(),
                    CellStatus {
                        cell: cell.clone(),
                        status: "done".to_string(),
                        error: None,
                        runtime_s: outcome.runtime_s,
                        seeds_done: outcome.seeds_done,
                    },
                );
                report.ran += 1;
            }
            Err(message) => {
                eprintln!("cell {} failed: {message}", cell.hash);
                statuses.insert(
                    cell.hash.clone(),
                    CellStatus {
                        cell: cell.clone(),
                        status: "failed".to_string(),
                        error: Some(message.clone()),
                        runtime_s: 0.0,
                        seeds_done: Vec::new(),
                    },
                );
                report.failed.push((cell.clone(), message));
            }
        }
        checkpoint(
            config,
            &cells,
            &statuses,
            &records,
            &divergences,
            &manifest_path,
            &records_path,
            &div_path,
            created_at,
        )?;
    }
    // A fully resumed run still normalizes the on-disk files once.
    checkpoint(
        config,
        &cells,
        &statuses,
        &records,
        &divergences,
        &manifest_path,
        &records_path,
        &div_path,
        created_at,
    )?;
    Ok(report)
}

struct CellOutcome {
    rows: Vec<SummaryRow>,
    divergences: Vec<DivRecord>,
    runtime_s: f64,
    seeds_done: Vec<u64>,
}

fn run_cell(
    config: &ExperimentConfig,
    cell: &Cell,
    pool: &rayon::ThreadPool,
) -> Result<CellOutcome, String> {
    let started = Instant::now();
    let env = build_env(&config.env, cell.ambient_dim).map_err(|e| format!("environment: {e}"))?;
    let target =
        build_policy(&config.target_policy, &env).map_err(|e| format!("target_policy: {e}"))?;
    let behavior =
        build_policy(&config.behavior_policy, &env).map_err(|e| format!("behavior_policy: {e}"))?;
    let eta = build_eta(&config.eta, &behavior, &env).map_err(|e| format!("eta: {e}"))?;

    let results: Vec<(u64, Result<SummaryRow, String>)> = pool.install(|| {
        config
            .seeds
            .par_iter()
            .map(|&seed| {
                let row = run_cell_seed(config, cell, &env, &target, &behavior, &eta, seed)
                    .map_err(|e| e.to_string());
                (seed, row)
            })
            .collect()
    });

    let mut rows = Vec::with_capacity(results.len());
    let mut seeds_done = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(row) => {
                seeds_done.push(seed);
                rows.push(row);
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(errors.join("; "));
    }

    let divergences = if config.emit_divergences {
        let points: Vec<Vec<f64>> = (0..env.num_states())
            .flat_map(|s| (0..env.num_actions()).map(move |a| (s, a)))
            .map(|(s, a)| env.embedding(s, a).to_vec())
            .collect();
        let probes = ProbeClass::default_for_points(&points, config.probe_seed)
            .map_err(|e| format!("probe class: {e}"))?;
        let profile = kappa_profile(&env, &target, &behavior, &eta, &probes)
            .map_err(|e| format!("divergence profile: {e}"))?;
        profile
            .rows
            .iter()
            .map(|r| DivRecord {
                h: r.h,
                kind: r.kind.to_string(),
                chi2_restricted: r.chi2_restricted,
                chi2_pearson: r.chi2_pearson,
                probe_count: r.probe_count,
                cell_hash: cell.hash.clone(),
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(CellOutcome {
        rows,
        divergences,
        runtime_s: started.elapsed().as_secs_f64(),
        seeds_done,
    })
}

fn run_cell_seed(
    config: &ExperimentConfig,
    cell: &Cell,
    env: &EmbeddedMdp,
    target: &prefqe_core::mdp::Policy,
    behavior: &prefqe_core::mdp::Policy,
    eta: &EtaSampler,
    seed: u64,
) -> prefqe_core::Result<SummaryRow> {
    let started = Instant::now();
    // Every stream this run touches hangs off (seed, cell hash), so runs are
    // independent across both seeds and cells.
    let run_seed = derive_seed(seed, &cell.hash);
    let transitions =
        generate_transition_dataset(env, behavior, cell.k, derive_seed(run_seed, "transitions"))?;
    let prefs =
        generate_preference_dataset(env, eta, cell.k_hf, derive_seed(run_seed, "preferences"))?;
    let pipeline = pipeline_for_cell(config, cell, env, run_seed);
    let run = run_pipeline(env, &transitions, &prefs, target, &pipeline)?;
    Ok(SummaryRow {
        seed,
        k: cell.k,
        k_hf: cell.k_hf,
        ambient_dim: env.ambient_dim(),
        intrinsic_dim: env.intrinsic_dim(),
        horizon: env.horizon(),
        v_hat: run.report.v_hat,
        v_true: run.report.v_true,
        // Recomputed at write time rather than trusted from the report.
        abs_err: (run.report.v_hat - run.report.v_true).abs(),
        reward_mse_mean: run.report.reward_mse_mean,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}

/// Maps the config's pipeline section onto one cell's concrete settings.
pub fn pipeline_for_cell(
    config: &ExperimentConfig,
    cell: &Cell,
    env: &EmbeddedMdp,
    run_seed: u64,
) -> PipelineConfig {
    let spec = &config.pipeline;
    let reward_net = build_net_config(&spec.reward.preset, cell.k_hf, env, false);
    let reward_opt = spec
        .reward
        .opt
        .to_optimizer(derive_seed(run_seed, "reward-stage"));
    let q_mode = match &spec.q {
        QSpec::Tabular => QFitMode::Tabular,
        QSpec::Net(fit) => QFitMode::Net {
            net: build_net_config(&fit.preset, cell.k, env, true),
            opt: fit.opt.to_optimizer(derive_seed(run_seed, "q-stage")),
        },
    };
    // The reward-MSE diagnostic weights errors by a distribution the core
    // pipeline can compute exactly: uniform when eta is uniform, the target
    // occupancy otherwise.
    let eta = match config.eta {
        EtaSpec::Uniform => PipelineEta::Uniform,
        _ => PipelineEta::TargetOccupancy,
    };
    PipelineConfig {
        reward_net,
        reward_opt,
        q_mode,
        holdout_fraction: spec.holdout_fraction,
        eta,
    }
}

#[allow(clippy::too_many_arguments)]
fn checkpoint(
    config: &ExperimentConfig,
    cells: &[Cell],
    statuses: &BTreeMap<String, CellStatus>,
    records: &BTreeMap<String, Vec<SummaryRow>>,
    divergences: &BTreeMap<String, Vec<DivRecord>>,
    manifest_path: &Path,
    records_path: &Path,
    div_path: &Path,
    created_at: u64,
) -> Result<(), RunnerError> {
    let mut record_rows = Vec::new();
    let mut div_rows = Vec::new();
    let mut manifest_cells = Vec::new();
    for cell in cells {
        let Some(status) = statuses.get(&cell.hash) else {
            continue;
        };
        manifest_cells.push(status.clone());
        if status.status != "done" {
            continue;
        }
        for summary in records.get(&cell.hash).into_iter().flatten() {
            record_rows.push(RecordRow {
                summary: summary.clone(),
                cell_hash: cell.hash.clone(),
            });
        }
        if let Some(rows) = divergences.get(&cell.hash) {
            div_rows.extend(rows.iter().cloned());
        }
    }
    write_records_csv(&record_rows, records_path)
        .map_err(|e| RunnerError::Io(format!("{}: {e}", records_path.display())))?;
    write_divergences_csv(&div_rows, div_path)
        .map_err(|e| RunnerError::Io(format!("{}: {e}", div_path.display())))?;
    let manifest = Manifest {
        config: config.clone(),
        created_at_epoch_s: created_at,
        updated_at_epoch_s: epoch_seconds(),
        cells: manifest_cells,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| RunnerError::Io(format!("manifest: {e}")))?;
    atomic_write(manifest_path, text.as_bytes())
        .map_err(|e| RunnerError::Io(format!("{}: {e}", manifest_path.display())))?;
    Ok(())
}

fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn load_manifest(path: &Path) -> Result<Option<Manifest>, RunnerError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path)
        .map_err(|e| RunnerError::Setup(format!("{}: {e}", path.display())))?;
    let manifest = serde_json::from_str(&text)
        .map_err(|e| RunnerError::Setup(format!("{}: {e}", path.display())))?;
    Ok(Some(manifest))
}

/// Records schema: the pipeline summary columns plus the cell hash.
pub fn records_header() -> Vec<&'static str> {
    let mut h = SUMMARY_HEADER.to_vec();
    h.push("cell_hash");
    h
}

pub fn write_records_csv(rows: &[RecordRow], path: &Path) -> Result<(), String> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| e.to_string())?;
        w.write_record(records_header())
            .map_err(|e| e.to_string())?;
        for row in rows {
            let s = &row.summary;
            w.write_record(&[
                s.seed.to_string(),
                s.k.to_string(),
                s.k_hf.to_string(),
                s.ambient_dim.to_string(),
                s.intrinsic_dim.to_string(),
                s.horizon.to_string(),
                format!("{}", s.v_hat),
                format!("{}", s.v_true),
                format!("{}", s.abs_err),
                format!("{}", s.reward_mse_mean),
                format!("{}", s.runtime_s),
                row.cell_hash.clone(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    fs::rename(&tmp, path).map_err(|e| e.to_string())
}

/// The records file's bytes with every runtime_s cell cleared to 0, for
/// reproducibility comparisons. All result columns are deterministic given
/// config and seeds; runtime_s is a wall-clock measurement and is the one
/// timing field the schema keeps outside the manifest.
pub fn records_comparison_bytes(path: &Path) -> Result<Vec<u8>, String> {
    let mut rows = read_records_csv(path)?;
    for row in &mut rows {
        row.summary.runtime_s = 0.0;
    }
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(records_header())
            .map_err(|e| e.to_string())?;
        for row in &rows {
            let s = &row.summary;
            w.write_record(&[
                s.seed.to_string(),
                s.k.to_string(),
                s.k_hf.to_string(),
                s.ambient_dim.to_string(),
                s.intrinsic_dim.to_string(),
                s.horizon.to_string(),
                format!("{}", s.v_hat),
                format!("{}", s.v_true),
                format!("{}", s.abs_err),
                format!("{}", s.reward_mse_mean),
                format!("{}", s.runtime_s),
                row.cell_hash.clone(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn read_records_csv(path: &Path) -> Result<Vec<RecordRow>, String> {
    let mut file = fs::File::open(path).map_err(|e| e.to_string())?;
    let mut text = String::new();
    file.read_to_string(&mut text).map_err(|e| e.to_string())?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    {
        let got = r.headers().map_err(|e| e.to_string())?;
        if got.iter().ne(records_header()) {
            return Err(format!("unexpected records header {got:?}"));
        }
    }
    let mut rows = Vec::new();
    type Raw = (
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
        String,
    );
    for rec in r.deserialize::<Raw>() {
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
            cell_hash,
        ) = rec.map_err(|e| e.to_string())?;
        rows.push(RecordRow {
            summary: SummaryRow {
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
            },
            cell_hash,
        });
    }
    Ok(rows)
}

const DIV_HEADER: [&str; 6] = [
    "h",
    "kind",
    "chi2_restricted",
    "chi2_pearson",
    "probe_count",
    "cell_hash",
];

pub fn write_divergences_csv(rows: &[DivRecord], path: &Path) -> Result<(), String> {
    let tmp = path.with_extension("tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(|e| e.to_string())?;
        w.write_record(DIV_HEADER).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(&[
                r.h.to_string(),
                r.kind.clone(),
                format!("{}", r.chi2_restricted),
                format!("{}", r.chi2_pearson),
                r.probe_count.to_string(),
                r.cell_hash.clone(),
            ])
            .map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
    }
    fs::rename(&tmp, path).map_err(|e| e.to_string())
}

pub fn read_divergences_csv(path: &Path) -> Result<Vec<DivRecord>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    {
        let got = r.headers().map_err(|e| e.to_string())?;
        if got.iter().ne(DIV_HEADER) {
            return Err(format!("unexpected divergences header {got:?}"));
        }
    }
    let mut rows = Vec::new();
    for rec in r.deserialize::<(usize, String, f64, f64, usize, String)>() {
        let (h, kind, chi2_restricted, chi2_pearson, probe_count, cell_hash) =
            rec.map_err(|e| e.to_string())?;
        rows.push(DivRecord {
            h,
            kind,
            chi2_restricted,
            chi2_pearson,
            probe_count,
            cell_hash,
        });
    }
    Ok(rows)
}
