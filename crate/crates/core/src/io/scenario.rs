//! Scenario orchestration: model and initial data from a configuration,
//! trajectory output, and trajectory verification.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::config::{ConfigError, InitialData, ScenarioConfig};
use super::output::{
    read_diagnostics, read_json, write_json, write_jsonl, Certificate, DiagnosticsRow, DiagnosticsWriter, OutputError, CERTIFICATES_FILE,
    DIAGNOSTICS_FILE, META_FILE,
};
use super::snapshot::{read_snapshot, write_snapshot, Snapshot, SnapshotError};
use crate::diagnostics::energy_identity_residual;
use crate::expr::Expr;
use crate::model::{Model, ModelError};
use crate::operator::{mean, State};
use crate::timestepper::{mollify_initial, run, RunConfig, StepError, Splitting};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("initial data: {0}")]
    Initial(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Output(#[from] OutputError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("time stepping failed: {0}")]
    Step(#[from] StepError),
}

impl ScenarioError {
    /// Solver failures as opposed to invalid input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Step(_))
    }
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub program: String,
    pub version: String,
    pub rng: String,
    pub seed: Option<u64>,
    pub cells: Vec<usize>,
    pub extents: Vec<f64>,
    pub alpha: f64,
    pub kernel_fingerprint: u64,
    pub potential_family_id: u32,
    pub interval: (f64, f64),
    pub split_constant: f64,
    pub refinement: usize,
    pub dt: f64,
    pub theta_reg: f64,
    pub splitting: Splitting,
    pub feasibility_margin: f64,
    pub t_final: f64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    pub directory: PathBuf,
    pub steps: usize,
    pub halvings: usize,
    pub final_time: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub dissipation: f64,
    pub max_mass_drift: f64,
    pub snapshots: usize,
}

pub fn build_model(cfg: &ScenarioConfig) -> Result<Model, ScenarioError> {
    Ok(Model::new(cfg.grid.clone(), cfg.kernel.clone(), cfg.potential.clone(), cfg.refinement)?)
}

/// Builds the initial state, shifted to the configured mean and mollified if requested.
pub fn initial_state(cfg: &ScenarioConfig, model: &Model) -> Result<State, ScenarioError> {
    let m = cfg.initial.mean;
    let grid = &model.grid;
    let shifted = |mut c: Vec<f64>| {
        let shift = m - mean(&c);
        c.iter_mut().for_each(|v| *v += shift);
        c
    };
    let c = match &cfg.initial.data {
        InitialData::Noise { amplitude, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            shifted((0..grid.len()).map(|_| amplitude * (2.0 * rng.random::<f64>() - 1.0)).collect())
        }
        InitialData::Expression { source } => {
            let e = Expr::parse(source).map_err(|e| ScenarioError::Initial(e.to_string()))?;
            shifted(grid.sample(|x| e.eval(x, &[])))
        }
        InitialData::Snapshot { path } => {
            let s = read_snapshot(path)?;
            s.check_grid(grid)?;
            s.values
        }
    };
    if let Some((i, v)) = c.iter().enumerate().find(|(_, v)| !model.potential.admits(**v)) {
        let (a, b) = model.potential.interval();
        return Err(ScenarioError::Initial(format!("cell {i} has value {v}, outside ({a}, {b})")));
    }
    let state = State::new(c, 0.0).map_err(|e| ScenarioError::Initial(e.to_string()))?;
    Ok(if cfg.initial.mollify { mollify_initial(model, &state, cfg.scheme.theta_reg) } else { state })
}

pub fn run_meta(cfg: &ScenarioConfig) -> RunMeta {
    let seed = match cfg.initial.data {
        InitialData::Noise { seed, .. } => Some(seed),
        _ => None,
    };
    RunMeta {
        program: "nlch".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: "ChaCha8".into(),
        seed,
        cells: cfg.grid.cells().to_vec(),
        extents: cfg.grid.extents().to_vec(),
        alpha: cfg.kernel.alpha(),
        kernel_fingerprint: cfg.kernel.fingerprint(),
        potential_family_id: cfg.potential.family_id(),
        interval: cfg.potential.interval(),
        split_constant: cfg.potential.split_constant(),
        refinement: cfg.refinement,
        dt: cfg.scheme.dt,
        theta_reg: cfg.scheme.theta_reg,
        splitting: cfg.scheme.splitting,
        feasibility_margin: cfg.scheme.margin(cfg.potential.interval()),
        t_final: cfg.run.t_final,
        config: serde_json::to_value(&cfg.document).unwrap_or(serde_json::Value::Null),
    }
}

fn snapshot_name(step: usize) -> String {
    format!("snap_{step:07}.nlch")
}

/// Runs a configured scenario and writes its run directory.
pub fn simulate(cfg: &ScenarioConfig) -> Result<ScenarioSummary, ScenarioError> {
    let dir = cfg.output.directory.clone();
    fs::create_dir_all(&dir).map_err(|source| ScenarioError::Io { path: dir.clone(), source })?;
    let model = build_model(cfg)?;
    let init = initial_state(cfg, &model)?;
    write_json(&dir.join(META_FILE), &run_meta(cfg))?;
    let mut csv = DiagnosticsWriter::create(&dir.join(DIAGNOSTICS_FILE))?;
    let (alpha, family) = (cfg.kernel.alpha(), cfg.potential.family_id());
    let diag_every = cfg.output.diagnostics_every.max(1);
    let snap_every = cfg.output.snapshot_every;
    let mut index = 0usize;
    let mut last_written = None;
    let mut snapshots = 0usize;
    let mut failure: Option<ScenarioError> = None;
    let run_cfg = RunConfig { sample_every: 1, ..cfg.run };
    let traj = run(&model, &init, &cfg.scheme, &run_cfg, |sample, state| {
        if failure.is_some() {
            return;
        }
        let k = index;
        index += 1;
        let mut result = Ok(());
        if k.is_multiple_of(diag_every) {
            result = csv.write(&DiagnosticsRow::from(sample)).map_err(ScenarioError::from);
            last_written = Some(k);
        }
        if result.is_ok() && (k == 0 || (snap_every > 0 && k.is_multiple_of(snap_every))) {
            result = write_snapshot(&dir.join(snapshot_name(k)), &Snapshot::new(&model.grid, state, alpha, family)).map_err(ScenarioError::from);
            snapshots += 1;
        }
        if let Err(e) = result {
            failure = Some(e);
        }
    });
    let traj = match traj {
        Ok(t) => t,
        Err(e) => {
            // keep what was recorded before the failure
            let _ = csv.finish();
            return Err(e.into());
        }
    };
    if let Some(e) = failure {
        return Err(e);
    }
    let last = index.saturating_sub(1);
    if last_written != Some(last) {
        if let Some(s) = traj.samples.last() {
            csv.write(&DiagnosticsRow::from(s))?;
        }
    }
    csv.finish()?;
    write_snapshot(&dir.join("final.nlch"), &Snapshot::new(&model.grid, &traj.final_state, alpha, family))?;
    snapshots += 1;
    Ok(ScenarioSummary {
        directory: dir,
        steps: traj.steps,
        halvings: traj.halvings,
        final_time: traj.final_state.time,
        initial_energy: traj.initial_energy(),
        final_energy: traj.final_energy(),
        dissipation: traj.dissipation(),
        max_mass_drift: traj.max_mass_drift,
        snapshots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub mass_tol: f64,
    pub energy_tol: f64,
    pub identity_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { mass_tol: 1e-12, energy_tol: 1e-10, identity_tol: 0.5 }
    }
}

/// Certificates for a run directory; also written to `certificates.jsonl`.
pub fn verify_trajectory(dir: &Path, opts: &VerifyOptions) -> Result<Vec<Certificate>, ScenarioError> {
    let rows = read_diagnostics(&dir.join(DIAGNOSTICS_FILE))?;
    let meta: Option<RunMeta> = read_json(&dir.join(META_FILE)).ok();
    if rows.is_empty() {
        return Err(ScenarioError::Initial(format!("{} has no rows", dir.join(DIAGNOSTICS_FILE).display())));
    }
    let (first, last) = (rows[0], rows[rows.len() - 1]);
    let drift = rows.iter().map(|r| (r.mass - first.mass).abs()).fold(0.0, f64::max);
    let rise = rows.windows(2).map(|w| (w[1].energy - w[0].energy) / (1.0 + w[0].energy.abs())).fold(f64::NEG_INFINITY, f64::max);
    let drop = rows.windows(2).map(|w| w[0].dissipation_cum - w[1].dissipation_cum).fold(0.0, f64::max);
    let mut certs = vec![
        Certificate::at_most("mass_drift", drift, opts.mass_tol),
        Certificate::at_most("energy_monotone", if rows.len() > 1 { rise.max(0.0) } else { 0.0 }, opts.energy_tol),
        Certificate::at_most("energy_identity_residual", energy_identity_residual(first.energy, last.energy, last.dissipation_cum), opts.identity_tol),
        Certificate::at_most("dissipation_monotone", drop, 0.0),
    ];
    if let Some(meta) = meta {
        let (a, b) = meta.interval;
        let gap = rows.iter().map(|r| (r.min_c - a).min(b - r.max_c)).fold(f64::INFINITY, f64::min);
        certs.push(Certificate { check: "interior_gap".into(), value: gap, threshold: 0.0, pass: gap > 0.0 });
    }
    write_jsonl(&dir.join(CERTIFICATES_FILE), &certs)?;
    Ok(certs)
}

#[cfg(test)]
mod tests {
    use super::super::config::parse_config;
    use super::*;

    fn config(dir: &Path, extra: &str) -> ScenarioConfig {
        let src = format!(
            r#"
[domain]
dimension = 1
cells = [32]

[kernel]
alpha = 1.5
amplitude = 0.01

[potential]
T_abs = 1.0
T_crit = 2.0

[scheme]
dt = 1e-3
t_final = 0.01

[output]
directory = "{}"
snapshot_every = 5
diagnostics_every = 3
{extra}
"#,
            dir.display()
        );
        parse_config(&src, &[]).unwrap()
    }

    #[test]
    fn run_directory_contents() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(&tmp.path().join("run"), "[initial]\nseed = 3\namplitude = 0.05\nmean = 0.1");
        let summary = simulate(&cfg).unwrap();
        assert_eq!(summary.steps, 10);
        let dir = tmp.path().join("run");
        let rows = read_diagnostics(&dir.join(DIAGNOSTICS_FILE)).unwrap();
        let times: Vec<f64> = rows.iter().map(|r| r.t).collect();
        assert_eq!(times.len(), 5, "{times:?}");
        assert!((times[4] - 0.01).abs() < 1e-15);
        for name in ["snap_0000000.nlch", "snap_0000005.nlch", "snap_0000010.nlch", "final.nlch"] {
            let s = read_snapshot(&dir.join(name)).unwrap();
            assert!((s.mean - 0.1).abs() < 1e-12, "{name}");
        }
        let meta: RunMeta = read_json(&dir.join(META_FILE)).unwrap();
        assert_eq!(meta.seed, Some(3));
        assert_eq!(meta.rng, "ChaCha8");
        let certs = verify_trajectory(&dir, &VerifyOptions::default()).unwrap();
        assert!(certs.iter().all(|c| c.pass), "{certs:?}");
        assert!(dir.join(CERTIFICATES_FILE).exists());
    }

    #[test]
    fn expression_and_snapshot_initial_data() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = config(&tmp.path().join("a"), "[initial]\nfamily = \"expression\"\nexpression = \"0.2*cos(pi*x)\"\nmean = -0.1");
        let model = build_model(&cfg).unwrap();
        let s = initial_state(&cfg, &model).unwrap();
        assert!((s.mean + 0.1).abs() < 1e-15);
        let path = tmp.path().join("init.nlch");
        write_snapshot(&path, &Snapshot::new(&model.grid, &s, 1.5, 1)).unwrap();
        let cfg2 = config(&tmp.path().join("b"), &format!("[initial]\nfamily = \"snapshot\"\npath = \"{}\"", path.display()));
        assert_eq!(initial_state(&cfg2, &model).unwrap().c, s.c);
        let bad = config(&tmp.path().join("c"), "[initial]\nfamily = \"expression\"\nexpression = \"3*x\"");
        assert!(matches!(initial_state(&bad, &model), Err(ScenarioError::Initial(_))));
    }

    #[test]
    fn rows_are_bitwise_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let a = config(&tmp.path().join("a"), "[initial]\nseed = 11");
        let b = config(&tmp.path().join("b"), "[initial]\nseed = 11");
        simulate(&a).unwrap();
        simulate(&b).unwrap();
        let read = |p: &Path| fs::read(p.join(DIAGNOSTICS_FILE)).unwrap();
        assert_eq!(read(&tmp.path().join("a")), read(&tmp.path().join("b")));
    }
}
