//! Experiment pipelines and result files.
//!
//! Every run writes the effective config to `config.toml`, its results as
//! CSV and/or JSON, and `timing.json` with the wall time. Timing lives in
//! its own file so identical configs give byte-identical result files. On
//! failure `error.json` records the error kind and exit code.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{ExperimentKind, Format, RunConfig};
use crate::error::{Error, Result};
use crate::gpc::{
    convergence_study, critical_velocity, mean_mode, run_ensemble, variance, CriticalResult, GpcEnsemble, PdeModel,
};
use crate::grid::WaveField;
use crate::oracle::{bisect_critical, expected_calls, scan_for_bracket, Classifier, PdeClassifier};
use crate::soliton::{initial_soliton, ZoneCheck};
use crate::solver::{classify_field, propagate, window_fraction, Outcome};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub kind: ExperimentKind,
    pub directory: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Sink<'a> {
    dir: &'a Path,
    formats: &'a [Format],
    files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct JsonDoc<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    records: &'a [T],
}

impl<'a> Sink<'a> {
    fn csv<T: Serialize>(&mut self, stem: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, stem: &str, kind: &str, rows: &[T]) -> Result<()> {
        let path = self.dir.join(format!("{stem}.json"));
        let doc = JsonDoc {
            schema_version: SCHEMA_VERSION,
            kind,
            records: rows,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        fs::write(&path, text)?;
        self.files.push(path);
        Ok(())
    }

    /// Writes `rows` in every configured format.
    fn records<T: Serialize>(&mut self, stem: &str, kind: &str, rows: &[T]) -> Result<()> {
        for f in self.formats.to_vec() {
            match f {
                Format::Csv => self.csv(stem, rows)?,
                Format::Json => self.json(stem, kind, rows)?,
            }
        }
        Ok(())
    }
}

/// Flat row shared by critical, convergence and sweep outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalRecord {
    pub schema_version: u32,
    pub epsilon: f64,
    pub v_a: f64,
    pub v_b: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub l_prime: f64,
    #[serde(rename = "E_L")]
    pub e_l: f64,
    #[serde(rename = "E_Lprime")]
    pub e_lprime: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
    pub error: Option<f64>,
    pub l_prime_auto: bool,
    pub brackets_transition: bool,
    pub solver_calls: usize,
}

impl CriticalRecord {
    pub fn new(r: &CriticalResult, error: Option<f64>, solver_calls: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            epsilon: r.epsilon,
            v_a: r.v_a,
            v_b: r.v_b,
            n: r.nodes,
            l_prime: r.separation,
            e_l: r.e_l,
            e_lprime: r.e_lprime,
            r: r.ratio,
            v_c: r.v_c,
            error,
            l_prime_auto: r.diagnostics.separation.automatic,
            brackets_transition: r.diagnostics.brackets_transition,
            solver_calls,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleRecord {
    pub schema_version: u32,
    pub epsilon: f64,
    pub velocity: f64,
    pub t_final: f64,
    pub window: f64,
    pub outcome: String,
    pub window_fraction: f64,
    pub mass_drift: f64,
    pub hamiltonian_drift: f64,
    pub peak_position: f64,
    pub boundary_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRecord {
    pub schema_version: u32,
    pub epsilon: f64,
    pub v_lo: f64,
    pub v_hi: f64,
    pub tol: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
    pub solver_calls: usize,
    pub expected_calls: usize,
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CallRecord {
    pub velocity: f64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub schema_version: u32,
    pub epsilon: f64,
    pub bracket_source: String,
    pub v_a: f64,
    pub v_b: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub l_prime: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "V_c")]
    pub v_c: f64,
    pub status: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct NodeRecord {
    index: usize,
    node: f64,
    weight: f64,
    velocity: f64,
    window_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MeanModeRecord {
    x: f64,
    abs_u0: f64,
    variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrajectoryRecord {
    t: f64,
    x: f64,
    density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ConservationRow {
    t: f64,
    mass: f64,
    hamiltonian: f64,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    schema_version: u32,
    error: &'a str,
    exit_code: i32,
    message: String,
}

#[derive(Serialize)]
struct Timing {
    wall_time_s: f64,
}

fn model(cfg: &RunConfig, epsilon: f64, t_final: f64) -> PdeModel {
    let mut defect = cfg.defect();
    defect.strength = epsilon;
    PdeModel {
        grid: cfg.grid().expect("validated grid"),
        defect,
        soliton: cfg.soliton(cfg.physics.velocity),
        solver: cfg.solver_config(t_final),
    }
}

/// Window used when choosing the automatic final time of an ensemble.
fn ensemble_window(cfg: &RunConfig) -> f64 {
    cfg.oracle.window.max(cfg.separation.value.map(f64::abs).unwrap_or(0.0))
}

/// Runs the experiment selected by `cfg.kind` and writes its files into
/// `cfg.output.directory`. On failure an `error.json` is written as well.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = PathBuf::from(&cfg.output.directory);
    fs::create_dir_all(&dir)?;
    let _ = fs::remove_file(dir.join("error.json"));
    let echo = dir.join("config.toml");
    fs::write(&echo, cfg.to_toml()?)?;
    let mut sink = Sink {
        dir: &dir,
        formats: &cfg.output.formats,
        files: vec![echo],
    };

    let started = Instant::now();
    let outcome = match cfg.kind {
        ExperimentKind::Single => run_single(cfg, &mut sink),
        ExperimentKind::Ensemble => run_ensemble_kind(cfg, &mut sink, false),
        ExperimentKind::Critical => run_ensemble_kind(cfg, &mut sink, true),
        ExperimentKind::Convergence => run_convergence(cfg, &mut sink),
        ExperimentKind::Sweep => run_sweep(cfg, &mut sink),
        ExperimentKind::Oracle => run_oracle(cfg, &mut sink),
    };
    let timing = dir.join("timing.json");
    fs::write(
        &timing,
        serde_json::to_string_pretty(&Timing {
            wall_time_s: started.elapsed().as_secs_f64(),
        })?,
    )?;
    sink.files.push(timing);

    match outcome {
        Ok(()) => Ok(RunSummary {
            kind: cfg.kind,
            directory: dir.clone(),
            files: sink.files,
        }),
        Err(e) => {
            write_error(&dir, &e)?;
            Err(e)
        }
    }
}

/// Writes the machine-readable failure record.
pub fn write_error(dir: &Path, e: &Error) -> Result<()> {
    fs::create_dir_all(dir)?;
    let rec = ErrorRecord {
        schema_version: SCHEMA_VERSION,
        error: e.kind(),
        exit_code: e.exit_code(),
        message: e.to_string(),
    };
    fs::write(dir.join("error.json"), serde_json::to_string_pretty(&rec)? + "\n")?;
    Ok(())
}

fn run_single(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let v = cfg.physics.velocity;
    let window = cfg.oracle.window;
    let t_final = cfg.final_time(v, v, window);
    let grid = cfg.grid()?;
    let f0 = initial_soliton(&cfg.soliton(v), &grid, ZoneCheck::Enforce)?;
    let mut solver = cfg.solver_config(t_final);
    solver.checkpoint_stride = cfg.output.checkpoint_stride;
    let traj = propagate(&f0, &cfg.defect(), &solver)?;
    let last = traj.final_field();
    let (outcome, fraction) = match classify_field(last, window) {
        Ok(o) => (format!("{o:?}").to_lowercase(), window_fraction(last, window)),
        Err(Error::Inconclusive { fraction }) => ("inconclusive".to_string(), fraction),
        Err(e) => return Err(e),
    };
    log::info!(
        "eps = {}, V = {v}: {outcome} (window fraction {fraction:.4})",
        cfg.physics.epsilon
    );
    let rec = SingleRecord {
        schema_version: SCHEMA_VERSION,
        epsilon: cfg.physics.epsilon,
        velocity: v,
        t_final,
        window,
        outcome,
        window_fraction: fraction,
        mass_drift: traj.max_mass_drift(),
        hamiltonian_drift: traj.max_hamiltonian_drift(),
        peak_position: last.peak_position(),
        boundary_hits: traj.boundary_warnings.len(),
    };
    sink.records("single", "single", &[rec])?;
    let log: Vec<ConservationRow> = traj
        .log
        .iter()
        .map(|r| ConservationRow {
            t: r.time,
            mass: r.mass,
            hamiltonian: r.hamiltonian,
        })
        .collect();
    sink.csv("conservation", &log)?;
    if cfg.output.trajectory {
        let rows: Vec<TrajectoryRecord> = traj
            .checkpoints
            .iter()
            .flat_map(|c| {
                let t = c.time;
                grid.nodes().zip(c.field.values()).map(move |(x, u)| TrajectoryRecord {
                    t,
                    x,
                    density: u.norm_sqr(),
                })
            })
            .collect();
        sink.csv("trajectory", &rows)?;
    }
    Ok(())
}

fn write_ensemble_files(cfg: &RunConfig, sink: &mut Sink, e: &GpcEnsemble, window: f64) -> Result<()> {
    let nodes: Vec<NodeRecord> = (0..e.rule.len())
        .map(|j| NodeRecord {
            index: j,
            node: e.rule.nodes[j],
            weight: e.rule.weights[j],
            velocity: e.velocities[j],
            window_fraction: window_fraction(&e.fields[j], window),
        })
        .collect();
    sink.records("nodes", "nodes", &nodes)?;
    if cfg.output.plot_data {
        sink.csv("mean_mode", &mean_mode_rows(e))?;
    }
    Ok(())
}

fn mean_mode_rows(e: &GpcEnsemble) -> Vec<MeanModeRecord> {
    let mean: &WaveField = mean_mode(e);
    let var = variance(e);
    mean.grid()
        .nodes()
        .zip(mean.values())
        .zip(var)
        .map(|((x, u), variance)| MeanModeRecord {
            x,
            abs_u0: u.norm(),
            variance,
        })
        .collect()
}

fn run_ensemble_kind(cfg: &RunConfig, sink: &mut Sink, critical: bool) -> Result<()> {
    let window = ensemble_window(cfg);
    let t_final = cfg.final_time(cfg.chaos.v_a, cfg.chaos.v_b, window);
    let m = model(cfg, cfg.physics.epsilon, t_final);
    let rule = cfg.rule(cfg.chaos.nodes)?;
    let e = run_ensemble(&rule, &m, cfg.workers)?;
    write_ensemble_files(cfg, sink, &e, cfg.oracle.window)?;
    if critical {
        let r = critical_velocity(&e, &cfg.separation.policy())?;
        log::info!(
            "eps = {}: V_c = {:.10e} (L' = {}, R = {:.6})",
            r.epsilon,
            r.v_c,
            r.separation,
            r.ratio
        );
        sink.records("critical", "critical", &[CriticalRecord::new(&r, None, rule.len())])?;
    }
    Ok(())
}

fn run_convergence(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let window = ensemble_window(cfg);
    let t_final = cfg.final_time(cfg.chaos.v_a, cfg.chaos.v_b, window);
    let m = model(cfg, cfg.physics.epsilon, t_final);
    let rows = convergence_study(
        &m,
        |n| cfg.rule(n),
        &cfg.chaos.node_list,
        &cfg.separation.policy(),
        cfg.workers,
    )?;
    let records: Vec<CriticalRecord> = rows
        .iter()
        .map(|r| CriticalRecord::new(&r.result, r.error, r.solver_calls))
        .collect();
    sink.records("convergence", "convergence", &records)
}

fn classifier_for(cfg: &RunConfig, epsilon: f64, v_lo: f64, v_hi: f64) -> PdeClassifier {
    let window = cfg.oracle.window;
    PdeClassifier::new(model(cfg, epsilon, cfg.final_time(v_lo, v_hi, window)), window)
}

fn run_oracle(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let (lo, hi) = cfg.oracle_bracket();
    let eps = cfg.physics.epsilon;
    let c = classifier_for(cfg, eps, lo, hi);
    let r = bisect_critical(&c, eps, lo, hi, cfg.oracle.tol)?;
    log::info!(
        "eps = {eps}: bisection V_c = {:.8e} after {} solves",
        r.v_c,
        r.solver_calls
    );
    let rec = OracleRecord {
        schema_version: SCHEMA_VERSION,
        epsilon: eps,
        v_lo: lo,
        v_hi: hi,
        tol: cfg.oracle.tol,
        v_c: r.v_c,
        solver_calls: r.solver_calls,
        expected_calls: expected_calls(hi - lo, cfg.oracle.tol),
        retries: c.retries(),
    };
    sink.records("oracle", "oracle", &[rec])?;
    let calls: Vec<CallRecord> = r
        .calls
        .iter()
        .map(|&(velocity, outcome)| CallRecord { velocity, outcome })
        .collect();
    sink.csv("oracle_calls", &calls)
}

/// Classifies `v` with a final time fitted to `v` alone.
struct PerVelocity<'a> {
    cfg: &'a RunConfig,
    epsilon: f64,
}

impl Classifier for PerVelocity<'_> {
    fn classify(&self, v: f64) -> Result<Outcome> {
        classifier_for(self.cfg, self.epsilon, v, v).classify(v)
    }
}

/// Predicts the next `V_c` from the previous sweep points: linear in `eps`
/// through the last two, or constant after the first.
pub fn extrapolate(prev: &[(f64, f64)], epsilon: f64) -> Option<f64> {
    match prev {
        [] => None,
        [(_, v)] => Some(*v),
        [.., (e0, v0), (e1, v1)] => {
            let slope = (v1 - v0) / (e1 - e0);
            let guess = v1 + slope * (epsilon - e1);
            Some(if guess > 0.0 { guess } else { *v1 })
        }
    }
}

fn sweep_bracket(cfg: &RunConfig, eps: f64, prev: &[(f64, f64)]) -> Result<Option<(f64, f64, &'static str)>> {
    let (candidate, source) = match extrapolate(prev, eps) {
        None => ((cfg.chaos.v_a, cfg.chaos.v_b), "config"),
        Some(v) => (
            (
                v * (1.0 - cfg.sweep.relative_width),
                v * (1.0 + cfg.sweep.relative_width),
            ),
            "extrapolated",
        ),
    };
    let c = PerVelocity { cfg, epsilon: eps };
    let lo = c.classify(candidate.0);
    let hi = c.classify(candidate.1);
    if matches!((&lo, &hi), (Ok(Outcome::Trapped), Ok(Outcome::Transmitted))) {
        return Ok(Some((candidate.0, candidate.1, source)));
    }
    log::info!("eps = {eps}: {source} bracket {candidate:?} rejected ({lo:?}, {hi:?}); scanning");
    let scan = scan_for_bracket(&c, &cfg.sweep.scan)?;
    Ok(scan.bracket.map(|(a, b)| (a, b, "scan")))
}

fn run_sweep(cfg: &RunConfig, sink: &mut Sink) -> Result<()> {
    let mut prev: Vec<(f64, f64)> = Vec::new();
    let mut records = Vec::new();
    let mut first_error: Option<Error> = None;
    let window = ensemble_window(cfg);
    for &eps in &cfg.sweep.epsilons {
        let attempt = || -> Result<(CriticalResult, &'static str)> {
            let (v_a, v_b, source) = sweep_bracket(cfg, eps, &prev)?.ok_or_else(|| {
                Error::BracketInvalid(format!("eps = {eps}: no trapped/transmitted pair in the scan"))
            })?;
            let mut local = cfg.clone();
            local.chaos.v_a = v_a;
            local.chaos.v_b = v_b;
            let m = model(&local, eps, local.final_time(v_a, v_b, window));
            let e = run_ensemble(&local.rule(local.chaos.nodes)?, &m, cfg.workers)?;
            Ok((critical_velocity(&e, &cfg.separation.policy())?, source))
        };
        match attempt() {
            Ok((r, source)) => {
                log::info!("eps = {eps}: V_c = {:.8e} on [{}, {}] ({source})", r.v_c, r.v_a, r.v_b);
                prev.push((eps, r.v_c));
                records.push(SweepRecord {
                    schema_version: SCHEMA_VERSION,
                    epsilon: eps,
                    bracket_source: source.into(),
                    v_a: r.v_a,
                    v_b: r.v_b,
                    n: r.nodes,
                    l_prime: r.separation,
                    r: r.ratio,
                    v_c: r.v_c,
                    status: "ok".into(),
                    message: String::new(),
                });
            }
            Err(e) => {
                log::warn!("eps = {eps}: {e}");
                records.push(SweepRecord {
                    schema_version: SCHEMA_VERSION,
                    epsilon: eps,
                    bracket_source: String::new(),
                    v_a: f64::NAN,
                    v_b: f64::NAN,
                    n: 0,
                    l_prime: f64::NAN,
                    r: f64::NAN,
                    v_c: f64::NAN,
                    status: e.kind().into(),
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    sink.records("sweep", "sweep", &records)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
