//! Stochastic-collocation estimate of the critical velocity.
//!
//! The soliton velocity is treated as a random variable on `[V_a, V_b]`.
//! One deterministic solve per quadrature node gives the final fields
//! `u_j(x, T_f)`; the chaos coefficients are `u_m = sum_j u_j P_m(a_j) w_j`.
//! Only the mean mode `u_0` enters the estimate: the share of its energy
//! left of the separation point `L'` is mapped linearly onto the interval,
//! `V_c = V_a + (V_b - V_a) E_L' / E_L`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::QuadratureRule;
use crate::error::{Error, Result};
use crate::grid::{Grid, WaveField};
use crate::soliton::{initial_soliton, DefectParams, SolitonParams, ZoneCheck};
use crate::solver::{classify_field, propagate, Outcome, SolverConfig};

/// Anything that maps a launch velocity to a final-time field.
pub trait FieldModel: Sync {
    fn grid(&self) -> &Grid;
    fn defect(&self) -> DefectParams;
    fn final_field(&self, velocity: f64) -> Result<WaveField>;
}

/// The full PDE: launch a soliton with the given velocity and propagate.
#[derive(Debug, Clone)]
pub struct PdeModel {
    pub grid: Grid,
    pub defect: DefectParams,
    pub soliton: SolitonParams,
    pub solver: SolverConfig,
}

impl PdeModel {
    pub fn launch(&self, velocity: f64) -> Result<WaveField> {
        initial_soliton(&self.soliton.with_velocity(velocity), &self.grid, ZoneCheck::Enforce)
    }
}

impl FieldModel for PdeModel {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn defect(&self) -> DefectParams {
        self.defect
    }

    fn final_field(&self, velocity: f64) -> Result<WaveField> {
        let f0 = self.launch(velocity)?;
        let mut cfg = self.solver.clone();
        cfg.checkpoint_stride = 0;
        let traj = propagate(&f0, &self.defect, &cfg)?;
        if !traj.boundary_warnings.is_empty() {
            log::warn!(
                "V = {velocity}: mass near the periodic boundary at {} checks",
                traj.boundary_warnings.len()
            );
        }
        Ok(traj.into_final_field())
    }
}

/// Step-function stand-in for the PDE: a unit soliton sitting on the defect
/// when `V < threshold`, otherwise the same soliton displaced to `x = offset`.
#[derive(Debug, Clone)]
pub struct StepSurrogate {
    pub grid: Grid,
    pub threshold: f64,
    pub offset: f64,
}

impl StepSurrogate {
    pub fn new(grid: &Grid, threshold: f64) -> Self {
        Self {
            grid: grid.clone(),
            threshold,
            offset: 0.5 * grid.half_width(),
        }
    }
}

impl FieldModel for StepSurrogate {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn defect(&self) -> DefectParams {
        DefectParams::none()
    }

    fn final_field(&self, velocity: f64) -> Result<WaveField> {
        let centre = if velocity < self.threshold { 0.0 } else { self.offset };
        WaveField::from_fn(&self.grid, |x| Complex64::new(1.0 / (x - centre).cosh(), 0.0))
    }
}

#[derive(Debug, Clone)]
pub struct GpcEnsemble {
    pub rule: QuadratureRule,
    pub defect: DefectParams,
    pub velocities: Vec<f64>,
    pub fields: Vec<WaveField>,
    /// `u_m(x, T_f)` for `m = 0..=Q`.
    pub coefficients: Vec<WaveField>,
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))
}

/// Solves at every quadrature velocity (up to `workers` at a time) and
/// assembles the chaos coefficients in fixed node order.
pub fn run_ensemble<M: FieldModel>(rule: &QuadratureRule, model: &M, workers: usize) -> Result<GpcEnsemble> {
    let velocities = rule.velocities();
    let fields: Vec<WaveField> = if workers <= 1 {
        velocities
            .iter()
            .map(|&v| model.final_field(v))
            .collect::<Result<_>>()?
    } else {
        build_pool(workers)?.install(|| {
            velocities
                .par_iter()
                .map(|&v| model.final_field(v))
                .collect::<Result<Vec<_>>>()
        })?
    };
    let coefficients = chaos_coefficients(rule, &fields)?;
    Ok(GpcEnsemble {
        rule: rule.clone(),
        defect: model.defect(),
        velocities,
        fields,
        coefficients,
    })
}

/// `u_m = sum_j u_j P_m(a_j) w_j`, summed in node order.
pub fn chaos_coefficients(rule: &QuadratureRule, fields: &[WaveField]) -> Result<Vec<WaveField>> {
    if fields.len() != rule.len() {
        return Err(Error::InvalidArgument(format!(
            "{} fields for a {}-node rule",
            fields.len(),
            rule.len()
        )));
    }
    let grid = fields[0].grid().clone();
    if fields.iter().any(|f| f.grid() != &grid) {
        return Err(Error::InvalidArgument("ensemble fields live on different grids".into()));
    }
    let basis = rule.basis();
    let node_values: Vec<Vec<f64>> = rule.nodes.iter().map(|&a| basis.eval(a)).collect::<Result<_>>()?;
    let mut coeffs = Vec::with_capacity(rule.order + 1);
    for m in 0..=rule.order {
        let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
        for ((field, p), &w) in fields.iter().zip(&node_values).zip(&rule.weights) {
            let scale = p[m] * w;
            for (a, u) in acc.iter_mut().zip(field.values()) {
                *a += u * scale;
            }
        }
        coeffs.push(WaveField::new(&grid, acc)?);
    }
    Ok(coeffs)
}

/// The zeroth chaos mode, i.e. the ensemble mean.
pub fn mean_mode(e: &GpcEnsemble) -> &WaveField {
    &e.coefficients[0]
}

/// Pointwise variance `sum_{m>=1} |u_m|^2` of the truncated expansion.
pub fn variance(e: &GpcEnsemble) -> Vec<f64> {
    let n = e.coefficients[0].values().len();
    (0..n)
        .map(|j| e.coefficients[1..].iter().map(|c| c.values()[j].norm_sqr()).sum())
        .collect()
}

/// Evaluates the truncated expansion at velocity `v`. Diagnostic only: the
/// expansion is not expected to converge near the critical velocity.
pub fn reconstruct(e: &GpcEnsemble, v: f64) -> Result<WaveField> {
    let node = e.rule.node_from_velocity(v)?;
    let p = e.rule.basis().eval(node)?;
    let grid = e.coefficients[0].grid();
    let mut acc = vec![Complex64::new(0.0, 0.0); grid.len()];
    for (c, pk) in e.coefficients.iter().zip(&p) {
        for (a, u) in acc.iter_mut().zip(c.values()) {
            *a += u * *pk;
        }
    }
    WaveField::new(grid, acc)
}

/// Default relative threshold for separation-gap detection.
pub const DEFAULT_GAP_THRESHOLD: f64 = 1e-3;
/// Default minimum gap width (length units).
pub const DEFAULT_MIN_GAP: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum SeparationPolicy {
    Auto {
        threshold: f64,
        min_gap: f64,
        fallback: Option<f64>,
    },
    Manual {
        value: f64,
    },
}

impl Default for SeparationPolicy {
    fn default() -> Self {
        SeparationPolicy::Auto {
            threshold: DEFAULT_GAP_THRESHOLD,
            min_gap: DEFAULT_MIN_GAP,
            fallback: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub value: f64,
    /// `(start, end)` of every sub-threshold run with `x >= 0`.
    pub gaps: Vec<(f64, f64)>,
    pub automatic: bool,
}

/// Locates `L'`: the left edge of the widest stretch right of the defect
/// where `|u_0| < threshold * max |u_0|`, if that stretch is at least
/// `min_gap` wide.
pub fn detect_separation(mean: &WaveField, policy: &SeparationPolicy) -> Result<Separation> {
    let (threshold, min_gap, fallback) = match *policy {
        SeparationPolicy::Manual { value } => {
            return Ok(Separation {
                value,
                gaps: Vec::new(),
                automatic: false,
            });
        }
        SeparationPolicy::Auto {
            threshold,
            min_gap,
            fallback,
        } => (threshold, min_gap, fallback),
    };
    let grid = mean.grid();
    let modulus = mean.modulus();
    let cutoff = threshold * modulus.iter().copied().fold(0.0, f64::max);
    let start = grid.nearest_index(0.0);

    let mut gaps = Vec::new();
    let mut run: Option<usize> = None;
    for j in start..grid.len() {
        let below = modulus[j] < cutoff;
        match (below, run) {
            (true, None) => run = Some(j),
            (false, Some(s)) => {
                gaps.push((grid.x(s), grid.x(j - 1)));
                run = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run {
        gaps.push((grid.x(s), grid.x(grid.len() - 1)));
    }
    // A run reaching the right boundary separates nothing unless it is the
    // only candidate, as when every soliton is trapped.
    let trailing_start = run.map(|s| grid.x(s));
    let widest_of = |interior: bool| {
        gaps.iter()
            .copied()
            .filter(|&(a, b)| b - a >= min_gap && (Some(a) != trailing_start) == interior)
            .fold(None, |best: Option<(f64, f64)>, g| match best {
                Some(b) if b.1 - b.0 >= g.1 - g.0 => Some(b),
                _ => Some(g),
            })
    };
    let widest = widest_of(true).or_else(|| widest_of(false));
    match (widest, fallback) {
        (Some((a, _)), _) => Ok(Separation {
            value: a,
            gaps,
            automatic: true,
        }),
        (None, Some(value)) => {
            log::warn!("no separation gap found; falling back to L' = {value}");
            Ok(Separation {
                value,
                gaps,
                automatic: false,
            })
        }
        (None, None) => Err(Error::DetectionFailed(format!(
            "no gap of width >= {min_gap} below {threshold:e} x peak right of the defect"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergySplit {
    pub total: f64,
    pub left: f64,
    pub ratio: f64,
}

/// `E_L = 1/2 int_{-L}^{L} |u_0|^2`, `E_L' = 1/2 int_{-L}^{L'} |u_0|^2`, rectangle rule.
pub fn energy_ratio(mean: &WaveField, separation: f64) -> Result<EnergySplit> {
    let grid = mean.grid();
    let l = grid.half_width();
    if !(separation > -l && separation < l) {
        return Err(Error::InvalidArgument(format!("L' = {separation} outside (-{l}, {l})")));
    }
    let mut total = 0.0;
    let mut left = 0.0;
    for (x, u) in grid.nodes().zip(mean.values()) {
        let e = u.norm_sqr();
        total += e;
        if x <= separation {
            left += e;
        }
    }
    total *= 0.5 * grid.dx();
    left *= 0.5 * grid.dx();
    if total == 0.0 {
        return Err(Error::Internal("mean mode carries no energy".into()));
    }
    Ok(EnergySplit {
        total,
        left,
        ratio: left / total,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalDiagnostics {
    /// Classification of the slowest and fastest nodes (`None` when inconclusive).
    pub endpoint_outcomes: (Option<Outcome>, Option<Outcome>),
    pub brackets_transition: bool,
    pub separation: Separation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalResult {
    pub epsilon: f64,
    pub v_a: f64,
    pub v_b: f64,
    pub nodes: usize,
    pub separation: f64,
    pub e_l: f64,
    pub e_lprime: f64,
    pub ratio: f64,
    pub v_c: f64,
    pub diagnostics: CriticalDiagnostics,
}

fn outcome_or_none(field: &WaveField, window: f64) -> Option<Outcome> {
    classify_field(field, window).ok()
}

/// Applies the linear energy-fraction formula to an ensemble, with `L'`
/// chosen by `policy`. The endpoint nodes are classified with `L'` as the
/// trapping window; a non-bracketing ensemble only produces a warning.
pub fn critical_velocity(e: &GpcEnsemble, policy: &SeparationPolicy) -> Result<CriticalResult> {
    let mean = mean_mode(e);
    let separation = detect_separation(mean, policy)?;
    let split = energy_ratio(mean, separation.value)?;
    let (v_a, v_b) = e.rule.map.interval();

    let window = separation.value.abs().max(mean.grid().dx());
    let first = outcome_or_none(&e.fields[0], window);
    let last = outcome_or_none(&e.fields[e.fields.len() - 1], window);
    let brackets = first == Some(Outcome::Trapped) && last == Some(Outcome::Transmitted);
    if !brackets {
        log::warn!(
            "eps = {}: ensemble on [{v_a}, {v_b}] does not bracket the transition ({first:?}, {last:?})",
            e.defect.strength
        );
    }
    let v_c = (v_a + (v_b - v_a) * split.ratio).clamp(v_a, v_b);
    Ok(CriticalResult {
        epsilon: e.defect.strength,
        v_a,
        v_b,
        nodes: e.rule.len(),
        separation: separation.value,
        e_l: split.total,
        e_lprime: split.left,
        ratio: split.ratio,
        v_c,
        diagnostics: CriticalDiagnostics {
            endpoint_outcomes: (first, last),
            brackets_transition: brackets,
            separation,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub nodes: usize,
    pub v_c: f64,
    /// `|V_c(N) - V_c(N_prev)|` against the previous entry of the study.
    pub error: Option<f64>,
    pub result: CriticalResult,
    pub solver_calls: usize,
}

/// One independent ensemble per node count; `make_rule` builds the rule
/// for a given count.
pub fn convergence_study<M: FieldModel>(
    model: &M,
    make_rule: impl Fn(usize) -> Result<QuadratureRule>,
    node_counts: &[usize],
    policy: &SeparationPolicy,
    workers: usize,
) -> Result<Vec<ConvergenceRow>> {
    if node_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("node counts must be strictly increasing".into()));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(node_counts.len());
    for &n in node_counts {
        let rule = make_rule(n)?;
        let ensemble = run_ensemble(&rule, model, workers)?;
        let result = critical_velocity(&ensemble, policy)?;
        let error = rows.last().map(|prev| (result.v_c - prev.v_c).abs());
        log::info!("N = {n}: V_c = {:.10e}", result.v_c);
        rows.push(ConvergenceRow {
            nodes: n,
            v_c: result.v_c,
            error,
            result,
            solver_calls: rule.len(),
        });
    }
    Ok(rows)
}
