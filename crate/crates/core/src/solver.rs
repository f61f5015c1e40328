//! Split-step Fourier propagation of
//! `i u_t + u_xx / 2 + |u|^2 u = -eps delta(x) u` on a periodic grid.
//!
//! Dispersion is applied exactly in Fourier space. The cubic term and the
//! defect are both diagonal in `x` and are applied together as a pure phase
//! rotation, with the delta regularized to `1/dx` at the node `x = 0`.
//! Every substep is unitary, so mass drift is rounding only.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mass, Grid, WaveField};
use crate::soliton::{hamiltonian, DefectParams, SolitonParams};

/// Nodes within this distance of the periodic boundary are watched for wrap-around.
pub const BOUNDARY_BAND: f64 = 2.0;
/// Mass fraction in the boundary band that triggers a wrap-around warning.
pub const BOUNDARY_FRACTION: f64 = 1e-4;
/// Mass fractions inside this band make [`classify`] inconclusive.
pub const INCONCLUSIVE_BAND: (f64, f64) = (0.35, 0.65);
/// Trapping window used when no separation point is known.
pub const DEFAULT_WINDOW: f64 = 5.0;

const GUARD_CHECK_INTERVAL: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Splitting {
    FirstOrder,
    Strang,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_final: f64,
    pub splitting: Splitting,
    /// Steps between recorded checkpoints; 0 records only the endpoints.
    pub checkpoint_stride: usize,
    /// Blow-up guard as a multiple of the initial peak modulus.
    pub blowup_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            t_final: 0.0,
            splitting: Splitting::Strang,
            checkpoint_stride: 0,
            blowup_factor: 1e3,
        }
    }
}

impl SolverConfig {
    pub fn new(dt: f64, t_final: f64, splitting: Splitting) -> Self {
        Self {
            dt,
            t_final,
            splitting,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_final.is_finite() && self.t_final >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "t_final must be non-negative, got {}",
                self.t_final
            )));
        }
        if self.t_final / self.dt > 1e12 {
            return Err(Error::InvalidArgument("t_final / dt exceeds step-count range".into()));
        }
        if !(self.blowup_factor > 1.0) {
            return Err(Error::InvalidArgument("blow-up factor must exceed 1".into()));
        }
        Ok(())
    }

    /// Whole steps plus the length of a trailing partial step (zero when
    /// `t_final` is a multiple of `dt` to 1e-9 relative).
    pub fn step_plan(&self) -> (usize, f64) {
        let ratio = self.t_final / self.dt;
        let whole = ratio.round();
        if (ratio - whole).abs() <= 1e-9 * ratio.max(1.0) {
            (whole as usize, 0.0)
        } else {
            let n = ratio.floor();
            (n as usize, self.t_final - n * self.dt)
        }
    }
}

/// In-place stepper with precomputed dispersion phases.
pub struct Propagator {
    grid: Grid,
    splitting: Splitting,
    dt: f64,
    half_dispersion: Vec<Complex64>,
    full_dispersion: Vec<Complex64>,
    defect_index: usize,
    defect_potential: f64,
    scratch: Vec<Complex64>,
}

fn dispersion_phases(grid: &Grid, tau: f64) -> Vec<Complex64> {
    grid.wavenumbers()
        .iter()
        .map(|k| Complex64::from_polar(1.0, -0.5 * tau * k * k))
        .collect()
}

impl Propagator {
    /// `dt` may be negative for backward integration.
    pub fn new(grid: &Grid, defect: &DefectParams, dt: f64, splitting: Splitting) -> Self {
        Self {
            grid: grid.clone(),
            splitting,
            dt,
            half_dispersion: dispersion_phases(grid, 0.5 * dt),
            full_dispersion: dispersion_phases(grid, dt),
            defect_index: grid.nearest_index(0.0),
            defect_potential: defect.strength / grid.dx(),
            scratch: vec![Complex64::new(0.0, 0.0); grid.scratch_len()],
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn disperse(&mut self, u: &mut [Complex64], half: bool) {
        self.grid.fft_forward_in_place(u, &mut self.scratch);
        let phases = if half {
            &self.half_dispersion
        } else {
            &self.full_dispersion
        };
        for (c, p) in u.iter_mut().zip(phases) {
            *c *= p;
        }
        self.grid.fft_inverse_in_place(u, &mut self.scratch);
    }

    fn rotate(&self, u: &mut [Complex64]) {
        apply_phase_step(u, self.dt, self.defect_index, self.defect_potential);
    }

    /// Advances `n` steps. Adjacent Strang half-steps are fused.
    pub fn advance(&mut self, u: &mut [Complex64], n: usize) {
        if n == 0 {
            return;
        }
        match self.splitting {
            Splitting::FirstOrder => {
                for _ in 0..n {
                    self.disperse(u, false);
                    self.rotate(u);
                }
            }
            Splitting::Strang => {
                self.disperse(u, true);
                for i in 0..n {
                    self.rotate(u);
                    self.disperse(u, i + 1 == n);
                }
            }
        }
    }
}

fn apply_phase_step(u: &mut [Complex64], tau: f64, defect_index: usize, defect_potential: f64) {
    for (j, v) in u.iter_mut().enumerate() {
        let mut theta = v.norm_sqr();
        if j == defect_index {
            theta += defect_potential;
        }
        *v *= Complex64::from_polar(1.0, tau * theta);
    }
}

/// `F^-1[exp(-i tau k^2 / 2) F[f]]`.
pub fn dispersion_step(f: &WaveField, tau: f64) -> WaveField {
    let grid = f.grid();
    let mut u = f.values().to_vec();
    let mut scratch = vec![Complex64::new(0.0, 0.0); grid.scratch_len()];
    grid.fft_forward_in_place(&mut u, &mut scratch);
    for (c, k) in u.iter_mut().zip(grid.wavenumbers()) {
        *c *= Complex64::from_polar(1.0, -0.5 * tau * k * k);
    }
    grid.fft_inverse_in_place(&mut u, &mut scratch);
    WaveField::from_parts_unchecked(grid, u)
}

/// Pointwise `f_j exp(i tau (|f_j|^2 + eps delta_j))`.
pub fn potential_nonlinear_step(f: &WaveField, d: &DefectParams, tau: f64) -> WaveField {
    let grid = f.grid();
    let mut u = f.values().to_vec();
    apply_phase_step(&mut u, tau, grid.nearest_index(0.0), d.strength / grid.dx());
    WaveField::from_parts_unchecked(grid, u)
}

/// One symmetric step: half dispersion, full phase rotation, half dispersion.
pub fn step_strang(f: &WaveField, d: &DefectParams, dt: f64) -> WaveField {
    let half = dispersion_step(f, 0.5 * dt);
    let rotated = potential_nonlinear_step(&half, d, dt);
    dispersion_step(&rotated, 0.5 * dt)
}

/// One Lie step: full dispersion, then the phase rotation.
pub fn step_first_order(f: &WaveField, d: &DefectParams, dt: f64) -> WaveField {
    potential_nonlinear_step(&dispersion_step(f, dt), d, dt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub time: f64,
    pub field: WaveField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationRecord {
    pub time: f64,
    pub mass: f64,
    pub hamiltonian: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<ConservationRecord>,
    /// Times at which mass approached the periodic boundary.
    pub boundary_warnings: Vec<f64>,
}

impl Trajectory {
    pub fn final_field(&self) -> &WaveField {
        &self.checkpoints.last().expect("trajectory always has t=0").field
    }

    pub fn final_time(&self) -> f64 {
        self.checkpoints.last().expect("trajectory always has t=0").time
    }

    pub fn into_final_field(mut self) -> WaveField {
        self.checkpoints.pop().expect("trajectory always has t=0").field
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.log[0].mass;
        self.log.iter().map(|r| (r.mass - m0).abs() / m0).fold(0.0, f64::max)
    }

    pub fn max_hamiltonian_drift(&self) -> f64 {
        let h0 = self.log[0].hamiltonian;
        self.log.iter().map(|r| (r.hamiltonian - h0).abs()).fold(0.0, f64::max)
    }
}

fn boundary_fraction(grid: &Grid, u: &[Complex64], total: f64) -> f64 {
    let l = grid.half_width();
    let near: f64 = grid
        .nodes()
        .zip(u)
        .filter(|(x, _)| *x < -l + BOUNDARY_BAND || *x > l - BOUNDARY_BAND)
        .map(|(_, v)| v.norm_sqr())
        .sum::<f64>()
        * grid.dx();
    near / total
}

fn check_guard(u: &[Complex64], time: f64, guard: f64) -> Result<()> {
    let mut peak = 0.0f64;
    for (j, v) in u.iter().enumerate() {
        if !(v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::NonFinite(j));
        }
        peak = peak.max(v.norm());
    }
    if peak > guard {
        return Err(Error::BlowUp { time, peak, guard });
    }
    Ok(())
}

/// Integrates from `f0` to `cfg.t_final`, recording checkpoints and the
/// conservation log every `cfg.checkpoint_stride` steps.
pub fn propagate(f0: &WaveField, d: &DefectParams, cfg: &SolverConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(
            f0.values()
                .iter()
                .position(|v| !v.re.is_finite() || !v.im.is_finite())
                .unwrap_or(0),
        ));
    }
    let grid = f0.grid().clone();
    let guard = cfg.blowup_factor * f0.max_modulus().max(f64::MIN_POSITIVE);
    let m0 = mass(f0);
    let record = |field: &WaveField, time: f64| -> Result<ConservationRecord> {
        Ok(ConservationRecord {
            time,
            mass: mass(field),
            hamiltonian: hamiltonian(field, d)?,
        })
    };

    let mut traj = Trajectory {
        checkpoints: vec![Checkpoint {
            time: 0.0,
            field: f0.clone(),
        }],
        log: vec![record(f0, 0.0)?],
        boundary_warnings: Vec::new(),
    };
    let (n_steps, remainder) = cfg.step_plan();
    if n_steps == 0 && remainder == 0.0 {
        return Ok(traj);
    }

    let mut prop = Propagator::new(&grid, d, cfg.dt, cfg.splitting);
    let mut u = f0.values().to_vec();
    let stride = if cfg.checkpoint_stride == 0 {
        usize::MAX
    } else {
        cfg.checkpoint_stride
    };
    let mut done = 0usize;
    let mut since_checkpoint = 0usize;
    let mut warned = false;
    while done < n_steps {
        let chunk = (n_steps - done)
            .min(GUARD_CHECK_INTERVAL)
            .min(stride - since_checkpoint);
        prop.advance(&mut u, chunk);
        done += chunk;
        since_checkpoint += chunk;
        let time = done as f64 * cfg.dt;
        check_guard(&u, time, guard)?;
        if m0 > 0.0 && boundary_fraction(&grid, &u, m0) > BOUNDARY_FRACTION {
            if !warned {
                log::warn!("mass reached the periodic boundary at t = {time:.3}; wrap-around likely");
                warned = true;
            }
            traj.boundary_warnings.push(time);
        }
        let last = done == n_steps && remainder == 0.0;
        if since_checkpoint == stride || last {
            let field = WaveField::from_parts_unchecked(&grid, u.clone());
            traj.log.push(record(&field, time)?);
            traj.checkpoints.push(Checkpoint { time, field });
            since_checkpoint = 0;
        }
    }
    if remainder > 0.0 {
        let mut tail = Propagator::new(&grid, d, remainder, cfg.splitting);
        tail.advance(&mut u, 1);
        check_guard(&u, cfg.t_final, guard)?;
        let field = WaveField::from_parts_unchecked(&grid, u);
        traj.log.push(record(&field, cfg.t_final)?);
        traj.checkpoints.push(Checkpoint {
            time: cfg.t_final,
            field,
        });
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Trapped,
    Transmitted,
}

/// Fraction of the mass inside `[-window, window]`.
pub fn window_fraction(field: &WaveField, window: f64) -> f64 {
    let total = mass(field);
    if total == 0.0 {
        return 0.0;
    }
    field.mass_between(-window, window) / total
}

/// Trapped when more than half the final mass sits in `[-window, window]`.
/// Reflected and transmitted solitons both count as not trapped. Fractions
/// within [`INCONCLUSIVE_BAND`] are reported as [`Error::Inconclusive`].
pub fn classify(traj: &Trajectory, window: f64) -> Result<Outcome> {
    classify_field(traj.final_field(), window)
}

pub fn classify_field(field: &WaveField, window: f64) -> Result<Outcome> {
    if !(window > 0.0 && window < field.grid().half_width()) {
        return Err(Error::InvalidArgument(format!("window {window} outside (0, L)")));
    }
    let fraction = window_fraction(field, window);
    if fraction >= INCONCLUSIVE_BAND.0 && fraction <= INCONCLUSIVE_BAND.1 {
        return Err(Error::Inconclusive { fraction });
    }
    Ok(if fraction > 0.5 {
        Outcome::Trapped
    } else {
        Outcome::Transmitted
    })
}

/// Checks that an unperturbed soliton would clear the window by `margin`.
pub fn check_clearance(p: &SolitonParams, t_final: f64, window: f64, margin: f64) -> Result<()> {
    let required = p.start.abs() + window + margin;
    let covered = p.velocity * t_final;
    // Relative slack so a final time chosen to exactly clear the window passes.
    if covered < required * (1.0 - 1e-9) {
        return Err(Error::InsufficientTime {
            t_final,
            required,
            covered,
        });
    }
    Ok(())
}
