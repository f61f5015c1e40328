//! Closed-form soliton solutions, the pinned bound state, and the
//! discrete Hamiltonian.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{spectral_derivative, Grid, WaveField};

/// Influence-zone radius in units of the soliton width `1/A`.
pub const INFLUENCE_WIDTHS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolitonParams {
    pub amplitude: f64,
    pub velocity: f64,
    pub phase: f64,
    pub start: f64,
}

impl SolitonParams {
    /// Unit-amplitude, zero-phase soliton launched from `start` with `velocity`.
    pub fn launch(velocity: f64, start: f64) -> Self {
        Self {
            amplitude: 1.0,
            velocity,
            phase: 0.0,
            start,
        }
    }

    pub fn with_velocity(self, velocity: f64) -> Self {
        Self { velocity, ..self }
    }

    pub fn influence_radius(&self) -> f64 {
        INFLUENCE_WIDTHS / self.amplitude
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.amplitude.is_finite() && self.amplitude > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "soliton amplitude must be positive, got {}",
                self.amplitude
            )));
        }
        if !(self.velocity.is_finite() && self.phase.is_finite() && self.start.is_finite()) {
            return Err(Error::InvalidArgument("soliton parameters must be finite".into()));
        }
        let limit = 1.0 / (4.0 * self.amplitude);
        if grid.dx() > limit {
            return Err(Error::Resolution { dx: grid.dx(), limit });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectParams {
    pub strength: f64,
}

impl DefectParams {
    pub fn new(strength: f64) -> Result<Self> {
        if !strength.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "defect strength must be finite, got {strength}"
            )));
        }
        Ok(Self { strength })
    }

    pub fn none() -> Self {
        Self { strength: 0.0 }
    }
}

/// Whether [`initial_soliton`] enforces the influence-zone rule on `x0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZoneCheck {
    Enforce,
    Skip,
}

fn sech(x: f64) -> f64 {
    // cosh overflows past ~710; sech is zero to double precision there anyway.
    if x.abs() > 700.0 {
        0.0
    } else {
        1.0 / x.cosh()
    }
}

/// `A sech(A (x - x0)) exp(i (phi + V x))` on the grid.
pub fn initial_soliton(p: &SolitonParams, grid: &Grid, zone: ZoneCheck) -> Result<WaveField> {
    p.validate(grid)?;
    if zone == ZoneCheck::Enforce && p.start.abs() < p.influence_radius() {
        return Err(Error::InfluenceZone {
            start: p.start,
            radius: p.influence_radius(),
        });
    }
    let a = p.amplitude;
    WaveField::from_fn(grid, |x| {
        Complex64::from_polar(a * sech(a * (x - p.start)), p.phase + p.velocity * x)
    })
}

/// Traveling soliton of the defect-free equation, peak at `x0 + V t`.
pub fn exact_free_soliton(p: &SolitonParams, t: f64, grid: &Grid) -> Result<WaveField> {
    p.validate(grid)?;
    let a = p.amplitude;
    let v = p.velocity;
    let phase_rate = 0.5 * (a * a - v * v);
    WaveField::from_fn(grid, |x| {
        Complex64::from_polar(a * sech(a * (x - p.start - v * t)), p.phase + v * x + phase_rate * t)
    })
}

/// Stationary state pinned at the defect:
/// `exp(i lambda^2 t / 2) lambda sech(lambda |x| + artanh(eps / lambda))`.
///
/// Requires `|eps / lambda| < 1`, i.e. `lambda > |eps|`.
pub fn bound_state(lambda: f64, eps: f64, t: f64, grid: &Grid) -> Result<WaveField> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let ratio = eps / lambda;
    if !(ratio.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "artanh argument eps/lambda = {ratio} outside (-1, 1)"
        )));
    }
    let shift = ratio.atanh();
    let phase = 0.5 * lambda * lambda * t;
    WaveField::from_fn(grid, |x| {
        Complex64::from_polar(lambda * sech(lambda * x.abs() + shift), phase)
    })
}

/// Discrete Hamiltonian `sum (|u_x|^2/2 - |u|^4/2) dx - eps |u(0)|^2`, with the
/// derivative taken spectrally and `|u(0)|^2` read at the node nearest the defect.
pub fn hamiltonian(f: &WaveField, d: &DefectParams) -> Result<f64> {
    let grid = f.grid();
    let deriv = spectral_derivative(f)?;
    let bulk: f64 = f
        .values()
        .iter()
        .zip(deriv.values())
        .map(|(u, du)| 0.5 * du.norm_sqr() - 0.5 * u.norm_sqr() * u.norm_sqr())
        .sum::<f64>()
        * grid.dx();
    let at_defect = f.values()[grid.nearest_index(0.0)].norm_sqr();
    Ok(bulk - d.strength * at_defect)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::mass;
    use approx::assert_abs_diff_eq;

    fn grid() -> Grid {
        Grid::new(40.0, 2048).unwrap()
    }

    #[test]
    fn centered_soliton_is_sech() {
        let g = grid();
        let p = SolitonParams {
            amplitude: 1.0,
            velocity: 0.0,
            phase: 0.0,
            start: 0.0,
        };
        let f = initial_soliton(&p, &g, ZoneCheck::Skip).unwrap();
        for (x, v) in g.nodes().zip(f.values()) {
            assert_abs_diff_eq!(v.re, 1.0 / x.cosh(), epsilon = 1e-15);
            assert_eq!(v.im, 0.0);
        }
    }

    #[test]
    fn launched_soliton_peaks_at_start() {
        let g = grid();
        let p = SolitonParams::launch(0.001, -20.0);
        let f = initial_soliton(&p, &g, ZoneCheck::Enforce).unwrap();
        assert_eq!(f.peak_position(), -20.0);
        assert_abs_diff_eq!(f.max_modulus(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn soliton_mass_is_twice_amplitude() {
        let g = grid();
        for a in [1.0, 2.0] {
            let p = SolitonParams {
                amplitude: a,
                velocity: 0.3,
                phase: 0.2,
                start: -10.0,
            };
            let f = initial_soliton(&p, &g, ZoneCheck::Skip).unwrap();
            assert_abs_diff_eq!(mass(&f), 2.0 * a, epsilon = 1e-10);
        }
    }

    #[test]
    fn modulus_even_about_start() {
        let g = grid();
        let p = SolitonParams {
            amplitude: 1.3,
            velocity: 0.7,
            phase: 0.0,
            start: -15.0,
        };
        let f = initial_soliton(&p, &g, ZoneCheck::Skip).unwrap();
        let c = g.nearest_index(-15.0);
        let m = f.modulus();
        for s in 1..200 {
            assert_abs_diff_eq!(m[c - s], m[c + s], epsilon = 1e-12);
        }
    }

    #[test]
    fn influence_zone_and_resolution_errors() {
        let g = grid();
        let p = SolitonParams::launch(0.1, -5.0);
        assert!(matches!(
            initial_soliton(&p, &g, ZoneCheck::Enforce),
            Err(Error::InfluenceZone { .. })
        ));
        assert!(initial_soliton(&p, &g, ZoneCheck::Skip).is_ok());

        let coarse = Grid::new(40.0, 64).unwrap();
        assert!(matches!(
            initial_soliton(&SolitonParams::launch(0.1, -20.0), &coarse, ZoneCheck::Enforce),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn exact_soliton_at_zero_matches_initial() {
        let g = grid();
        let p = SolitonParams {
            amplitude: 1.0,
            velocity: 0.5,
            phase: 0.3,
            start: -12.0,
        };
        let a = initial_soliton(&p, &g, ZoneCheck::Skip).unwrap();
        let b = exact_free_soliton(&p, 0.0, &g).unwrap();
        assert!(a.l2_distance(&b) < 1e-14);
    }

    #[test]
    fn exact_soliton_travels_and_rotates() {
        let g = grid();
        let p = SolitonParams {
            amplitude: 1.0,
            velocity: 0.5,
            phase: 0.0,
            start: -12.0,
        };
        let t = 10.0;
        let f = exact_free_soliton(&p, t, &g).unwrap();
        assert_abs_diff_eq!(f.peak_position(), -7.0, epsilon = 0.5 * g.dx());
        // phase at the peak node: V x + (A^2 - V^2) t / 2
        let peak = f.values()[f.peak_index()];
        let expected = 0.5 * f.peak_position() + 0.5 * (1.0 - 0.25) * t;
        let got = peak.arg();
        let diff = (got - expected).rem_euclid(2.0 * std::f64::consts::PI);
        assert!(diff < 1e-12 || (2.0 * std::f64::consts::PI - diff) < 1e-12);
    }

    #[test]
    fn bound_state_formula() {
        let g = grid();
        let f = bound_state(1.0, 0.5, 0.0, &g).unwrap();
        let at0 = f.values()[g.origin_index()];
        // sech(artanh(0.5)) = sqrt(1 - 0.25)
        assert_abs_diff_eq!(at0.re, 0.75f64.sqrt(), epsilon = 1e-15);

        let free = bound_state(1.5, 0.0, 2.0, &g).unwrap();
        for (x, v) in g.nodes().zip(free.values()) {
            let expected = Complex64::from_polar(1.5 / (1.5 * x).cosh(), 0.5 * 2.25 * 2.0);
            assert!((v - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn bound_state_domain() {
        let g = grid();
        assert!(matches!(bound_state(0.5, 1.0, 0.0, &g), Err(Error::Domain(_))));
        assert!(matches!(bound_state(1.0, 1.0, 0.0, &g), Err(Error::Domain(_))));
        assert!(matches!(bound_state(0.0, 0.0, 0.0, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn hamiltonian_of_resting_soliton() {
        let g = grid();
        assert_eq!(
            hamiltonian(&WaveField::zeros(&g), &DefectParams::new(1.0).unwrap()).unwrap(),
            0.0
        );
        let p = SolitonParams {
            amplitude: 1.0,
            velocity: 0.0,
            phase: 0.0,
            start: 0.0,
        };
        let f = initial_soliton(&p, &g, ZoneCheck::Skip).unwrap();
        let h = hamiltonian(&f, &DefectParams::none()).unwrap();
        assert_abs_diff_eq!(h, -1.0 / 3.0, epsilon = 2e-3);
    }
}
