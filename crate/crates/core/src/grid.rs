//! Uniform periodic grid on `[-L, L)` and the discrete Fourier transform
//! used by the split-step propagator.
//!
//! The forward transform is unnormalized; the inverse carries the `1/M`
//! factor, so `inverse(forward(f)) == f` up to rounding.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

struct GridInner {
    half_width: f64,
    n_points: usize,
    dx: f64,
    wavenumbers: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// Immutable periodic grid. Cloning is cheap (shared FFT plans).
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("half_width", &self.inner.half_width)
            .field("n_points", &self.inner.n_points)
            .field("dx", &self.inner.dx)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.half_width == other.inner.half_width && self.inner.n_points == other.inner.n_points)
    }
}

impl Grid {
    /// Builds the grid `x_j = -L + j dx`, `j = 0..M`, with `dx = 2L/M`.
    pub fn new(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "half-width must be positive and finite, got {half_width}"
            )));
        }
        if n_points < 8 || !n_points.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "number of grid points must be a power of two >= 8, got {n_points}"
            )));
        }
        let dx = 2.0 * half_width / n_points as f64;
        let scale = PI / half_width;
        let half = n_points / 2;
        let wavenumbers = (0..n_points)
            .map(|j| {
                let m = if j < half { j as f64 } else { j as f64 - n_points as f64 };
                m * scale
            })
            .collect();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n_points);
        let inverse = planner.plan_fft_inverse(n_points);
        Ok(Self {
            inner: Arc::new(GridInner {
                half_width,
                n_points,
                dx,
                wavenumbers,
                forward,
                inverse,
            }),
        })
    }

    pub fn half_width(&self) -> f64 {
        self.inner.half_width
    }

    pub fn len(&self) -> usize {
        self.inner.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        self.inner.dx
    }

    /// Wavenumbers in FFT order: `0, 1, .., M/2-1, -M/2, .., -1` times `pi/L`.
    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.inner.half_width + j as f64 * self.inner.dx
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(move |j| self.x(j))
    }

    /// Index of the node at `x = 0` (exact for even `M`).
    pub fn origin_index(&self) -> usize {
        self.inner.n_points / 2
    }

    /// Index of the node nearest to `x`, clamped to the grid.
    pub fn nearest_index(&self, x: f64) -> usize {
        let j = ((x + self.inner.half_width) / self.inner.dx).round();
        j.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    pub(crate) fn fft_forward_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inner.forward.process_with_scratch(buf, scratch);
    }

    /// Inverse transform including the `1/M` normalization.
    pub(crate) fn fft_inverse_in_place(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.inner.inverse.process_with_scratch(buf, scratch);
        let norm = 1.0 / self.inner.n_points as f64;
        for v in buf.iter_mut() {
            *v *= norm;
        }
    }

    pub(crate) fn scratch_len(&self) -> usize {
        self.inner
            .forward
            .get_inplace_scratch_len()
            .max(self.inner.inverse.get_inplace_scratch_len())
    }
}

/// Complex wavefunction sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct WaveField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl WaveField {
    pub fn new(grid: &Grid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "field has {} values but grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(j) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite(j));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    pub(crate) fn from_parts_unchecked(grid: &Grid, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::from_parts_unchecked(grid, vec![Complex64::new(0.0, 0.0); grid.len()])
    }

    /// Samples `f(x_j)` on every node.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.nodes().map(f).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }

    pub fn max_modulus(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Index of the node with the largest modulus.
    pub fn peak_index(&self) -> usize {
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for (j, v) in self.values.iter().enumerate() {
            let n = v.norm_sqr();
            if n > best_val {
                best_val = n;
                best = j;
            }
        }
        best
    }

    pub fn peak_position(&self) -> f64 {
        self.grid.x(self.peak_index())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Rectangle-rule mass `sum |f|^2 dx` restricted to nodes with `lo <= x <= hi`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        self.grid
            .nodes()
            .zip(&self.values)
            .filter(|(x, _)| *x >= lo && *x <= hi)
            .map(|(_, v)| v.norm_sqr())
            .sum::<f64>()
            * self.grid.dx()
    }

    /// Discrete L2 distance to another field on the same grid.
    pub fn l2_distance(&self, other: &WaveField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Fourier coefficients of a [`WaveField`], in FFT order matching
/// [`Grid::wavenumbers`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl SpectralField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Parseval counterpart of [`mass`]: `dx/M * sum |c_k|^2`.
    pub fn mass(&self) -> f64 {
        let m = self.grid.len() as f64;
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.dx() / m
    }
}

pub fn forward_transform(f: &WaveField) -> Result<SpectralField> {
    if let Some(j) = f.values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite(j));
    }
    let mut coeffs = f.values.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); f.grid.scratch_len()];
    f.grid.fft_forward_in_place(&mut coeffs, &mut scratch);
    Ok(SpectralField {
        grid: f.grid.clone(),
        coeffs,
    })
}

pub fn inverse_transform(s: &SpectralField) -> WaveField {
    let mut values = s.coeffs.clone();
    let mut scratch = vec![Complex64::new(0.0, 0.0); s.grid.scratch_len()];
    s.grid.fft_inverse_in_place(&mut values, &mut scratch);
    WaveField::from_parts_unchecked(&s.grid, values)
}

/// Spectral derivative `d/dx` (multiplies each mode by `i k`).
pub fn spectral_derivative(f: &WaveField) -> Result<WaveField> {
    let mut s = forward_transform(f)?;
    let m = f.grid.len();
    for (j, (c, &k)) in s.coeffs.iter_mut().zip(f.grid.wavenumbers()).enumerate() {
        // The Nyquist mode has no odd partner; drop it so real fields stay real.
        if j == m / 2 {
            *c = Complex64::new(0.0, 0.0);
        } else {
            *c *= Complex64::new(0.0, k);
        }
    }
    Ok(inverse_transform(&s))
}

/// Rectangle-rule mass `sum_j |f_j|^2 dx` (exact trapezoid on a periodic grid).
pub fn mass(f: &WaveField) -> f64 {
    f.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * f.grid.dx()
}
