//! Equilibrium Falicov-Kimball propagator and self-energy.
//!
//! The light electron sees the bath `λ` and, with probability `w1`, the
//! static heavy particle. Every quantity here is diagonal in Matsubara space.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::BathFunction;
use crate::error::{Error, Result};
use crate::grid::MatsubaraGrid;

/// Chemical potential, interaction strength and heavy-particle density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkParams {
    pub mu: f64,
    pub u: f64,
    pub w1: f64,
}

impl FkParams {
    pub fn new(mu: f64, u: f64, w1: f64) -> Result<Self> {
        let params = Self { mu, u, w1 };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(invalid("mu", "must be finite"));
        }
        if !self.u.is_finite() {
            return Err(invalid("U", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.w1) {
            return Err(invalid("w1", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// `w1 (1 - w1) U²`, the weight of the dynamical part of Σ.
    pub fn fluctuation_weight(&self) -> f64 {
        self.w1 * (1.0 - self.w1) * self.u * self.u
    }
}

fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.to_owned(),
    }
}

/// `iω_m + mu_eff - λ_m`.
pub(crate) fn inverse_propagator(grid: &MatsubaraGrid, bath: &BathFunction, m: i64, mu_eff: f64) -> Complex64 {
    grid.fermionic_frequency(m) + mu_eff - bath.value(m)
}

/// Propagator `1/(iω_m + mu_eff - λ_m)` of a single level over the bath's window.
pub fn sector_green(grid: &MatsubaraGrid, bath: &BathFunction, mu_eff: f64) -> Result<Vec<Complex64>> {
    grid.indices()
        .map(|m| {
            let d = inverse_propagator(grid, bath, m, mu_eff);
            if d == Complex64::new(0.0, 0.0) {
                Err(Error::SingularPropagator {
                    m,
                    what: "sector propagator",
                })
            } else {
                Ok(d.inv())
            }
        })
        .collect()
}

/// `G_m = (1 - w1)/(iω_m + μ - λ_m) + w1/(iω_m + μ - U - λ_m)`.
pub fn fk_green_eq(grid: &MatsubaraGrid, bath: &BathFunction, params: &FkParams) -> Result<Vec<Complex64>> {
    let light = sector_green(grid, bath, params.mu)?;
    let heavy = sector_green(grid, bath, params.mu - params.u)?;
    Ok(light
        .iter()
        .zip(&heavy)
        .map(|(gl, gh)| (1.0 - params.w1) * gl + params.w1 * gh)
        .collect())
}

/// `Σ_m = U w1 + w1 (1 - w1) U² / (iω_m + μ - (1 - w1) U - λ_m)`.
pub fn fk_sigma_eq(grid: &MatsubaraGrid, bath: &BathFunction, params: &FkParams) -> Result<Vec<Complex64>> {
    let hartree = params.u * params.w1;
    let weight = params.fluctuation_weight();
    grid.indices()
        .map(|m| {
            let d = inverse_propagator(grid, bath, m, params.mu - (1.0 - params.w1) * params.u);
            if d == Complex64::new(0.0, 0.0) {
                Err(Error::SingularPropagator {
                    m,
                    what: "self-energy denominator",
                })
            } else {
                Ok(hartree + weight / d)
            }
        })
        .collect()
}

/// Equilibrium solution: `G_m` and `Σ_m` over the grid window.
///
/// Σ comes from its closed form rather than from inverting `G`, so the Dyson
/// equation stays a checkable identity.
#[derive(Debug, Clone)]
pub struct FkEquilibrium {
    grid: MatsubaraGrid,
    params: FkParams,
    bath: BathFunction,
    g: Vec<Complex64>,
    sigma: Vec<Complex64>,
}

impl FkEquilibrium {
    pub fn new(bath: BathFunction, params: FkParams) -> Result<Self> {
        params.validate()?;
        let grid = *bath.grid();
        let g = fk_green_eq(&grid, &bath, &params)?;
        let sigma = fk_sigma_eq(&grid, &bath, &params)?;
        Ok(Self {
            grid,
            params,
            bath,
            g,
            sigma,
        })
    }

    pub fn grid(&self) -> &MatsubaraGrid {
        &self.grid
    }

    pub fn params(&self) -> &FkParams {
        &self.params
    }

    pub fn bath(&self) -> &BathFunction {
        &self.bath
    }

    pub fn green_values(&self) -> &[Complex64] {
        &self.g
    }

    pub fn sigma_values(&self) -> &[Complex64] {
        &self.sigma
    }

    /// `G_m`; panics outside the window.
    pub fn g(&self, m: i64) -> Complex64 {
        self.g[self.slot(m)]
    }

    /// `Σ_m`; panics outside the window.
    pub fn sigma(&self, m: i64) -> Complex64 {
        self.sigma[self.slot(m)]
    }

    /// `iω_m + μ - λ_m`, the inverse of the empty-sector propagator.
    pub fn light_inverse(&self, m: i64) -> Complex64 {
        inverse_propagator(&self.grid, &self.bath, m, self.params.mu)
    }

    /// `iω_m + μ - U - λ_m`, the inverse of the occupied-sector propagator.
    pub fn heavy_inverse(&self, m: i64) -> Complex64 {
        inverse_propagator(&self.grid, &self.bath, m, self.params.mu - self.params.u)
    }

    /// Largest relative violation of `1/G_m = iω_m + μ - λ_m - Σ_m` over the window.
    pub fn dyson_residual(&self) -> f64 {
        self.grid
            .indices()
            .map(|m| {
                let lhs = self.g(m).inv();
                let rhs = self.light_inverse(m) - self.sigma(m);
                (lhs - rhs).norm() / lhs.norm().max(rhs.norm())
            })
            .fold(0.0, f64::max)
    }

    fn slot(&self, m: i64) -> usize {
        self.grid
            .position(m)
            .unwrap_or_else(|| panic!("index {m} outside the Matsubara window"))
    }
}
