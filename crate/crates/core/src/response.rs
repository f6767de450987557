//! Dynamical charge susceptibility `χ(iν_ℓ)` by three routes.
//!
//! * `bse`: the one-index Bethe-Salpeter equation
//!   `χ_m = χ₀_m - χ₀_m T Σ_{m'} Γ_{m m'} χ_{m'}`, summed as `T Σ_m χ_m`.
//! * `closed`: the combined four-pole expression for the FK model.
//! * `direct`: `-T Σ_m F(m, m+ℓ)` with `F` read off the linear change of the
//!   two-sector propagator in the field.
//!
//! All ℓ-dependent series live on the pair window of the grid: the indices
//! `m` for which both `m` and `m + ℓ` fall inside the fermionic window. The
//! truncated sum is therefore closed under `m -> -m - 1 - ℓ`, which keeps the
//! charge response real for real baths.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::ops::RangeInclusive;
use std::time::Instant;

use faer::{Col, Mat};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::FkEquilibrium;
use crate::error::{Error, Result};
use crate::grid::{BosonicIndex, MatsubaraGrid};
use crate::linalg;

/// Relative gap `|G_m - G_{m+ℓ}|` below which the vertex switches to the long form.
pub const DEGENERACY_THRESHOLD: f64 = 1e-14;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Complex values on a contiguous run of fermionic indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencySeries {
    first: i64,
    values: Vec<Complex64>,
}

impl FrequencySeries {
    pub fn new(first: i64, values: Vec<Complex64>) -> Self {
        Self { first, values }
    }

    fn try_collect<I>(window: RangeInclusive<i64>, f: I) -> Result<Self>
    where
        I: FnMut(i64) -> Result<Complex64>,
    {
        let first = *window.start();
        let values = window.map(f).collect::<Result<Vec<_>>>()?;
        Ok(Self { first, values })
    }

    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn indices(&self) -> RangeInclusive<i64> {
        self.first..=self.first + self.values.len() as i64 - 1
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn get(&self, m: i64) -> Option<Complex64> {
        let offset = usize::try_from(m - self.first).ok()?;
        self.values.get(offset).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, Complex64)> + '_ {
        self.indices().zip(self.values.iter().copied())
    }

    pub fn sum(&self) -> Complex64 {
        self.values.iter().sum()
    }
}

/// `χ₀(iω_m; iν_ℓ) = -G_m G_{m+ℓ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BareBubble {
    pub ell: BosonicIndex,
    pub series: FrequencySeries,
}

/// Diagonal FK vertex `Γ_m`, carrying the explicit `1/T` of its definition.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalVertex {
    pub ell: BosonicIndex,
    pub series: FrequencySeries,
}

impl DiagonalVertex {
    /// Embeds the vertex as a dense matrix over its index window.
    pub fn to_dense(&self) -> Mat<Complex64> {
        let values = self.series.values();
        Mat::from_fn(values.len(), values.len(), |i, j| if i == j { values[i] } else { ZERO })
    }
}

/// `χ(iω_m, iω_{m+ℓ}; iν_ℓ)` on the pair window.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedSusceptibility {
    pub ell: BosonicIndex,
    pub series: FrequencySeries,
    /// Relative residual of the Bethe-Salpeter equation at the solution.
    pub residual: f64,
    /// Condition estimate of the dense system; `None` for the per-index solve.
    pub condition: Option<f64>,
}

impl ResolvedSusceptibility {
    /// `T Σ_m χ_m`.
    pub fn total(&self, temperature: f64) -> Complex64 {
        temperature * self.series.sum()
    }
}

pub fn bare_bubble(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<BareBubble> {
    let shift = ell.get();
    let window = eq.grid().pair_window(ell)?;
    let series = FrequencySeries::try_collect(window, |m| Ok(-eq.g(m) * eq.g(m + shift)))?;
    Ok(BareBubble { ell, series })
}

/// `(Σ_m - Σ_n)/(G_m - G_n)`, falling back to the long form when `G_m ≈ G_n`.
pub fn self_energy_ratio(eq: &FkEquilibrium, m: i64, n: i64) -> Result<Complex64> {
    let (gm, gn) = (eq.g(m), eq.g(n));
    let dg = gm - gn;
    if dg.norm() < DEGENERACY_THRESHOLD * gm.norm().max(gn.norm()) {
        return presimplified_ratio(eq, m, n);
    }
    Ok((eq.sigma(m) - eq.sigma(n)) / dg)
}

/// `U² w1 (1 - w1) / (G_m G_n [(a_m - (1 - w1) U)(a_n - (1 - w1) U) + w1 (1 - w1) U²])`
/// with `a_m = iω_m + μ - λ_m`. No difference appears in any denominator.
pub fn presimplified_ratio(eq: &FkEquilibrium, m: i64, n: i64) -> Result<Complex64> {
    let p = eq.params();
    let weight = p.fluctuation_weight();
    let shift = (1.0 - p.w1) * p.u;
    let bracket = (eq.light_inverse(m) - shift) * (eq.light_inverse(n) - shift) + weight;
    let denominator = eq.g(m) * eq.g(n) * bracket;
    if denominator == ZERO {
        return Err(Error::SingularVertexDenominator { m });
    }
    Ok(weight / denominator)
}

/// `δΣ_{m,m+ℓ} / δG_{m,m+ℓ}` on the pair window.
pub fn delta_sigma_coefficient(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<FrequencySeries> {
    let shift = ell.get();
    let window = eq.grid().pair_window(ell)?;
    FrequencySeries::try_collect(window, |m| self_energy_ratio(eq, m, m + shift))
}

/// `Γ_m = (1/T)(Σ_m - Σ_{m+ℓ})/(G_m - G_{m+ℓ})`.
pub fn fk_vertex(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<DiagonalVertex> {
    let beta = eq.grid().beta();
    let ratio = delta_sigma_coefficient(eq, ell)?;
    let values = ratio.values().iter().map(|r| r * beta).collect();
    Ok(DiagonalVertex {
        ell,
        series: FrequencySeries::new(ratio.first(), values),
    })
}

/// Solves `(I + diag(χ₀) T Γ) χ = χ₀` for a dense vertex over the bubble's window.
pub fn bse_solve_general(
    chi0: &BareBubble,
    gamma: &Mat<Complex64>,
    temperature: f64,
) -> Result<ResolvedSusceptibility> {
    let n = chi0.series.len();
    if gamma.nrows() != n || gamma.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: gamma.nrows().max(gamma.ncols()),
        });
    }
    let bubble = chi0.series.values();
    let system = Mat::from_fn(n, n, |i, j| {
        let identity = if i == j { 1.0 } else { 0.0 };
        identity + bubble[i] * temperature * gamma[(i, j)]
    });
    let sol = linalg::solve(&system, &Col::from_fn(n, |i| bubble[i]))?;
    Ok(ResolvedSusceptibility {
        ell: chi0.ell,
        series: FrequencySeries::new(chi0.series.first(), sol.x.iter().copied().collect()),
        residual: sol.residual,
        condition: Some(sol.condition),
    })
}

/// Per-index solution `χ_m = χ₀_m / (1 + χ₀_m T Γ_m)` of the diagonal equation.
pub fn bse_solve_diagonal(
    chi0: &BareBubble,
    gamma: &DiagonalVertex,
    temperature: f64,
) -> Result<ResolvedSusceptibility> {
    if gamma.series.indices() != chi0.series.indices() {
        return Err(Error::DimensionMismatch {
            expected: chi0.series.len(),
            actual: gamma.series.len(),
        });
    }
    let mut residual: f64 = 0.0;
    let series = FrequencySeries::try_collect(chi0.series.indices(), |m| {
        let c0 = chi0.series.get(m).unwrap_or(ZERO);
        let kernel = c0 * temperature * gamma.series.get(m).unwrap_or(ZERO);
        let denominator = 1.0 + kernel;
        if denominator == ZERO {
            return Err(Error::SingularVertexDenominator { m });
        }
        let chi = c0 / denominator;
        let scale = c0.norm().max(f64::MIN_POSITIVE);
        residual = residual.max((chi + kernel * chi - c0).norm() / scale);
        Ok(chi)
    })?;
    Ok(ResolvedSusceptibility {
        ell: chi0.ell,
        series,
        residual,
        condition: None,
    })
}

/// `-T Σ_m N_m / (a_m a_n b_m b_n)` with `n = m + ℓ`, `a = iω + μ - λ`, `b = a - U`
/// and `N_m = a_m a_n - U (1 - w1)(a_m + a_n - U)`.
pub fn chi_closed_form(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<Complex64> {
    let p = eq.params();
    let shift = ell.get();
    let window = eq.grid().pair_window(ell)?;
    let mut total = ZERO;
    for m in window {
        let n = m + shift;
        let (am, an) = (eq.light_inverse(m), eq.light_inverse(n));
        let (bm, bn) = (eq.heavy_inverse(m), eq.heavy_inverse(n));
        let numerator = am * an - p.u * (1.0 - p.w1) * (am + an - p.u);
        let denominator = am * an * bm * bn;
        if denominator == ZERO {
            return Err(Error::SingularPropagator {
                m,
                what: "four-pole denominator",
            });
        }
        total += numerator / denominator;
    }
    Ok(-eq.grid().temperature() * total)
}

/// Coefficient `F(m, m+ℓ) = (1 - w1)/(a_m a_n) + w1/(b_m b_n)` of `-T h_ℓ` in `δG_{m,m+ℓ}`.
pub fn delta_g_coefficient(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<FrequencySeries> {
    let w1 = eq.params().w1;
    let shift = ell.get();
    let window = eq.grid().pair_window(ell)?;
    FrequencySeries::try_collect(window, |m| {
        let n = m + shift;
        let light = eq.light_inverse(m) * eq.light_inverse(n);
        let heavy = eq.heavy_inverse(m) * eq.heavy_inverse(n);
        if light == ZERO || heavy == ZERO {
            return Err(Error::SingularPropagator {
                m,
                what: "sector product",
            });
        }
        Ok((1.0 - w1) / light + w1 / heavy)
    })
}

/// `-T Σ_m F(m, m+ℓ)`.
pub fn chi_direct(eq: &FkEquilibrium, ell: BosonicIndex) -> Result<Complex64> {
    let f = delta_g_coefficient(eq, ell)?;
    Ok(-eq.grid().temperature() * f.sum())
}

/// Magnitude of the terms dropped by truncating to the pair window, taken from
/// the `1/(ω_m ω_{m+ℓ})` asymptote of the bubble.
///
/// The asymptotic sum telescopes, so the estimate is exact for the asymptote.
pub fn tail_estimate(grid: &MatsubaraGrid, ell: BosonicIndex) -> f64 {
    let k = ell.get().unsigned_abs() as i64;
    let first_outside = grid.n_cut() as i64 - k;
    let partial: f64 = (0..k).map(|j| 1.0 / (2 * (first_outside + j) + 1) as f64).sum();
    // Both ends of the window contribute equally.
    2.0 * grid.beta() / (PI * PI) * partial / (2 * k) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Bse,
    Closed,
    Direct,
}

impl Route {
    pub const ALL: [Route; 3] = [Route::Bse, Route::Closed, Route::Direct];

    pub fn name(self) -> &'static str {
        match self {
            Route::Bse => "bse",
            Route::Closed => "closed",
            Route::Direct => "direct",
        }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which linear solver backs the `bse` route.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BseSolver {
    /// Dense solve with the diagonal vertex embedded as a full matrix.
    #[default]
    Dense,
    /// Per-index closed solution of the diagonal equation.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteSelection {
    pub routes: Vec<Route>,
    pub bse_solver: BseSolver,
}

impl Default for RouteSelection {
    fn default() -> Self {
        Self::all()
    }
}

impl RouteSelection {
    pub fn all() -> Self {
        Self {
            routes: Route::ALL.to_vec(),
            bse_solver: BseSolver::Dense,
        }
    }

    pub fn only(routes: &[Route]) -> Self {
        let mut routes = routes.to_vec();
        routes.sort();
        routes.dedup();
        Self {
            routes,
            bse_solver: BseSolver::Dense,
        }
    }
}

/// What one route produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub route: Route,
    pub value: Option<Complex64>,
    pub error: Option<String>,
    /// Set when the failure was a singularity rather than bad input.
    #[serde(default)]
    pub numerical_failure: bool,
    pub residual: Option<f64>,
    pub condition: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDeviation {
    pub a: Route,
    pub b: Route,
    /// `|χ_a - χ_b| / max(1, min(|χ_a|, |χ_b|))`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusceptibilityResult {
    pub ell: BosonicIndex,
    pub beta: f64,
    pub n_cut: usize,
    /// Number of fermionic terms in the truncated sum.
    pub terms: usize,
    pub tail_estimate: f64,
    pub outcomes: Vec<RouteOutcome>,
    pub deviations: Vec<RouteDeviation>,
    pub max_deviation: f64,
    /// Wall-clock seconds per route; never serialized with the numbers.
    #[serde(skip)]
    pub timings: BTreeMap<Route, f64>,
}

impl SusceptibilityResult {
    pub fn outcome(&self, route: Route) -> Option<&RouteOutcome> {
        self.outcomes.iter().find(|o| o.route == route)
    }

    pub fn value(&self, route: Route) -> Option<Complex64> {
        self.outcome(route).and_then(|o| o.value)
    }

    pub fn failures(&self) -> impl Iterator<Item = &RouteOutcome> {
        self.outcomes.iter().filter(|o| o.error.is_some())
    }
}

fn relative_deviation(a: Complex64, b: Complex64) -> f64 {
    (a - b).norm() / a.norm().min(b.norm()).max(1.0)
}

fn run_route(
    eq: &FkEquilibrium,
    ell: BosonicIndex,
    route: Route,
    solver: BseSolver,
) -> Result<(Complex64, Option<f64>, Option<f64>)> {
    let temperature = eq.grid().temperature();
    match route {
        Route::Bse => {
            let chi0 = bare_bubble(eq, ell)?;
            let gamma = fk_vertex(eq, ell)?;
            let resolved = match solver {
                BseSolver::Dense => bse_solve_general(&chi0, &gamma.to_dense(), temperature)?,
                BseSolver::Diagonal => bse_solve_diagonal(&chi0, &gamma, temperature)?,
            };
            Ok((resolved.total(temperature), Some(resolved.residual), resolved.condition))
        }
        Route::Closed => Ok((chi_closed_form(eq, ell)?, None, None)),
        Route::Direct => Ok((chi_direct(eq, ell)?, None, None)),
    }
}

/// Runs the selected routes for one bosonic transfer and compares them.
///
/// A failing route is recorded in its outcome; the others still run.
pub fn assemble(eq: &FkEquilibrium, ell: BosonicIndex, selection: &RouteSelection) -> Result<SusceptibilityResult> {
    let grid = eq.grid();
    let terms = grid.pair_window(ell)?.count();
    let mut outcomes = Vec::new();
    let mut timings = BTreeMap::new();
    for &route in &selection.routes {
        let start = Instant::now();
        let outcome = match run_route(eq, ell, route, selection.bse_solver) {
            Ok((value, residual, condition)) => RouteOutcome {
                route,
                value: Some(value),
                error: None,
                numerical_failure: false,
                residual,
                condition,
            },
            Err(err) => RouteOutcome {
                route,
                value: None,
                numerical_failure: err.is_numerical(),
                error: Some(err.to_string()),
                residual: None,
                condition: None,
            },
        };
        timings.insert(route, start.elapsed().as_secs_f64());
        outcomes.push(outcome);
    }
    let mut deviations = Vec::new();
    for (i, a) in outcomes.iter().enumerate() {
        for b in &outcomes[i + 1..] {
            if let (Some(va), Some(vb)) = (a.value, b.value) {
                deviations.push(RouteDeviation {
                    a: a.route,
                    b: b.route,
                    relative: relative_deviation(va, vb),
                });
            }
        }
    }
    let max_deviation = deviations.iter().map(|d| d.relative).fold(0.0, f64::max);
    Ok(SusceptibilityResult {
        ell,
        beta: grid.beta(),
        n_cut: grid.n_cut(),
        terms,
        tail_estimate: tail_estimate(grid, ell),
        outcomes,
        deviations,
        max_deviation,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::BathFunction;
    use crate::equilibrium::FkParams;

    fn ell(v: i64) -> BosonicIndex {
        BosonicIndex::new(v).unwrap()
    }

    fn equilibrium(
        beta: f64,
        n_cut: usize,
        bath: fn(&MatsubaraGrid) -> BathFunction,
        mu: f64,
        u: f64,
        w1: f64,
    ) -> FkEquilibrium {
        let grid = MatsubaraGrid::new(beta, n_cut).unwrap();
        FkEquilibrium::new(bath(&grid), FkParams::new(mu, u, w1).unwrap()).unwrap()
    }

    fn level(grid: &MatsubaraGrid) -> BathFunction {
        BathFunction::single_level(grid, 0.9, 0.35)
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / a.norm().max(b.norm())
    }

    #[test]
    fn free_bubble_value() {
        let eq = equilibrium(1.0, 8, BathFunction::atomic, 0.0, 0.0, 0.3);
        let chi0 = bare_bubble(&eq, ell(1)).unwrap();
        let v = chi0.series.get(0).unwrap();
        assert!(rel(v, Complex64::new(1.0 / (3.0 * PI * PI), 0.0)) < 1e-14);
        assert!((v.re - 0.033773727).abs() < 1e-9);
        assert_eq!(chi0.series.indices(), -8..=6);
    }

    #[test]
    fn empty_sector_bubble() {
        let eq = equilibrium(2.0, 16, level, 0.2, 1.4, 0.0);
        let chi0 = bare_bubble(&eq, ell(2)).unwrap();
        for (m, v) in chi0.series.iter() {
            let light = -1.0 / (eq.light_inverse(m) * eq.light_inverse(m + 2));
            assert!(rel(v, light) < 1e-14);
        }
    }

    #[test]
    fn vertex_vanishes_without_fluctuations() {
        for (u, w1) in [(0.0, 0.4), (1.3, 1.0), (1.3, 0.0)] {
            let eq = equilibrium(2.0, 16, level, 0.2, u, w1);
            let gamma = fk_vertex(&eq, ell(1)).unwrap();
            assert!(gamma.series.values().iter().all(|v| *v == ZERO), "u={u} w1={w1}");
        }
    }

    #[test]
    fn simplified_ratio_matches_long_form() {
        let eq = equilibrium(3.0, 32, level, -0.4, 1.7, 0.35);
        for shift in [1, -2, 5] {
            for m in eq.grid().pair_window(ell(shift)).unwrap() {
                let short = (eq.sigma(m) - eq.sigma(m + shift)) / (eq.g(m) - eq.g(m + shift));
                let long = presimplified_ratio(&eq, m, m + shift).unwrap();
                assert!(rel(short, long) < 1e-10, "m={m}: {short} vs {long}");
            }
        }
    }

    #[test]
    fn vertex_is_ratio_over_temperature() {
        let eq = equilibrium(2.5, 16, level, 0.1, 0.8, 0.6);
        let ratio = delta_sigma_coefficient(&eq, ell(3)).unwrap();
        let gamma = fk_vertex(&eq, ell(3)).unwrap();
        for (r, g) in ratio.values().iter().zip(gamma.series.values()) {
            assert!(rel(r * eq.grid().beta(), *g) < 1e-15);
        }
    }

    #[test]
    fn dense_solver_without_vertex_returns_bubble() {
        let eq = equilibrium(2.0, 8, level, 0.3, 1.0, 0.5);
        let chi0 = bare_bubble(&eq, ell(1)).unwrap();
        let n = chi0.series.len();
        let chi = bse_solve_general(&chi0, &Mat::zeros(n, n), 0.5).unwrap();
        assert_eq!(chi.series, chi0.series);
    }

    #[test]
    fn toy_two_by_two() {
        let chi0 = BareBubble {
            ell: ell(1),
            series: FrequencySeries::new(0, vec![Complex64::new(1.0, 0.0); 2]),
        };
        let chi = bse_solve_general(&chi0, &Mat::identity(2, 2), 1.0).unwrap();
        for v in chi.series.values() {
            assert!((v - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let gamma = DiagonalVertex {
            ell: ell(1),
            series: FrequencySeries::new(0, vec![Complex64::new(1.0, 0.0); 2]),
        };
        let diag = bse_solve_diagonal(&chi0, &gamma, 1.0).unwrap();
        assert_eq!(diag.series.values(), chi.series.values());
    }

    #[test]
    fn dense_and_diagonal_solvers_agree() {
        let eq = equilibrium(4.0, 24, level, 0.3, 1.2, 0.45);
        for shift in [1, -3] {
            let chi0 = bare_bubble(&eq, ell(shift)).unwrap();
            let gamma = fk_vertex(&eq, ell(shift)).unwrap();
            let t = eq.grid().temperature();
            let dense = bse_solve_general(&chi0, &gamma.to_dense(), t).unwrap();
            let diag = bse_solve_diagonal(&chi0, &gamma, t).unwrap();
            for (a, b) in dense.series.values().iter().zip(diag.series.values()) {
                assert!(rel(*a, *b) < 1e-12);
            }
            assert!(dense.residual < 1e-14);
        }
    }

    #[test]
    fn vertex_shape_mismatch_is_rejected() {
        let eq = equilibrium(1.0, 8, level, 0.0, 1.0, 0.5);
        let chi0 = bare_bubble(&eq, ell(1)).unwrap();
        assert!(matches!(
            bse_solve_general(&chi0, &Mat::zeros(3, 3), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        let other = fk_vertex(&eq, ell(2)).unwrap();
        assert!(bse_solve_diagonal(&chi0, &other, 1.0).is_err());
    }

    #[test]
    fn zero_denominator_names_index() {
        let chi0 = BareBubble {
            ell: ell(1),
            series: FrequencySeries::new(-1, vec![Complex64::new(1.0, 0.0); 2]),
        };
        let gamma = DiagonalVertex {
            ell: ell(1),
            series: FrequencySeries::new(-1, vec![Complex64::new(0.5, 0.0), Complex64::new(-1.0, 0.0)]),
        };
        assert_eq!(
            bse_solve_diagonal(&chi0, &gamma, 1.0),
            Err(Error::SingularVertexDenominator { m: 0 })
        );
    }

    #[test]
    fn free_limit_of_all_routes() {
        let eq = equilibrium(1.5, 32, level, 0.25, 0.0, 0.6);
        let t = eq.grid().temperature();
        for shift in [1, 2, -1] {
            let bubble = t * bare_bubble(&eq, ell(shift)).unwrap().series.sum();
            assert!(rel(chi_closed_form(&eq, ell(shift)).unwrap(), bubble) < 1e-13);
            assert!(rel(chi_direct(&eq, ell(shift)).unwrap(), bubble) < 1e-13);
            let chi0 = bare_bubble(&eq, ell(shift)).unwrap();
            let gamma = fk_vertex(&eq, ell(shift)).unwrap();
            let resolved = bse_solve_diagonal(&chi0, &gamma, t).unwrap();
            assert!(rel(resolved.total(t), bubble) < 1e-13);
        }
    }

    #[test]
    fn empty_sector_closed_form_is_light_bubble() {
        let eq = equilibrium(2.0, 32, level, 0.25, 1.6, 0.0);
        let t = eq.grid().temperature();
        let light: Complex64 = eq
            .grid()
            .pair_window(ell(2))
            .unwrap()
            .map(|m| -1.0 / (eq.light_inverse(m) * eq.light_inverse(m + 2)))
            .sum::<Complex64>()
            * t;
        assert!(rel(chi_closed_form(&eq, ell(2)).unwrap(), light) < 1e-13);
    }

    #[test]
    fn occupied_sector_direct_is_shifted_bubble() {
        let grid = MatsubaraGrid::new(2.0, 32).unwrap();
        let bath = level(&grid);
        let full = FkEquilibrium::new(bath.clone(), FkParams::new(0.4, 1.1, 1.0).unwrap()).unwrap();
        let shifted = FkEquilibrium::new(bath, FkParams::new(0.4 - 1.1, 0.0, 0.0).unwrap()).unwrap();
        let t = grid.temperature();
        let bubble = t * bare_bubble(&shifted, ell(1)).unwrap().series.sum();
        assert!(rel(chi_direct(&full, ell(1)).unwrap(), bubble) < 1e-13);
    }

    #[test]
    fn routes_agree_at_generic_point() {
        let eq = equilibrium(5.0, 64, level, -0.3, 1.8, 0.3);
        let result = assemble(&eq, ell(2), &RouteSelection::all()).unwrap();
        assert_eq!(result.outcomes.len(), 3);
        assert_eq!(result.deviations.len(), 3);
        assert!(result.max_deviation < 1e-10, "{result:?}");
        assert_eq!(result.terms, 126);
        let closed = result.value(Route::Closed).unwrap();
        assert!(closed.im.abs() <= 1e-10 * closed.norm());
    }

    #[test]
    fn single_route_has_no_deviations() {
        let eq = equilibrium(1.0, 16, BathFunction::atomic, 0.0, 0.0, 0.0);
        let result = assemble(&eq, ell(1), &RouteSelection::only(&[Route::Closed])).unwrap();
        assert_eq!(result.outcomes.len(), 1);
        assert!(result.deviations.is_empty());
        assert_eq!(result.max_deviation, 0.0);
    }

    #[test]
    fn tail_estimate_matches_brute_force_asymptote() {
        let grid = MatsubaraGrid::new(3.0, 40).unwrap();
        let t = grid.temperature();
        for shift in [1i64, 3, -2] {
            let window = grid.pair_window(ell(shift)).unwrap();
            // Sum the asymptote over a far larger range, minus the kept terms.
            let asym = |m: i64| {
                let a = grid.fermionic_frequency(m).im;
                let b = grid.fermionic_frequency(m + shift).im;
                1.0 / (a * b)
            };
            let far: f64 = (-400_000i64..400_000).map(asym).sum::<f64>();
            let kept: f64 = window.map(asym).sum();
            let brute = t * (far - kept);
            let est = tail_estimate(&grid, ell(shift));
            assert!((brute - est).abs() < 1e-3 * est, "{brute} vs {est}");
        }
    }
}
