//! Brute-force check of the linear field response.
//!
//! The truncated inverse propagator with a single Toeplitz tone `h_ℓ` is
//! built as a dense matrix and inverted numerically for each heavy-particle
//! sector. Central differences in `h` then give the coefficient of the
//! linear term on the `(m, m+ℓ)` diagonal, which is compared element-wise
//! with the analytic coefficient.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::BathFunction;
use crate::equilibrium::{inverse_propagator, FkEquilibrium, FkParams};
use crate::error::{Error, Result};
use crate::grid::{BosonicIndex, MatsubaraGrid};
use crate::linalg;
use crate::response::{delta_g_coefficient, FrequencySeries};

pub const DEFAULT_H_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Bound on entries off the main and ℓ-shifted diagonals, in units of `h²`.
pub const SELECTION_RULE_FACTOR: f64 = 10.0;

/// Dense `G⁻¹_{mn} = (iω_m + μ_eff - λ_m) δ_{mn} + T h δ_{m, n-ℓ}` over the window.
#[derive(Debug, Clone)]
pub struct PerturbedInverse {
    pub grid: MatsubaraGrid,
    pub ell: BosonicIndex,
    pub h_value: f64,
    pub matrix: Mat<Complex64>,
}

pub fn build_perturbed_inverse(
    grid: &MatsubaraGrid,
    bath: &BathFunction,
    mu_eff: f64,
    ell: BosonicIndex,
    h_value: f64,
) -> Result<PerturbedInverse> {
    let size = grid.size();
    let shift = ell.get();
    if shift.unsigned_abs() as usize >= size {
        return Err(Error::EllOutOfWindow { ell: shift, size });
    }
    if !h_value.is_finite() {
        return Err(Error::InvalidParameter {
            name: "h_value",
            reason: "must be finite".to_owned(),
        });
    }
    let mut matrix = Mat::zeros(size, size);
    let field = Complex64::new(grid.temperature() * h_value, 0.0);
    for m in grid.indices() {
        let row = grid.position(m).unwrap_or_default();
        matrix[(row, row)] = inverse_propagator(grid, bath, m, mu_eff);
        if h_value != 0.0 {
            if let Some(col) = grid.position(m + shift) {
                matrix[(row, col)] = field;
            }
        }
    }
    Ok(PerturbedInverse {
        grid: *grid,
        ell,
        h_value,
        matrix,
    })
}

/// Numerical inverse `G_{mn}(h)` of a perturbed inverse propagator.
pub fn perturbed_green(inv: &PerturbedInverse) -> Result<Mat<Complex64>> {
    linalg::invert(&inv.matrix).map(|(g, _)| g)
}

/// `(1 - w1) G(h)|_μ + w1 G(h)|_{μ-U}`.
pub fn fk_perturbed_green(
    grid: &MatsubaraGrid,
    bath: &BathFunction,
    params: &FkParams,
    ell: BosonicIndex,
    h_value: f64,
) -> Result<Mat<Complex64>> {
    params.validate()?;
    let light = perturbed_green(&build_perturbed_inverse(grid, bath, params.mu, ell, h_value)?)?;
    let heavy = perturbed_green(&build_perturbed_inverse(
        grid,
        bath,
        params.mu - params.u,
        ell,
        h_value,
    )?)?;
    Ok(Mat::from_fn(light.nrows(), light.ncols(), |i, j| {
        light[(i, j)] * (1.0 - params.w1) + heavy[(i, j)] * params.w1
    }))
}

/// Central-difference estimate of `F(m, m+ℓ)`:
/// `[G_{m,m+ℓ}(+h) - G_{m,m+ℓ}(-h)] / (2h)` divided by `-T`.
pub fn numeric_delta_g(
    grid: &MatsubaraGrid,
    bath: &BathFunction,
    params: &FkParams,
    ell: BosonicIndex,
    h_step: f64,
) -> Result<FrequencySeries> {
    if !(h_step > 0.0 && h_step.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "h_step",
            reason: "must be positive".to_owned(),
        });
    }
    let plus = fk_perturbed_green(grid, bath, params, ell, h_step)?;
    let minus = fk_perturbed_green(grid, bath, params, ell, -h_step)?;
    extract_coefficient(grid, ell, &plus, &minus, h_step)
}

fn extract_coefficient(
    grid: &MatsubaraGrid,
    ell: BosonicIndex,
    plus: &Mat<Complex64>,
    minus: &Mat<Complex64>,
    h_step: f64,
) -> Result<FrequencySeries> {
    let shift = ell.get();
    let scale = -1.0 / (2.0 * h_step * grid.temperature());
    let window = grid.pair_window(ell)?;
    let first = *window.start();
    let values = window
        .map(|m| {
            let (r, c) = (
                grid.position(m).unwrap_or_default(),
                grid.position(m + shift).unwrap_or_default(),
            );
            (plus[(r, c)] - minus[(r, c)]) * scale
        })
        .collect();
    Ok(FrequencySeries::new(first, values))
}

/// Largest `|G_{mn}|` with `n - m ∉ {0, ℓ}`.
pub fn off_selection_max(grid: &MatsubaraGrid, ell: BosonicIndex, green: &Mat<Complex64>) -> f64 {
    let shift = ell.get();
    let mut worst: f64 = 0.0;
    for m in grid.indices() {
        for n in grid.indices() {
            let gap = n - m;
            if gap != 0 && gap != shift {
                let (r, c) = (
                    grid.position(m).unwrap_or_default(),
                    grid.position(n).unwrap_or_default(),
                );
                worst = worst.max(green[(r, c)].norm());
            }
        }
    }
    worst
}

/// One row of the element-wise comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub m: i64,
    pub numeric: Complex64,
    pub analytic: Complex64,
    /// `|F_num - F_analytic| / max(1, |F_analytic|)`.
    #[serde(with = "crate::serde_float")]
    pub deviation: f64,
    /// Rows with `|m| >= n_cut - 2|ℓ|` are reported but do not count.
    pub edge: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<OracleRow>,
    #[serde(with = "crate::serde_float")]
    pub max_interior_deviation: f64,
    #[serde(with = "crate::serde_float")]
    pub max_edge_deviation: f64,
    pub failing_rows: usize,
    pub pass: bool,
}

/// Element-wise comparison of two coefficient series on the same indices.
pub fn compare_coefficients(
    grid: &MatsubaraGrid,
    ell: BosonicIndex,
    numeric: &FrequencySeries,
    analytic: &FrequencySeries,
    tolerance: f64,
) -> Comparison {
    let edge_start = grid.n_cut() as i64 - 2 * ell.get().abs();
    let rows: Vec<OracleRow> = numeric
        .iter()
        .filter_map(|(m, num)| {
            let ana = analytic.get(m)?;
            Some(OracleRow {
                m,
                numeric: num,
                analytic: ana,
                deviation: (num - ana).norm() / ana.norm().max(1.0),
                edge: m.abs() >= edge_start,
            })
        })
        .collect();
    let interior = || rows.iter().filter(|r| !r.edge);
    let max_interior_deviation = interior().map(|r| r.deviation).fold(0.0, f64::max);
    let max_edge_deviation = rows.iter().filter(|r| r.edge).map(|r| r.deviation).fold(0.0, f64::max);
    // NaN deviations count as failures.
    let failing_rows = interior().filter(|r| !(r.deviation <= tolerance)).count();
    let complete = rows.len() == numeric.len() && interior().next().is_some();
    Comparison {
        pass: complete && failing_rows == 0,
        rows,
        max_interior_deviation,
        max_edge_deviation,
        failing_rows,
    }
}

/// Settings for [`oracle_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub h_step: f64,
    pub tolerance: f64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            h_step: DEFAULT_H_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub ell: BosonicIndex,
    pub h_step: f64,
    pub tolerance: f64,
    pub comparison: Comparison,
    /// Interior deviation at `h_step` over the deviation at `h_step / 2`.
    #[serde(with = "crate::serde_float")]
    pub richardson_ratio: f64,
    /// Largest entry off the main and ℓ-shifted diagonals at `+h_step`.
    #[serde(with = "crate::serde_float")]
    pub selection_rule_max: f64,
    pub selection_rule_bound: f64,
    pub pass: bool,
    pub error: Option<String>,
}

impl OracleReport {
    fn failed(ell: BosonicIndex, settings: &OracleSettings, err: Error) -> Self {
        Self {
            ell,
            h_step: settings.h_step,
            tolerance: settings.tolerance,
            comparison: Comparison {
                rows: Vec::new(),
                max_interior_deviation: f64::NAN,
                max_edge_deviation: f64::NAN,
                failing_rows: 0,
                pass: false,
            },
            richardson_ratio: f64::NAN,
            selection_rule_max: f64::NAN,
            selection_rule_bound: SELECTION_RULE_FACTOR * settings.h_step * settings.h_step,
            pass: false,
            error: Some(err.to_string()),
        }
    }

    pub fn richardson_in(&self, lo: f64, hi: f64) -> bool {
        self.richardson_ratio >= lo && self.richardson_ratio <= hi
    }

    pub fn selection_rule_holds(&self) -> bool {
        self.selection_rule_max <= self.selection_rule_bound
    }
}

/// Runs the finite-difference protocol at `h_step` and `h_step / 2` against
/// the analytic coefficient. Failures are data, never errors.
pub fn oracle_report(
    bath: &BathFunction,
    params: &FkParams,
    ell: BosonicIndex,
    settings: &OracleSettings,
) -> OracleReport {
    match oracle_inner(bath, params, ell, settings, None) {
        Ok(report) => report,
        Err(err) => OracleReport::failed(ell, settings, err),
    }
}

/// Same protocol against a caller-supplied analytic series.
pub fn oracle_report_against(
    bath: &BathFunction,
    params: &FkParams,
    ell: BosonicIndex,
    settings: &OracleSettings,
    analytic: &FrequencySeries,
) -> OracleReport {
    match oracle_inner(bath, params, ell, settings, Some(analytic)) {
        Ok(report) => report,
        Err(err) => OracleReport::failed(ell, settings, err),
    }
}

fn oracle_inner(
    bath: &BathFunction,
    params: &FkParams,
    ell: BosonicIndex,
    settings: &OracleSettings,
    analytic: Option<&FrequencySeries>,
) -> Result<OracleReport> {
    let grid = bath.grid();
    let h = settings.h_step;
    let owned;
    let analytic = match analytic {
        Some(series) => series,
        None => {
            let eq = FkEquilibrium::new(bath.clone(), *params)?;
            owned = delta_g_coefficient(&eq, ell)?;
            &owned
        }
    };

    let plus = fk_perturbed_green(grid, bath, params, ell, h)?;
    let minus = fk_perturbed_green(grid, bath, params, ell, -h)?;
    let numeric = extract_coefficient(grid, ell, &plus, &minus, h)?;
    let comparison = compare_coefficients(grid, ell, &numeric, analytic, settings.tolerance);
    let selection_rule_max = off_selection_max(grid, ell, &plus);

    let half = numeric_delta_g(grid, bath, params, ell, h / 2.0)?;
    let refined = compare_coefficients(grid, ell, &half, analytic, settings.tolerance);
    let richardson_ratio = comparison.max_interior_deviation / refined.max_interior_deviation;

    Ok(OracleReport {
        ell,
        h_step: h,
        tolerance: settings.tolerance,
        pass: comparison.pass,
        comparison,
        richardson_ratio,
        selection_rule_max,
        selection_rule_bound: SELECTION_RULE_FACTOR * h * h,
        error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ell(v: i64) -> BosonicIndex {
        BosonicIndex::new(v).unwrap()
    }

    fn max_abs(m: &Mat<Complex64>) -> f64 {
        m.norm_max()
    }

    #[test]
    fn zero_field_is_diagonal() {
        let grid = MatsubaraGrid::new(2.0, 4).unwrap();
        let bath = BathFunction::single_level(&grid, 0.5, 0.1);
        let inv = build_perturbed_inverse(&grid, &bath, 0.3, ell(1), 0.0).unwrap();
        let g = perturbed_green(&inv).unwrap();
        for i in 0..grid.size() {
            for j in 0..grid.size() {
                if i != j {
                    assert_eq!(inv.matrix[(i, j)], Complex64::new(0.0, 0.0));
                    assert!(g[(i, j)].norm() < 1e-300);
                }
            }
        }
        for m in grid.indices() {
            let p = grid.position(m).unwrap();
            let expected = (grid.fermionic_frequency(m) + 0.3 - bath.value(m)).inv();
            assert!((g[(p, p)] - expected).norm() < 1e-15 * expected.norm());
        }
    }

    #[test]
    fn field_sits_on_one_shifted_diagonal() {
        let grid = MatsubaraGrid::new(2.0, 2).unwrap();
        let bath = BathFunction::atomic(&grid);
        let h = 0.25;
        let inv = build_perturbed_inverse(&grid, &bath, 0.0, ell(1), h).unwrap();
        let mut off = 0;
        for i in 0..4 {
            for j in 0..4 {
                if i != j && inv.matrix[(i, j)] != Complex64::new(0.0, 0.0) {
                    off += 1;
                    assert_eq!(j, i + 1);
                    assert_eq!(inv.matrix[(i, j)], Complex64::new(h / 2.0, 0.0));
                }
            }
        }
        assert_eq!(off, 3);
        assert!(build_perturbed_inverse(&grid, &bath, 0.0, ell(4), h).is_err());
        assert!(build_perturbed_inverse(&grid, &bath, 0.0, ell(1), f64::NAN).is_err());
    }

    #[test]
    fn numerical_inverse_is_an_inverse() {
        let grid = MatsubaraGrid::new(1.0, 16).unwrap();
        let bath = BathFunction::single_level(&grid, 1.0, -0.2);
        let inv = build_perturbed_inverse(&grid, &bath, 0.1, ell(2), 0.3).unwrap();
        let g = perturbed_green(&inv).unwrap();
        let identity = &g * &inv.matrix;
        let err = max_abs(&(identity - Mat::<Complex64>::identity(grid.size(), grid.size())));
        assert!(err <= 1e-12);
    }

    #[test]
    fn higher_order_entries_are_small() {
        let grid = MatsubaraGrid::new(5.0, 32).unwrap();
        let bath = BathFunction::single_level(&grid, 0.7, 0.2);
        let h = 1e-3;
        let inv = build_perturbed_inverse(&grid, &bath, 0.0, ell(1), h).unwrap();
        let g = perturbed_green(&inv).unwrap();
        assert!(off_selection_max(&grid, ell(1), &g) <= 10.0 * h * h);
    }

    #[test]
    fn sector_mixture_is_affine() {
        let grid = MatsubaraGrid::new(3.0, 8).unwrap();
        let bath = BathFunction::single_level(&grid, 0.6, 0.0);
        let at = |w1| fk_perturbed_green(&grid, &bath, &FkParams::new(0.2, 1.1, w1).unwrap(), ell(2), 0.1).unwrap();
        let mid = at(0.5);
        let avg = (at(0.0) + at(1.0)) * faer::Scale(Complex64::new(0.5, 0.0));
        assert!(max_abs(&(mid - avg)) < 1e-15);

        let light = perturbed_green(&build_perturbed_inverse(&grid, &bath, 0.2, ell(2), 0.1).unwrap()).unwrap();
        assert_eq!(at(0.0), light);
    }

    #[test]
    fn unperturbed_mixture_matches_equilibrium() {
        let grid = MatsubaraGrid::new(3.0, 8).unwrap();
        let bath = BathFunction::single_level(&grid, 0.6, 0.0);
        let params = FkParams::new(0.2, 1.1, 0.3).unwrap();
        let g = fk_perturbed_green(&grid, &bath, &params, ell(1), 0.0).unwrap();
        let eq = FkEquilibrium::new(bath, params).unwrap();
        for m in grid.indices() {
            let p = grid.position(m).unwrap();
            assert!((g[(p, p)] - eq.g(m)).norm() < 1e-14 * eq.g(m).norm());
        }
    }

    #[test]
    fn free_coefficient_is_product_of_propagators() {
        let grid = MatsubaraGrid::new(1.0, 16).unwrap();
        let bath = BathFunction::atomic(&grid);
        let params = FkParams::new(0.0, 0.0, 0.5).unwrap();
        let f = numeric_delta_g(&grid, &bath, &params, ell(1), 1e-5).unwrap();
        for (m, v) in f.iter() {
            let expected = (grid.fermionic_frequency(m) * grid.fermionic_frequency(m + 1)).inv();
            assert!((v - expected).norm() <= 1e-9, "m={m}");
        }
        assert!(numeric_delta_g(&grid, &bath, &params, ell(1), 0.0).is_err());
    }

    #[test]
    fn report_flags_corrupted_coefficient() {
        let grid = MatsubaraGrid::new(2.0, 16).unwrap();
        let bath = BathFunction::single_level(&grid, 0.8, 0.1);
        let params = FkParams::new(0.3, 1.2, 0.4).unwrap();
        let eq = FkEquilibrium::new(bath.clone(), params).unwrap();
        let good = delta_g_coefficient(&eq, ell(1)).unwrap();
        let flipped = FrequencySeries::new(good.first(), good.values().iter().map(|v| -v).collect());
        let settings = OracleSettings::default();
        let report = oracle_report_against(&bath, &params, ell(1), &settings, &flipped);
        assert!(!report.pass);
        assert!(report.comparison.rows.iter().all(|r| r.deviation > settings.tolerance));
        let fine = oracle_report(&bath, &params, ell(1), &settings);
        assert!(fine.pass, "{:?}", fine.comparison.max_interior_deviation);
    }

    #[test]
    fn edge_rows_are_marked() {
        let grid = MatsubaraGrid::new(1.0, 8).unwrap();
        let bath = BathFunction::atomic(&grid);
        let params = FkParams::new(0.1, 0.5, 0.5).unwrap();
        let report = oracle_report(&bath, &params, ell(2), &OracleSettings::default());
        let edges: Vec<i64> = report.comparison.rows.iter().filter(|r| r.edge).map(|r| r.m).collect();
        assert_eq!(edges, vec![-8, -7, -6, -5, -4, 4, 5]);
    }
}
