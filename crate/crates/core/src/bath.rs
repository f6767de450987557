//! The equilibrium dynamical mean field `λ_m`.
//!
//! Three sources: closed-form model baths, a Bethe-lattice self-consistency
//! loop, and a plain-text table.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{fk_green_eq, FkParams};
use crate::error::{Error, Result};
use crate::grid::MatsubaraGrid;

/// Largest tolerated `|λ_{-m-1} - conj(λ_m)|`.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Hybridization values `λ_m` for every `m` in the grid window.
#[derive(Debug, Clone, PartialEq)]
pub struct BathFunction {
    grid: MatsubaraGrid,
    values: Vec<Complex64>,
}

impl BathFunction {
    /// `λ_m = 0`: the isolated atom.
    pub fn atomic(grid: &MatsubaraGrid) -> Self {
        Self {
            grid: *grid,
            values: vec![Complex64::new(0.0, 0.0); grid.size()],
        }
    }

    /// `λ_m = V² / (iω_m - eps_b)`: one bath level at energy `eps_b`.
    pub fn single_level(grid: &MatsubaraGrid, coupling: f64, level: f64) -> Self {
        let values = grid
            .indices()
            .map(|m| coupling * coupling / (grid.fermionic_frequency(m) - level))
            .collect();
        Self { grid: *grid, values }
    }

    /// Wraps raw values, checking length and conjugate symmetry.
    pub fn from_values(grid: &MatsubaraGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.size() {
            return Err(Error::DimensionMismatch {
                expected: grid.size(),
                actual: values.len(),
            });
        }
        let bath = Self { grid: *grid, values };
        bath.check_conjugate_symmetry(SYMMETRY_TOLERANCE)?;
        Ok(bath)
    }

    pub fn grid(&self) -> &MatsubaraGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// `λ_m`; panics outside the window.
    pub fn value(&self, m: i64) -> Complex64 {
        let pos = self
            .grid
            .position(m)
            .unwrap_or_else(|| panic!("index {m} outside the bath window"));
        self.values[pos]
    }

    /// Largest `|λ_{-m-1} - conj(λ_m)|` over the window.
    pub fn symmetry_deviation(&self) -> (i64, f64) {
        self.grid
            .indices()
            .filter(|m| *m >= 0)
            .map(|m| (m, (self.value(-m - 1) - self.value(m).conj()).norm()))
            .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    pub fn check_conjugate_symmetry(&self, tolerance: f64) -> Result<()> {
        let (m, deviation) = self.symmetry_deviation();
        // NaN must not slip through the comparison.
        if deviation <= tolerance {
            Ok(())
        } else {
            Err(Error::SymmetryViolation { m, deviation })
        }
    }

    pub fn max_difference(&self, other: &BathFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Parses the whitespace-separated `m  Re λ  Im λ` table format.
    ///
    /// Blank lines and lines starting with `#` are skipped. Every index of the
    /// window must appear exactly once.
    pub fn from_table(grid: &MatsubaraGrid, source: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let text = raw.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = text.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::BathTableSyntax {
                    line,
                    reason: format!("expected 3 columns, found {}", fields.len()),
                });
            }
            let m: i64 = fields[0].parse().map_err(|_| Error::BathTableSyntax {
                line,
                reason: format!("`{}` is not an integer index", fields[0]),
            })?;
            let parse_real = |s: &str| -> Result<f64> {
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(Error::BathTableSyntax {
                        line,
                        reason: format!("`{s}` is not a finite real number"),
                    }),
                }
            };
            let value = Complex64::new(parse_real(fields[1])?, parse_real(fields[2])?);
            if !grid.contains(m) {
                return Err(Error::IndexOutsideWindow { line, m });
            }
            if rows.insert(m, value).is_some() {
                return Err(Error::DuplicateIndex { line, m });
            }
        }
        if let Some(m) = grid.indices().find(|m| !rows.contains_key(m)) {
            return Err(Error::MissingIndex(m));
        }
        Self::from_values(grid, rows.into_values().collect())
    }

    /// Writes the table format; values use shortest round-trip notation.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# beta = {:e}, n_cut = {}\n# m re_lambda im_lambda",
            self.grid.beta(),
            self.grid.n_cut()
        );
        for (m, v) in self.grid.indices().zip(&self.values) {
            let _ = writeln!(out, "{m} {:e} {:e}", v.re, v.im);
        }
        out
    }
}

/// Knobs for the Bethe-lattice loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmftSettings {
    /// Hopping scale; the semicircular density of states has half-width `t_star`.
    pub t_star: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new iterate in the linear mix.
    pub mixing: f64,
}

impl Default for DmftSettings {
    fn default() -> Self {
        Self {
            t_star: 1.0,
            tol: 1e-12,
            max_iter: 500,
            mixing: 0.5,
        }
    }
}

impl DmftSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Error::InvalidParameter {
            name,
            reason: reason.to_owned(),
        };
        if !self.t_star.is_finite() {
            return Err(bad("t_star", "must be finite"));
        }
        if !(self.tol > 0.0) {
            return Err(bad("tol", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(bad("max_iter", "must be at least 1"));
        }
        if !(self.mixing > 0.0 && self.mixing <= 1.0) {
            return Err(bad("mixing", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Converged bath plus the residual recorded after every sweep.
#[derive(Debug, Clone)]
pub struct DmftSolution {
    pub bath: BathFunction,
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// One damped sweep `λ <- (1 - α) λ + α (t*²/4) G[λ]`.
pub fn dmft_update(bath: &BathFunction, params: &FkParams, settings: &DmftSettings) -> Result<BathFunction> {
    let green = fk_green_eq(bath.grid(), bath, params)?;
    let scale = settings.t_star * settings.t_star / 4.0;
    let alpha = settings.mixing;
    let values = bath
        .values
        .iter()
        .zip(&green)
        .map(|(old, g)| (1.0 - alpha) * old + alpha * scale * g)
        .collect();
    Ok(BathFunction {
        grid: bath.grid,
        values,
    })
}

/// Iterates [`dmft_update`] from the atomic limit until consecutive baths
/// differ by at most `settings.tol` at every frequency.
pub fn dmft_bethe_loop(grid: &MatsubaraGrid, params: &FkParams, settings: &DmftSettings) -> Result<DmftSolution> {
    params.validate()?;
    settings.validate()?;
    let mut bath = BathFunction::atomic(grid);
    let mut residuals = Vec::new();
    for iteration in 1..=settings.max_iter {
        let next = dmft_update(&bath, params, settings)?;
        let residual = next.max_difference(&bath);
        residuals.push(residual);
        bath = next;
        if residual <= settings.tol {
            return Ok(DmftSolution {
                bath,
                iterations: iteration,
                residuals,
            });
        }
        if !residual.is_finite() {
            break;
        }
    }
    Err(Error::NonConvergence {
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

#[cfg(test)]
// Expected values are hand-evaluated decimals, kept literal on purpose.
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid() -> MatsubaraGrid {
        MatsubaraGrid::new(1.0, 16).unwrap()
    }

    #[test]
    fn atomic_is_zero() {
        let bath = BathFunction::atomic(&grid());
        assert!(bath.values().iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(bath.check_conjugate_symmetry(0.0).is_ok());
    }

    #[test]
    fn single_level_values() {
        let g = grid();
        assert_eq!(BathFunction::single_level(&g, 0.0, 0.4), BathFunction::atomic(&g));
        let bath = BathFunction::single_level(&g, 1.0, 0.0);
        let v = bath.value(0);
        assert!((v - Complex64::new(0.0, -1.0 / PI)).norm() < 1e-15);
        assert!((v.im + 0.3183098861837907).abs() < 1e-14);
        assert_eq!(bath.value(-1), v.conj());
        let shifted = BathFunction::single_level(&g, 0.7, -1.3);
        assert!(shifted.check_conjugate_symmetry(SYMMETRY_TOLERANCE).is_ok());
    }

    #[test]
    fn table_round_trip_is_exact() {
        let g = grid();
        let bath = BathFunction::single_level(&g, 0.83, 0.217);
        let reloaded = BathFunction::from_table(&g, &bath.to_table()).unwrap();
        for (a, b) in bath.values().iter().zip(reloaded.values()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn zero_table_is_atomic() {
        let g = MatsubaraGrid::new(2.0, 2).unwrap();
        let table = "# zeros\n-2 0 0\n-1 0.0 0.0\n\n0 0 -0\n1 0 0\n";
        assert_eq!(BathFunction::from_table(&g, table).unwrap(), BathFunction::atomic(&g));
    }

    #[test]
    fn table_errors_name_the_row() {
        let g = MatsubaraGrid::new(2.0, 2).unwrap();
        let full = BathFunction::single_level(&g, 1.0, 0.0).to_table();
        let without_zero: String = full
            .lines()
            .filter(|l| !l.starts_with("0 "))
            .map(|l| format!("{l}\n"))
            .collect();
        assert_eq!(BathFunction::from_table(&g, &without_zero), Err(Error::MissingIndex(0)));

        let dup = "-2 0 0\n-1 0 0\n-1 0 0\n0 0 0\n1 0 0\n";
        assert_eq!(
            BathFunction::from_table(&g, dup),
            Err(Error::DuplicateIndex { line: 3, m: -1 })
        );

        let asym = "-2 0 0\n-1 0 0.5\n0 0 0.5\n1 0 0\n";
        assert!(matches!(
            BathFunction::from_table(&g, asym),
            Err(Error::SymmetryViolation { m: 0, .. })
        ));

        assert!(matches!(
            BathFunction::from_table(&g, "-2 0\n"),
            Err(Error::BathTableSyntax { line: 1, .. })
        ));
        assert!(matches!(
            BathFunction::from_table(&g, "x 0 0\n"),
            Err(Error::BathTableSyntax { line: 1, .. })
        ));
        assert!(matches!(
            BathFunction::from_table(&g, "-2 nan 0\n"),
            Err(Error::BathTableSyntax { line: 1, .. })
        ));
        assert_eq!(
            BathFunction::from_table(&g, "5 0 0\n"),
            Err(Error::IndexOutsideWindow { line: 1, m: 5 })
        );
    }

    #[test]
    fn zero_hopping_converges_immediately() {
        let g = MatsubaraGrid::new(5.0, 64).unwrap();
        let params = FkParams::new(0.5, 1.0, 0.5).unwrap();
        let settings = DmftSettings {
            t_star: 0.0,
            ..DmftSettings::default()
        };
        let sol = dmft_bethe_loop(&g, &params, &settings).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.bath, BathFunction::atomic(&g));
    }

    /// Root of `λ² - zλ + t²/4 = 0` whose imaginary part opposes `Im z`.
    fn semicircle_root(z: Complex64, t_star: f64) -> Complex64 {
        let disc = (z * z - t_star * t_star).sqrt();
        let r1 = (z + disc) / 2.0;
        let r2 = (z - disc) / 2.0;
        if r1.im * z.im < 0.0 {
            r1
        } else {
            r2
        }
    }

    #[test]
    fn free_loop_matches_quadratic_roots() {
        let g = MatsubaraGrid::new(4.0, 64).unwrap();
        let params = FkParams::new(0.0, 0.0, 0.5).unwrap();
        let settings = DmftSettings {
            t_star: 1.0,
            tol: 1e-13,
            max_iter: 1000,
            mixing: 0.5,
        };
        let sol = dmft_bethe_loop(&g, &params, &settings).unwrap();
        for m in g.indices() {
            let exact = semicircle_root(g.fermionic_frequency(m) + params.mu, settings.t_star);
            assert!((sol.bath.value(m) - exact).norm() < 1e-11, "m = {m}");
        }
    }

    #[test]
    fn non_convergence_reports_residual() {
        let g = MatsubaraGrid::new(5.0, 32).unwrap();
        let params = FkParams::new(0.5, 1.0, 0.5).unwrap();
        let settings = DmftSettings {
            max_iter: 3,
            ..DmftSettings::default()
        };
        match dmft_bethe_loop(&g, &params, &settings) {
            Err(Error::NonConvergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0 && residual.is_finite());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_tail_is_monotone() {
        let g = MatsubaraGrid::new(5.0, 128).unwrap();
        let params = FkParams::new(0.5, 1.0, 0.5).unwrap();
        let settings = DmftSettings {
            t_star: 1.0,
            tol: 1e-12,
            max_iter: 500,
            mixing: 0.5,
        };
        let sol = dmft_bethe_loop(&g, &params, &settings).unwrap();
        let r = &sol.residuals;
        let tail = &r[r.len() / 2..];
        assert!(tail.windows(2).all(|w| w[1] <= w[0]), "{tail:?}");
        assert!(sol.bath.check_conjugate_symmetry(SYMMETRY_TOLERANCE).is_ok());
        let again = dmft_update(&sol.bath, &params, &settings).unwrap();
        assert!(again.max_difference(&sol.bath) <= settings.tol);
    }
}
