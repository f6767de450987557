//! Matsubara frequency bookkeeping.
//!
//! A grid is just an inverse temperature and a cutoff. Frequencies are
//! evaluated on demand from `(m, beta)`, so any integer index is valid input;
//! window membership is a separate question answered by [`MatsubaraGrid::contains`].

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse temperature plus the symmetric fermionic window `{-n_cut, ..., n_cut - 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatsubaraGrid {
    beta: f64,
    n_cut: usize,
}

impl MatsubaraGrid {
    pub fn new(beta: f64, n_cut: usize) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidBeta(beta));
        }
        if n_cut == 0 || n_cut > i64::MAX as usize / 4 {
            return Err(Error::InvalidCutoff);
        }
        Ok(Self { beta, n_cut })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn n_cut(&self) -> usize {
        self.n_cut
    }

    /// Same temperature, different cutoff.
    pub fn with_cutoff(&self, n_cut: usize) -> Result<Self> {
        Self::new(self.beta, n_cut)
    }

    /// Number of fermionic indices in the window.
    pub fn size(&self) -> usize {
        2 * self.n_cut
    }

    pub fn first(&self) -> i64 {
        -(self.n_cut as i64)
    }

    pub fn last(&self) -> i64 {
        self.n_cut as i64 - 1
    }

    pub fn indices(&self) -> RangeInclusive<i64> {
        self.first()..=self.last()
    }

    pub fn contains(&self, m: i64) -> bool {
        m >= self.first() && m <= self.last()
    }

    /// Zero-based storage offset of `m`, if it lies in the window.
    pub fn position(&self, m: i64) -> Option<usize> {
        self.contains(m).then(|| (m - self.first()) as usize)
    }

    /// `iω_m = iπT(2m+1)`.
    pub fn fermionic_frequency(&self, m: i64) -> Complex64 {
        Complex64::new(0.0, PI * self.temperature() * (2 * m + 1) as f64)
    }

    /// `iν_ℓ = 2iπTℓ`.
    pub fn bosonic_frequency(&self, ell: i64) -> Complex64 {
        Complex64::new(0.0, PI * self.temperature() * (2 * ell) as f64)
    }

    /// Indices `m` for which both `m` and `m + ell` lie in the window.
    ///
    /// The range is mapped onto itself by `m -> -m - 1 - ell`, which pairs
    /// each particle-hole pair with its complex conjugate.
    pub fn pair_window(&self, ell: BosonicIndex) -> Result<RangeInclusive<i64>> {
        let shift = ell.get();
        if shift.unsigned_abs() as usize >= self.size() {
            return Err(Error::EllOutOfWindow {
                ell: shift,
                size: self.size(),
            });
        }
        let lo = self.first().max(self.first() - shift);
        let hi = self.last().min(self.last() - shift);
        Ok(lo..=hi)
    }
}

/// A nonzero bosonic transfer index `ℓ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "i64")]
pub struct BosonicIndex(i64);

impl BosonicIndex {
    pub fn new(ell: i64) -> Result<Self> {
        if ell == 0 {
            Err(Error::StaticComponent)
        } else {
            Ok(Self(ell))
        }
    }

    pub fn get(self) -> i64 {
        self.0
    }

    pub fn reversed(self) -> Self {
        Self(-self.0)
    }

    pub fn frequency(self, grid: &MatsubaraGrid) -> Complex64 {
        grid.bosonic_frequency(self.0)
    }
}

impl TryFrom<i64> for BosonicIndex {
    type Error = Error;

    fn try_from(ell: i64) -> Result<Self> {
        Self::new(ell)
    }
}

impl From<BosonicIndex> for i64 {
    fn from(ell: BosonicIndex) -> i64 {
        ell.0
    }
}

/// `m + ell`; callers decide whether the result is in their window.
pub fn shifted_index(m: i64, ell: i64) -> i64 {
    m + ell
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn fermionic_values() {
        let g1 = MatsubaraGrid::new(1.0, 8).unwrap();
        assert_relative_eq!(g1.fermionic_frequency(0).im, PI, max_relative = 1e-15);
        assert_eq!(g1.fermionic_frequency(0).re, 0.0);
        assert_eq!(g1.fermionic_frequency(-1), -g1.fermionic_frequency(0));
        let g2 = MatsubaraGrid::new(2.0, 8).unwrap();
        assert_relative_eq!(g2.fermionic_frequency(3).im, 3.5 * PI, max_relative = 1e-15);
        assert_relative_eq!(g2.fermionic_frequency(3).im, 10.995574287564276, max_relative = 1e-14);
    }

    #[test]
    fn bosonic_values() {
        let g = MatsubaraGrid::new(1.0, 8).unwrap();
        assert_eq!(g.bosonic_frequency(0), Complex64::new(0.0, 0.0));
        assert_relative_eq!(g.bosonic_frequency(1).im, 2.0 * PI, max_relative = 1e-15);
        let g4 = MatsubaraGrid::new(4.0, 8).unwrap();
        assert_relative_eq!(g4.bosonic_frequency(-2).im, -PI, max_relative = 1e-15);
    }

    #[test]
    fn shifted() {
        assert_eq!(shifted_index(0, 1), 1);
        assert_eq!(shifted_index(-3, 3), 0);
        assert_eq!(shifted_index(5, -2), 3);
    }

    #[test]
    fn rejects_bad_construction() {
        assert_eq!(MatsubaraGrid::new(0.0, 4), Err(Error::InvalidBeta(0.0)));
        assert!(MatsubaraGrid::new(f64::NAN, 4).is_err());
        assert_eq!(MatsubaraGrid::new(1.0, 0), Err(Error::InvalidCutoff));
        assert_eq!(BosonicIndex::new(0), Err(Error::StaticComponent));
    }

    #[test]
    fn window_layout() {
        let g = MatsubaraGrid::new(1.0, 4).unwrap();
        assert_eq!(g.indices(), -4..=3);
        assert_eq!(g.size(), 8);
        assert_eq!(g.position(-4), Some(0));
        assert_eq!(g.position(3), Some(7));
        assert_eq!(g.position(4), None);
        let ell = BosonicIndex::new(2).unwrap();
        assert_eq!(g.pair_window(ell).unwrap(), -4..=1);
        assert_eq!(g.pair_window(ell.reversed()).unwrap(), -2..=3);
        assert!(g.pair_window(BosonicIndex::new(8).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn conjugate_pairs_are_exact(beta in 0.05f64..100.0, n_cut in 1usize..2000) {
            let g = MatsubaraGrid::new(beta, n_cut).unwrap();
            for m in [g.first(), g.first() + 1, -1, 0, g.last()] {
                prop_assert!(g.contains(-m - 1));
                prop_assert_eq!(g.fermionic_frequency(-m - 1), -g.fermionic_frequency(m));
            }
        }

        #[test]
        fn bosonic_is_additive(beta in 0.05f64..100.0, a in -500i64..500, b in -500i64..500) {
            let g = MatsubaraGrid::new(beta, 4).unwrap();
            let lhs = g.bosonic_frequency(a + b).im;
            let rhs = g.bosonic_frequency(a).im + g.bosonic_frequency(b).im;
            let scale = g.bosonic_frequency(a).im.abs().max(g.bosonic_frequency(b).im.abs()).max(lhs.abs());
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn fermionic_gap_is_bosonic(beta in 0.05f64..100.0, m in -1000i64..1000, ell in -50i64..50) {
            let g = MatsubaraGrid::new(beta, 4).unwrap();
            let gap = g.fermionic_frequency(m + ell) - g.fermionic_frequency(m);
            let scale = g.fermionic_frequency(m).im.abs().max(g.fermionic_frequency(m + ell).im.abs());
            prop_assert!((gap - g.bosonic_frequency(ell)).norm() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn pair_window_is_self_conjugate(n_cut in 1usize..200, ell in -50i64..50) {
            prop_assume!(ell != 0 && (ell.unsigned_abs() as usize) < 2 * n_cut);
            let g = MatsubaraGrid::new(1.0, n_cut).unwrap();
            let w = g.pair_window(BosonicIndex::new(ell).unwrap()).unwrap();
            prop_assert_eq!(-*w.end() - 1 - ell, *w.start());
            prop_assert!(g.contains(*w.start() + ell) && g.contains(*w.end() + ell));
            prop_assert_eq!(w.count(), 2 * n_cut - ell.unsigned_abs() as usize);
        }
    }
}
