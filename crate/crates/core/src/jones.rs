//! General 2×2 complex Jones matrices.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the largest singular value of a passive object.
pub const PASSIVITY_TOLERANCE: f64 = 1e-9;

/// A Jones matrix in the H/V basis, indexed `[row][column]` with
/// row/column 0 = H and 1 = V, so `m[1][0]` is `O_VH` (H in, V out).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JonesMatrix(pub [[Complex64; 2]; 2]);

impl JonesMatrix {
    pub fn identity() -> Self {
        let one = Complex64::new(1.0, 0.0);
        let zero = Complex64::new(0.0, 0.0);
        Self([[one, zero], [zero, one]])
    }

    /// Builds a matrix from eight reals laid out as
    /// `[re_hh, im_hh, re_hv, im_hv, re_vh, im_vh, re_vv, im_vv]`.
    pub fn from_reals(v: [f64; 8]) -> Self {
        Self([
            [Complex64::new(v[0], v[1]), Complex64::new(v[2], v[3])],
            [Complex64::new(v[4], v[5]), Complex64::new(v[6], v[7])],
        ])
    }

    pub fn to_reals(&self) -> [f64; 8] {
        let m = &self.0;
        [
            m[0][0].re, m[0][0].im, m[0][1].re, m[0][1].im, m[1][0].re, m[1][0].im, m[1][1].re,
            m[1][1].im,
        ]
    }

    pub fn hh(&self) -> Complex64 {
        self.0[0][0]
    }
    pub fn hv(&self) -> Complex64 {
        self.0[0][1]
    }
    pub fn vh(&self) -> Complex64 {
        self.0[1][0]
    }
    pub fn vv(&self) -> Complex64 {
        self.0[1][1]
    }

    /// Applies the matrix to the column vector `(h, v)`.
    pub fn apply(&self, h: Complex64, v: Complex64) -> (Complex64, Complex64) {
        (self.hh() * h + self.hv() * v, self.vh() * h + self.vv() * v)
    }

    /// Largest singular value, from the eigenvalues of `M†M`.
    pub fn largest_singular_value(&self) -> f64 {
        let m = &self.0;
        // M†M is Hermitian: [[p, r], [r*, q]]
        let p = m[0][0].norm_sqr() + m[1][0].norm_sqr();
        let q = m[0][1].norm_sqr() + m[1][1].norm_sqr();
        let r = m[0][0].conj() * m[0][1] + m[1][0].conj() * m[1][1];
        let half_trace = 0.5 * (p + q);
        let disc = (0.25 * (p - q) * (p - q) + r.norm_sqr()).sqrt();
        (half_trace + disc).max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_reals().iter().all(|x| x.is_finite())
    }

    /// Rejects matrices that would amplify some input polarization.
    pub fn check_passive(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::InvalidParameter(
                "Jones matrix has non-finite entries".into(),
            ));
        }
        let s = self.largest_singular_value();
        if s > 1.0 + PASSIVITY_TOLERANCE {
            return Err(Error::NonPassive(s));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_singular_value() {
        assert!((JonesMatrix::identity().largest_singular_value() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn singular_value_diagonal() {
        let m = JonesMatrix::from_reals([0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.8]);
        assert!((m.largest_singular_value() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn gain_rejected() {
        let m = JonesMatrix::from_reals([1.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(m.check_passive(), Err(Error::NonPassive(_))));
        // rank-one matrix with unit columns has singular value √2
        let m = JonesMatrix::from_reals([1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((m.largest_singular_value() - 2f64.sqrt()).abs() < 1e-14);
        assert!(m.check_passive().is_err());
    }
}
