//! Linear least-squares fit of `C + A sin(ζ + φ)` to a phase scan.
//!
//! The model is rewritten as `c + p sin ζ + q cos ζ`, solved exactly through
//! the 3×3 normal equations, and mapped back with `A = √(p² + q²)`,
//! `φ = atan2(q, p)`. `A` is never negative; its sign lives in `φ`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::acquisition::FringeDataset;
use crate::analytic;
use crate::error::{Error, Result};
use crate::phase::wrap;

/// Minimum scan length accepted by the fitter.
pub const MIN_POINTS: usize = 8;

/// The phase is reported as undetermined when `A < 10·σ_A`.
pub const PHASE_SNR_THRESHOLD: f64 = 10.0;

/// Amplitudes below this fraction of `|C|` are rounding noise.
pub const RELATIVE_AMPLITUDE_FLOOR: f64 = 1e-12;

/// Smallest accepted ratio of normal-matrix eigenvalues.
const CONDITION_FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitStderr {
    pub c: f64,
    pub a: f64,
    pub phi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub c: f64,
    pub a: f64,
    pub phi: f64,
    pub residual_rms: f64,
    pub stderr: FitStderr,
    pub phase_determined: bool,
}

impl SinusoidFit {
    pub fn evaluate(&self, zeta: f64) -> f64 {
        self.c + self.a * (zeta + self.phi).sin()
    }

    /// Whether the fringe stands above `factor` standard errors and above
    /// the rounding floor.
    pub fn is_measurable(&self, factor: f64) -> bool {
        self.a > factor * self.stderr.a && self.a > RELATIVE_AMPLITUDE_FLOOR * self.c.abs()
    }

    /// Returns a copy with the phase shifted by `-offset`.
    pub fn with_phase_offset_removed(&self, offset: f64) -> Self {
        Self {
            phi: wrap(self.phi - offset),
            ..*self
        }
    }
}

/// Fits raw samples. `weights`, when given, are inverse variances.
pub fn fit_samples(zeta: &[f64], counts: &[f64], weights: Option<&[f64]>) -> Result<SinusoidFit> {
    let n = zeta.len();
    if n != counts.len() || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidParameter(
            "fit inputs differ in length".into(),
        ));
    }
    if n < MIN_POINTS {
        return Err(Error::InvalidParameter(format!(
            "sinusoid fit needs at least {MIN_POINTS} points, got {n}"
        )));
    }

    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for i in 0..n {
        let x = Vector3::new(1.0, zeta[i].sin(), zeta[i].cos());
        let w = weights.map_or(1.0, |w| w[i]);
        normal += w * x * x.transpose();
        rhs += w * counts[i] * x;
    }

    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi.is_nan() || hi <= 0.0 || lo / hi < CONDITION_FLOOR {
        return Err(Error::SingularFit);
    }
    let chol = normal.cholesky().ok_or(Error::SingularFit)?;
    let beta = chol.solve(&rhs);
    let inv = chol.inverse();
    let (c, p, q) = (beta[0], beta[1], beta[2]);

    let rss: f64 = zeta
        .iter()
        .zip(counts)
        .map(|(z, y)| {
            let r = y - (c + p * z.sin() + q * z.cos());
            r * r
        })
        .sum();
    let residual_rms = (rss / n as f64).sqrt();

    // Poisson weights are true inverse variances; otherwise scale by the
    // residual variance.
    let cov = match weights {
        Some(_) => inv,
        None => inv * (rss / (n - 3) as f64),
    };
    let (vp, vq, cpq) = (cov[(1, 1)], cov[(2, 2)], cov[(1, 2)]);

    let a = p.hypot(q);
    let phi = wrap(q.atan2(p));
    let (se_a, se_phi) = if a > 0.0 {
        let var_a = (p * p * vp + q * q * vq + 2.0 * p * q * cpq) / (a * a);
        let var_phi = (q * q * vp + p * p * vq - 2.0 * p * q * cpq) / (a * a * a * a);
        (var_a.max(0.0).sqrt(), var_phi.max(0.0).sqrt())
    } else {
        (((vp + vq) / 2.0).max(0.0).sqrt(), std::f64::consts::PI)
    };

    let mut fit = SinusoidFit {
        c,
        a,
        phi,
        residual_rms,
        stderr: FitStderr {
            c: cov[(0, 0)].max(0.0).sqrt(),
            a: se_a,
            phi: se_phi,
        },
        phase_determined: false,
    };
    fit.phase_determined =
        a >= PHASE_SNR_THRESHOLD * se_a && a > RELATIVE_AMPLITUDE_FLOOR * c.abs();
    Ok(fit)
}

/// Fits a dataset; sampled (Poisson) datasets are weighted by
/// `1 / max(count, 1)`.
pub fn fit_sinusoid(ds: &FringeDataset) -> Result<SinusoidFit> {
    let weights: Option<Vec<f64>> = ds
        .config
        .is_sampled()
        .then(|| ds.counts.iter().map(|c| 1.0 / c.max(1.0)).collect());
    fit_samples(ds.zeta_grid(), &ds.counts, weights.as_deref())
}

/// Visibility `A / C` of a fitted fringe.
pub fn visibility_of(fit: &SinusoidFit) -> Result<f64> {
    analytic::visibility(fit.a, fit.c)
}

/// First-order standard error of [`visibility_of`].
pub fn visibility_stderr(fit: &SinusoidFit) -> f64 {
    if fit.c <= 0.0 {
        return f64::INFINITY;
    }
    let v = fit.a / fit.c;
    (fit.stderr.a / fit.c).hypot(v * fit.stderr.c / fit.c)
}
