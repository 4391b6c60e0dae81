//! Jones-matrix reconstruction from fitted fringes.
//!
//! The pipeline calibrates the idler transmission `T` on no-object fringes,
//! extracts the six object parameters from the four H/V-probe fringes
//! (visibility ratios, DC levels and fringe phases), cross-checks the two
//! independent estimates of the coupling strength and phase, and finally
//! refines all parameters against every recorded fringe by damped
//! least squares.
//!
//! Phase bookkeeping follows the fitter's convention `A ≥ 0`,
//! `C + A sin(ζ + φ)`:
//!
//! | fringe            | oscillating term        | recovered as           |
//! |-------------------|-------------------------|------------------------|
//! | α=1, θ=0°         | `+κ sin(ξ + ζ)`         | `ξ₁ = φ`               |
//! | α=1, θ=45°        | `+τ_H sin(φ_H − ζ)`     | `φ_H = π − φ`          |
//! | β=1, θ=0°         | `+τ_V sin(φ_V − ζ)`     | `φ_V = π − φ`          |
//! | β=1, θ=45°        | `+κ sin(ξ − ζ)`         | `ξ₂ = π − φ`           |

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::acquisition::{FringeDataset, Noise};
use crate::analytic::{self, JonesObject};
use crate::error::{Error, Result};
use crate::fitting::{visibility_of, visibility_stderr, SinusoidFit};
use crate::interferometer::{ProbeState, SourceConfig};
use crate::optimize::{self, LmOptions, LmReport};
use crate::phase::{circular_distance, circular_mean, wrap};

pub const DEFAULT_CONSISTENCY_TOLERANCE: f64 = 0.05;

/// A fringe counts as measured when `A > 5·σ_A`.
pub const MEASURABLE_SNR: f64 = 5.0;

/// Largest passivity excess that refinement silently projects away.
pub const PASSIVITY_PROJECTION_LIMIT: f64 = 1e-6;

/// Allowed misnormalization of a characterized probe before renormalizing.
pub const PROBE_NORMALIZATION_LIMIT: f64 = 0.1;

const AMPLITUDE_FD_STEP: f64 = 1e-6;
const PHASE_FD_STEP: f64 = 1e-5;

/// Negative radicands down to this size are treated as rounding.
const RADICAND_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    /// `κ / τ_H`
    pub r1: f64,
    /// `τ_V / κ`
    pub r2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransmissionCalibration {
    pub t: f64,
    pub visibility_theta0: f64,
    pub visibility_theta45: f64,
    /// `|ν₀ − ν₄₅| / mean`
    pub relative_spread: f64,
}

/// No-object fringes used for calibration: vertical probe at 0° and
/// horizontal probe at 45°.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationFits<'a> {
    pub theta0_beta1: &'a SinusoidFit,
    pub theta45_alpha1: &'a SinusoidFit,
}

/// Fits of the four H/V datasets of one object.
#[derive(Clone, Copy, Debug)]
pub struct HvFits<'a> {
    pub alpha_theta0: &'a SinusoidFit,
    pub alpha_theta45: &'a SinusoidFit,
    pub beta_theta0: &'a SinusoidFit,
    pub beta_theta45: &'a SinusoidFit,
}

pub const LABEL_ALPHA_THETA0: &str = "alpha=1,theta=0";
pub const LABEL_ALPHA_THETA45: &str = "alpha=1,theta=45";
pub const LABEL_BETA_THETA0: &str = "beta=1,theta=0";
pub const LABEL_BETA_THETA45: &str = "beta=1,theta=45";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameter {
    TauH,
    TauV,
    Kappa,
}

/// Reported instead of a point estimate when the fringe carrying a
/// parameter is below the noise floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub parameter: Parameter,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    pub kappa_rel_discrepancy: f64,
    pub xi_rel_discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Consistency {
    fn new(kappa_rel_discrepancy: f64, xi_rel_discrepancy: f64, tolerance: f64) -> Self {
        Self {
            kappa_rel_discrepancy,
            xi_rel_discrepancy,
            tolerance,
            pass: kappa_rel_discrepancy <= tolerance && xi_rel_discrepancy <= tolerance,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub t_hat: f64,
    pub probe_hat: Option<ProbeState>,
    pub kappa_alpha: f64,
    pub kappa_beta: f64,
    pub xi_1: f64,
    pub xi_2: f64,
    pub ratios: Option<Ratios>,
    pub object: JonesObject,
    /// `φ_H − φ_V`, wrapped.
    pub dphi: f64,
    pub consistency: Consistency,
    pub upper_bounds: Vec<UpperBound>,
    pub refined: bool,
    /// RMS of weighted model residuals over the datasets last compared
    /// against; `None` until evaluated.
    pub residual_rms: Option<f64>,
    pub iterations: usize,
}

/// `T̂` from the two no-object calibration visibilities. Each equals
/// `2b₁b₂T/(b₁² + b₂²)`, i.e. `T` for balanced sources.
pub fn calibrate_t(
    fits: CalibrationFits<'_>,
    src: &SourceConfig,
) -> Result<TransmissionCalibration> {
    let gain = 2.0 * src.b1 * src.b2;
    if gain <= 0.0 {
        return Err(Error::InvalidParameter(
            "one source is dark; no interference".into(),
        ));
    }
    let mut vis = [0.0; 2];
    for (v, fit) in vis.iter_mut().zip([fits.theta0_beta1, fits.theta45_alpha1]) {
        let nu = fit.a / fit.c;
        let limit = gain * (1.0 + 3.0 * visibility_stderr(fit));
        if fit.c.is_nan() || fit.c <= 0.0 || nu > limit {
            return Err(Error::UnphysicalVisibility {
                amplitude: fit.a,
                dc: fit.c,
            });
        }
        *v = nu;
    }
    let mean = 0.5 * (vis[0] + vis[1]);
    let spread = if mean > 0.0 {
        (vis[0] - vis[1]).abs() / mean
    } else {
        0.0
    };
    Ok(TransmissionCalibration {
        t: (mean / gain).clamp(0.0, 1.0),
        visibility_theta0: vis[0],
        visibility_theta45: vis[1],
        relative_spread: spread,
    })
}

/// Recovers a prepared probe from its no-object fringes at both settings.
///
/// `β₁ = ν₀/T` and `α₁ = ν₄₅/T` (balanced sources), renormalized. The θ=45°
/// fringe does not depend on `γ`, so `γ` is the phase difference between
/// the two fringes; without a measurable 45° fringe it falls back to
/// `π − φ₀`.
pub fn characterize_probe(
    theta0: &SinusoidFit,
    theta45: &SinusoidFit,
    t: f64,
    src: &SourceConfig,
) -> Result<ProbeState> {
    let scale = 2.0 * src.b1 * src.b2 * t;
    if scale <= 0.0 {
        return Err(Error::InvalidParameter(
            "probe characterization needs T > 0 and two bright sources".into(),
        ));
    }
    let beta = theta0.a / theta0.c / scale;
    let alpha = theta45.a / theta45.c / scale;
    let norm2 = alpha * alpha + beta * beta;
    if (norm2 - 1.0).abs() > PROBE_NORMALIZATION_LIMIT {
        return Err(Error::ProbeNormalization(norm2 - 1.0));
    }
    let norm = norm2.sqrt();
    let m0 = theta0.is_measurable(MEASURABLE_SNR);
    let m45 = theta45.is_measurable(MEASURABLE_SNR);
    let (alpha, beta) = match (m45, m0) {
        (true, true) => (alpha / norm, beta / norm),
        (false, _) => (0.0, 1.0),
        (true, false) => (1.0, 0.0),
    };
    let gamma = match (m0, m45) {
        (true, true) => wrap(theta45.phi - theta0.phi),
        (true, false) => wrap(PI - theta0.phi),
        (false, _) => 0.0,
    };
    ProbeState::new(alpha, beta, gamma)
}

/// Visibility ratios `R₁ = ν(α,0°)/ν(α,45°)` and `R₂ = ν(β,0°)/ν(β,45°)`.
pub fn ratios(fits: &HvFits<'_>) -> Result<Ratios> {
    Ok(Ratios {
        r1: visibility_of(fits.alpha_theta0)? / visibility_of(fits.alpha_theta45)?,
        r2: visibility_of(fits.beta_theta0)? / visibility_of(fits.beta_theta45)?,
    })
}

/// Fringe-phase offset of the no-object `alpha=1, θ=45°` reference relative
/// to its ideal value `π`. Subtracting it from object fits moves them onto
/// the absolute ζ origin.
pub fn origin_offset(reference_alpha_theta45: &SinusoidFit) -> f64 {
    wrap(reference_alpha_theta45.phi - PI)
}

fn checked_sqrt(radicand: f64, dataset: &str) -> Result<f64> {
    if radicand < -RADICAND_SLACK || !radicand.is_finite() {
        return Err(Error::ModelInconsistentDc {
            dataset: dataset.to_string(),
            radicand,
        });
    }
    Ok(radicand.max(0.0).sqrt())
}

/// Scales the amplitudes onto the column-passivity boundary if they exceed
/// it.
fn project_passive(obj: JonesObject) -> JonesObject {
    let excess = obj.column_excess();
    if excess <= 0.0 {
        return obj;
    }
    let s = 1.0 / (1.0 + excess).sqrt();
    JonesObject {
        tau_h: obj.tau_h * s,
        tau_v: obj.tau_v * s,
        kappa: obj.kappa * s,
        ..obj
    }
}

/// Point estimate of the object from the four H/V fits.
///
/// `pairs_per_point` converts fitted counts to per-pair probabilities.
pub fn extract_hv(
    fits: &HvFits<'_>,
    t: f64,
    src: &SourceConfig,
    pairs_per_point: f64,
    tolerance: f64,
) -> Result<Reconstruction> {
    let (b1, b2) = (src.b1, src.b2);
    if b1 <= 0.0 || pairs_per_point <= 0.0 {
        return Err(Error::InvalidParameter(
            "extraction needs b1 > 0 and a positive pair count".into(),
        ));
    }
    let s = pairs_per_point;
    // Per-pair fringe amplitude per unit parameter.
    let unit_amplitude = s * b1 * b2 * t;

    // DC: C = s(b₂² + b₁²(κ² + τ²))/2, shared by both settings of a probe.
    let c_alpha = 0.5 * (fits.alpha_theta0.c + fits.alpha_theta45.c);
    let c_beta = 0.5 * (fits.beta_theta0.c + fits.beta_theta45.c);
    let d_alpha = (2.0 * c_alpha / s - b2 * b2) / (b1 * b1);
    let d_beta = (2.0 * c_beta / s - b2 * b2) / (b1 * b1);
    checked_sqrt(d_alpha, "alpha=1")?;
    checked_sqrt(d_beta, "beta=1")?;

    let m_kappa = fits.alpha_theta0.is_measurable(MEASURABLE_SNR)
        && fits.beta_theta45.is_measurable(MEASURABLE_SNR);
    let m_tau_h = fits.alpha_theta45.is_measurable(MEASURABLE_SNR);
    let m_tau_v = fits.beta_theta0.is_measurable(MEASURABLE_SNR);
    let bound_of = |fit: &SinusoidFit| {
        if unit_amplitude > 0.0 {
            MEASURABLE_SNR * fit.stderr.a / unit_amplitude
        } else {
            f64::INFINITY
        }
    };

    let mut upper_bounds = Vec::new();
    let mut ratios_out = None;
    let (kappa_alpha, kappa_beta, tau_h, tau_v);
    if m_kappa {
        let nu_a0 = visibility_of(fits.alpha_theta0)?;
        let nu_b0 = visibility_of(fits.beta_theta0)?;
        let nu_b45 = visibility_of(fits.beta_theta45)?;
        let r2 = nu_b0 / nu_b45;
        kappa_beta = checked_sqrt(d_beta / (1.0 + r2 * r2), LABEL_BETA_THETA45)?;
        if m_tau_h {
            let r1 = nu_a0 / visibility_of(fits.alpha_theta45)?;
            ratios_out = Some(Ratios { r1, r2 });
            // κ² (1 + 1/R₁²) = D_α
            kappa_alpha = checked_sqrt(d_alpha * r1 * r1 / (1.0 + r1 * r1), LABEL_ALPHA_THETA0)?;
            let kappa = 0.5 * (kappa_alpha + kappa_beta);
            tau_h = kappa / r1;
            tau_v = kappa * r2;
        } else {
            // τ_H fringe lost in noise: τ_H ≈ 0 and D_α = κ²
            kappa_alpha = checked_sqrt(d_alpha, LABEL_ALPHA_THETA0)?;
            upper_bounds.push(UpperBound {
                parameter: Parameter::TauH,
                value: bound_of(fits.alpha_theta45),
            });
            tau_h = 0.0;
            tau_v = 0.5 * (kappa_alpha + kappa_beta) * r2;
        }
    } else {
        // No coupling fringe: κ ≈ 0 and the DC levels give τ directly.
        kappa_alpha = 0.0;
        kappa_beta = 0.0;
        upper_bounds.push(UpperBound {
            parameter: Parameter::Kappa,
            value: bound_of(fits.alpha_theta0).max(bound_of(fits.beta_theta45)),
        });
        tau_h = d_alpha.max(0.0).sqrt();
        tau_v = d_beta.max(0.0).sqrt();
    }
    if !m_tau_v {
        upper_bounds.push(UpperBound {
            parameter: Parameter::TauV,
            value: bound_of(fits.beta_theta0),
        });
    }
    let kappa = 0.5 * (kappa_alpha + kappa_beta);

    let xi_1 = wrap(fits.alpha_theta0.phi);
    let xi_2 = wrap(PI - fits.beta_theta45.phi);
    let xi = if m_kappa {
        circular_mean(&[xi_1, xi_2])
    } else {
        0.0
    };
    let phi_h = if m_tau_h {
        wrap(PI - fits.alpha_theta45.phi)
    } else {
        0.0
    };
    let phi_v = if m_tau_v {
        wrap(PI - fits.beta_theta0.phi)
    } else {
        0.0
    };

    let object = project_passive(JonesObject {
        tau_h: tau_h.min(1.0),
        tau_v: tau_v.min(1.0),
        kappa: kappa.min(1.0),
        phi_h,
        phi_v,
        xi,
    });

    let (kappa_disc, xi_disc) = if m_kappa && kappa > 0.0 {
        (
            (kappa_alpha - kappa_beta).abs() / kappa,
            circular_distance(xi_1, xi_2) / PI,
        )
    } else {
        (0.0, 0.0)
    };

    Ok(Reconstruction {
        t_hat: t,
        probe_hat: None,
        kappa_alpha,
        kappa_beta,
        xi_1,
        xi_2,
        ratios: ratios_out,
        dphi: wrap(object.phi_h - object.phi_v),
        object,
        consistency: Consistency::new(kappa_disc, xi_disc, tolerance),
        upper_bounds,
        refined: false,
        residual_rms: None,
        iterations: 0,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineOptions {
    pub t: f64,
    pub src: SourceConfig,
    /// Added to every recorded ζ before evaluating the model.
    pub zeta_offset: f64,
    pub lm: LmOptions,
}

impl RefineOptions {
    pub fn new(t: f64, src: SourceConfig) -> Self {
        Self {
            t,
            src,
            zeta_offset: 0.0,
            lm: LmOptions::default(),
        }
    }
}

/// Weighted residuals of all datasets for object parameters `p`, in
/// dataset-then-grid order. Noiseless data are divided by the pair count,
/// Poisson data by `√max(count, 1)`.
pub fn weighted_residuals(datasets: &[FringeDataset], p: &[f64], opts: &RefineOptions) -> Vec<f64> {
    let obj = JonesObject::from_array([p[0], p[1], p[2], p[3], p[4], p[5]]);
    let mut out = Vec::with_capacity(datasets.iter().map(|d| d.counts.len()).sum());
    for ds in datasets {
        let s = ds.config.pairs_per_point as f64;
        for (z, obs) in ds.zeta_grid().iter().zip(&ds.counts) {
            let predicted = s * analytic::counts_with_object(
                ds.theta,
                &ds.probe,
                &obj,
                &opts.src,
                opts.t,
                z + opts.zeta_offset,
            );
            let w = match ds.config.noise {
                Noise::None => 1.0 / s.max(1.0),
                Noise::Poisson => 1.0 / obs.max(1.0).sqrt(),
            };
            out.push((obs - predicted) * w);
        }
    }
    out
}

/// RMS of [`weighted_residuals`] for a given object.
pub fn residual_rms(datasets: &[FringeDataset], obj: &JonesObject, opts: &RefineOptions) -> f64 {
    let r = weighted_residuals(datasets, &obj.to_array(), opts);
    if r.is_empty() {
        return 0.0;
    }
    (r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64).sqrt()
}

/// Folds negative amplitudes into the phases and wraps phases.
fn canonical_object(p: &[f64]) -> JonesObject {
    let (mut tau_h, mut phi_h) = (p[0], p[3]);
    let (mut tau_v, mut phi_v) = (p[1], p[4]);
    let (mut kappa, mut xi) = (p[2], p[5]);
    if tau_h < 0.0 {
        tau_h = -tau_h;
        phi_h += PI;
    }
    if tau_v < 0.0 {
        tau_v = -tau_v;
        phi_v += PI;
    }
    if kappa < 0.0 {
        // −κe^{iξ} = κe^{i(ξ+π)} and κe^{−iξ} = −κe^{−i(ξ+π)}
        kappa = -kappa;
        xi += PI;
    }
    JonesObject {
        tau_h,
        tau_v,
        kappa,
        phi_h: wrap(phi_h),
        phi_v: wrap(phi_v),
        xi: wrap(xi),
    }
}

/// Global refinement over all datasets, also returning the optimizer trace.
pub fn refine_global_with_report(
    datasets: &[FringeDataset],
    initial: &Reconstruction,
    opts: &RefineOptions,
) -> Result<(Reconstruction, LmReport)> {
    if datasets.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "refinement needs at least 4 datasets, got {}",
            datasets.len()
        )));
    }
    let x0 = initial.object.to_array();
    let steps = [
        AMPLITUDE_FD_STEP,
        AMPLITUDE_FD_STEP,
        AMPLITUDE_FD_STEP,
        PHASE_FD_STEP,
        PHASE_FD_STEP,
        PHASE_FD_STEP,
    ];
    let report = optimize::minimize(
        |p: &[f64]| weighted_residuals(datasets, p, opts),
        &x0,
        &steps,
        &opts.lm,
    );

    let mut object = canonical_object(&report.params);
    let excess = object.column_excess();
    let over_unity = [object.tau_h, object.tau_v, object.kappa]
        .iter()
        .map(|a| a - 1.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let violation = excess.max(over_unity);
    if violation > PASSIVITY_PROJECTION_LIMIT {
        return Err(Error::PassivityViolation(violation));
    }
    if violation > 0.0 {
        object = project_passive(object);
        object.tau_h = object.tau_h.min(1.0);
        object.tau_v = object.tau_v.min(1.0);
        object.kappa = object.kappa.min(1.0);
    }
    object.validate()?;

    let refined = Reconstruction {
        object,
        dphi: wrap(object.phi_h - object.phi_v),
        refined: report.converged,
        residual_rms: Some(residual_rms(datasets, &object, opts)),
        iterations: report.iterations,
        ..initial.clone()
    };
    Ok((refined, report))
}

/// Refines `initial` against every dataset (T and the source amplitudes
/// held fixed). Hitting the iteration cap returns the best iterate with
/// `refined = false`.
pub fn refine_global(
    datasets: &[FringeDataset],
    initial: &Reconstruction,
    opts: &RefineOptions,
) -> Result<Reconstruction> {
    refine_global_with_report(datasets, initial, opts).map(|(r, _)| r)
}
