//! Closed-form vertical-count expressions.
//!
//! Counts are per generated pair. The general expression depends on the
//! object and probe only through the idler-1 coefficients `A″`, `B″`
//! after the object; the two HWP settings differ by which coefficient
//! lands in the vertical (interfering) channel.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::{ProbeState, SourceConfig, ThetaSetting};
use crate::jones::JonesMatrix;
use crate::phase::wrap;

/// Slack allowed on the column-passivity constraints `τ² + κ² ≤ 1`.
pub const COLUMN_PASSIVITY_TOLERANCE: f64 = 1e-9;

/// Six-parameter sample matrix
/// `[[τ_H e^{iφ_H}, κ e^{iξ}], [−κ e^{−iξ}, τ_V e^{iφ_V}]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JonesObject {
    pub tau_h: f64,
    pub tau_v: f64,
    pub kappa: f64,
    pub phi_h: f64,
    pub phi_v: f64,
    pub xi: f64,
}

impl JonesObject {
    /// Validates amplitudes and column passivity; phases are wrapped.
    pub fn new(
        tau_h: f64,
        tau_v: f64,
        kappa: f64,
        phi_h: f64,
        phi_v: f64,
        xi: f64,
    ) -> Result<Self> {
        let obj = Self {
            tau_h,
            tau_v,
            kappa,
            phi_h: wrap(phi_h),
            phi_v: wrap(phi_v),
            xi: wrap(xi),
        };
        obj.validate()?;
        Ok(obj)
    }

    pub fn identity() -> Self {
        Self {
            tau_h: 1.0,
            tau_v: 1.0,
            kappa: 0.0,
            phi_h: 0.0,
            phi_v: 0.0,
            xi: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let amps = [self.tau_h, self.tau_v, self.kappa];
        if amps.iter().any(|a| !(0.0..=1.0).contains(a))
            || [self.phi_h, self.phi_v, self.xi]
                .iter()
                .any(|p| !p.is_finite())
        {
            return Err(Error::InvalidParameter(format!(
                "object amplitudes must lie in [0, 1]: {self:?}"
            )));
        }
        let excess = self.column_excess();
        if excess > COLUMN_PASSIVITY_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "object columns exceed unit norm by {excess}"
            )));
        }
        Ok(())
    }

    /// `max(τ_H² + κ², τ_V² + κ²) − 1`.
    pub fn column_excess(&self) -> f64 {
        let k2 = self.kappa * self.kappa;
        (self.tau_h * self.tau_h + k2).max(self.tau_v * self.tau_v + k2) - 1.0
    }

    pub fn to_matrix(&self) -> JonesMatrix {
        JonesMatrix([
            [
                Complex64::from_polar(self.tau_h, self.phi_h),
                Complex64::from_polar(self.kappa, self.xi),
            ],
            [
                -Complex64::from_polar(self.kappa, -self.xi),
                Complex64::from_polar(self.tau_v, self.phi_v),
            ],
        ])
    }

    /// Parameters in refinement order `[τ_H, τ_V, κ, φ_H, φ_V, ξ]`.
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.tau_h, self.tau_v, self.kappa, self.phi_h, self.phi_v, self.xi,
        ]
    }

    /// Builds an object from raw parameters without validation.
    pub fn from_array(p: [f64; 6]) -> Self {
        Self {
            tau_h: p[0],
            tau_v: p[1],
            kappa: p[2],
            phi_h: p[3],
            phi_v: p[4],
            xi: p[5],
        }
    }
}

/// Convenience free function mirroring [`JonesObject::to_matrix`].
pub fn to_matrix(obj: &JonesObject) -> JonesMatrix {
    obj.to_matrix()
}

/// Idler-1 coefficients after the object: `A″` on H and `B″` on V.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudePair {
    pub a_pp: Complex64,
    pub b_pp: Complex64,
}

impl AmplitudePair {
    /// Pair seen by the counting formula after the half-wave plate. At 45°
    /// the plate exchanges the H and V roles, so `A″` becomes the
    /// interfering coefficient. This is the only place the swap happens.
    pub fn oriented(self, theta: ThetaSetting) -> Self {
        match theta {
            ThetaSetting::Deg0 => self,
            ThetaSetting::Deg45 => Self {
                a_pp: self.b_pp,
                b_pp: self.a_pp,
            },
        }
    }
}

pub fn amplitudes_from_matrix(m: &JonesMatrix, probe: &ProbeState) -> AmplitudePair {
    let alpha = Complex64::new(probe.alpha1, 0.0);
    let (a_pp, b_pp) = m.apply(alpha, probe.v_coefficient());
    AmplitudePair { a_pp, b_pp }
}

pub fn amplitudes(obj: &JonesObject, probe: &ProbeState) -> AmplitudePair {
    amplitudes_from_matrix(&obj.to_matrix(), probe)
}

fn counts_general_complex(
    pair: &AmplitudePair,
    src: &SourceConfig,
    t: f64,
    zeta: f64,
) -> Complex64 {
    let (b1, b2) = (src.b1, src.b2);
    let e = Complex64::from_polar(1.0, zeta);
    let dc = 0.5 * b1 * b1 * (pair.a_pp.norm_sqr() + pair.b_pp.norm_sqr()) + 0.5 * b2 * b2;
    let i = Complex64::new(0.0, 1.0);
    dc - i * (b1 * b2 * t / 2.0) * (pair.b_pp * e.conj() - pair.b_pp.conj() * e)
}

/// Vertical counts from an already oriented pair:
/// `b₁²/2 (|A″|² + |B″|²) + b₂²/2 − (i b₁b₂T/2)(B″e^{−iζ} − B″*e^{iζ})`.
pub fn counts_general(pair: &AmplitudePair, src: &SourceConfig, t: f64, zeta: f64) -> f64 {
    counts_general_complex(pair, src, t, zeta).re
}

/// [`counts_general`] for an unoriented pair at HWP setting `theta`.
pub fn counts_for_theta(
    theta: ThetaSetting,
    pair: &AmplitudePair,
    src: &SourceConfig,
    t: f64,
    zeta: f64,
) -> f64 {
    counts_general(&pair.oriented(theta), src, t, zeta)
}

/// DC level, fringe amplitude (≥ 0) and phase `φ` of the fringe
/// `C + A sin(ζ + φ)` produced by a pair at setting `theta`.
pub fn fringe(
    theta: ThetaSetting,
    pair: &AmplitudePair,
    src: &SourceConfig,
    t: f64,
) -> (f64, f64, f64) {
    let p = pair.oriented(theta);
    let (b1, b2) = (src.b1, src.b2);
    let dc = 0.5 * b1 * b1 * (p.a_pp.norm_sqr() + p.b_pp.norm_sqr()) + 0.5 * b2 * b2;
    // b₁b₂T|B| sin(arg B − ζ) = b₁b₂T|B| sin(ζ + π − arg B)
    let amp = b1 * b2 * t * p.b_pp.norm();
    (dc, amp, wrap(std::f64::consts::PI - p.b_pp.arg()))
}

/// Counts with no object in the idler arm.
pub fn counts_no_object(
    theta: ThetaSetting,
    probe: &ProbeState,
    src: &SourceConfig,
    t: f64,
    zeta: f64,
) -> f64 {
    let (b1, b2) = (src.b1, src.b2);
    let dc = 0.5 * b1 * b1 + 0.5 * b2 * b2;
    match theta {
        ThetaSetting::Deg0 => dc + b1 * b2 * t * probe.beta1 * (probe.gamma - zeta).sin(),
        ThetaSetting::Deg45 => dc - b1 * b2 * t * probe.alpha1 * zeta.sin(),
    }
}

/// Object-dependent DC level shared by both HWP settings.
pub fn dc_level(probe: &ProbeState, obj: &JonesObject, src: &SourceConfig) -> f64 {
    let (a, b, g) = (probe.alpha1, probe.beta1, probe.gamma);
    let JonesObject {
        tau_h,
        tau_v,
        kappa,
        phi_h,
        phi_v,
        xi,
    } = *obj;
    let inner = kappa * kappa
        + (a * a * tau_h * tau_h + b * b * tau_v * tau_v)
        + 2.0 * a * b * kappa * (tau_h * (phi_h - g - xi).cos() - tau_v * (phi_v + g + xi).cos());
    0.5 * src.b2 * src.b2 + 0.5 * src.b1 * src.b1 * inner
}

/// Counts for the six-parameter object, written out term by term.
pub fn counts_with_object(
    theta: ThetaSetting,
    probe: &ProbeState,
    obj: &JonesObject,
    src: &SourceConfig,
    t: f64,
    zeta: f64,
) -> f64 {
    let (a, b, g) = (probe.alpha1, probe.beta1, probe.gamma);
    let JonesObject {
        tau_h,
        tau_v,
        kappa,
        phi_h,
        phi_v,
        xi,
    } = *obj;
    let osc = match theta {
        ThetaSetting::Deg0 => a * kappa * (xi + zeta).sin() + b * tau_v * (phi_v + g - zeta).sin(),
        ThetaSetting::Deg45 => a * tau_h * (phi_h - zeta).sin() + b * kappa * (xi + g - zeta).sin(),
    };
    dc_level(probe, obj, src) + src.b1 * src.b2 * t * osc
}

/// Fringe visibility `A / C` of a sinusoid with amplitude `A` and DC `C`.
pub fn visibility(amplitude: f64, dc: f64) -> Result<f64> {
    if dc.is_nan() || dc <= 0.0 || amplitude < 0.0 || amplitude > dc {
        return Err(Error::UnphysicalVisibility { amplitude, dc });
    }
    Ok(amplitude / dc)
}
