//! Brute-force two-photon state-vector model of the nonlinear interferometer.
//!
//! Both crystals emit vertically polarized signal/idler pairs. Idler 1 is
//! prepared in a chosen polarization, passes the object and a half-wave
//! plate, suffers loss, and is aligned with idler 2 so that the vertical
//! channel becomes indistinguishable. The signals are combined on a final
//! beam splitter and vertical counts are read in output port ω′.
//!
//! Every element is a linear map on single-photon modes, applied term by
//! term to a sparse superposition of (signal, idler) mode pairs. Nothing here
//! uses closed-form count expressions; this module is the reference that the
//! formulas in [`crate::analytic`] are checked against.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jones::JonesMatrix;
use crate::phase::wrap;

/// Amplitudes smaller than this are dropped from a state.
pub const PRUNE_TOLERANCE: f64 = 1e-14;

/// Tolerance on normalization constraints of configuration types.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Path {
    A,
    B,
    R,
    X,
    Omega,
    BPrime,
    OmegaPrime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarization {
    H,
    V,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Signal,
    Idler,
}

/// Which crystal a photon is attributable to. After the indistinguishability
/// step the vertical modes carry `Merged`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceTag {
    Crystal1,
    Crystal2,
    Merged,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Mode {
    pub path: Path,
    pub polarization: Polarization,
    pub kind: Kind,
    pub source: SourceTag,
}

impl Mode {
    pub const fn new(
        kind: Kind,
        path: Path,
        polarization: Polarization,
        source: SourceTag,
    ) -> Self {
        Self {
            path,
            polarization,
            kind,
            source,
        }
    }

    fn with_path(self, path: Path) -> Self {
        Self { path, ..self }
    }

    fn with_polarization(self, polarization: Polarization) -> Self {
        Self {
            polarization,
            ..self
        }
    }

    fn with_source(self, source: SourceTag) -> Self {
        Self { source, ..self }
    }

    fn is_idler1_in_a(&self) -> bool {
        self.kind == Kind::Idler && self.path == Path::A && self.source == SourceTag::Crystal1
    }
}

/// Image of one mode under a linear optical element.
type ModeImage = Vec<(Mode, Complex64)>;

fn unchanged(m: &Mode) -> ModeImage {
    vec![(*m, Complex64::new(1.0, 0.0))]
}

/// Sparse superposition of (signal, idler) mode pairs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TwoPhotonState {
    terms: BTreeMap<(Mode, Mode), Complex64>,
}

impl TwoPhotonState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `amplitude` to the `(signal, idler)` term, creating it if absent.
    pub fn insert(&mut self, signal: Mode, idler: Mode, amplitude: Complex64) {
        *self
            .terms
            .entry((signal, idler))
            .or_insert(Complex64::new(0.0, 0.0)) += amplitude;
    }

    fn prune(mut self) -> Self {
        self.terms.retain(|_, a| a.norm() >= PRUNE_TOLERANCE);
        self
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn amplitude(&self, signal: &Mode, idler: &Mode) -> Complex64 {
        self.terms
            .get(&(*signal, *idler))
            .copied()
            .unwrap_or_default()
    }

    /// Iterates `(signal, idler, amplitude)` in a fixed order.
    pub fn terms(&self) -> impl Iterator<Item = (&Mode, &Mode, &Complex64)> {
        self.terms.iter().map(|((s, i), a)| (s, i, a))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    /// Applies a linear map to every photon mode. The map sees the mode's
    /// `kind` and decides for itself which modes it acts on.
    pub fn map_modes<F>(&self, f: F) -> Self
    where
        F: Fn(&Mode) -> ModeImage,
    {
        let mut out = Self::new();
        for ((signal, idler), amp) in &self.terms {
            let signal_image = f(signal);
            let idler_image = f(idler);
            for (s, cs) in &signal_image {
                for (i, ci) in &idler_image {
                    out.insert(*s, *i, amp * cs * ci);
                }
            }
        }
        out.prune()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub b1: f64,
    pub b2: f64,
    pub zeta: f64,
}

impl SourceConfig {
    pub fn new(b1: f64, b2: f64, zeta: f64) -> Result<Self> {
        let cfg = Self { b1, b2, zeta };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Equal emission from both crystals, `b₁ = b₂ = 1/√2`.
    pub fn balanced(zeta: f64) -> Self {
        Self {
            b1: FRAC_1_SQRT_2,
            b2: FRAC_1_SQRT_2,
            zeta,
        }
    }

    pub fn with_zeta(self, zeta: f64) -> Self {
        Self { zeta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.b1) || !in_unit(self.b2) || !self.zeta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "source amplitudes must lie in [0, 1] (b1 = {}, b2 = {})",
                self.b1, self.b2
            )));
        }
        let n = self.b1 * self.b1 + self.b2 * self.b2;
        if (n - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "b1² + b2² = {n}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Beam-splitter loss on the idler-1 arm: amplitude `t` continues into path
/// r, amplitude `r` is diverted into the auxiliary path x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    t: f64,
    r: f64,
}

impl LossModel {
    pub fn new(t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidParameter(format!(
                "transmission amplitude {t} outside [0, 1]"
            )));
        }
        Ok(Self {
            t,
            r: (1.0 - t * t).sqrt(),
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

/// Prepared idler-1 polarization `α₁|H⟩ + β₁e^{iγ}|V⟩`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeState {
    pub alpha1: f64,
    pub beta1: f64,
    pub gamma: f64,
}

impl ProbeState {
    /// Validates normalization; `gamma` is wrapped into `[-π, π)`.
    pub fn new(alpha1: f64, beta1: f64, gamma: f64) -> Result<Self> {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(alpha1) || !in_unit(beta1) || !gamma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "probe amplitudes must lie in [0, 1] (alpha1 = {alpha1}, beta1 = {beta1})"
            )));
        }
        let n = alpha1 * alpha1 + beta1 * beta1;
        if (n - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "alpha1² + beta1² = {n}, expected 1"
            )));
        }
        Ok(Self {
            alpha1,
            beta1,
            gamma: wrap(gamma),
        })
    }

    pub fn horizontal() -> Self {
        Self {
            alpha1: 1.0,
            beta1: 0.0,
            gamma: 0.0,
        }
    }

    pub fn vertical() -> Self {
        Self {
            alpha1: 0.0,
            beta1: 1.0,
            gamma: 0.0,
        }
    }

    pub fn diagonal() -> Self {
        Self {
            alpha1: FRAC_1_SQRT_2,
            beta1: FRAC_1_SQRT_2,
            gamma: 0.0,
        }
    }

    pub fn antidiagonal() -> Self {
        Self {
            alpha1: FRAC_1_SQRT_2,
            beta1: FRAC_1_SQRT_2,
            gamma: -PI,
        }
    }

    pub fn circular() -> Self {
        Self {
            alpha1: FRAC_1_SQRT_2,
            beta1: FRAC_1_SQRT_2,
            gamma: PI / 2.0,
        }
    }

    /// The V-coefficient phase factor `β₁e^{iγ}`.
    pub fn v_coefficient(&self) -> Complex64 {
        Complex64::from_polar(self.beta1, self.gamma)
    }
}

/// Half-wave plate fast-axis setting. Only the two angles that make the
/// vertical or horizontal idler component indistinguishable are modeled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ThetaSetting {
    #[serde(rename = "0")]
    Deg0,
    #[serde(rename = "45")]
    Deg45,
}

impl ThetaSetting {
    pub const ALL: [ThetaSetting; 2] = [ThetaSetting::Deg0, ThetaSetting::Deg45];

    pub fn degrees(&self) -> u32 {
        match self {
            ThetaSetting::Deg0 => 0,
            ThetaSetting::Deg45 => 45,
        }
    }
}

/// Selects detector modes by kind, path and polarization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DetectorPattern {
    pub kind: Kind,
    pub path: Path,
    pub polarization: Polarization,
}

impl DetectorPattern {
    /// Vertically polarized signal photons leaving the final beam splitter
    /// in port ω′.
    pub const VERTICAL_SIGNAL_OMEGA_PRIME: Self = Self {
        kind: Kind::Signal,
        path: Path::OmegaPrime,
        polarization: Polarization::V,
    };

    fn matches(&self, m: &Mode) -> bool {
        m.kind == self.kind && m.path == self.path && m.polarization == self.polarization
    }
}

/// Both crystals emit a vertically polarized pair; crystal 2 carries the
/// interferometric phase `e^{iζ}`.
pub fn initial_state(src: &SourceConfig) -> TwoPhotonState {
    use Polarization::V;
    let mut s = TwoPhotonState::new();
    s.insert(
        Mode::new(Kind::Signal, Path::A, V, SourceTag::Crystal1),
        Mode::new(Kind::Idler, Path::A, V, SourceTag::Crystal1),
        Complex64::new(src.b1, 0.0),
    );
    s.insert(
        Mode::new(Kind::Signal, Path::R, V, SourceTag::Crystal2),
        Mode::new(Kind::Idler, Path::R, V, SourceTag::Crystal2),
        Complex64::from_polar(src.b2, src.zeta),
    );
    s.prune()
}

/// Separates signal 1 from path a into path b.
pub fn apply_dichroic_1(state: &TwoPhotonState) -> TwoPhotonState {
    state.map_modes(|m| {
        if m.kind == Kind::Signal && m.path == Path::A {
            unchanged(&m.with_path(Path::B))
        } else {
            unchanged(m)
        }
    })
}

/// Replaces the vertical idler-1 mode by the prepared probe polarization.
pub fn apply_preparation(state: &TwoPhotonState, probe: &ProbeState) -> TwoPhotonState {
    state.map_modes(|m| {
        if m.is_idler1_in_a() && m.polarization == Polarization::V {
            vec![
                (
                    m.with_polarization(Polarization::H),
                    Complex64::new(probe.alpha1, 0.0),
                ),
                (*m, probe.v_coefficient()),
            ]
        } else {
            unchanged(m)
        }
    })
}

/// Half-wave plate on idler 1. At 0°: H→H, V→−V. At 45°: H→−V, V→−H.
pub fn apply_hwp(state: &TwoPhotonState, theta: ThetaSetting) -> TwoPhotonState {
    let minus_one = Complex64::new(-1.0, 0.0);
    state.map_modes(|m| {
        if !m.is_idler1_in_a() {
            return unchanged(m);
        }
        match (theta, m.polarization) {
            (ThetaSetting::Deg0, Polarization::H) => unchanged(m),
            (ThetaSetting::Deg0, Polarization::V) => vec![(*m, minus_one)],
            (ThetaSetting::Deg45, Polarization::H) => {
                vec![(m.with_polarization(Polarization::V), minus_one)]
            }
            (ThetaSetting::Deg45, Polarization::V) => {
                vec![(m.with_polarization(Polarization::H), minus_one)]
            }
        }
    })
}

/// Linear action of the sample on idler 1: `|H⟩ → O_HH|H⟩ + O_VH|V⟩`,
/// `|V⟩ → O_HV|H⟩ + O_VV|V⟩`.
pub fn apply_object(state: &TwoPhotonState, jones: &JonesMatrix) -> Result<TwoPhotonState> {
    jones.check_passive()?;
    Ok(state.map_modes(|m| {
        if !m.is_idler1_in_a() {
            return unchanged(m);
        }
        let h = m.with_polarization(Polarization::H);
        let v = m.with_polarization(Polarization::V);
        match m.polarization {
            Polarization::H => vec![(h, jones.hh()), (v, jones.vh())],
            Polarization::V => vec![(h, jones.hv()), (v, jones.vv())],
        }
    }))
}

/// Loss beam splitter: idler 1 goes to path r with amplitude T and to the
/// auxiliary path x with amplitude R.
pub fn apply_loss(state: &TwoPhotonState, loss: &LossModel) -> TwoPhotonState {
    state.map_modes(|m| {
        if m.is_idler1_in_a() {
            vec![
                (m.with_path(Path::R), Complex64::new(loss.t(), 0.0)),
                (m.with_path(Path::X), Complex64::new(loss.r(), 0.0)),
            ]
        } else {
            unchanged(m)
        }
    })
}

/// Erases which-source information on the vertical channel: vertical
/// idlers in path r and vertical signals in paths b and r become
/// `Merged`, so coinciding terms add coherently. Horizontal idler 1 stays
/// distinguishable.
pub fn merge_indistinguishable(state: &TwoPhotonState) -> TwoPhotonState {
    state.map_modes(|m| {
        let vertical = m.polarization == Polarization::V;
        let merge = match m.kind {
            Kind::Idler => vertical && m.path == Path::R,
            Kind::Signal => vertical && matches!(m.path, Path::B | Path::R),
        };
        if merge {
            unchanged(&m.with_source(SourceTag::Merged))
        } else {
            unchanged(m)
        }
    })
}

/// Second dichroic (signal r → ω) followed by the final 50:50 beam
/// splitter `b → (b′ + iω′)/√2`, `ω → (ω′ + ib′)/√2`. Idlers are untouched.
pub fn apply_dichroic_2_and_final_bs(state: &TwoPhotonState) -> TwoPhotonState {
    let dichroic = state.map_modes(|m| {
        if m.kind == Kind::Signal && m.path == Path::R {
            unchanged(&m.with_path(Path::Omega))
        } else {
            unchanged(m)
        }
    });
    apply_final_bs(&dichroic)
}

fn apply_final_bs(state: &TwoPhotonState) -> TwoPhotonState {
    let direct = Complex64::new(FRAC_1_SQRT_2, 0.0);
    let crossed = Complex64::new(0.0, FRAC_1_SQRT_2);
    state.map_modes(|m| {
        if m.kind != Kind::Signal {
            return unchanged(m);
        }
        match m.path {
            Path::B => vec![
                (m.with_path(Path::BPrime), direct),
                (m.with_path(Path::OmegaPrime), crossed),
            ],
            Path::Omega => vec![
                (m.with_path(Path::OmegaPrime), direct),
                (m.with_path(Path::BPrime), crossed),
            ],
            _ => unchanged(m),
        }
    })
}

/// `⟨a†a⟩` for the detector modes selected by `detector`: the sum of
/// `|amplitude|²` over terms whose photon of the selected kind matches.
/// Terms are keyed by the full (signal, idler) pair, so coherent addition
/// has already happened where modes coincide.
pub fn expected_counts(state: &TwoPhotonState, detector: &DetectorPattern) -> f64 {
    state
        .terms()
        .filter(|(s, i, _)| match detector.kind {
            Kind::Signal => detector.matches(s),
            Kind::Idler => detector.matches(i),
        })
        .map(|(_, _, a)| a.norm_sqr())
        .sum()
}

/// Runs the full optical train for one value of ζ (taken from `src`) and
/// returns the final state.
pub fn final_state(
    src: &SourceConfig,
    loss: &LossModel,
    probe: &ProbeState,
    theta: ThetaSetting,
    object: Option<&JonesMatrix>,
) -> Result<TwoPhotonState> {
    let s = initial_state(src);
    let s = apply_dichroic_1(&s);
    let s = apply_preparation(&s, probe);
    let s = match object {
        Some(o) => apply_object(&s, o)?,
        None => s,
    };
    let s = apply_hwp(&s, theta);
    let s = apply_loss(&s, loss);
    let s = merge_indistinguishable(&s);
    Ok(apply_dichroic_2_and_final_bs(&s))
}

/// Checks a phase grid: nonempty, strictly increasing, inside `[0, 2π)`.
pub fn validate_zeta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty zeta grid".into()));
    }
    if grid.iter().any(|z| !(0.0..TAU).contains(z)) {
        return Err(Error::InvalidParameter(
            "zeta grid must lie in [0, 2π)".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "zeta grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Vertical ω′ counts per generated pair at each ζ of the grid.
pub fn run_forward(
    src: &SourceConfig,
    loss: &LossModel,
    probe: &ProbeState,
    theta: ThetaSetting,
    object: Option<&JonesMatrix>,
    zeta_grid: &[f64],
) -> Result<Vec<f64>> {
    validate_zeta_grid(zeta_grid)?;
    if let Some(o) = object {
        o.check_passive()?;
    }
    zeta_grid
        .iter()
        .map(|&z| {
            let state = final_state(&src.with_zeta(z), loss, probe, theta, object)?;
            Ok(expected_counts(
                &state,
                &DetectorPattern::VERTICAL_SIGNAL_OMEGA_PRIME,
            ))
        })
        .collect()
}
