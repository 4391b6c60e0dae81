//! Polarization tomography for quantum imaging with undetected photons.
//!
//! The crate models a two-crystal nonlinear interferometer in which idler
//! photons from the first crystal probe a polarizing sample and the signal
//! photons carry the resulting interference. It provides:
//!
//! * [`interferometer`]: a brute-force two-photon state-vector simulation of
//!   the optical train, used as ground truth;
//! * [`analytic`]: closed-form count and visibility expressions;
//! * [`acquisition`]: synthetic phase scans with optional shot noise;
//! * [`fitting`]: linear least-squares sinusoid fits `C + A sin(ζ + φ)`;
//! * [`tomography`]: transmission calibration, probe characterization, the
//!   H/V extraction of the Jones parameters and a global damped
//!   least-squares refinement;
//! * [`cli`]: the `qiup` command-line front end.

pub mod acquisition;
pub mod analytic;
pub mod cli;
pub mod error;
pub mod fitting;
pub mod interferometer;
pub mod jones;
pub mod optimize;
pub mod phase;
pub mod tomography;

pub use acquisition::{
    AcquisitionConfig, FringeDataset, Model, Noise, Scene, SceneObject, Setting,
};
pub use analytic::{AmplitudePair, JonesObject};
pub use error::{Error, Result};
pub use fitting::SinusoidFit;
pub use interferometer::{LossModel, ProbeState, SourceConfig, ThetaSetting, TwoPhotonState};
pub use jones::JonesMatrix;
pub use tomography::Reconstruction;
