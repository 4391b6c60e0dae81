//! Synthetic phase scans and the dataset file format.

use std::f64::consts::TAU;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analytic::{self, JonesObject};
use crate::error::{Error, Result};
use crate::interferometer::{self, LossModel, ProbeState, SourceConfig, ThetaSetting};
use crate::jones::JonesMatrix;

pub const SCHEMA_VERSION: &str = "1";

/// Minimum number of phase points per scan.
pub const MIN_GRID_POINTS: usize = 8;

pub const DEFAULT_GRID_POINTS: usize = 32;
pub const DEFAULT_PAIRS_PER_POINT: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    None,
    Poisson,
}

/// Which forward model produces the expected counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Oracle,
    Analytic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionConfig {
    pub zeta_grid: Vec<f64>,
    pub pairs_per_point: u64,
    pub noise: Noise,
    pub rng_seed: u64,
    pub model: Model,
}

/// `n` equally spaced phases covering `[0, 2π)`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 * TAU / n as f64).collect()
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            zeta_grid: uniform_grid(DEFAULT_GRID_POINTS),
            pairs_per_point: DEFAULT_PAIRS_PER_POINT,
            noise: Noise::None,
            rng_seed: 0,
            model: Model::Oracle,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zeta_grid.len() < MIN_GRID_POINTS {
            return Err(Error::InvalidParameter(format!(
                "zeta grid has {} points, need at least {MIN_GRID_POINTS}",
                self.zeta_grid.len()
            )));
        }
        interferometer::validate_zeta_grid(&self.zeta_grid)
    }

    /// Counts are integer-valued Poisson draws rather than expectations.
    pub fn is_sampled(&self) -> bool {
        self.noise == Noise::Poisson
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SceneObject {
    Jones(JonesObject),
    Matrix(JonesMatrix),
}

impl SceneObject {
    pub fn matrix(&self) -> JonesMatrix {
        match self {
            SceneObject::Jones(o) => o.to_matrix(),
            SceneObject::Matrix(m) => *m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SceneObject::Jones(o) => {
                o.validate()?;
                o.to_matrix().check_passive()
            }
            SceneObject::Matrix(m) => m.check_passive(),
        }
    }
}

/// Everything on the optical bench apart from the probe and HWP setting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    pub src: SourceConfig,
    pub t: f64,
    pub object: Option<SceneObject>,
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        self.src.validate()?;
        LossModel::new(self.t)?;
        if let Some(o) = &self.object {
            o.validate()?;
        }
        Ok(())
    }

    pub fn without_object(&self) -> Self {
        Self {
            object: None,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Setting {
    pub theta: ThetaSetting,
    pub probe: ProbeState,
}

/// A probe with the name used in dataset labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedProbe {
    pub name: String,
    pub probe: ProbeState,
}

impl NamedProbe {
    pub fn new(name: impl Into<String>, probe: ProbeState) -> Self {
        Self {
            name: name.into(),
            probe,
        }
    }

    /// Diagonal, anti-diagonal and circular probes.
    pub fn extras() -> Vec<NamedProbe> {
        vec![
            Self::new("diagonal", ProbeState::diagonal()),
            Self::new("antidiagonal", ProbeState::antidiagonal()),
            Self::new("circular", ProbeState::circular()),
        ]
    }
}

/// Label of a dataset, e.g. `alpha=1,theta=45`.
pub fn label_for(probe_name: &str, theta: ThetaSetting) -> String {
    format!("{probe_name},theta={}", theta.degrees())
}

#[derive(Clone, Debug, PartialEq)]
pub struct FringeDataset {
    pub label: String,
    pub theta: ThetaSetting,
    pub probe: ProbeState,
    pub counts: Vec<f64>,
    pub config: AcquisitionConfig,
}

impl FringeDataset {
    pub fn zeta_grid(&self) -> &[f64] {
        &self.config.zeta_grid
    }

    pub fn validate(&self) -> Result<()> {
        self.config
            .validate()
            .map_err(|e| Error::MalformedDataset(format!("{}: {e}", self.label)))?;
        if self.counts.len() != self.config.zeta_grid.len() {
            return Err(Error::MalformedDataset(format!(
                "{}: {} counts for {} grid points",
                self.label,
                self.counts.len(),
                self.config.zeta_grid.len()
            )));
        }
        if self.counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::MalformedDataset(format!(
                "{}: counts must be finite and nonnegative",
                self.label
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&DatasetFile::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile =
            serde_json::from_str(text).map_err(|e| Error::MalformedDataset(e.to_string()))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
            .map_err(|e| Error::MalformedDataset(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeFile {
    alpha1: f64,
    beta1: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    pairs_per_point: u64,
    noise: Noise,
    rng_seed: u64,
    model: Model,
    sampled: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    schema_version: String,
    label: String,
    theta: ThetaSetting,
    probe: ProbeFile,
    zeta_grid: Vec<f64>,
    counts: Vec<f64>,
    config: ConfigFile,
}

impl From<&FringeDataset> for DatasetFile {
    fn from(ds: &FringeDataset) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            label: ds.label.clone(),
            theta: ds.theta,
            probe: ProbeFile {
                alpha1: ds.probe.alpha1,
                beta1: ds.probe.beta1,
                gamma: ds.probe.gamma,
            },
            zeta_grid: ds.config.zeta_grid.clone(),
            counts: ds.counts.clone(),
            config: ConfigFile {
                pairs_per_point: ds.config.pairs_per_point,
                noise: ds.config.noise,
                rng_seed: ds.config.rng_seed,
                model: ds.config.model,
                sampled: ds.config.is_sampled(),
            },
        }
    }
}

impl TryFrom<DatasetFile> for FringeDataset {
    type Error = Error;

    fn try_from(f: DatasetFile) -> Result<Self> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::MalformedDataset(format!(
                "unsupported schema_version {:?}",
                f.schema_version
            )));
        }
        if f.config.sampled != (f.config.noise == Noise::Poisson) {
            return Err(Error::MalformedDataset(
                "config.sampled disagrees with config.noise".into(),
            ));
        }
        let probe = ProbeState::new(f.probe.alpha1, f.probe.beta1, f.probe.gamma)
            .map_err(|e| Error::MalformedDataset(format!("{}: {e}", f.label)))?;
        let ds = FringeDataset {
            label: f.label,
            theta: f.theta,
            probe,
            counts: f.counts,
            config: AcquisitionConfig {
                zeta_grid: f.zeta_grid,
                pairs_per_point: f.config.pairs_per_point,
                noise: f.config.noise,
                rng_seed: f.config.rng_seed,
                model: f.config.model,
            },
        };
        ds.validate()?;
        Ok(ds)
    }
}

/// Per-pair probabilities of vertical ω′ counts across the grid.
pub fn model_probabilities(
    setting: &Setting,
    scene: &Scene,
    zeta_grid: &[f64],
    model: Model,
) -> Result<Vec<f64>> {
    let loss = LossModel::new(scene.t)?;
    match model {
        Model::Oracle => {
            let m = scene.object.map(|o| o.matrix());
            interferometer::run_forward(
                &scene.src,
                &loss,
                &setting.probe,
                setting.theta,
                m.as_ref(),
                zeta_grid,
            )
        }
        Model::Analytic => {
            interferometer::validate_zeta_grid(zeta_grid)?;
            let f: Box<dyn Fn(f64) -> f64> = match scene.object {
                None => Box::new(|z| {
                    analytic::counts_no_object(
                        setting.theta,
                        &setting.probe,
                        &scene.src,
                        scene.t,
                        z,
                    )
                }),
                Some(SceneObject::Jones(obj)) => {
                    obj.to_matrix().check_passive()?;
                    Box::new(move |z| {
                        analytic::counts_with_object(
                            setting.theta,
                            &setting.probe,
                            &obj,
                            &scene.src,
                            scene.t,
                            z,
                        )
                    })
                }
                Some(SceneObject::Matrix(m)) => {
                    m.check_passive()?;
                    let pair = analytic::amplitudes_from_matrix(&m, &setting.probe);
                    Box::new(move |z| {
                        analytic::counts_for_theta(setting.theta, &pair, &scene.src, scene.t, z)
                    })
                }
            };
            Ok(zeta_grid.iter().map(|&z| f(z)).collect())
        }
    }
}

/// Poisson draw for grid point `index`, from the substream `seed ^ index`.
fn sample_point(mean: f64, seed: u64, index: usize) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index as u64);
    Poisson::new(mean)
        .expect("finite positive Poisson mean")
        .sample(&mut rng)
}

/// Scans ζ over the configured grid for one (probe, HWP) setting.
pub fn acquire(
    setting: &Setting,
    scene: &Scene,
    cfg: &AcquisitionConfig,
    label: impl Into<String>,
) -> Result<FringeDataset> {
    cfg.validate()?;
    scene.validate()?;
    let probs = model_probabilities(setting, scene, &cfg.zeta_grid, cfg.model)?;
    let pairs = cfg.pairs_per_point as f64;
    let counts = probs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // tiny negative rounding residue never leaves the model
            let mean = (pairs * p).max(0.0);
            match cfg.noise {
                Noise::None => mean,
                Noise::Poisson => sample_point(mean, cfg.rng_seed, i),
            }
        })
        .collect();
    Ok(FringeDataset {
        label: label.into(),
        theta: setting.theta,
        probe: setting.probe,
        counts,
        config: cfg.clone(),
    })
}

/// SplitMix64 finalizer, used to give each dataset of a battery its own seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The four H/V datasets (`alpha=1` and `beta=1` at 0° and 45°), followed by
/// each extra probe at both settings. Dataset `k` is sampled with seed
/// `mix(cfg.rng_seed, k)`, recorded in its config.
pub fn standard_battery(
    scene: &Scene,
    cfg: &AcquisitionConfig,
    extras: &[NamedProbe],
) -> Result<Vec<FringeDataset>> {
    let mut probes = vec![
        NamedProbe::new("alpha=1", ProbeState::horizontal()),
        NamedProbe::new("beta=1", ProbeState::vertical()),
    ];
    probes.extend_from_slice(extras);
    let mut out = Vec::with_capacity(2 * probes.len());
    for p in &probes {
        for theta in ThetaSetting::ALL {
            let k = out.len() as u64;
            let ds_cfg = AcquisitionConfig {
                rng_seed: mix_seed(cfg.rng_seed, k),
                ..cfg.clone()
            };
            let setting = Setting {
                theta,
                probe: p.probe,
            };
            out.push(acquire(
                &setting,
                scene,
                &ds_cfg,
                label_for(&p.name, theta),
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scene(object: Option<SceneObject>) -> Scene {
        Scene {
            src: SourceConfig::balanced(0.0),
            t: 0.8,
            object,
        }
    }

    fn reference() -> SceneObject {
        SceneObject::Jones(JonesObject::new(0.9, 0.7, 0.3, 0.4, -0.2, 1.0).unwrap())
    }

    #[test]
    fn noiseless_identity_trace() {
        let cfg = AcquisitionConfig::default();
        let setting = Setting {
            theta: ThetaSetting::Deg0,
            probe: ProbeState::vertical(),
        };
        let ds = acquire(
            &setting,
            &scene(Some(SceneObject::Jones(JonesObject::identity()))),
            &cfg,
            "x",
        )
        .unwrap();
        for (z, n) in ds.zeta_grid().iter().zip(&ds.counts) {
            let expected = 1e6 * (0.5 + 0.5 * 0.8 * (0.0 - z).sin());
            assert!((n - expected).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_pairs_zero_counts() {
        let cfg = AcquisitionConfig {
            pairs_per_point: 0,
            noise: Noise::Poisson,
            ..Default::default()
        };
        let setting = Setting {
            theta: ThetaSetting::Deg45,
            probe: ProbeState::diagonal(),
        };
        let ds = acquire(&setting, &scene(Some(reference())), &cfg, "x").unwrap();
        assert!(ds.counts.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn poisson_is_deterministic() {
        let cfg = AcquisitionConfig {
            noise: Noise::Poisson,
            rng_seed: 42,
            ..Default::default()
        };
        let a = standard_battery(&scene(Some(reference())), &cfg, &NamedProbe::extras()).unwrap();
        let b = standard_battery(&scene(Some(reference())), &cfg, &NamedProbe::extras()).unwrap();
        assert_eq!(a, b);
        assert!(a[0].counts.iter().all(|c| c.fract() == 0.0));
        // different datasets get different substreams
        assert_ne!(a[0].config.rng_seed, a[1].config.rng_seed);
    }

    #[test]
    fn battery_layout() {
        let cfg = AcquisitionConfig::default();
        let sc = scene(Some(reference()));
        let four = standard_battery(&sc, &cfg, &[]).unwrap();
        let labels: Vec<_> = four.iter().map(|d| d.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "alpha=1,theta=0",
                "alpha=1,theta=45",
                "beta=1,theta=0",
                "beta=1,theta=45"
            ]
        );
        let ten = standard_battery(&sc, &cfg, &NamedProbe::extras()).unwrap();
        assert_eq!(ten.len(), 10);
        assert!(ten
            .iter()
            .all(|d| d.zeta_grid() == cfg.zeta_grid.as_slice()));
        assert_eq!(ten[9].label, "circular,theta=45");
    }

    #[test]
    fn oracle_and_analytic_agree() {
        let sc = scene(Some(reference()));
        let oracle =
            standard_battery(&sc, &AcquisitionConfig::default(), &NamedProbe::extras()).unwrap();
        let analytic_cfg = AcquisitionConfig {
            model: Model::Analytic,
            ..Default::default()
        };
        let closed = standard_battery(&sc, &analytic_cfg, &NamedProbe::extras()).unwrap();
        for (a, b) in oracle.iter().zip(&closed) {
            for (x, y) in a.counts.iter().zip(&b.counts) {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn poisson_mean_converges() {
        let seeds = 200;
        let base = AcquisitionConfig {
            pairs_per_point: 1000,
            ..Default::default()
        };
        let setting = Setting {
            theta: ThetaSetting::Deg0,
            probe: ProbeState::diagonal(),
        };
        let sc = scene(Some(reference()));
        let truth = acquire(&setting, &sc, &base, "x").unwrap();
        let mut sum = vec![0.0; truth.counts.len()];
        for seed in 0..seeds {
            let cfg = AcquisitionConfig {
                noise: Noise::Poisson,
                rng_seed: seed,
                ..base.clone()
            };
            let ds = acquire(&setting, &sc, &cfg, "x").unwrap();
            sum.iter_mut().zip(&ds.counts).for_each(|(s, c)| *s += c);
        }
        for (s, mu) in sum.iter().zip(&truth.counts) {
            let mean = s / seeds as f64;
            assert!((mean - mu).abs() <= 3.0 * mu.sqrt() / (seeds as f64).sqrt());
        }
    }

    #[test]
    fn file_round_trip_and_rejection() {
        let cfg = AcquisitionConfig {
            noise: Noise::Poisson,
            rng_seed: 9,
            ..Default::default()
        };
        let setting = Setting {
            theta: ThetaSetting::Deg45,
            probe: ProbeState::circular(),
        };
        let ds = acquire(
            &setting,
            &scene(Some(reference())),
            &cfg,
            "circular,theta=45",
        )
        .unwrap();
        let text = ds.to_json().unwrap();
        assert!(text.contains("\"theta\": \"45\""));
        assert_eq!(FringeDataset::from_json(&text).unwrap(), ds);

        let exact = acquire(
            &setting,
            &scene(Some(reference())),
            &AcquisitionConfig::default(),
            "x",
        )
        .unwrap();
        assert_eq!(
            FringeDataset::from_json(&exact.to_json().unwrap()).unwrap(),
            exact
        );

        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["counts"].as_array_mut().unwrap().pop();
        assert!(matches!(
            FringeDataset::from_json(&v.to_string()),
            Err(Error::MalformedDataset(_))
        ));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(FringeDataset::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn short_grid_rejected() {
        let cfg = AcquisitionConfig {
            zeta_grid: uniform_grid(6),
            ..Default::default()
        };
        let setting = Setting {
            theta: ThetaSetting::Deg0,
            probe: ProbeState::vertical(),
        };
        assert!(acquire(&setting, &scene(None), &cfg, "x").is_err());
        assert!(uniform_grid(32).iter().all(|z| *z < 2.0 * PI));
    }
}
