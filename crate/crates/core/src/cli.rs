//! `qiup` command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning                                             |
//! |------|-----------------------------------------------------|
//! | 0    | success                                             |
//! | 1    | I/O or other runtime failure                        |
//! | 2    | config or command-line parse error                  |
//! | 3    | unphysical scene                                    |
//! | 4    | malformed dataset or report                         |
//! | 5    | reconstruction inconsistent (report still written)  |
//! | 6    | required datasets missing                           |
//! | 7    | oracle/closed-form validation violation             |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::acquisition::{
    self, label_for, standard_battery, AcquisitionConfig, FringeDataset, Model, NamedProbe, Noise,
    Scene, SceneObject, DEFAULT_GRID_POINTS, DEFAULT_PAIRS_PER_POINT, SCHEMA_VERSION,
};
use crate::analytic::{self, JonesObject};
use crate::error::Error;
use crate::fitting::{fit_sinusoid, SinusoidFit};
use crate::interferometer::{self, LossModel, ProbeState, SourceConfig, ThetaSetting};
use crate::jones::JonesMatrix;
use crate::phase::circular_distance;
use crate::tomography::{
    self, CalibrationFits, HvFits, Reconstruction, RefineOptions, TransmissionCalibration,
    DEFAULT_CONSISTENCY_TOLERANCE, LABEL_ALPHA_THETA0, LABEL_ALPHA_THETA45, LABEL_BETA_THETA0,
    LABEL_BETA_THETA45,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = ".qiup.lock";
pub const REFERENCE_PREFIX: &str = "reference:";
pub const VALIDATION_TOLERANCE: f64 = 1e-10;

pub mod exit {
    pub const OK: i32 = 0;
    pub const RUNTIME: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const UNPHYSICAL: i32 = 3;
    pub const MALFORMED: i32 = 4;
    pub const INCONSISTENT: i32 = 5;
    pub const MISSING: i32 = 6;
    pub const VALIDATION: i32 = 7;
}

#[derive(Debug, Parser)]
#[command(
    name = "qiup",
    version,
    about = "Polarization tomography with undetected photons"
)]
pub struct Cli {
    /// Overrides the configured RNG seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (simulate) or output file (other commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the dataset battery described by a config file.
    Simulate { config: PathBuf },
    /// Fit `C + A sin(ζ + φ)` to dataset files.
    Fit {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Reconstruct the object from a simulation manifest.
    Reconstruct(ReconstructArgs),
    /// Compare the state-vector simulation with the closed forms.
    Validate(ValidateArgs),
    /// Emit whitespace-separated columns for plotting.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub refine: bool,
    #[arg(long, default_value_t = DEFAULT_CONSISTENCY_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 100)]
    pub draws: usize,
    /// Draw objects at random or use the identity.
    #[arg(long, value_enum, default_value_t = ValidateObject::Random)]
    pub object: ValidateObject,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ValidateObject {
    Random,
    Identity,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub dataset: PathBuf,
    /// Add a third column with the fitted model.
    #[arg(long)]
    pub overlay: bool,
    /// Take the overlay from this fit report instead of refitting.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

/// A failure carrying its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(exit::RUNTIME, e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn io_context(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(exit::RUNTIME, format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- config

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneConfig,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    /// Extra probes beyond the four H/V settings.
    #[serde(default)]
    pub probes: Vec<ProbeDef>,
    /// Also record the no-object batteries used for calibration.
    #[serde(default = "default_true")]
    pub reference: bool,
    pub output_dir: PathBuf,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default)]
    pub src: Option<SourceSection>,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub object: Option<ObjectDef>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    pub b1: f64,
    pub b2: f64,
    #[serde(default)]
    pub zeta: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ObjectDef {
    Named(String),
    Jones(JonesObject),
    Matrix(MatrixDef),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDef {
    /// `re_hh, im_hh, re_hv, im_hv, re_vh, im_vh, re_vv, im_vv`
    pub matrix: [f64; 8],
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    #[serde(default)]
    pub points: Option<usize>,
    #[serde(default)]
    pub zeta_grid: Option<Vec<f64>>,
    #[serde(default = "default_pairs")]
    pub pairs_per_point: u64,
    #[serde(default = "default_noise")]
    pub noise: Noise,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_model")]
    pub model: Model,
}

fn default_pairs() -> u64 {
    DEFAULT_PAIRS_PER_POINT
}

fn default_noise() -> Noise {
    Noise::None
}

fn default_model() -> Model {
    Model::Analytic
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        Self {
            points: None,
            zeta_grid: None,
            pairs_per_point: default_pairs(),
            noise: default_noise(),
            seed: 0,
            model: default_model(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum ProbeDef {
    Preset(String),
    Explicit(ExplicitProbe),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitProbe {
    pub name: String,
    pub alpha1: f64,
    pub beta1: f64,
    #[serde(default)]
    pub gamma: f64,
}

fn preset(name: &str) -> Option<ProbeState> {
    Some(match name {
        "horizontal" => ProbeState::horizontal(),
        "vertical" => ProbeState::vertical(),
        "diagonal" => ProbeState::diagonal(),
        "antidiagonal" => ProbeState::antidiagonal(),
        "circular" => ProbeState::circular(),
        _ => return None,
    })
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| Failure::new(exit::CONFIG, format!("config: {e}")))
    }

    pub fn acquisition_config(&self, seed_override: Option<u64>) -> CliResult<AcquisitionConfig> {
        let a = &self.acquisition;
        let zeta_grid = match (&a.zeta_grid, a.points) {
            (Some(_), Some(_)) => {
                return Err(Failure::new(
                    exit::CONFIG,
                    "config: give either acquisition.points or acquisition.zeta_grid",
                ))
            }
            (Some(g), None) => g.clone(),
            (None, n) => acquisition::uniform_grid(n.unwrap_or(DEFAULT_GRID_POINTS)),
        };
        let cfg = AcquisitionConfig {
            zeta_grid,
            pairs_per_point: a.pairs_per_point,
            noise: a.noise,
            rng_seed: seed_override.unwrap_or(a.seed),
            model: a.model,
        };
        cfg.validate()
            .map_err(|e| Failure::new(exit::CONFIG, format!("config: acquisition: {e}")))?;
        Ok(cfg)
    }

    pub fn scene(&self) -> CliResult<Scene> {
        let unphysical =
            |e: Error| Failure::new(exit::UNPHYSICAL, format!("unphysical scene: {e}"));
        let src = match &self.scene.src {
            Some(s) => SourceConfig::new(s.b1, s.b2, s.zeta).map_err(unphysical)?,
            None => SourceConfig::balanced(0.0),
        };
        let object = match &self.scene.object {
            None => None,
            Some(ObjectDef::Named(n)) if n == "identity" => {
                Some(SceneObject::Jones(JonesObject::identity()))
            }
            Some(ObjectDef::Named(n)) => {
                return Err(Failure::new(
                    exit::CONFIG,
                    format!("config: unknown object '{n}'"),
                ))
            }
            Some(ObjectDef::Jones(o)) => Some(SceneObject::Jones(*o)),
            Some(ObjectDef::Matrix(m)) => {
                Some(SceneObject::Matrix(JonesMatrix::from_reals(m.matrix)))
            }
        };
        let scene = Scene {
            src,
            t: self.scene.t,
            object,
        };
        scene.validate().map_err(unphysical)?;
        Ok(scene)
    }

    pub fn extra_probes(&self) -> CliResult<Vec<NamedProbe>> {
        let mut out = Vec::new();
        for p in &self.probes {
            out.push(match p {
                ProbeDef::Preset(name) => {
                    let probe = preset(name).ok_or_else(|| {
                        Failure::new(
                            exit::CONFIG,
                            format!("config: unknown probe preset '{name}'"),
                        )
                    })?;
                    NamedProbe::new(name.clone(), probe)
                }
                ProbeDef::Explicit(e) => {
                    let probe = ProbeState::new(e.alpha1, e.beta1, e.gamma).map_err(|err| {
                        Failure::new(
                            exit::UNPHYSICAL,
                            format!("unphysical probe '{}': {err}", e.name),
                        )
                    })?;
                    NamedProbe::new(e.name.clone(), probe)
                }
            });
        }
        let mut seen =
            std::collections::BTreeSet::from(["alpha=1".to_string(), "beta=1".to_string()]);
        for p in &out {
            if !seen.insert(p.name.clone()) {
                return Err(Failure::new(
                    exit::CONFIG,
                    format!("config: duplicate probe name '{}'", p.name),
                ));
            }
        }
        Ok(out)
    }
}

// -------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Object,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub label: String,
    pub file: String,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: String,
    pub provenance: Provenance,
    pub src: SourceConfig,
    pub datasets: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(io_context(path))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Failure::new(exit::MALFORMED, format!("{}: {e}", path.display())))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Failure::new(
                exit::MALFORMED,
                format!(
                    "{}: unsupported schema_version {}",
                    path.display(),
                    m.schema_version
                ),
            ));
        }
        Ok(m)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// File name for a dataset label: `alpha=1,theta=0` → `alpha-1_theta-0.json`.
pub fn file_name_for(label: &str) -> String {
    let stem: String = label
        .chars()
        .map(|c| match c {
            '=' => '-',
            ',' => '_',
            ':' => '_',
            c if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' => c,
            _ => '_',
        })
        .collect();
    format!("{stem}.json")
}

fn to_pretty_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::new(exit::RUNTIME, e.to_string()))?;
    s.push('\n');
    Ok(s)
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                Failure::new(
                    exit::RUNTIME,
                    format!(
                        "cannot lock {}: {e} (another run in progress?)",
                        dir.display()
                    ),
                )
            })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

// -------------------------------------------------------------- commands

struct Ctx {
    seed: Option<u64>,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Writes to `--out` when given, else to stdout.
    fn emit(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(p) => fs::write(p, text).map_err(io_context(p)),
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn simulate(ctx: &Ctx, config_path: &Path) -> CliResult<i32> {
    let bytes = fs::read(config_path).map_err(io_context(config_path))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Failure::new(exit::CONFIG, "config: not valid UTF-8"))?;
    let cfg = RunConfig::parse(&text)?;
    let acq = cfg.acquisition_config(ctx.seed)?;
    let scene = cfg.scene()?;
    let extras = cfg.extra_probes()?;

    let out_dir = match &ctx.out {
        Some(p) => p.clone(),
        None => {
            let base = config_path.parent().unwrap_or(Path::new("."));
            base.join(&cfg.output_dir)
        }
    };
    fs::create_dir_all(&out_dir).map_err(io_context(&out_dir))?;
    let _lock = DirLock::acquire(&out_dir)?;

    let unphysical = |e: Error| Failure::new(exit::UNPHYSICAL, format!("unphysical scene: {e}"));
    let mut entries = Vec::new();
    let mut datasets = Vec::new();
    for ds in standard_battery(&scene, &acq, &extras).map_err(unphysical)? {
        entries.push(ManifestEntry {
            label: ds.label.clone(),
            file: file_name_for(&ds.label),
            role: Role::Object,
        });
        datasets.push(ds);
    }
    if cfg.reference {
        let ref_cfg = AcquisitionConfig {
            rng_seed: acquisition::mix_seed(acq.rng_seed, u64::MAX),
            ..acq.clone()
        };
        for mut ds in
            standard_battery(&scene.without_object(), &ref_cfg, &extras).map_err(unphysical)?
        {
            ds.label = format!("{REFERENCE_PREFIX}{}", ds.label);
            entries.push(ManifestEntry {
                label: ds.label.clone(),
                file: file_name_for(&ds.label),
                role: Role::Reference,
            });
            datasets.push(ds);
        }
    }
    for (ds, entry) in datasets.iter().zip(&entries) {
        let path = out_dir.join(&entry.file);
        fs::write(
            &path,
            ds.to_json()
                .map_err(|e| Failure::new(exit::RUNTIME, e.to_string()))?,
        )
        .map_err(io_context(&path))?;
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION.to_string(),
        provenance: Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_sha256: sha256_hex(&bytes),
            seed: acq.rng_seed,
        },
        src: scene.src,
        datasets: entries,
    };
    let mpath = out_dir.join(MANIFEST_FILE);
    fs::write(&mpath, to_pretty_json(&manifest)?).map_err(io_context(&mpath))?;
    ctx.note(format!(
        "wrote {} datasets and {}",
        datasets.len(),
        mpath.display()
    ));
    Ok(exit::OK)
}

fn load_dataset(path: &Path) -> CliResult<FringeDataset> {
    FringeDataset::load(path).map_err(|e| match e {
        Error::Io(io) => Failure::new(exit::RUNTIME, format!("{}: {io}", path.display())),
        other => Failure::new(exit::MALFORMED, format!("{}: {other}", path.display())),
    })
}

fn fit_dataset(ds: &FringeDataset, path: &Path) -> CliResult<SinusoidFit> {
    fit_sinusoid(ds).map_err(|e| Failure::new(exit::MALFORMED, format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitEntry {
    pub label: String,
    pub file: String,
    pub theta: ThetaSetting,
    pub probe: ProbeState,
    pub fit: SinusoidFit,
    /// `A / C`; not clipped, so unphysical data stay visible.
    pub visibility: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitReport {
    pub schema_version: String,
    pub tool_version: String,
    pub fits: Vec<FitEntry>,
}

fn fit_entry(ds: &FringeDataset, fit: SinusoidFit, file: String) -> FitEntry {
    FitEntry {
        label: ds.label.clone(),
        file,
        theta: ds.theta,
        probe: ds.probe,
        visibility: if fit.c > 0.0 {
            fit.a / fit.c
        } else {
            f64::INFINITY
        },
        fit,
    }
}

fn fit_cmd(ctx: &Ctx, paths: &[PathBuf]) -> CliResult<i32> {
    let mut fits = Vec::new();
    for p in paths {
        let ds = load_dataset(p)?;
        let fit = fit_dataset(&ds, p)?;
        fits.push(fit_entry(&ds, fit, p.display().to_string()));
    }
    let report = FitReport {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        fits,
    };
    ctx.emit(&to_pretty_json(&report)?)?;
    Ok(exit::OK)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeCheck {
    pub name: String,
    pub nominal: ProbeState,
    pub recovered: ProbeState,
    pub max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub schema_version: String,
    pub provenance: Provenance,
    pub calibration: TransmissionCalibration,
    /// Fitted-phase offset of the no-object reference, removed from all
    /// object fits.
    pub zeta_origin: f64,
    pub probe_checks: Vec<ProbeCheck>,
    #[serde(flatten)]
    pub reconstruction: Reconstruction,
    pub per_dataset_fits: Vec<FitEntry>,
}

fn reconstruction_failure(e: Error) -> Failure {
    match e {
        Error::ModelInconsistentDc { .. }
        | Error::PassivityViolation(_)
        | Error::UnphysicalVisibility { .. }
        | Error::ProbeNormalization(_) => {
            Failure::new(exit::INCONSISTENT, format!("reconstruction: {e}"))
        }
        other => Failure::new(exit::RUNTIME, format!("reconstruction: {other}")),
    }
}

fn probe_deviation(a: &ProbeState, b: &ProbeState) -> f64 {
    let d = (a.alpha1 - b.alpha1).abs().max((a.beta1 - b.beta1).abs());
    // γ is meaningless for a basis probe
    if a.alpha1.min(a.beta1) > 1e-6 {
        d.max(circular_distance(a.gamma, b.gamma))
    } else {
        d
    }
}

/// Labels `reconstruct` cannot do without.
pub fn required_labels() -> Vec<String> {
    let mut v: Vec<String> = [
        LABEL_ALPHA_THETA0,
        LABEL_ALPHA_THETA45,
        LABEL_BETA_THETA0,
        LABEL_BETA_THETA45,
    ]
    .iter()
    .map(|l| l.to_string())
    .collect();
    v.push(format!("{REFERENCE_PREFIX}{LABEL_ALPHA_THETA45}"));
    v.push(format!("{REFERENCE_PREFIX}{LABEL_BETA_THETA0}"));
    v
}

/// A dataset with its manifest role and file name.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub dataset: FringeDataset,
    pub role: Role,
    pub file: String,
}

/// Outcome of [`reconstruct_datasets`]: the report plus messages for the
/// user.
#[derive(Clone, Debug)]
pub struct ReconstructOutcome {
    pub report: ReconstructionReport,
    pub notes: Vec<String>,
}

/// The full pipeline on in-memory datasets: calibrate `T` and the ζ origin
/// on the no-object references, verify the probes, extract the H/V point
/// estimate and optionally refine against every object dataset.
pub fn reconstruct_datasets(
    datasets: &[LoadedDataset],
    src: SourceConfig,
    provenance: Provenance,
    tolerance: f64,
    refine: bool,
) -> CliResult<ReconstructOutcome> {
    let missing: Vec<String> = required_labels()
        .into_iter()
        .filter(|l| !datasets.iter().any(|d| &d.dataset.label == l))
        .collect();
    if !missing.is_empty() {
        return Err(Failure::new(
            exit::MISSING,
            format!("missing required datasets: {}", missing.join(", ")),
        ));
    }
    let mut notes = Vec::new();
    let mut fits: BTreeMap<&str, SinusoidFit> = BTreeMap::new();
    for d in datasets {
        let fit = fit_sinusoid(&d.dataset)
            .map_err(|e| Failure::new(exit::MALFORMED, format!("{}: {e}", d.file)))?;
        fits.insert(d.dataset.label.as_str(), fit);
    }
    let ref_label = |l: &str| format!("{REFERENCE_PREFIX}{l}");
    let fit_of = |l: &str| fits[l];

    let cal = tomography::calibrate_t(
        CalibrationFits {
            theta0_beta1: &fit_of(&ref_label(LABEL_BETA_THETA0)),
            theta45_alpha1: &fit_of(&ref_label(LABEL_ALPHA_THETA45)),
        },
        &src,
    )
    .map_err(reconstruction_failure)?;
    let t = cal.t;
    let origin = tomography::origin_offset(&fit_of(&ref_label(LABEL_ALPHA_THETA45)));

    let mut probe_checks = Vec::new();
    for d in datasets {
        let Some(name) = d
            .dataset
            .label
            .strip_prefix(REFERENCE_PREFIX)
            .and_then(|r| r.strip_suffix(",theta=0"))
        else {
            continue;
        };
        let l45 = ref_label(&label_for(name, ThetaSetting::Deg45));
        let Some(f45) = fits.get(l45.as_str()) else {
            continue;
        };
        let recovered =
            tomography::characterize_probe(&fits[d.dataset.label.as_str()], f45, t, &src)
                .map_err(reconstruction_failure)?;
        probe_checks.push(ProbeCheck {
            name: name.to_string(),
            nominal: d.dataset.probe,
            max_deviation: probe_deviation(&d.dataset.probe, &recovered),
            recovered,
        });
    }
    let probe_hat = probe_checks
        .iter()
        .find(|c| c.name != "alpha=1" && c.name != "beta=1")
        .or_else(|| probe_checks.iter().find(|c| c.name == "alpha=1"))
        .map(|c| c.recovered);

    let corrected = |l: &str| fit_of(l).with_phase_offset_removed(origin);
    let (fa0, fa45, fb0, fb45) = (
        corrected(LABEL_ALPHA_THETA0),
        corrected(LABEL_ALPHA_THETA45),
        corrected(LABEL_BETA_THETA0),
        corrected(LABEL_BETA_THETA45),
    );
    let s = datasets
        .iter()
        .find(|d| d.dataset.label == LABEL_ALPHA_THETA0)
        .map(|d| d.dataset.config.pairs_per_point as f64)
        .expect("checked above");
    let mut rec = tomography::extract_hv(
        &HvFits {
            alpha_theta0: &fa0,
            alpha_theta45: &fa45,
            beta_theta0: &fb0,
            beta_theta45: &fb45,
        },
        t,
        &src,
        s,
        tolerance,
    )
    .map_err(reconstruction_failure)?;
    rec.probe_hat = probe_hat;

    let object_sets: Vec<FringeDataset> = datasets
        .iter()
        .filter(|d| d.role == Role::Object)
        .map(|d| d.dataset.clone())
        .collect();
    let opts = RefineOptions {
        zeta_offset: origin,
        ..RefineOptions::new(t, src)
    };
    if refine {
        rec =
            tomography::refine_global(&object_sets, &rec, &opts).map_err(reconstruction_failure)?;
        if !rec.refined {
            notes.push("refinement hit the iteration cap; reporting the best iterate".into());
        }
    } else {
        rec.residual_rms = Some(tomography::residual_rms(&object_sets, &rec.object, &opts));
    }

    let report = ReconstructionReport {
        schema_version: SCHEMA_VERSION.to_string(),
        provenance,
        calibration: cal,
        zeta_origin: origin,
        probe_checks,
        reconstruction: rec,
        per_dataset_fits: datasets
            .iter()
            .map(|d| fit_entry(&d.dataset, fits[d.dataset.label.as_str()], d.file.clone()))
            .collect(),
    };
    Ok(ReconstructOutcome { report, notes })
}

fn reconstruct(ctx: &Ctx, args: &ReconstructArgs) -> CliResult<i32> {
    let manifest = Manifest::load(&args.manifest)?;
    let base = args
        .manifest
        .parent()
        .unwrap_or(Path::new("."))
        .to_path_buf();

    let required = required_labels();
    let missing: Vec<String> = required
        .iter()
        .filter(|l| {
            !manifest
                .datasets
                .iter()
                .any(|e| &e.label == *l && base.join(&e.file).exists())
        })
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Failure::new(
            exit::MISSING,
            format!("missing required datasets: {}", missing.join(", ")),
        ));
    }

    let mut datasets = Vec::new();
    for e in &manifest.datasets {
        let path = base.join(&e.file);
        if !path.exists() {
            ctx.note(format!("skipping absent optional dataset {}", e.label));
            continue;
        }
        let ds = load_dataset(&path)?;
        if ds.label != e.label {
            return Err(Failure::new(
                exit::MALFORMED,
                format!(
                    "{}: label '{}' does not match manifest '{}'",
                    path.display(),
                    ds.label,
                    e.label
                ),
            ));
        }
        datasets.push(LoadedDataset {
            dataset: ds,
            role: e.role.clone(),
            file: e.file.clone(),
        });
    }

    let outcome = reconstruct_datasets(
        &datasets,
        manifest.src,
        manifest.provenance.clone(),
        args.tolerance,
        args.refine,
    )?;
    for n in &outcome.notes {
        ctx.note(n);
    }
    let report = outcome.report;
    let out = ctx
        .out
        .clone()
        .unwrap_or_else(|| base.join("reconstruction.json"));
    fs::write(&out, to_pretty_json(&report)?).map_err(io_context(&out))?;
    let c = &report.reconstruction.consistency;
    if c.pass {
        ctx.note(format!("wrote {}", out.display()));
        Ok(exit::OK)
    } else {
        eprintln!(
            "consistency check failed: kappa_rel_discrepancy={} xi_rel_discrepancy={} tolerance={} (report: {})",
            c.kappa_rel_discrepancy,
            c.xi_rel_discrepancy,
            c.tolerance,
            out.display()
        );
        Ok(exit::INCONSISTENT)
    }
}

// -------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationDraw {
    pub index: usize,
    pub probe: ProbeState,
    pub object: JonesObject,
    pub src: SourceConfig,
    #[serde(rename = "T")]
    pub t: f64,
    pub zeta_grid: Vec<f64>,
    pub max_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema_version: String,
    pub tool_version: String,
    pub seed: u64,
    pub draws: usize,
    pub tolerance: f64,
    pub max_deviation: f64,
    pub worst_draw: usize,
    pub pass: bool,
    pub deviations: Vec<f64>,
}

/// Random probe with uniformly distributed analyzer angle and phase.
pub fn random_probe(rng: &mut ChaCha8Rng) -> ProbeState {
    let chi: f64 = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
    let gamma = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    ProbeState::new(chi.cos(), chi.sin(), gamma).expect("normalized by construction")
}

/// Random object whose Jones matrix is passive in the strict
/// singular-value sense (rejection sampling).
pub fn random_passive_object(rng: &mut ChaCha8Rng) -> JonesObject {
    use std::f64::consts::PI;
    loop {
        let obj = JonesObject::from_array([
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
            rng.random_range(-PI..PI),
        ]);
        if obj.validate().is_ok() && obj.to_matrix().check_passive().is_ok() {
            return obj;
        }
    }
}

/// Sorted random 32-point grid in `[0, 2π)`.
pub fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        g.sort_by(f64::total_cmp);
        if g.windows(2).all(|w| w[1] > w[0]) {
            return g;
        }
    }
}

/// Largest `|oracle − closed form|` over both HWP settings and the grid.
pub fn draw_deviation(
    probe: &ProbeState,
    object: &JonesObject,
    src: &SourceConfig,
    t: f64,
    grid: &[f64],
) -> crate::error::Result<f64> {
    let loss = LossModel::new(t)?;
    let m = object.to_matrix();
    let mut worst: f64 = 0.0;
    for theta in ThetaSetting::ALL {
        let oracle = interferometer::run_forward(src, &loss, probe, theta, Some(&m), grid)?;
        for (z, o) in grid.iter().zip(oracle) {
            let a = analytic::counts_with_object(theta, probe, object, src, t, *z);
            worst = worst.max((o - a).abs());
        }
    }
    Ok(worst)
}

/// Draw `index` of a validation run: probe, object, source balance, `T` and grid.
pub fn validation_draw(rng: &mut ChaCha8Rng, index: usize, identity: bool) -> ValidationDraw {
    let probe = random_probe(rng);
    let object = if identity {
        JonesObject::identity()
    } else {
        random_passive_object(rng)
    };
    let mix: f64 = rng.random_range(0.1..(std::f64::consts::FRAC_PI_2 - 0.1));
    let src = SourceConfig::new(mix.cos(), mix.sin(), 0.0).expect("normalized by construction");
    let t = rng.random_range(0.1..=1.0);
    let zeta_grid = random_grid(rng, DEFAULT_GRID_POINTS);
    ValidationDraw {
        index,
        probe,
        object,
        src,
        t,
        zeta_grid,
        max_deviation: f64::NAN,
    }
}

fn validate_cmd(ctx: &Ctx, args: &ValidateArgs) -> CliResult<i32> {
    if args.draws == 0 {
        return Err(Failure::new(exit::CONFIG, "--draws must be at least 1"));
    }
    let seed = ctx.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deviations = Vec::with_capacity(args.draws);
    let mut worst: Option<ValidationDraw> = None;
    for i in 0..args.draws {
        let mut d = validation_draw(&mut rng, i, args.object == ValidateObject::Identity);
        d.max_deviation = draw_deviation(&d.probe, &d.object, &d.src, d.t, &d.zeta_grid)
            .map_err(|e| Failure::new(exit::RUNTIME, format!("draw {i}: {e}")))?;
        deviations.push(d.max_deviation);
        if worst
            .as_ref()
            .is_none_or(|w| d.max_deviation > w.max_deviation)
        {
            worst = Some(d);
        }
    }
    let worst = worst.expect("at least one draw");
    let pass = worst.max_deviation < VALIDATION_TOLERANCE;
    let report = ValidationReport {
        schema_version: SCHEMA_VERSION.to_string(),
        tool_version: TOOL_VERSION.to_string(),
        seed,
        draws: args.draws,
        tolerance: VALIDATION_TOLERANCE,
        max_deviation: worst.max_deviation,
        worst_draw: worst.index,
        pass,
        deviations,
    };
    ctx.emit(&to_pretty_json(&report)?)?;
    if pass {
        ctx.note(format!(
            "max deviation {:.3e} over {} draws",
            worst.max_deviation, args.draws
        ));
        Ok(exit::OK)
    } else {
        eprintln!(
            "validation violation; offending draw:\n{}",
            to_pretty_json(&worst)?
        );
        Ok(exit::VALIDATION)
    }
}

// -------------------------------------------------------------- plotdata

fn plotdata(ctx: &Ctx, args: &PlotArgs) -> CliResult<i32> {
    let ds = load_dataset(&args.dataset)?;
    let overlay = match (&args.fit, args.overlay) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).map_err(io_context(path))?;
            let report: FitReport = serde_json::from_str(&text)
                .map_err(|e| Failure::new(exit::MALFORMED, format!("{}: {e}", path.display())))?;
            let entry = report
                .fits
                .into_iter()
                .find(|f| f.label == ds.label)
                .ok_or_else(|| {
                    Failure::new(
                        exit::MALFORMED,
                        format!("{}: no fit for '{}'", path.display(), ds.label),
                    )
                })?;
            Some(entry.fit)
        }
        (None, true) => Some(fit_dataset(&ds, &args.dataset)?),
        (None, false) => None,
    };
    let mut out = String::new();
    match overlay {
        Some(_) => out.push_str("# zeta counts model\n"),
        None => out.push_str("# zeta counts\n"),
    }
    for (z, c) in ds.zeta_grid().iter().zip(&ds.counts) {
        match &overlay {
            Some(f) => writeln!(out, "{z} {c} {}", f.evaluate(*z)),
            None => writeln!(out, "{z} {c}"),
        }
        .expect("writing to a String");
    }
    ctx.emit(&out)?;
    Ok(exit::OK)
}

/// Parses the rows written by `plotdata` back into columns.
pub fn parse_columns(text: &str) -> std::result::Result<Vec<Vec<f64>>, std::num::ParseFloatError> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split_whitespace().map(str::parse).collect())
        .collect()
}

// ------------------------------------------------------------------ entry

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
            let _ = e.print();
            return code;
        }
    };
    let ctx = Ctx {
        seed: cli.seed,
        out: cli.out.clone(),
        quiet: cli.quiet,
    };
    let result = match &cli.command {
        Command::Simulate { config } => simulate(&ctx, config),
        Command::Fit { datasets } => fit_cmd(&ctx, datasets),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Validate(a) => validate_cmd(&ctx, a),
        Command::Plotdata(a) => plotdata(&ctx, a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_names() {
        assert_eq!(file_name_for("alpha=1,theta=0"), "alpha-1_theta-0.json");
        assert_eq!(
            file_name_for("reference:beta=1,theta=45"),
            "reference_beta-1_theta-45.json"
        );
    }

    #[test]
    fn config_errors_carry_lines() {
        let text = "output_dir = \"x\"\n[scene]\nT = 0.8\nbogus = 1\n";
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.code, exit::CONFIG);
        assert!(err.message.contains("line 4"), "{}", err.message);
    }

    #[test]
    fn config_objects() {
        let base = "output_dir = \"x\"\n[scene]\nT = 0.8\n";
        let id = RunConfig::parse(&format!("{base}object = \"identity\"\n")).unwrap();
        assert_eq!(
            id.scene().unwrap().object,
            Some(SceneObject::Jones(JonesObject::identity()))
        );

        let jones = format!(
            "{base}[scene.object]\ntau_h = 0.9\ntau_v = 0.7\nkappa = 0.3\nphi_h = 0.4\nphi_v = -0.2\nxi = 1.0\n"
        );
        assert!(matches!(
            RunConfig::parse(&jones).unwrap().scene().unwrap().object,
            Some(SceneObject::Jones(_))
        ));

        let mat = format!("{base}[scene.object]\nmatrix = [0.5, 0, 0, 0, 0, 0, 0.5, 0]\n");
        assert!(matches!(
            RunConfig::parse(&mat).unwrap().scene().unwrap().object,
            Some(SceneObject::Matrix(_))
        ));

        let gain = format!("{base}[scene.object]\nmatrix = [1.5, 0, 0, 0, 0, 0, 0.5, 0]\n");
        assert_eq!(
            RunConfig::parse(&gain).unwrap().scene().unwrap_err().code,
            exit::UNPHYSICAL
        );
    }

    #[test]
    fn probe_definitions() {
        let text = "output_dir = \"x\"\nprobes = [\"diagonal\", { name = \"tilted\", alpha1 = 0.6, beta1 = 0.8, gamma = 0.3 }]\n[scene]\nT = 0.8\n";
        let cfg = RunConfig::parse(text).unwrap();
        let probes = cfg.extra_probes().unwrap();
        assert_eq!(probes.len(), 2);
        assert_eq!(probes[1].name, "tilted");

        let bad = "output_dir = \"x\"\nprobes = [\"elliptic\"]\n[scene]\nT = 0.8\n";
        assert_eq!(
            RunConfig::parse(bad)
                .unwrap()
                .extra_probes()
                .unwrap_err()
                .code,
            exit::CONFIG
        );
    }

    #[test]
    fn identity_draw_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = validation_draw(&mut rng, 0, true);
        assert!(draw_deviation(&d.probe, &d.object, &d.src, d.t, &d.zeta_grid).unwrap() < 1e-12);
    }

    #[test]
    fn random_objects_are_passive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let o = random_passive_object(&mut rng);
            assert!(o.to_matrix().largest_singular_value() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn hex_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
