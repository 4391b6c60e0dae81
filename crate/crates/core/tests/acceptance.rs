//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p qiup-core --test acceptance` (add `--release` for
//! representative timings).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use qiup_core::acquisition::{
    mix_seed, standard_battery, uniform_grid, AcquisitionConfig, NamedProbe, Noise, Scene,
    SceneObject,
};
use qiup_core::cli::{
    self, draw_deviation, random_passive_object, validation_draw, FitReport, LoadedDataset,
    Provenance, ReconstructionReport, Role, REFERENCE_PREFIX,
};
use qiup_core::fitting::{fit_samples, fit_sinusoid, visibility_of, SinusoidFit};
use qiup_core::phase::circular_distance;
use qiup_core::tomography::{self, HvFits, RefineOptions, DEFAULT_CONSISTENCY_TOLERANCE};
use qiup_core::{FringeDataset, JonesObject, SourceConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: u32, name: &str, elapsed: Duration, o: &Outcome) -> bool {
    println!(
        "{} criterion {id} ({name}): {} [{:.2} s]",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    o.pass
}

fn reference_object() -> JonesObject {
    JonesObject::new(0.9, 0.7, 0.3, 0.4, -0.2, 1.0).unwrap()
}

fn fits_of(ds: &[FringeDataset]) -> Vec<SinusoidFit> {
    ds.iter().map(|d| fit_sinusoid(d).unwrap()).collect()
}

fn hv(f: &[SinusoidFit]) -> HvFits<'_> {
    HvFits {
        alpha_theta0: &f[0],
        alpha_theta45: &f[1],
        beta_theta0: &f[2],
        beta_theta45: &f[3],
    }
}

fn object_battery(
    obj: JonesObject,
    t: f64,
    src: SourceConfig,
    cfg: &AcquisitionConfig,
) -> Vec<FringeDataset> {
    let scene = Scene {
        src,
        t,
        object: Some(SceneObject::Jones(obj)),
    };
    standard_battery(&scene, cfg, &NamedProbe::extras()).unwrap()
}

fn qiup(args: &[&str]) -> i32 {
    let mut v = vec!["qiup"];
    v.extend_from_slice(args);
    cli::run(v)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

// 1
fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = validation_draw(&mut rng, i, false);
        worst = worst.max(draw_deviation(&d.probe, &d.object, &d.src, d.t, &d.zeta_grid).unwrap());
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!("max |oracle - closed form| = {worst:.2e} over 100 draws, tolerance 1e-10"),
    }
}

// 2
fn no_object_visibilities(dir: &Path) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let t: f64 = rng.random_range(0.1..=1.0);
        let chi: f64 = rng.random_range(0.0..PI / 2.0);
        let gamma: f64 = rng.random_range(-PI..PI);
        let (alpha, beta) = (chi.cos(), chi.sin());
        let run = dir.join(format!("vis{k}"));
        fs::create_dir_all(&run).unwrap();
        let config = run.join("run.toml");
        fs::write(
            &config,
            format!(
                "output_dir = \"out\"\nreference = false\nprobes = [{{ name = \"p\", alpha1 = {alpha:?}, beta1 = {beta:?}, gamma = {gamma:?} }}]\n[scene]\nT = {t:?}\n"
            ),
        )
        .unwrap();
        if qiup(&["--quiet", "simulate", path_str(&config)]) != 0 {
            return Outcome {
                pass: false,
                detail: format!("simulate failed for draw {k}"),
            };
        }
        let out = run.join("out");
        let fit_path = run.join("fits.json");
        let code = qiup(&[
            "--quiet",
            "--out",
            path_str(&fit_path),
            "fit",
            path_str(&out.join("p_theta-0.json")),
            path_str(&out.join("p_theta-45.json")),
        ]);
        if code != 0 {
            return Outcome {
                pass: false,
                detail: format!("fit failed for draw {k}"),
            };
        }
        let rep: FitReport = serde_json::from_str(&fs::read_to_string(&fit_path).unwrap()).unwrap();
        worst = worst
            .max((rep.fits[0].visibility - t * beta).abs())
            .max((rep.fits[1].visibility - t * alpha).abs());
    }
    Outcome {
        pass: worst < 1e-10,
        detail: format!(
            "max |nu - T beta1|, |nu - T alpha1| = {worst:.2e} over 20 draws, tolerance 1e-10"
        ),
    }
}

// 3
fn analytic_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let cfg = AcquisitionConfig::default();
    let (mut kappa_gap, mut xi_gap, mut ratio_gap): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut n = 0;
    while n < 50 {
        let obj = random_passive_object(&mut rng);
        if obj.tau_h < 0.1 || obj.tau_v < 0.1 || obj.kappa < 0.1 {
            continue;
        }
        n += 1;
        let t: f64 = rng.random_range(0.1..=1.0);
        let src = SourceConfig::balanced(0.0);
        let f = fits_of(&object_battery(obj, t, src, &cfg));
        let rec = tomography::extract_hv(
            &hv(&f),
            t,
            &src,
            cfg.pairs_per_point as f64,
            DEFAULT_CONSISTENCY_TOLERANCE,
        )
        .unwrap();
        kappa_gap = kappa_gap.max((rec.kappa_alpha - rec.kappa_beta).abs());
        xi_gap = xi_gap.max(circular_distance(rec.xi_1, rec.xi_2));

        let base = tomography::ratios(&hv(&f)).unwrap();
        let mix: f64 = rng.random_range(0.2..1.3);
        for (t2, src2) in [
            (1.0, SourceConfig::balanced(0.0)),
            (0.35, SourceConfig::balanced(0.0)),
            (t, SourceConfig::new(mix.cos(), mix.sin(), 0.0).unwrap()),
        ] {
            let g = fits_of(&object_battery(obj, t2, src2, &cfg));
            let r = tomography::ratios(&hv(&g)).unwrap();
            ratio_gap = ratio_gap
                .max((r.r1 - base.r1).abs())
                .max((r.r2 - base.r2).abs());
        }
    }
    Outcome {
        pass: kappa_gap < 1e-9 && xi_gap < 1e-9 && ratio_gap < 1e-10,
        detail: format!(
            "50 objects: max |kappa_a - kappa_b| = {kappa_gap:.2e}, max dist(xi1, xi2) = {xi_gap:.2e} (tol 1e-9); \
             max R1/R2 change over T and (b1,b2) = {ratio_gap:.2e} (tol 1e-10)"
        ),
    }
}

// 4
fn golden_round_trip() -> Outcome {
    let truth = reference_object();
    let src = SourceConfig::balanced(0.0);
    let ds = object_battery(truth, 0.8, src, &AcquisitionConfig::default());
    let f = fits_of(&ds);
    let rec =
        tomography::extract_hv(&hv(&f), 0.8, &src, 1e6, DEFAULT_CONSISTENCY_TOLERANCE).unwrap();
    let extract_err = rec
        .object
        .to_array()
        .iter()
        .zip(truth.to_array())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let refined = tomography::refine_global(&ds, &rec, &RefineOptions::new(0.8, src)).unwrap();
    let rms = refined.residual_rms.unwrap();
    Outcome {
        pass: extract_err < 1e-6 && refined.refined && refined.iterations <= 20 && rms < 1e-9,
        detail: format!(
            "extract_hv max error {extract_err:.2e} (tol 1e-6); refine converged={} in {} iterations (limit 20), residual_rms {rms:.2e} (tol 1e-9)",
            refined.refined, refined.iterations
        ),
    }
}

fn noisy_trial(seed: u64) -> Result<bool, String> {
    let truth = reference_object();
    let src = SourceConfig::balanced(0.0);
    let cfg = AcquisitionConfig {
        noise: Noise::Poisson,
        rng_seed: seed,
        ..AcquisitionConfig::default()
    };
    let scene = Scene {
        src,
        t: 0.8,
        object: Some(SceneObject::Jones(truth)),
    };
    let extras = NamedProbe::extras();
    let mut loaded: Vec<LoadedDataset> = standard_battery(&scene, &cfg, &extras)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|d| LoadedDataset {
            file: d.label.clone(),
            dataset: d,
            role: Role::Object,
        })
        .collect();
    let ref_cfg = AcquisitionConfig {
        rng_seed: mix_seed(seed, u64::MAX),
        ..cfg.clone()
    };
    for mut d in
        standard_battery(&scene.without_object(), &ref_cfg, &extras).map_err(|e| e.to_string())?
    {
        d.label = format!("{REFERENCE_PREFIX}{}", d.label);
        loaded.push(LoadedDataset {
            file: d.label.clone(),
            dataset: d,
            role: Role::Reference,
        });
    }
    let prov = Provenance {
        tool_version: cli::TOOL_VERSION.into(),
        config_sha256: String::new(),
        seed,
    };
    let out = cli::reconstruct_datasets(&loaded, src, prov, DEFAULT_CONSISTENCY_TOLERANCE, true)
        .map_err(|f| f.message)?;
    let o = out.report.reconstruction.object;
    let amp_ok = [
        (o.tau_h, truth.tau_h),
        (o.tau_v, truth.tau_v),
        (o.kappa, truth.kappa),
    ]
    .iter()
    .all(|(a, b)| ((a - b) / b).abs() < 0.02);
    let phase_ok = [
        (o.phi_h, truth.phi_h),
        (o.phi_v, truth.phi_v),
        (o.xi, truth.xi),
    ]
    .iter()
    .all(|(a, b)| circular_distance(*a, *b) < 0.02);
    Ok(amp_ok && phase_ok)
}

// 5
fn noisy_round_trip() -> Outcome {
    let mut ok = 0;
    for seed in 0..100u64 {
        match noisy_trial(seed) {
            Ok(true) => ok += 1,
            Ok(false) => {}
            Err(e) => {
                return Outcome {
                    pass: false,
                    detail: format!("seed {seed}: {e}"),
                }
            }
        }
    }
    Outcome {
        pass: ok >= 95,
        detail: format!(
            "{ok}/100 seeds within 2% (amplitudes) and 0.02 rad (phases) after refinement; required >= 95"
        ),
    }
}

fn write_golden_config(dir: &Path, noise: &str) -> std::path::PathBuf {
    let config = dir.join("run.toml");
    fs::write(
        &config,
        format!(
            "output_dir = \"out\"\nprobes = [\"diagonal\", \"antidiagonal\", \"circular\"]\n\n\
             [scene]\nT = 0.8\n\n[scene.object]\ntau_h = 0.9\ntau_v = 0.7\nkappa = 0.3\nphi_h = 0.4\nphi_v = -0.2\nxi = 1.0\n\n\
             [acquisition]\nnoise = \"{noise}\"\nseed = 42\n"
        ),
    )
    .unwrap();
    config
}

// 6
fn fault_detection(dir: &Path) -> Outcome {
    let config = write_golden_config(dir, "none");
    if qiup(&["--quiet", "simulate", path_str(&config)]) != 0 {
        return Outcome {
            pass: false,
            detail: "simulate failed".into(),
        };
    }
    let out = dir.join("out");
    let manifest = out.join("manifest.json");
    let report_path = dir.join("report.json");
    let clean = qiup(&[
        "--quiet",
        "--out",
        path_str(&report_path),
        "reconstruct",
        path_str(&manifest),
    ]);
    let mut lines = vec![format!("uncorrupted exit {clean}")];
    let mut pass = clean == 0;
    for file in [
        "alpha-1_theta-0.json",
        "alpha-1_theta-45.json",
        "beta-1_theta-0.json",
        "beta-1_theta-45.json",
    ] {
        let path = out.join(file);
        let original = fs::read(&path).unwrap();
        let mut ds = FringeDataset::load(&path).unwrap();
        let mean = ds.counts.iter().sum::<f64>() / ds.counts.len() as f64;
        for c in &mut ds.counts {
            *c = mean + 1.2 * (*c - mean);
        }
        ds.save(&path).unwrap();
        let code = qiup(&[
            "--quiet",
            "--out",
            path_str(&report_path),
            "reconstruct",
            path_str(&manifest),
        ]);
        let rep: ReconstructionReport =
            serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
        let disc = rep.reconstruction.consistency.kappa_rel_discrepancy;
        pass &= code == 5 && disc > 0.05;
        lines.push(format!(
            "{file}: exit {code}, kappa_rel_discrepancy {disc:.3}"
        ));
        fs::write(&path, original).unwrap();
    }
    Outcome {
        pass,
        detail: format!("{} (need exit 5 and > 0.05)", lines.join("; ")),
    }
}

// 7
fn fitter_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grid = uniform_grid(32);
    let (mut exact, mut scale, mut shift): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let c: f64 = rng.random_range(1.0..10.0);
        let a: f64 = rng.random_range(0.01..1.0) * c;
        let phi: f64 = rng.random_range(-PI..PI);
        let y: Vec<f64> = grid.iter().map(|z| c + a * (z + phi).sin()).collect();
        let f = fit_samples(&grid, &y, None).unwrap();
        exact = exact
            .max((f.c - c).abs())
            .max((f.a - a).abs())
            .max(circular_distance(f.phi, phi));

        let s: f64 = rng.random_range(0.1..100.0);
        let ys: Vec<f64> = y.iter().map(|v| v * s).collect();
        let fs_ = fit_samples(&grid, &ys, None).unwrap();
        scale = scale.max((visibility_of(&fs_).unwrap() - visibility_of(&f).unwrap()).abs());

        let delta: f64 = rng.random_range(-1.0..1.0);
        let shifted: Vec<f64> = grid.iter().map(|z| z + delta).collect();
        let ysh: Vec<f64> = shifted.iter().map(|z| c + a * (z + phi).sin()).collect();
        let fsh = fit_samples(&shifted, &ysh, None).unwrap();
        shift = shift.max(circular_distance(fsh.phi, phi));
    }
    Outcome {
        pass: exact < 1e-12 && scale < 1e-12 && shift < 1e-10,
        detail: format!(
            "200 sinusoids: recovery error {exact:.2e} (tol 1e-12), visibility change under rescaling {scale:.2e} (tol 1e-12), \
             phase change under grid shift {shift:.2e} (tol 1e-10)"
        ),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

// 8
fn determinism(dir: &Path) -> Outcome {
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let d = dir.join(run);
        fs::create_dir_all(&d).unwrap();
        let config = write_golden_config(&d, "poisson");
        let sim = qiup(&["--quiet", "simulate", path_str(&config)]);
        let val_path = d.join("validate.json");
        let val = qiup(&[
            "--quiet",
            "--seed",
            "5",
            "--out",
            path_str(&val_path),
            "validate",
            "--draws",
            "20",
        ]);
        let rec_path = d.join("reconstruction.json");
        let rec = qiup(&[
            "--quiet",
            "--out",
            path_str(&rec_path),
            "reconstruct",
            "--refine",
            path_str(&d.join("out").join("manifest.json")),
        ]);
        if sim != 0 || val != 0 || rec != 0 {
            return Outcome {
                pass: false,
                detail: format!("run {run}: simulate {sim}, validate {val}, reconstruct {rec}"),
            };
        }
        outputs.push((
            dir_bytes(&d.join("out")),
            fs::read(&val_path).unwrap(),
            fs::read(&rec_path).unwrap(),
        ));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let sim_same = a.0 == b.0;
    let val_same = a.1 == b.1;
    let rec_same = a.2 == b.2;
    Outcome {
        pass: sim_same && val_same && rec_same,
        detail: format!(
            "{} simulated files identical: {sim_same}; validate report identical: {val_same}; reconstruction report identical: {rec_same}",
            a.0.len()
        ),
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut all = true;
    let mut run = |id: u32, name: &str, limit: Option<Duration>, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let mut o = f();
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                o.pass = false;
                o.detail
                    .push_str(&format!("; runtime exceeded {} s", limit.as_secs()));
            }
        }
        all &= report(id, name, elapsed, &o);
    };
    let base = tmp.path();
    run(
        1,
        "oracle equivalence",
        Some(Duration::from_secs(10)),
        &oracle_equivalence,
    );
    run(2, "no-object visibilities", None, &|| {
        no_object_visibilities(&base.join("c2"))
    });
    run(3, "analytic identities", None, &analytic_identities);
    run(
        4,
        "golden round trip",
        Some(Duration::from_secs(5)),
        &golden_round_trip,
    );
    run(
        5,
        "noisy round trip",
        Some(Duration::from_secs(120)),
        &noisy_round_trip,
    );
    run(6, "fault detection", None, &|| {
        let d = base.join("c6");
        fs::create_dir_all(&d).unwrap();
        fault_detection(&d)
    });
    run(7, "fitter invariances", None, &fitter_invariances);
    run(8, "determinism", None, &|| determinism(&base.join("c8")));
    println!(
        "acceptance: {}",
        if all {
            "all criteria passed"
        } else {
            "FAILURES"
        }
    );
    if !all {
        std::process::exit(1);
    }
}
