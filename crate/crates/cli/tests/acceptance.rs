//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `ATOM_DIODE_ACCEPTANCE` selects the tier:
//! - `quick` (default): criteria that finish in minutes; the rest are skipped.
//! - `ci`: everything, with the reduced ensemble variants.
//! - `full`: everything at the full ensemble sizes (many hours on one core).
//!
//! The process exits non-zero on a failure only when `ATOM_DIODE_STRICT=1`.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use atom_diode::diode::{diode_scan, find_window, sweep_vmax_surface, DiodeScanRow, LimitingSide, WindowSearch};
use atom_diode::dynamics::{
    master_equation_oracle, run_ensemble, sample_recoil_u, trajectory_rng, DensityMatrix, EnsembleResult,
    OracleConfig, Scenario, StepControl,
};
use atom_diode::physics::{
    build_three_level, build_two_level, cm_per_s, square_barrier, to_cm_per_s, Geometry, PotentialSpec, UnitSystem,
};
use atom_diode::scattering::{solve_scattering, SolverConfig};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Tier {
    Quick,
    Ci,
    Full,
}

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64)).collect()
}

fn thick() -> PotentialSpec {
    build_three_level(1.0, 100.0, Geometry::reference()).unwrap()
}

fn scan(spec: &PotentialSpec, velocities_cm_s: &[f64], cfg: &SolverConfig) -> Result<Vec<DiodeScanRow>, String> {
    let vs: Vec<f64> = velocities_cm_s.iter().map(|&v| cm_per_s(v)).collect();
    diode_scan(spec, UnitSystem::neon(), &vs, cfg)
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())
}

fn criterion_1() -> Outcome {
    let units = UnitSystem::neon();
    let cfg = SolverConfig::default();
    let potentials = [
        ("three-level", thick()),
        ("two-level", build_two_level(100.0, Geometry::reference()).unwrap()),
    ];
    let mut worst: f64 = 0.0;
    for (name, spec) in &potentials {
        for v in log_grid(0.25, 100.0, 50) {
            match solve_scattering(spec, units, cm_per_s(v), &cfg) {
                Ok(r) => worst = worst.max(r.unitarity_defect()),
                Err(e) => return Outcome::Fail(format!("{name} at {v} cm/s: {e}")),
            }
        }
    }
    verdict(worst < 1e-8, format!("max |S^dag S - I| = {worst:.2e} over 2 x 50 velocities"))
}

fn criterion_2() -> Outcome {
    let units = UnitSystem::neon();
    let mu = units.m_over_hbar;
    let (height, width) = (1.0, 0.1);
    let spec = square_barrier(height, width).unwrap();
    let mut worst: f64 = 0.0;
    for ratio in [0.25, 0.75, 1.0, 1.5, 4.0] {
        let k = (2.0 * mu * height * ratio).sqrt();
        let q2 = k * k - 2.0 * mu * height;
        let exact = if q2 > 0.0 {
            let q = q2.sqrt();
            1.0 / (1.0 + (k * k - q * q).powi(2) * (q * width).sin().powi(2) / (4.0 * k * k * q * q))
        } else if q2 < 0.0 {
            let kappa = (-q2).sqrt();
            1.0 / (1.0 + (k * k + kappa * kappa).powi(2) * (kappa * width).sinh().powi(2) / (4.0 * k * k * kappa * kappa))
        } else {
            1.0 / (1.0 + k * k * width * width / 4.0)
        };
        match solve_scattering(&spec, units, k / mu, &SolverConfig::default()) {
            Ok(r) => worst = worst.max((r.t_left[(0, 0)].norm_sqr() - exact).abs()),
            Err(e) => return Outcome::Fail(format!("E/V0 = {ratio}: {e}")),
        }
    }
    verdict(worst < 1e-10, format!("max ||T|^2 - closed form| = {worst:.2e} at five E/V0"))
}

fn criterion_3() -> (Outcome, Option<f64>) {
    let velocities: Vec<f64> = (0..=76).map(|i| 1.0 + 0.25 * i as f64).collect();
    let rows = match scan(&thick(), &velocities, &SolverConfig::with_tolerance(1e-9)) {
        Ok(rows) => rows,
        Err(e) => return (Outcome::Fail(e), None),
    };
    let bad: Vec<f64> = rows
        .iter()
        .filter(|r| {
            !(r.left.transmission > 0.95
                && r.left.reflection < 0.05
                && r.right.reflection > 0.95
                && r.right.transmission < 0.05
                && r.failure < 0.01)
        })
        .map(|r| to_cm_per_s(r.v))
        .collect();
    let worst = rows.iter().map(|r| r.failure).fold(0.0, f64::max);
    let window = match find_window(&thick(), &WindowSearch::reference()) {
        Ok(w) => w,
        Err(e) => return (Outcome::Fail(format!("window search: {e}")), None),
    };
    let v_max = window.v_max.map(to_cm_per_s);
    let edge = v_max.map_or("none".to_string(), |v| format!("{v} cm/s"));
    // regression pin of the window edge found with the reference search
    let pinned = v_max.is_some_and(|v| (v - 56.0).abs() <= 0.5);
    let ok = bad.is_empty() && pinned && v_max.is_some_and(|v| v < 100.0);
    let detail = format!(
        "77 velocities in [1, 20] cm/s, failing {bad:?}, max failure {worst:.2e}; v_max = {edge} ({}), pinned 56 cm/s",
        window.limiting.as_str()
    );
    (verdict(ok, detail), v_max)
}

fn criterion_4(v_max: Option<f64>) -> Outcome {
    let top = v_max.unwrap_or(20.0);
    let velocities = log_grid(0.25, top, 40);
    let cfg = SolverConfig::with_tolerance(1e-9);
    let three = match scan(&thick(), &velocities, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let two = match scan(&build_two_level(100.0, Geometry::reference()).unwrap(), &velocities, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let worst = three
        .iter()
        .zip(&two)
        .map(|(a, b)| {
            [
                (a.left.transmission - b.left.transmission).abs(),
                (a.left.reflection - b.left.reflection).abs(),
                (a.right.transmission - b.right.transmission).abs(),
                (a.right.reflection - b.right.reflection).abs(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    verdict(worst < 0.05, format!("max difference {worst:.3e} over 40 velocities in [0.25, {top}] cm/s"))
}

fn criterion_5() -> Outcome {
    let spec = build_three_level(0.2, 20.0, Geometry::reference()).unwrap();
    let cfg = SolverConfig::with_tolerance(1e-9);
    let low: Vec<f64> = (1..25).map(|i| 0.01 * i as f64).collect();
    let rows = match scan(&spec, &low, &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e),
    };
    let dip = rows
        .iter()
        .min_by(|a, b| a.left.transmission.total_cmp(&b.left.transmission))
        .unwrap();
    let at_half = match scan(&spec, &[0.5], &cfg) {
        Ok(r) => r[0].left.transmission,
        Err(e) => return Outcome::Fail(e),
    };
    verdict(
        dip.left.transmission < 0.5 && at_half > 0.9,
        format!(
            "min |T|^2 = {:.3} at {} cm/s; |T|^2(0.5 cm/s) = {at_half:.4}",
            dip.left.transmission,
            to_cm_per_s(dip.v)
        ),
    )
}

fn criterion_6() -> Outcome {
    let rabis = [0.2, 0.4, 0.6, 0.8, 1.0];
    let barriers = [20.0, 40.0, 60.0, 80.0, 100.0];
    let search = WindowSearch::reference();
    let points = match sweep_vmax_surface(&rabis, &barriers, Geometry::reference(), &search) {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let points: Vec<_> = match points.into_iter().collect::<Result<Vec<_>, _>>() {
        Ok(p) => p,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let at = |o: usize, w: usize| &points[o * barriers.len() + w];
    let all_found = points.iter().all(|p| p.v_max.is_some_and(|v| v >= search.v_min()));
    let ordered = match (at(4, 4).v_max, at(4, 0).v_max) {
        (Some(a), Some(b)) => a > b,
        _ => false,
    };
    let low_w_ok = (1..rabis.len()).all(|o| at(o, 0).limiting == LimitingSide::ReflectionFailure);
    let low_o_ok = (1..barriers.len()).all(|w| at(0, w).limiting == LimitingSide::StirapFailure);
    let table: Vec<String> = points
        .iter()
        .map(|p| {
            let tag = match p.limiting {
                LimitingSide::StirapFailure => "S",
                LimitingSide::ReflectionFailure => "R",
            };
            format!("({},{})={}{}", p.rabi, p.barrier, p.v_max.map_or(f64::NAN, to_cm_per_s), tag)
        })
        .collect();
    verdict(
        all_found && ordered && low_w_ok && low_o_ok,
        format!(
            "all >= v_min: {all_found}; v_max(1,100) > v_max(1,20): {ordered}; low-W edge reflection: {low_w_ok}; \
             low-Omega edge stirap: {low_o_ok}; v_max cm/s [{}]",
            table.join(" ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let n = 1_000_000;
    let mut rng = trajectory_rng(7, 0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let u = sample_recoil_u(&mut rng);
        s1 += u;
        s2 += u * u;
    }
    let mean = s1 / n as f64;
    let var = s2 / n as f64 - mean * mean;
    verdict(
        mean.abs() <= 0.002 && (var - 0.4).abs() <= 0.002,
        format!("mean {mean:+.5}, variance {var:.5} from 1e6 samples"),
    )
}

fn criterion_8() -> Outcome {
    let sc = Scenario::miniature().unwrap();
    let dt = 0.15;
    let mut control = StepControl::fixed(dt);
    control.samples = 9;
    let wp = sc.packet().unwrap();
    let ens = match sc.propagator(control).and_then(|p| run_ensemble(&p, &wp, 500, 2024)) {
        Ok(e) => e,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let cfg = OracleConfig {
        dt,
        quadrature_nodes: 32,
        samples: 9,
    };
    let exact = match DensityMatrix::pure(&wp)
        .and_then(|rho| master_equation_oracle(&sc.spec, sc.units, &sc.params, &rho, &cfg))
    {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let pops = exact.rho.populations();
    let mut parts = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, mcwf: f64, bar: f64, reference: f64, se: f64| {
        let diff = (mcwf - reference).abs();
        let pass = diff <= 3.0 * bar;
        ok &= pass;
        parts.push(format!("{name}: |{mcwf:.5} - {reference:.5}| = {diff:.1e} vs 3 x bar {:.1e} (3 x s.e. {:.1e})", 3.0 * bar, 3.0 * se));
    };
    let se_of = |p: f64| (p * (1.0 - p) / ens.completed as f64).sqrt();
    for c in 0..3 {
        check(&format!("P{}", c + 1), ens.populations[c], ens.population_error[c], pops[c], se_of(ens.populations[c]));
    }
    check("p_r", ens.p_r, ens.error_bar, exact.rho.p_r(), ens.standard_error);
    verdict(ok, format!("n = 500, {} jumps per trajectory; {}", ens.mean_jumps, parts.join("; ")))
}

fn reference_ensemble(v0_cm_s: f64, gamma: f64, n: usize, seed: u64) -> Result<EnsembleResult, String> {
    let sc = Scenario::reference(cm_per_s(v0_cm_s), gamma, cm_per_s(3.0)).map_err(|e| e.to_string())?;
    let prop = sc.propagator(StepControl::default()).map_err(|e| e.to_string())?;
    let wp = sc.packet().map_err(|e| e.to_string())?;
    run_ensemble(&prop, &wp, n, seed).map_err(|e| e.to_string())
}

fn criterion_9(tier: Tier) -> Outcome {
    let (n, threshold, label) = match tier {
        Tier::Full => (200, 0.95, "n = 200"),
        _ => (20, 0.90, "smoke variant n = 20"),
    };
    let gamma = 20e-6;
    let mut parts = Vec::new();
    let mut ok = true;
    for v in [8.0, -8.0] {
        match reference_ensemble(v, gamma, n, 2024) {
            Ok(e) => {
                let pass = e.p_r >= threshold - e.error_bar && e.failed() == 0;
                ok &= pass;
                parts.push(format!(
                    "p_r({v:+}) = {:.4} +- {:.4} ({} jumps/trajectory, {} failed)",
                    e.p_r,
                    e.error_bar,
                    e.mean_jumps,
                    e.failed()
                ));
            }
            Err(e) => return Outcome::Fail(format!("v0 = {v}: {e}")),
        }
    }
    verdict(ok, format!("{label}, threshold {threshold}: {}", parts.join("; ")))
}

fn criterion_10(tier: Tier) -> Outcome {
    let n = if tier == Tier::Full { 200 } else { 40 };
    let low = reference_ensemble(2.0, 20e-6, n, 2024);
    let high = reference_ensemble(2.0, 40e-6, n, 2024);
    match (low, high) {
        (Ok(a), Ok(b)) => {
            let separated = a.p_r - a.error_bar > b.p_r + b.error_bar;
            let label = if tier == Tier::Full { "n = 200" } else { "reduced variant n = 40" };
            verdict(
                separated,
                format!(
                    "{label}: p_r(gamma 20/s) = {:.4} +- {:.4}, p_r(gamma 40/s) = {:.4} +- {:.4}",
                    a.p_r, a.error_bar, b.p_r, b.error_bar
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Outcome::Fail(e),
    }
}

fn run_cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_atom-diode"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn criterion_11(dir: &Path) -> Outcome {
    let scan_cfg = dir.join("scan.toml");
    std::fs::write(
        &scan_cfg,
        "[potential]\nkind = \"three-level\"\nrabi_msi = 1.0\nbarrier_msi = 100.0\n\
         [scan]\nv_min_cm_s = 0.5\nv_max_cm_s = 80.0\ncount = 16\nspacing = \"log\"\n",
    )
    .unwrap();
    let ens_cfg = dir.join("ensemble.toml");
    std::fs::write(
        &ens_cfg,
        "seed = 11\n[potential]\nkind = \"three-level\"\nrabi_msi = 1.0\nbarrier_msi = 1.0\n\
         [geometry]\nx_p_um = 6.0\nx_s_um = 4.0\nx_w_um = 10.0\nwidth_um = 1.0\n\
         [ensemble]\nv0_cm_s = [1.2]\nx0_left_um = -3.5\n\
         dv0_cm_s = 0.31471131511854256\ngamma_per_s = 10000.0\nv_rec_cm_s = 0.3\ndistance_um = 9.0\n\
         trajectories = 16\ndt_us = 0.15\ngrid = { x_min_um = -10.4, x_max_um = 15.2, points = 256 }\n",
    )
    .unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for (cmd, cfg) in [("scan", &scan_cfg), ("ensemble", &ens_cfg)] {
        let cfg = cfg.to_str().unwrap();
        let runs: Result<Vec<Vec<u8>>, String> = [
            vec![cmd, "--config", cfg, "--threads", "1"],
            vec![cmd, "--config", cfg, "--threads", "1"],
            vec![cmd, "--config", cfg, "--threads", "8"],
        ]
        .iter()
        .map(|a| run_cli(a))
        .collect();
        match runs {
            Ok(r) => {
                let same = r[0] == r[1] && r[0] == r[2] && !r[0].is_empty();
                ok &= same;
                parts.push(format!("{cmd}: {} bytes, identical {same}", r[0].len()));
            }
            Err(e) => return Outcome::Fail(format!("{cmd}: {e}")),
        }
    }
    verdict(ok, parts.join("; "))
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; listing asks for nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let tier = match std::env::var("ATOM_DIODE_ACCEPTANCE").as_deref() {
        Ok("ci") => Tier::Ci,
        Ok("full") => Tier::Full,
        _ => Tier::Quick,
    };
    let strict = std::env::var("ATOM_DIODE_STRICT").is_ok_and(|v| v == "1");
    let dir = tempfile::tempdir().unwrap();
    let skip = |n: u32, minutes: &str| Outcome::Skip(format!("criterion {n} needs ATOM_DIODE_ACCEPTANCE=ci or full ({minutes})"));

    let mut failures = 0;
    let mut report = |n: u32, start: Instant, outcome: Outcome| {
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Outcome::Pass(d) => println!("PASS criterion {n}: {d} [{secs:.0} s]"),
            Outcome::Fail(d) => {
                failures += 1;
                println!("FAIL criterion {n}: {d} [{secs:.0} s]");
            }
            Outcome::Skip(d) => println!("SKIP criterion {n}: {d}"),
        }
    };

    let t = Instant::now();
    report(1, t, criterion_1());
    let t = Instant::now();
    report(2, t, criterion_2());
    let t = Instant::now();
    let (c3, v_max) = criterion_3();
    report(3, t, c3);
    let t = Instant::now();
    report(4, t, criterion_4(v_max));
    let t = Instant::now();
    report(5, t, criterion_5());
    let t = Instant::now();
    report(6, t, if tier >= Tier::Ci { criterion_6() } else { skip(6, "about 30 min on one core") });
    let t = Instant::now();
    report(7, t, criterion_7());
    let t = Instant::now();
    report(8, t, if tier >= Tier::Ci { criterion_8() } else { skip(8, "about 12 min on one core") });
    let t = Instant::now();
    report(9, t, if tier >= Tier::Ci { criterion_9(tier) } else { skip(9, "about 15 min on one core") });
    let t = Instant::now();
    report(10, t, if tier >= Tier::Ci { criterion_10(tier) } else { skip(10, "several hours on one core") });
    let t = Instant::now();
    report(11, t, criterion_11(dir.path()));

    if strict && failures > 0 {
        std::process::exit(1);
    }
}
