//! End-to-end acceptance run at desk scale (N = 12, 20 disorder samples).
//! Prints one PASS/FAIL line per criterion.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use common::checks;
use thermalize::hamiltonian::ChainConfig;
use thermalize::observables::page_value;
use thermalize::runner::{
    scenario_preset, ExperimentConfig, InitialState, LindbladMethod, Observable, ResultTable,
    RunOutput, Runner, Scenario,
};
use thermalize::thermal::thermal_state;

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn rows_for(t: &ResultTable, theta: f64, phi: f64) -> Vec<usize> {
    let th = t.column("theta0").unwrap();
    let ph = t.column("phi0").unwrap();
    (0..t.n_rows())
        .filter(|&r| (th[r] - theta).abs() < 1e-12 && (ph[r] - phi).abs() < 1e-12)
        .collect()
}

fn series(t: &ResultTable, theta: f64, phi: f64, col: &str) -> Vec<(f64, f64)> {
    let ts = t.column("t_ns").unwrap();
    let v = t.column(col).unwrap();
    rows_for(t, theta, phi)
        .into_iter()
        .map(|r| (ts[r], v[r]))
        .collect()
}

fn sign_changes(v: &[f64]) -> usize {
    let signs: Vec<f64> = v
        .iter()
        .filter(|x| **x != 0.0)
        .map(|x| x.signum())
        .collect();
    signs.windows(2).filter(|w| w[0] != w[1]).count()
}

fn criterion_1(runner: &Runner) -> Verdict {
    let started = Instant::now();
    let mut pi4 = Vec::new();
    let mut pole = Vec::new();
    for g in [6.0, 6.7] {
        let mut cfg = scenario_preset("effective-temperature").unwrap();
        cfg.chain.field_g_mean = g;
        let out = runner.run(&cfg).unwrap();
        let t = out.table("beta-solve").unwrap();
        let jb = t.column("j_beta").unwrap();
        pi4.push((g, jb[rows_for(t, PI / 2.0, PI / 4.0)[0]]));
        pole.push((g, jb[rows_for(t, PI, 0.0)[0]]));
    }
    let secs = started.elapsed().as_secs_f64();
    let hit = pi4.iter().any(|(_, v)| (v + 1.034).abs() <= 0.05);
    let zero = pole.iter().all(|(_, v)| v.abs() <= 1e-8);
    Verdict {
        id: 1,
        name: "effective temperature",
        pass: hit && zero && secs < 120.0,
        detail: format!(
            "Jβ(π/2,π/4) = {:.4} (g=6.0), {:.4} (g=6.7); Jβ(π,0) = {:.1e}, {:.1e}; {secs:.0} s",
            pi4[0].1, pi4[1].1, pole[0].1, pole[1].1
        ),
    }
}

fn quench_config() -> ExperimentConfig {
    let mut cfg = scenario_preset("relaxation-quench").unwrap();
    cfg.observables = vec![Observable::SigmaZ, Observable::Entropy];
    cfg
}

fn criterion_2(out: &RunOutput) -> Verdict {
    let page = page_value(12).unwrap();
    let t = out.table("quench").unwrap();
    let peak = series(t, PI, 0.0, "entropy")
        .into_iter()
        .filter(|(t, _)| (100.0..=600.0).contains(t))
        .map(|x| x.1)
        .fold(f64::NEG_INFINITY, f64::max);
    Verdict {
        id: 2,
        name: "Page value",
        pass: (page - 0.692).abs() <= 0.001 && peak >= 0.95 * page,
        detail: format!(
            "page_value(12) = {page:.5}; max EE(π,0) on [100,600] ns = {peak:.4} (needs ≥ {:.4})",
            0.95 * page
        ),
    }
}

fn criterion_3(out: &RunOutput, secs: f64) -> Verdict {
    let t = out.table("quench").unwrap();
    let late_max = |theta: f64, phi: f64| {
        series(t, theta, phi, "sigma_z")
            .into_iter()
            .filter(|(t, _)| (150.0..=600.0).contains(t))
            .map(|x| x.1.abs())
            .fold(0.0, f64::max)
    };
    let pole = late_max(PI, 0.0);
    let edge = late_max(PI / 2.0, 8.0 * PI / 5.0);
    let weak: Vec<f64> = series(t, PI / 2.0, PI / 4.0, "sigma_z")
        .into_iter()
        .filter(|(t, _)| *t <= 400.0)
        .map(|x| x.1)
        .collect();
    let changes = sign_changes(&weak);
    let amp = weak.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Verdict {
        id: 3,
        name: "strong vs weak signature",
        pass: pole < 0.1 && edge < 0.1 && changes >= 3 && amp > 0.25 && secs < 300.0,
        detail: format!(
            "late max |σz|: (π,0) {pole:.4}, (π/2,8π/5) {edge:.4}; (π/2,π/4) {changes} sign changes, amplitude {amp:.3}; {secs:.0} s with diagonalization"
        ),
    }
}

fn criterion_4(runner: &Runner, diag_secs: f64) -> Verdict {
    let started = Instant::now();
    let out = runner
        .run(&scenario_preset("entropy-map").unwrap())
        .unwrap();
    let secs = started.elapsed().as_secs_f64() + diag_secs;
    let t = out.table("sweep").unwrap();
    let th = t.column("theta0").unwrap();
    let ph = t.column("phi0").unwrap();
    let ee = t.column("entropy_avg").unwrap();
    let slice: Vec<(f64, f64)> = (0..t.n_rows())
        .filter(|&r| (th[r] - PI / 2.0).abs() < 1e-12)
        .map(|r| (ph[r], ee[r]))
        .collect();
    let step = 2.0 * PI / 32.0;
    let (phi_min, v_min) =
        slice.iter().copied().fold(
            (f64::NAN, f64::INFINITY),
            |a, x| if x.1 < a.1 { x } else { a },
        );
    let v_max = slice.iter().fold(f64::NEG_INFINITY, |a, x| a.max(x.1));
    let band_low = slice
        .iter()
        .filter(|(p, _)| (1.3 * PI..=1.9 * PI).contains(p))
        .fold(f64::INFINITY, |a, x| a.min(x.1));
    let at_min = (phi_min - PI / 2.0).abs() <= step + 1e-12;
    Verdict {
        id: 4,
        name: "sweep structure",
        pass: at_min && band_low >= 0.95 * v_max && secs < 3600.0,
        detail: format!(
            "θ=π/2 slice: min {v_min:.4} at φ = {:.3}π, max {v_max:.4}, lowest on [1.3π,1.9π] {band_low:.4} ({:.1}% of max); ≤ {secs:.0} s",
            phi_min / PI,
            100.0 * band_low / v_max
        ),
    }
}

fn criterion_5(runner: &Runner) -> Verdict {
    let mut cfg = scenario_preset("thermal-entanglement").unwrap();
    cfg.betas.push(-1.034);
    let out = runner.run(&cfg).unwrap();
    let t = out.table("thermal-curve").unwrap();
    let jb = t.column("j_beta").unwrap();
    let c = t.column("concurrence").unwrap();
    let inner: Vec<(f64, f64)> = jb
        .iter()
        .zip(c)
        .filter(|(b, _)| (-0.75..=0.88).contains(*b))
        .map(|(b, v)| (*b, *v))
        .collect();
    let largest_inner = inner.iter().fold(0.0f64, |a, x| a.max(x.1.abs()));
    let at_target = jb
        .iter()
        .position(|b| (b + 1.034).abs() < 1e-12)
        .map(|r| c[r])
        .unwrap();
    let edges = |lo: bool| {
        let mut pts: Vec<f64> = jb
            .iter()
            .zip(c)
            .filter(|(b, v)| **v > 0.0 && if lo { **b < 0.0 } else { **b > 0.0 })
            .map(|(b, _)| *b)
            .collect();
        pts.sort_by(f64::total_cmp);
        if lo {
            pts.last().copied()
        } else {
            pts.first().copied()
        }
    };
    Verdict {
        id: 5,
        name: "thermal concurrence plateau",
        pass: !inner.is_empty() && largest_inner == 0.0 && at_target > 0.0,
        detail: format!(
            "{} grid points in [-0.75, 0.88], largest value {largest_inner:.1e}; C(Jβ=-1.034) = {at_target:.4}; nonzero nearest the plateau at Jβ = {:?} and {:?}",
            inner.len(),
            edges(true),
            edges(false)
        ),
    }
}

fn criterion_6(runner: &Runner) -> Verdict {
    let out = runner
        .run(&scenario_preset("level-statistics").unwrap())
        .unwrap();
    let r = out.summary("mean_r").unwrap();
    let se = out.summary("mean_r_se").unwrap();
    let tv = out.summary("tv_distance_goe").unwrap();
    Verdict {
        id: 6,
        name: "level statistics",
        pass: (0.51..=0.55).contains(&r) && tv < 0.08,
        detail: format!(
            "mean r = {r:.4} ± {se:.4} over {} ratios; TV distance to GOE = {tv:.4}",
            out.summary("n_ratios").unwrap()
        ),
    }
}

fn criterion_7() -> Verdict {
    let ff = checks::free_fermion_error(8);
    let prop = checks::propagation_error();
    let traj = checks::trajectory_comparison(2000, 99);
    let worst_z = traj
        .iter()
        .map(|(m, w, se)| (m - w).abs() / se)
        .fold(0.0, f64::max);
    let brute = (0..3).map(checks::brute_force_error).fold(0.0, f64::max);
    Verdict {
        id: 7,
        name: "oracle equivalences",
        pass: ff < 1e-9 && prop < 1e-8 && worst_z < 3.0 && brute < 1e-12,
        detail: format!(
            "(a) {ff:.1e} (b) {prop:.1e} (c) worst |Δ|/SE = {worst_z:.2} over {} comparisons (d) {brute:.1e}",
            traj.len()
        ),
    }
}

/// Pairs of (summary key, bound); positivity is a lower bound.
const BOUNDS: [(&str, f64); 4] = [
    ("max_norm_drift", 1e-10),
    ("max_energy_drift", 1e-8),
    ("max_trace_drift", 1e-8),
    ("max_hermitian_deviation", 1e-10),
];
const POSITIVITY: f64 = -1e-10;

fn check_summary(out: &RunOutput, label: &str, failures: &mut Vec<String>, seen: &mut usize) {
    for (key, bound) in BOUNDS {
        if let Some(v) = out.summary(key) {
            *seen += 1;
            if !(v <= bound) {
                failures.push(format!("{label}: {key} = {v:e}"));
            }
        }
    }
    if let Some(v) = out.summary("min_density_eigenvalue") {
        *seen += 1;
        if !(v >= POSITIVITY) {
            failures.push(format!("{label}: min_density_eigenvalue = {v:e}"));
        }
    }
}

fn six_site(scenario: Scenario) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        scenario,
        chain: ChainConfig {
            n_sites: 6,
            ..ChainConfig::default()
        },
        n_disorder_samples: 4,
        n_trajectories: 100,
        observables: vec![
            Observable::SigmaZ,
            Observable::Entropy,
            Observable::TraceDistance,
            Observable::Concurrence,
        ],
        ..ExperimentConfig::default()
    };
    cfg.initial.states = ["south-pole", "equator-8pi5", "equator-pi4"]
        .iter()
        .map(|s| InitialState::Preset(s.to_string()))
        .collect();
    cfg.initial.grid.n_theta = 5;
    cfg.initial.grid.n_phi = 9;
    cfg
}

fn criterion_8(runner: &Runner, n12: &[(&str, &RunOutput)]) -> Verdict {
    let mut failures = Vec::new();
    let mut seen = 0;
    let small = Runner::new();
    for scenario in [
        Scenario::Quench,
        Scenario::Sweep,
        Scenario::SpectrumStats,
        Scenario::ThermalCurve,
        Scenario::BetaSolve,
        Scenario::LindbladQuench,
    ] {
        let mut cfg = six_site(scenario);
        let out = small.run(&cfg).unwrap();
        check_summary(&out, scenario.name(), &mut failures, &mut seen);
        if scenario == Scenario::LindbladQuench {
            cfg.lindblad_method = LindbladMethod::Trajectories;
            let out = small.run(&cfg).unwrap();
            check_summary(
                &out,
                "lindblad-quench (trajectories)",
                &mut failures,
                &mut seen,
            );
        }
    }
    let spectral = |chain: &ChainConfig, label: &str, failures: &mut Vec<String>| {
        let ctx = runner.sample(chain, 0).unwrap();
        let res = ctx.spec.residual(&ctx.h).unwrap();
        let orth = ctx.spec.orthonormality_error();
        if !(res < 1e-8 && orth < 1e-10) {
            failures.push(format!(
                "{label}: residual {res:e}, orthonormality {orth:e}"
            ));
        }
        for jb in [-2.0, -1.034, 0.0, 0.5, 2.0] {
            let beta = jb / chain.mean_coupling_angular().unwrap();
            let rho = thermal_state(&ctx.spec, beta).unwrap();
            let e = rho.elements();
            let herm = e
                .iter()
                .zip(e.t().iter())
                .map(|(a, b)| (a - b.conj()).norm())
                .fold(0.0, f64::max);
            let tr = (rho.trace() - 1.0).abs();
            if !(tr < 1e-12 && herm < 1e-10) {
                failures.push(format!(
                    "{label}: thermal state at Jβ={jb}: trace {tr:e}, hermiticity {herm:e}"
                ));
            }
            if n_small(chain) {
                let min = rho
                    .eigenvalues()
                    .unwrap()
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
                if min < POSITIVITY {
                    failures.push(format!("{label}: thermal eigenvalue {min:e}"));
                }
            }
        }
    };
    spectral(
        &six_site(Scenario::Quench).chain,
        "N=6 spectrum",
        &mut failures,
    );
    spectral(&ChainConfig::default(), "N=12 spectrum", &mut failures);
    for (label, out) in n12 {
        check_summary(out, label, &mut failures, &mut seen);
    }
    Verdict {
        id: 8,
        name: "conservation suite",
        pass: failures.is_empty() && seen > 0,
        detail: if failures.is_empty() {
            format!("{seen} recorded drift/positivity figures within bounds, spectra and thermal states checked at N = 6 and 12")
        } else {
            failures.join("; ")
        },
    }
}

fn n_small(chain: &ChainConfig) -> bool {
    chain.n_sites <= 8
}

fn criterion_9(runner: &Runner) -> (Verdict, RunOutput) {
    let mut cfg = scenario_preset("decohered-quench").unwrap();
    cfg.n_trajectories = 200;
    let out = runner.run(&cfg).unwrap();
    let t = out.table("lindblad-quench").unwrap();
    let col = |name: &str| series(t, PI / 2.0, PI / 4.0, name);
    let last = |name: &str| col(name).last().unwrap().1;
    let gap = last("entropy") - last("entropy_closed");
    let gap_se = (last("entropy_se").powi(2) + last("entropy_closed_se").powi(2)).sqrt();
    let open = col("concurrence");
    let closed = col("concurrence_closed");
    let violations: Vec<f64> = open
        .iter()
        .zip(&closed)
        .filter(|(o, _)| o.0 >= 200.0)
        .filter(|(o, c)| o.1 > c.1)
        .map(|(o, _)| o.0)
        .collect();
    let c_gap = last("concurrence_closed") - last("concurrence");
    let c_se = (last("concurrence_se").powi(2) + last("concurrence_closed_se").powi(2)).sqrt();
    (
        Verdict {
            id: 9,
            name: "decoherence effect direction",
            pass: gap > 3.0 * gap_se && violations.is_empty(),
            detail: format!(
                "EE(600 ns) open − closed = {gap:.4} ± {gap_se:.4}; concurrence above closed at {} times ≥ 200 ns {violations:?}; C gap at 600 ns = {c_gap:.4} ± {c_se:.4}; {:.2} jumps per trajectory",
                violations.len(),
                out.summary("mean_jumps_per_trajectory").unwrap_or(f64::NAN)
            ),
        },
        out,
    )
}

#[test]
fn acceptance() {
    let runner = Runner::with_cache();
    let mut verdicts = Vec::new();
    // written past the test harness capture so the verdicts always show
    let report = |v: &Verdict| {
        let mut out = std::io::stdout().lock();
        writeln!(
            out,
            "{} criterion {} ({}): {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.name,
            v.detail
        )
        .unwrap();
        out.flush().unwrap();
    };

    let v = criterion_1(&runner);
    report(&v);
    verdicts.push(v);

    let started = Instant::now();
    let quench = runner.run(&quench_config()).unwrap();
    let quench_secs = started.elapsed().as_secs_f64();
    for v in [criterion_2(&quench), criterion_3(&quench, quench_secs)] {
        report(&v);
        verdicts.push(v);
    }
    for v in [
        criterion_4(&runner, quench_secs),
        criterion_5(&runner),
        criterion_6(&runner),
        criterion_7(),
    ] {
        report(&v);
        verdicts.push(v);
    }
    let (v9, decohered) = criterion_9(&runner);
    let v8 = criterion_8(
        &runner,
        &[
            ("N=12 quench", &quench),
            ("N=12 decohered quench", &decohered),
        ],
    );
    report(&v8);
    report(&v9);
    verdicts.push(v8);
    verdicts.push(v9);

    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn quench_config_matches_the_named_states() {
    let cfg = quench_config();
    assert_eq!(cfg.chain.n_sites, 12);
    assert_eq!(cfg.n_disorder_samples, 20);
    let states = cfg.states().unwrap();
    assert_eq!(states.len(), 3);
}
