//! End-to-end acceptance checks. Runs as a plain binary so that the checks
//! execute one at a time and their wall-clock budgets mean something.
//!
//!     cargo test --release --test acceptance            # all
//!     cargo test --release --test acceptance -- 4 7    # a subset

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rabi_dpt::analysis::{
    cooling_scan, crossover_midpoint, extrapolate_saturation, fit_critical_power_law, fit_exponential_saturation,
    fit_loglog_slope, g_scan, r_scan, Readout, SaturationEstimate, ScanResult, CRITICAL_WINDOW,
};
use rabi_dpt::channels::{
    cooling_channel_exact, cooling_channel_lindblad, idle, lindblad_step, recoil_kick, unitary_step, ChannelMode,
    ChannelOptions, JumpOperatorSet, NoiseParams,
};
use rabi_dpt::config::ConfigFile;
use rabi_dpt::fockspace::{
    build_boson_ops, identity, tensor, thermal_state, DensityMatrix, FockCutoff, FockPopulations, SpinBosonOperator,
};
use rabi_dpt::linalg::{CMat, C64};
use rabi_dpt::model::{derive, frame_convert, h_qrm, khz_to_rad_per_us, CoolParams, DriveParams, FrameDirection};
use rabi_dpt::probe::{default_k_max, default_omega_probe, fit_populations, nbar_from_fit, probe_times, simulate_probe, DecayModel};
use rabi_dpt::protocol::{run, ExperimentConfig, InitialState};

/// Convergence tolerance in phonons.
const TOL: f64 = 0.05;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(name: &str) -> ConfigFile {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ConfigFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn experiment(name: &str) -> ExperimentConfig {
    config(name).experiment().unwrap()
}

fn axis(cfg: &ConfigFile, pick: impl Fn(&rabi_dpt::config::ScanSection) -> Option<&rabi_dpt::config::AxisSpec>) -> Vec<f64> {
    pick(cfg.scan.as_ref().expect("scan section")).expect("axis").values().unwrap()
}

fn within_budget(name: &str, spent: Duration, budget_s: f64) -> (bool, String) {
    let ok = spent.as_secs_f64() < budget_s;
    (ok, format!("{name} {:.1}s/{budget_s:.0}s", spent.as_secs_f64()))
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t0 = Instant::now();
    let out = f();
    (out, t0.elapsed())
}

fn fmt_points(scan: &ScanResult) -> String {
    scan.points
        .iter()
        .map(|p| match p.nbar {
            Some(n) => format!("{}:{n:.4}", p.axis),
            None => format!("{}:{:?}", p.axis, p.status),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn c1() -> Verdict {
    let ((thermal, ground), spent) = timed(|| (run(&experiment("fig2a.toml")).unwrap(), run(&experiment("fig2b.toml")).unwrap()));
    let (nt, ng) = (thermal.final_nbar(), ground.final_nbar());
    let (t_ok, t_msg) = within_budget("runtime", spent, 10.0);
    let ok = (nt - 3.2).abs() <= 0.4 && (ng - 3.2).abs() <= 0.4 && (nt - ng).abs() < 0.1 && t_ok;
    verdict(ok, format!("n̄ thermal={nt:.4} ground={ng:.4} (3.2±0.4, |Δ|<0.1) {t_msg}"))
}

fn c2() -> Verdict {
    let mut parts = Vec::new();
    let mut ok = true;
    for name in ["fig2a.toml", "fig2b.toml"] {
        let traj = run(&experiment(name)).unwrap();
        let fit = fit_exponential_saturation(&traj.nbar_series()).unwrap();
        let (a, _) = fit.param("A").unwrap();
        let (n0, n0_err) = fit.param("N0").unwrap();
        let (b, _) = fit.param("B").unwrap();
        let gap = (a * (-50.0 / n0).exp()).abs();
        ok &= gap <= TOL;
        parts.push(format!("{name}: N0={n0:.2}±{n0_err:.2} B={b:.4} |n̄(50)−B|={gap:.4}"));
    }
    verdict(ok, format!("{} (tol {TOL})", parts.join("; ")))
}

fn c3() -> Verdict {
    let cfg = config("fig3_R50.toml");
    let gs = axis(&cfg, |s| s.g.as_ref());
    let exact = cfg.experiment().unwrap();
    let mut lindblad = exact.clone();
    lindblad.channel_mode = ChannelMode::Lindblad;
    let ((se, sl), spent) =
        timed(|| (g_scan(&exact, &gs, &Readout::Direct).unwrap(), g_scan(&lindblad, &gs, &Readout::Direct).unwrap()));
    let mut worst = (0.0_f64, f64::NAN);
    let mut compared = 0;
    for (pe, pl) in se.points.iter().zip(&sl.points) {
        let (Some(ne), Some(nl)) = (pe.nbar, pl.nbar) else { continue };
        if !(pe.converged && pl.converged) || ne >= 10.0 || nl >= 10.0 {
            continue;
        }
        compared += 1;
        let rel = (ne - nl).abs() / nl;
        if rel > worst.0 {
            worst = (rel, pe.axis);
        }
    }
    let (t_ok, t_msg) = within_budget("runtime", spent, 120.0);
    verdict(
        worst.0 < 0.05 && compared > 0 && t_ok,
        format!("max |Δ|/n̄ = {:.3} at g={} over {compared} converged points (< 0.05) {t_msg}", worst.0, worst.1),
    )
}

fn saturation(scan: &ScanResult) -> Option<(f64, f64)> {
    match extrapolate_saturation(scan) {
        Ok(SaturationEstimate::Saturating { n_s, err, .. }) => Some((n_s, err)),
        _ => None,
    }
}

fn c4() -> Verdict {
    let cfg = config("sm_s1.toml");
    let rs = axis(&cfg, |s| s.r.as_ref());
    let g = cfg.scan.as_ref().and_then(|s| s.fixed_g).unwrap();
    let (scan, spent) = timed(|| r_scan(&cfg.experiment().unwrap(), &rs, g, &Readout::Direct).unwrap());
    let (t_ok, t_msg) = within_budget("runtime", spent, 600.0);
    match saturation(&scan) {
        Some((n_s, err)) => verdict(
            (n_s - 1.54).abs() <= 0.15 && t_ok,
            format!("g={g} N_s={n_s:.4}±{err:.3} (1.54±0.15) [{}] {t_msg}", fmt_points(&scan)),
        ),
        None => verdict(false, format!("g={g}: no saturating extrapolation [{}]", fmt_points(&scan))),
    }
}

fn loglog(scan: &ScanResult) -> Option<f64> {
    fit_loglog_slope(&scan.values()).ok().and_then(|f| f.param("slope")).map(|p| p.0)
}

fn c5() -> Verdict {
    let cfg = config("sm_s2.toml");
    let rs = axis(&cfg, |s| s.r.as_ref());
    let g = cfg.scan.as_ref().and_then(|s| s.fixed_g).unwrap();
    let (scan, spent) = timed(|| r_scan(&cfg.experiment().unwrap(), &rs, g, &Readout::Direct).unwrap());
    let slope = loglog(&scan).unwrap_or(f64::NAN);
    let (t_ok, t_msg) = within_budget("runtime", spent, 300.0);
    verdict(
        (slope - 0.843).abs() <= 0.10 && t_ok,
        format!("g={g} slope={slope:.4} (0.843±0.10) [{}] {t_msg}", fmt_points(&scan)),
    )
}

fn c6() -> Verdict {
    let cfg = config("sm_s1.toml");
    let rs = axis(&cfg, |s| s.r.as_ref());
    let base = cfg.experiment().unwrap();
    let gs: Vec<f64> = (0..18).map(|i| 1.0 + 0.02 * i as f64).collect();
    let (points, spent) = timed(|| {
        gs.iter()
            .filter_map(|&g| saturation(&r_scan(&base, &rs, g, &Readout::Direct).unwrap()).map(|(n, e)| (g, n, e)))
            .collect::<Vec<_>>()
    });
    let (t_ok, t_msg) = within_budget("runtime", spent, 3600.0);
    // Direct readout has no shot noise; the N_s errors are extrapolation
    // systematics, so the fit is unweighted.
    let unweighted: Vec<(f64, f64, f64)> = points.iter().map(|&(g, n, _)| (g, n, 0.0)).collect();
    let Ok(fit) = fit_critical_power_law(&unweighted, CRITICAL_WINDOW) else {
        return verdict(false, format!("critical fit failed on {} points {t_msg}", points.len()));
    };
    let (gc, gc_err) = fit.param("g_c").unwrap();
    let (nu, nu_err) = fit.param("nu").unwrap();
    verdict(
        (gc - 1.351).abs() <= 0.05 && (nu - 1.09).abs() <= 0.25 && t_ok,
        format!(
            "g_c={gc:.4}±{gc_err:.4} (1.351±0.05) ν={nu:.3}±{nu_err:.3} (1.09±0.25) from {}/{} points, {} in window [{}] {t_msg}",
            points.len(),
            gs.len(),
            fit.points,
            points.iter().map(|(g, n, e)| format!("{g:.2}:{n:.3}±{e:.3}")).collect::<Vec<_>>().join(" ")
        ),
    )
}

fn c7() -> Verdict {
    let cfg = config("sm_s1.toml");
    let rs = axis(&cfg, |s| s.r.as_ref());
    let g = 1.351;
    let (scan, spent) = timed(|| r_scan(&cfg.experiment().unwrap(), &rs, g, &Readout::Direct).unwrap());
    let slope = loglog(&scan).unwrap_or(f64::NAN);
    let (t_ok, t_msg) = within_budget("runtime", spent, 900.0);
    verdict(
        (slope - 0.53).abs() <= 0.08 && t_ok,
        format!("g={g} slope={slope:.4} (0.53±0.08) [{}] {t_msg}", fmt_points(&scan)),
    )
}

fn c8() -> Verdict {
    let cfg = config("fig4.toml");
    let ocs: Vec<f64> = axis(&cfg, |s| s.omega_c_khz.as_ref()).into_iter().map(khz_to_rad_per_us).collect();
    let gs = axis(&cfg, |s| s.g.as_ref());
    let (scans, spent) = timed(|| cooling_scan(&cfg.experiment().unwrap(), &ocs, &gs, &Readout::Direct).unwrap());
    let mids: Vec<Option<f64>> = scans.iter().map(crossover_midpoint).collect();
    let increasing = mids.iter().all(Option::is_some) && mids.windows(2).all(|w| w[0] < w[1]);
    let (t_ok, t_msg) = within_budget("runtime", spent, 300.0);
    let shown: Vec<String> = mids.iter().map(|m| m.map_or("none".into(), |v| format!("{v:.4}"))).collect();
    verdict(increasing && t_ok, format!("midpoints for Ω_c/2π = 10,15,20 kHz: {} {t_msg}", shown.join(", ")))
}

/// Number of sign changes in consecutive differences.
fn sign_changes(v: &[f64]) -> usize {
    let d: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).filter(|x| *x != 0.0).collect();
    d.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
}

fn c9() -> Verdict {
    let base = experiment("sm_s1.toml");
    let rs: Vec<f64> = (0..5).map(|i| 300.0 + 25.0 * i as f64).collect();
    let ((near, far), spent) = timed(|| {
        (r_scan(&base, &rs, 1.3, &Readout::Direct).unwrap(), r_scan(&base, &rs, 1.8, &Readout::Direct).unwrap())
    });
    let nv: Vec<f64> = near.values().iter().map(|p| p.1).collect();
    let fv: Vec<f64> = far.values().iter().map(|p| p.1).collect();
    let complete = nv.len() == rs.len() && fv.len() == rs.len();
    let (sn, sf) = (sign_changes(&nv), sign_changes(&fv));
    let (t_ok, t_msg) = within_budget("runtime", spent, 600.0);
    verdict(
        complete && sn >= 1 && sf == 0 && t_ok,
        format!(
            "g=1.3: {sn} sign change(s) [{}]; g=1.8: {sf} [{}] {t_msg}",
            fmt_points(&near),
            fmt_points(&far)
        ),
    )
}

fn c10() -> Verdict {
    let cfg = config("fig3_R50.toml");
    let clean = cfg.experiment().unwrap();
    let window = axis(&cfg, |s| s.g.as_ref());
    // Noise grid: the part of the window below the clean crossover where the
    // noisy runs still reach a steady state.
    let gs: Vec<f64> = (0..8).map(|i| ((0.8 + 0.1 * i as f64) * 1e9).round() / 1e9).collect();
    let mut deco = clean.clone();
    deco.noise = NoiseParams::decoherence();
    let mut recoil = clean.clone();
    recoil.noise = NoiseParams::decoherence_and_recoil();
    let ((reference, noisy), spent) = timed(|| {
        let reference = g_scan(&clean, &window, &Readout::Direct).unwrap();
        let noisy = [&deco, &recoil].map(|c| g_scan(c, &gs, &Readout::Direct).unwrap());
        (reference, noisy)
    });
    let crossover = crossover_midpoint(&reference).unwrap_or(f64::NAN);
    let clean_at = |g: f64| reference.points.iter().find(|p| (p.axis - g).abs() < 1e-9).and_then(|p| p.nbar);
    let mut raised = true;
    let mut worst = 0.0_f64;
    let mut rows = Vec::new();
    for (i, &g) in gs.iter().enumerate() {
        let (Some(a), Some(b), Some(c)) = (clean_at(g), noisy[0].points[i].nbar, noisy[1].points[i].nbar) else {
            raised = false;
            continue;
        };
        raised &= b > a && c > b;
        if g < crossover {
            worst = worst.max((b - a) / a).max((c - b) / b);
        }
        rows.push(format!("{g}:{a:.4}/{b:.4}/{c:.4}"));
    }
    let (t_ok, t_msg) = within_budget("runtime", spent, 180.0);
    verdict(
        raised && worst < 0.3 && t_ok,
        format!(
            "clean/deco/recoil ordered at every g: {raised}; largest increment below crossover g={crossover:.3}: {:.1}% (< 30%) [{}] {t_msg}",
            100.0 * worst,
            rows.join(" ")
        ),
    )
}

fn c11() -> Verdict {
    let (out, spent) = timed(|| {
        let traj = run(&experiment("fig2a.toml")).unwrap();
        let direct = traj.final_nbar();
        let omega = default_omega_probe();
        let k_max = default_k_max(&traj.final_state);
        let times = probe_times(omega, k_max);
        let shots = [1_000_u64, 10_000, 100_000];
        let res: Vec<(f64, f64)> = shots
            .iter()
            .map(|&s| {
                let scan = simulate_probe(&traj.final_state, omega, &times, Some(s), 11 + s).unwrap();
                nbar_from_fit(&fit_populations(&scan, k_max, DecayModel::Sqrt).unwrap())
            })
            .collect();
        (direct, shots, res)
    });
    let (direct, shots, res) = out;
    let agree = res.iter().all(|&(n, s)| (n - direct).abs() <= f64::max(0.1, 2.0 * s));
    let pts: Vec<(f64, f64)> = shots.iter().zip(&res).map(|(&n, &(_, s))| (n as f64, s)).collect();
    let slope = fit_loglog_slope(&pts).ok().and_then(|f| f.param("slope")).map_or(f64::NAN, |p| p.0);
    let (t_ok, t_msg) = within_budget("runtime", spent, 60.0);
    let shown: Vec<String> = shots.iter().zip(&res).map(|(n, (v, s))| format!("{n}:{v:.4}±{s:.4}")).collect();
    verdict(
        agree && (slope + 0.5).abs() <= 0.1 && t_ok,
        format!("direct={direct:.4} probe {}; dlnσ/dln(shots)={slope:.3} (−0.5±0.1) {t_msg}", shown.join(" ")),
    )
}

fn mixed_state(cutoff: FockCutoff) -> DensityMatrix {
    // Spin coherence plus a thermal boson, rotated by the coupling.
    let boson = thermal_state(0.8, cutoff, 1e-4).unwrap();
    let spin = CMat::from_shape_vec((2, 2), vec![C64::new(0.6, 0.0), C64::new(0.2, 0.1), C64::new(0.2, -0.1), C64::new(0.4, 0.0)]).unwrap();
    let rho = DensityMatrix::product(&spin, &boson).unwrap();
    let d = derive(&DriveParams::from_khz(26.0, 24.0, 9.0, 20.0)).unwrap();
    unitary_step(&rho, &h_qrm(&d, cutoff), 7.0).unwrap()
}

fn c12() -> Verdict {
    let (checks, spent) = timed(|| {
        let mut checks: Vec<(&str, bool)> = Vec::new();
        let cutoff = FockCutoff::new(12).unwrap();
        let d = derive(&DriveParams::from_khz(26.0, 24.0, 9.0, 20.0)).unwrap();
        let cool = CoolParams::from_khz(20.0, 5.0, 13.0);
        let opts = ChannelOptions::default();
        let rho = mixed_state(cutoff);

        let noise = NoiseParams { recoil_enabled: true, ..NoiseParams::decoherence() };
        let valid = [
            cooling_channel_exact(&rho, &cool, &d, 3.0, &noise, &opts).unwrap().0,
            cooling_channel_lindblad(&rho, &cool, &d, 3.0, &noise, &opts).unwrap().0,
            idle(&rho, 8.0, &d, &noise, &opts).unwrap(),
            recoil_kick(&rho, 0.4, &noise).unwrap(),
            unitary_step(&rho, &h_qrm(&d, cutoff), 20.0).unwrap(),
        ]
        .iter()
        .all(|r| r.validate().is_ok());
        checks.push(("valid states after each channel", valid));

        let b = build_boson_ops(cutoff);
        let kappa: f64 = 0.3;
        let t = 2.5;
        let damp = JumpOperatorSet::new(vec![tensor(&identity(2), &b.annihilation.mapv(|z| z * kappa.sqrt())).unwrap()]);
        let zero = SpinBosonOperator::zeros(cutoff);
        let fock3 = DensityMatrix::basis(cutoff, 0, 3);
        let damped = lindblad_step(&fock3, &zero, &damp, t, None).unwrap();
        checks.push(("damping oracle", (damped.mean_phonon_number() - 3.0 * (-kappa * t).exp()).abs() < 1e-4));

        let gamma: f64 = 0.2;
        let dephase = JumpOperatorSet::new(vec![tensor(&identity(2), &b.number.mapv(|z| z * (2.0 * gamma).sqrt())).unwrap()]);
        let mut ket = ndarray::Array1::<C64>::zeros(cutoff.dim());
        ket[cutoff.index(0, 0)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        ket[cutoff.index(0, 1)] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        let sup = DensityMatrix::pure(&ket).unwrap();
        let dephased = lindblad_step(&sup, &zero, &dephase, t, None).unwrap();
        let coh = dephased.matrix()[[cutoff.index(0, 0), cutoff.index(0, 1)]].norm();
        checks.push(("dephasing oracle", (coh - 0.5 * (-gamma * t).exp()).abs() < 1e-4));

        let there = frame_convert(&rho, 37.5, &d, FrameDirection::ToCoolingFrame);
        let back = frame_convert(&there, 37.5, &d, FrameDirection::ToDriveFrame);
        let diff = (back.matrix() - rho.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        checks.push(("frame round trip", diff < 1e-12));

        let mut still = ExperimentConfig::new(
            DriveParams::from_khz(26.0, 24.0, 0.0, 20.0),
            CoolParams::from_khz(0.0, 5.0, 13.0),
        );
        still.initial = InitialState::DopplerThermal { nbar: 2.0 };
        still.max_cycles = 30;
        let traj = run(&still).unwrap();
        let drift = traj.nbar_series().iter().map(|n| (n - traj.initial_nbar).abs()).fold(0.0, f64::max);
        checks.push(("λ=Ω_c=0 invariance", drift < 1e-9));

        let fig2 = experiment("fig2b.toml");
        let bytes = || {
            let mut buf = Vec::new();
            run(&fig2).unwrap().write_csv(&mut buf).unwrap();
            buf
        };
        checks.push(("determinism", bytes() == bytes()));

        // Deterministic pseudo-noise keeps the round trip reproducible.
        let truth = (3.0, 15.0, 3.2);
        let series: Vec<f64> = (1..=200)
            .map(|n| {
                let n = n as f64;
                truth.0 * (-n / truth.1).exp() + truth.2 + 0.01 * (n * 12.9898).sin()
            })
            .collect();
        let fit = fit_exponential_saturation(&series).unwrap();
        let rt = [("A", truth.0), ("N0", truth.1), ("B", truth.2)]
            .iter()
            .all(|(k, v)| fit.param(k).is_some_and(|(p, e)| (p - v).abs() <= 2.0 * e.max(1e-12)));
        checks.push(("fit round trip", rt));
        checks
    });
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let (t_ok, t_msg) = within_budget("runtime", spent, 60.0);
    verdict(
        failed.is_empty() && t_ok,
        format!("{}/{} checks ({}) {t_msg}", checks.len() - failed.len(), checks.len(), if failed.is_empty() { "all ok".into() } else { failed.join(", ") }),
    )
}

fn main() {
    let criteria: [(usize, fn() -> Verdict); 12] =
        [(1, c1), (2, c2), (3, c3), (4, c4), (5, c5), (6, c6), (7, c7), (8, c8), (9, c9), (10, c10), (11, c11), (12, c12)];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    // libtest-style flags such as --list are not supported; a bare listing
    // request runs nothing.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failures = Vec::new();
    for (id, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let v = check();
        println!(
            "criterion {id:>2}: {} {} [{:.1}s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t0.elapsed().as_secs_f64()
        );
        if !v.pass {
            failures.push(id);
        }
    }
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
