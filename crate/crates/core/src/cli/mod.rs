//! Command-line front end. `main_with_args` returns the process exit code:
//! 0 success, 2 config or schema error, 3 simulation abort, 4 fit failure.

mod manifest;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use manifest::{sha256_file, OutputFile, RunManifest};
use manifest::ManifestBuilder;

use crate::analysis::{
    cooling_scan, extrapolate_saturation, fit_critical_power_law, fit_exponential_saturation, fit_loglog_slope, g_scan,
    r_scan, FitResult, PointStatus, Readout, ScanAxis, ScanPoint, ScanResult,
};
use crate::channels::ChannelMode;
use crate::config::{AxisSpec, ConfigFile, NoisePreset, ScanSection};
use crate::error::{DptError, Result};
use crate::fockspace::FockPopulations;
use crate::model::{khz_to_rad_per_us, rad_per_us_to_khz};
use crate::parallel::with_threads;
use crate::probe::{default_k_max, fit_populations, nbar_from_fit, probe_times, simulate_probe, ProbeScan};
use crate::protocol::run;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SIMULATION: i32 = 3;
pub const EXIT_FIT: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "rabi-dpt", version, about = "Drive/dissipate simulator for the dissipative quantum Rabi model")]
pub struct Cli {
    /// TOML config, or a manifest.json from an earlier run
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker cap for scans (default: logical cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Read n̄ through the emulated blue-sideband probe
    #[arg(long, global = true)]
    pub probe: bool,
    #[arg(long, global = true, value_parser = parse_channel)]
    pub channel: Option<ChannelMode>,
    #[arg(long, global = true, value_parser = parse_noise)]
    pub noise: Option<NoisePreset>,
    #[command(subcommand)]
    pub command: Command,
}

fn parse_channel(s: &str) -> std::result::Result<ChannelMode, String> {
    s.parse().map_err(|e: DptError| e.to_string())
}

fn parse_noise(s: &str) -> std::result::Result<NoisePreset, String> {
    s.parse().map_err(|e: DptError| e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanKind {
    G,
    #[value(name = "R", alias = "r")]
    R,
    Cooling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Saturation,
    PowerLawCritical,
    Loglog,
    Populations,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One trajectory: trajectory.csv and manifest.json
    Run {
        /// Also fit n̄ = A e^{-N/N0} + B and write fit.json
        #[arg(long)]
        fit: bool,
    },
    /// Sweep g, R or the cooling strength
    Scan {
        kind: ScanKind,
        /// Axis values: `a,b,c` or `start:stop:count` (g, R, or Ω_c in kHz)
        #[arg(long)]
        values: Option<String>,
        /// g held fixed during an R scan
        #[arg(long)]
        fixed_g: Option<f64>,
        /// g axis of each cooling scan
        #[arg(long)]
        g_values: Option<String>,
    },
    /// Fit a data file and write fit.json
    Fit {
        model: FitModel,
        #[arg(long)]
        data: PathBuf,
        /// Highest Fock level for `populations`
        #[arg(long)]
        k_max: Option<usize>,
        /// Probe Rabi frequency in kHz for `populations` (else from --config, else 10)
        #[arg(long)]
        omega_khz: Option<f64>,
    },
    /// Steady state, emulated probe scan and population fit against the direct n̄
    ProbeDemo,
}

pub fn exit_code(e: &DptError) -> i32 {
    match e {
        DptError::Config(_) | DptError::Schema(_) | DptError::InvalidParameter(_) => EXIT_CONFIG,
        DptError::Fit(_) => EXIT_FIT,
        _ => EXIT_SIMULATION,
    }
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let command: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let threads = cli.threads;
    match with_threads(threads, || dispatch(&cli, command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, command: Vec<String>) -> Result<()> {
    std::fs::create_dir_all(&cli.out_dir)
        .map_err(|e| DptError::Config(format!("cannot create {}: {e}", cli.out_dir.display())))?;
    match &cli.command {
        Command::Run { fit } => cmd_run(cli, command, *fit),
        Command::Scan { kind, values, fixed_g, g_values } => {
            cmd_scan(cli, command, *kind, values.as_deref(), *fixed_g, g_values.as_deref())
        }
        Command::Fit { model, data, k_max, omega_khz } => cmd_fit(cli, *model, data, *k_max, *omega_khz),
        Command::ProbeDemo => cmd_probe_demo(cli, command),
    }
}

fn load_config(cli: &Cli) -> Result<ConfigFile> {
    let path = cli.config.as_ref().ok_or_else(|| DptError::Config("--config is required".into()))?;
    let mut cfg = ConfigFile::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(c) = cli.channel {
        cfg.run.channel = c;
    }
    if let Some(n) = cli.noise {
        cfg.noise.preset = n;
    }
    cfg.experiment()?;
    Ok(cfg)
}

fn readout(cli: &Cli, cfg: &ConfigFile) -> Readout {
    if cli.probe {
        Readout::Probe { omega_probe: cfg.probe.omega(), shots: cfg.probe.shots, decay: cfg.probe.decay }
    } else {
        Readout::Direct
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn cmd_run(cli: &Cli, command: Vec<String>, with_fit: bool) -> Result<()> {
    let cfg = load_config(cli)?;
    let exp = cfg.experiment()?;
    let mut manifest = ManifestBuilder::new(command, cfg);
    let traj = run(&exp)?;
    let csv_path = cli.out_dir.join("trajectory.csv");
    traj.write_csv(std::fs::File::create(&csv_path)?)?;
    manifest.add(csv_path);
    println!(
        "cycles={} final_nbar={:.6} converged={} n_max={}",
        traj.cycles_run,
        traj.final_nbar(),
        traj.converged,
        traj.n_max
    );
    if cli.probe {
        let (n, s) = crate::analysis::read_out(&traj, &readout(cli, manifest.config_mut()), exp.seed)?;
        println!("probe_nbar={n:.6} sigma={:.6}", s.unwrap_or(0.0));
    }
    if with_fit {
        let fit = fit_exponential_saturation(&traj.nbar_series())?;
        let path = cli.out_dir.join("fit.json");
        write_json(&path, &fit)?;
        manifest.add(path);
        let (b, eb) = fit.param("B").unwrap_or_default();
        let (n0, en0) = fit.param("N0").unwrap_or_default();
        println!("fit B={b:.4}±{eb:.4} N0={n0:.3}±{en0:.3}");
    }
    manifest.write(&cli.out_dir)?;
    Ok(())
}

fn axis_values(flag: Option<&str>, from_config: Option<&AxisSpec>, what: &str) -> Result<AxisSpec> {
    match (flag, from_config) {
        (Some(s), _) => AxisSpec::parse(s),
        (None, Some(a)) => Ok(a.clone()),
        (None, None) => Err(DptError::Config(format!("no {what} values: pass --values or set scan.{what}"))),
    }
}

#[derive(Serialize)]
struct ScanReport<'a> {
    scans: &'a [ScanResult],
    config: &'a ConfigFile,
}

pub fn cmd_scan(
    cli: &Cli,
    command: Vec<String>,
    kind: ScanKind,
    values: Option<&str>,
    fixed_g: Option<f64>,
    g_values: Option<&str>,
) -> Result<()> {
    let cfg = load_config(cli)?;
    let base = cfg.experiment()?;
    let ro = readout(cli, &cfg);
    let section = cfg.scan.clone().unwrap_or_default();
    let mut resolved = ScanSection { fixed_g: None, ..Default::default() };
    let scans: Vec<ScanResult> = match kind {
        ScanKind::G => {
            let spec = axis_values(values, section.g.as_ref(), "g")?;
            let gs = spec.values()?;
            resolved.g = Some(spec);
            vec![g_scan(&base, &gs, &ro)?]
        }
        ScanKind::R => {
            let spec = axis_values(values, section.r.as_ref(), "r")?;
            let rs = spec.values()?;
            let g = fixed_g
                .or(section.fixed_g)
                .or(cfg.drive.g)
                .unwrap_or_else(|| base.drive.coupling());
            resolved.r = Some(spec);
            resolved.fixed_g = Some(g);
            vec![r_scan(&base, &rs, g, &ro)?]
        }
        ScanKind::Cooling => {
            let spec = axis_values(values, section.omega_c_khz.as_ref(), "omega_c_khz")?;
            let gspec = axis_values(g_values, section.g.as_ref(), "g")?;
            let ocs: Vec<f64> = spec.values()?.into_iter().map(khz_to_rad_per_us).collect();
            let gs = gspec.values()?;
            resolved.omega_c_khz = Some(spec);
            resolved.g = Some(gspec);
            cooling_scan(&base, &ocs, &gs, &ro)?
        }
    };
    let mut manifest = ManifestBuilder::new(command, cfg);
    manifest.config_mut().scan = Some(resolved);
    let name = match kind {
        ScanKind::G => "g",
        ScanKind::R => "R",
        ScanKind::Cooling => "cooling",
    };
    for s in &scans {
        let file = match (kind, s.fixed) {
            (ScanKind::Cooling, Some(oc)) => format!("scan_cooling_{}khz.csv", rad_per_us_to_khz(oc).round()),
            _ => format!("scan_{name}.csv"),
        };
        let path = cli.out_dir.join(file);
        s.write_csv(std::fs::File::create(&path)?)?;
        manifest.add(path);
        for p in &s.points {
            println!("{}", describe_point(s.axis, p));
        }
    }
    let json = cli.out_dir.join(format!("scan_{name}.json"));
    write_json(&json, &ScanReport { scans: &scans, config: manifest.config_mut() })?;
    manifest.add(json);
    manifest.write(&cli.out_dir)?;
    Ok(())
}

fn describe_point(axis: ScanAxis, p: &ScanPoint) -> String {
    let n = p.nbar.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into());
    let status = match &p.status {
        PointStatus::Ok => String::new(),
        PointStatus::Diverging => " diverging".into(),
        PointStatus::Failed(m) => format!(" failed: {m}"),
    };
    format!("{}={} nbar={n} cycles={}{status}", axis.name(), p.axis, p.cycles)
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let file = std::fs::File::open(path).map_err(|e| DptError::Schema(format!("cannot read {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| DptError::Schema(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(DptError::Schema(format!("{}: empty file", path.display())));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DptError::Schema(format!("{}: {e}", path.display())))?;
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(DptError::Schema(format!("{}: no data rows", path.display())));
    }
    Ok((headers, rows))
}

fn column(headers: &[String], rows: &[Vec<String>], name: &str) -> Result<Vec<Option<f64>>> {
    let i = headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DptError::Schema(format!("missing column {name:?} (have {})", headers.join(","))))?;
    rows.iter()
        .enumerate()
        .map(|(r, row)| match row.get(i).map(String::as_str) {
            None | Some("") => Ok(None),
            Some(s) => s
                .parse::<f64>()
                .map(Some)
                .map_err(|_| DptError::Schema(format!("row {}: column {name}: bad number {s:?}", r + 2))),
        })
        .collect()
}

fn required(col: Vec<Option<f64>>, name: &str) -> Result<Vec<f64>> {
    col.into_iter()
        .enumerate()
        .map(|(r, v)| v.ok_or_else(|| DptError::Schema(format!("row {}: column {name} is empty", r + 2))))
        .collect()
}

fn scan_from_table(headers: &[String], rows: &[Vec<String>]) -> Result<ScanResult> {
    let axis = required(column(headers, rows, "axis")?, "axis")?;
    let nbar = column(headers, rows, "nbar")?;
    let sigma = if headers.iter().any(|h| h == "sigma") { column(headers, rows, "sigma")? } else { vec![None; rows.len()] };
    let points = axis
        .iter()
        .zip(nbar)
        .zip(sigma)
        .map(|((&a, n), s)| ScanPoint {
            axis: a,
            nbar: n,
            sigma: s,
            converged: true,
            cycles: 0,
            n_max: None,
            status: if n.is_some() { PointStatus::Ok } else { PointStatus::Diverging },
        })
        .collect();
    Ok(ScanResult { axis: ScanAxis::R, fixed: None, points, config_hash: String::new() })
}

#[derive(Serialize)]
struct PopulationReport {
    fit: FitResult,
    nbar: f64,
    sigma: f64,
}

pub fn cmd_fit(cli: &Cli, model: FitModel, data: &Path, k_max: Option<usize>, omega_khz: Option<f64>) -> Result<()> {
    let out = cli.out_dir.join("fit.json");
    match model {
        FitModel::Saturation => {
            let (headers, rows) = read_table(data)?;
            if headers.iter().any(|h| h == "cycle") {
                let y = required(column(&headers, &rows, "nbar")?, "nbar")?;
                let fit = fit_exponential_saturation(&y)?;
                print_fit(&fit);
                write_json(&out, &fit)?;
            } else {
                let est = extrapolate_saturation(&scan_from_table(&headers, &rows)?)?;
                println!("{}", serde_json::to_string(&est)?);
                write_json(&out, &est)?;
            }
        }
        FitModel::PowerLawCritical => {
            let (headers, rows) = read_table(data)?;
            let g = required(column(&headers, &rows, "g")?, "g")?;
            let n = required(column(&headers, &rows, "n_s")?, "n_s")?;
            let s = if headers.iter().any(|h| h == "sigma") {
                column(&headers, &rows, "sigma")?.into_iter().map(|v| v.unwrap_or(0.0)).collect()
            } else {
                vec![0.0; g.len()]
            };
            let window = cli
                .config
                .as_ref()
                .map(|_| load_config(cli).map(|c| c.fit.critical_window))
                .transpose()?
                .unwrap_or([crate::analysis::CRITICAL_WINDOW.0, crate::analysis::CRITICAL_WINDOW.1]);
            let pts: Vec<(f64, f64, f64)> = (0..g.len()).map(|i| (g[i], n[i], s[i])).collect();
            let fit = fit_critical_power_law(&pts, (window[0], window[1]))?;
            print_fit(&fit);
            write_json(&out, &fit)?;
        }
        FitModel::Loglog => {
            let (headers, rows) = read_table(data)?;
            let (xn, yn) = if headers.iter().any(|h| h == "axis") { ("axis", "nbar") } else { ("x", "y") };
            let x = column(&headers, &rows, xn)?;
            let y = column(&headers, &rows, yn)?;
            let pts: Vec<(f64, f64)> = x.into_iter().zip(y).filter_map(|(a, b)| Some((a?, b?))).collect();
            let fit = fit_loglog_slope(&pts)?;
            print_fit(&fit);
            write_json(&out, &fit)?;
        }
        FitModel::Populations => {
            let k_max = k_max.ok_or_else(|| DptError::Config("fit populations needs --k-max".into()))?;
            let omega = match (omega_khz, &cli.config) {
                (Some(o), _) => khz_to_rad_per_us(o),
                (None, Some(_)) => load_config(cli)?.probe.omega(),
                (None, None) => crate::probe::default_omega_probe(),
            };
            let decay = match &cli.config {
                Some(_) => load_config(cli)?.probe.decay,
                None => Default::default(),
            };
            let scan = ProbeScan::read_path(data, omega).map_err(|e| match e {
                DptError::Io(io) => DptError::Schema(format!("{}: {io}", data.display())),
                DptError::Csv(c) => DptError::Schema(format!("{}: {c}", data.display())),
                other => other,
            })?;
            let fit = fit_populations(&scan, k_max, decay)?;
            let (nbar, sigma) = nbar_from_fit(&fit);
            let report = PopulationReport { fit: population_fit_result(&fit, &scan), nbar, sigma };
            println!("nbar={nbar:.6} sigma={sigma:.6} gamma0={:.4e}", fit.gamma0);
            write_json(&out, &report)?;
        }
    }
    Ok(())
}

fn population_fit_result(fit: &crate::probe::PopulationFit, scan: &ProbeScan) -> FitResult {
    let k = fit.p.len();
    let mut names: Vec<String> = (0..k).map(|i| format!("p{i}")).collect();
    names.push("gamma0".into());
    let mut params = fit.p.clone();
    params.push(fit.gamma0);
    let mut errors = fit.errors();
    errors.push(fit.gamma0_err);
    FitResult {
        model: "populations".into(),
        names,
        params,
        errors,
        covariance: (0..k).map(|i| fit.covariance.row(i).iter().copied().collect()).collect(),
        residual_rms: fit.residual_rms,
        window: (scan.times[0], scan.times[scan.times.len() - 1]),
        points: scan.times.len(),
        note: Some(format!("decay model {:?}", fit.decay)),
    }
}

fn print_fit(fit: &FitResult) {
    let parts: Vec<String> =
        fit.names.iter().zip(&fit.params).zip(&fit.errors).map(|((n, v), e)| format!("{n}={v:.6}±{e:.6}")).collect();
    println!("{} {} rms={:.3e}", fit.model, parts.join(" "), fit.residual_rms);
}

#[derive(Serialize)]
struct ProbeDemoReport {
    nbar_direct: f64,
    nbar_fit: f64,
    sigma: f64,
    k_max: usize,
    shots: Option<u64>,
    agrees: bool,
    fit: FitResult,
}

pub fn cmd_probe_demo(cli: &Cli, command: Vec<String>) -> Result<()> {
    let cfg = load_config(cli)?;
    let exp = cfg.experiment()?;
    let traj = run(&exp)?;
    let rho = &traj.final_state;
    let direct = rho.mean_phonon_number();
    let k_max = cfg.probe.k_max.unwrap_or_else(|| default_k_max(rho)).min(rho.cutoff().n_max());
    let omega = cfg.probe.omega();
    let times = probe_times(omega, k_max);
    let scan = simulate_probe(rho, omega, &times, cfg.probe.shots, exp.seed)?;
    let fit = fit_populations(&scan, k_max, cfg.probe.decay)?;
    let (nbar_fit, sigma) = nbar_from_fit(&fit);
    let agrees = (nbar_fit - direct).abs() < (2.0 * sigma).max(0.1);
    println!("nbar_direct={direct:.6} nbar_fit={nbar_fit:.6} sigma={sigma:.6} k_max={k_max} agrees={agrees}");

    let mut manifest = ManifestBuilder::new(command, cfg.clone());
    let scan_path = cli.out_dir.join("probe_scan.csv");
    scan.write_csv(std::fs::File::create(&scan_path)?)?;
    manifest.add(scan_path);
    let report = ProbeDemoReport {
        nbar_direct: direct,
        nbar_fit,
        sigma,
        k_max,
        shots: cfg.probe.shots,
        agrees,
        fit: population_fit_result(&fit, &scan),
    };
    let fit_path = cli.out_dir.join("probe_fit.json");
    write_json(&fit_path, &report)?;
    manifest.add(fit_path);
    manifest.write(&cli.out_dir)?;
    Ok(())
}

/// Output file name → sha256, from a manifest on disk.
pub fn manifest_hashes(path: &Path) -> Result<BTreeMap<String, String>> {
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    Ok(m.outputs.into_iter().map(|o| (o.path, o.sha256)).collect())
}
