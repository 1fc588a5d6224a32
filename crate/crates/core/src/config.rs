//! TOML run configuration. Frequencies are given in kHz (f, not 2πf), times
//! in µs and rates in s⁻¹; conversion to rad/µs happens here and nowhere
//! else.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::CRITICAL_WINDOW;
use crate::channels::{ChannelMode, NoiseParams, DEFAULT_DT_MAX, DEFAULT_RECOIL_DN, DEFAULT_THERMAL_NTH};
use crate::error::{DptError, Result};
use crate::fockspace::DEFAULT_TAIL_EPSILON;
use crate::model::{khz_to_rad_per_us, per_s_to_per_us, CoolParams, DriveParams, IdleSign};
use crate::probe::DecayModel;
use crate::protocol::{
    Convergence, CutoffPolicy, Engine, ExperimentConfig, InitialState, Jitter, WallClock, DEFAULT_CEILING,
    DEFAULT_DOPPLER_NBAR, DEFAULT_TOL, DEFAULT_WINDOW,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub seed: u64,
    pub drive: DriveSection,
    pub cool: CoolSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub cutoff: CutoffSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter: Option<JitterSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub fit: FitSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    pub delta_b_khz: f64,
    pub delta_r_khz: f64,
    /// Exactly one of omega_sb_khz and g.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_sb_khz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    pub tau_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoolSection {
    pub omega_c_khz: f64,
    pub tau_c_us: f64,
    pub tau_d_us: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NoisePreset {
    #[default]
    #[serde(rename = "off")]
    Off,
    #[serde(rename = "decoherence")]
    Decoherence,
    #[serde(rename = "decoherence+recoil")]
    DecoherenceRecoil,
}

impl std::str::FromStr for NoisePreset {
    type Err = DptError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(NoisePreset::Off),
            "decoherence" => Ok(NoisePreset::Decoherence),
            "decoherence+recoil" => Ok(NoisePreset::DecoherenceRecoil),
            _ => Err(DptError::Config(format!("unknown noise preset {s:?} (off|decoherence|decoherence+recoil)"))),
        }
    }
}

/// A preset, optionally with individual values overridden.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub preset: NoisePreset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heating_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dephasing_per_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_nth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recoil: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recoil_dn: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photons_per_pump: Option<u32>,
}

impl NoiseSection {
    pub fn params(&self) -> NoiseParams {
        let mut n = match self.preset {
            NoisePreset::Off => NoiseParams::off(),
            NoisePreset::Decoherence => NoiseParams::decoherence(),
            NoisePreset::DecoherenceRecoil => NoiseParams::decoherence_and_recoil(),
        };
        if let Some(v) = self.heating_per_s {
            n.heating_rate = per_s_to_per_us(v);
        }
        if let Some(v) = self.dephasing_per_s {
            n.dephasing_rate = per_s_to_per_us(v);
        }
        n.thermal_nth = self.thermal_nth.unwrap_or(DEFAULT_THERMAL_NTH);
        if let Some(v) = self.recoil {
            n.recoil_enabled = v;
        }
        n.recoil_dn = self.recoil_dn.unwrap_or(DEFAULT_RECOIL_DN);
        if let Some(v) = self.photons_per_pump {
            n.photons_per_pump = v;
        }
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Ground,
    #[default]
    Thermal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceKind {
    #[default]
    Fixed,
    Tolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub initial: InitialKind,
    pub initial_nbar: f64,
    pub channel: ChannelMode,
    pub max_cycles: usize,
    pub convergence: ConvergenceKind,
    pub tol: f64,
    pub window: usize,
    pub engine: Engine,
    pub wall_clock: WallClock,
    pub idle_sign: IdleSign,
    pub dt_max_us: f64,
    pub drive_substeps: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            initial: InitialKind::Thermal,
            initial_nbar: DEFAULT_DOPPLER_NBAR,
            channel: ChannelMode::Exact,
            max_cycles: 200,
            convergence: ConvergenceKind::Fixed,
            tol: DEFAULT_TOL,
            window: DEFAULT_WINDOW,
            engine: Engine::Reduced,
            wall_clock: WallClock::Global,
            idle_sign: IdleSign::Plus,
            dt_max_us: DEFAULT_DT_MAX,
            drive_substeps: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CutoffSection {
    pub n_max: usize,
    pub epsilon: f64,
    pub growth: f64,
    pub ceiling: usize,
}

impl Default for CutoffSection {
    fn default() -> Self {
        CutoffSection { n_max: 40, epsilon: DEFAULT_TAIL_EPSILON, growth: 1.5, ceiling: DEFAULT_CEILING }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterSection {
    pub sigma_b_khz: f64,
    pub sigma_r_khz: f64,
}

impl Default for JitterSection {
    fn default() -> Self {
        JitterSection { sigma_b_khz: 0.1, sigma_r_khz: 0.1 }
    }
}

/// An explicit list, or `count` evenly spaced values from `start` to `stop`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisSpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl AxisSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            AxisSpec::List(ref v) => Ok(v.clone()),
            AxisSpec::Range { start, stop, count } => {
                if count == 0 || (count == 1 && start != stop) || !(stop >= start) {
                    return Err(DptError::Config(format!("bad range start={start} stop={stop} count={count}")));
                }
                if count == 1 {
                    return Ok(vec![start]);
                }
                // Rounded so that 0.8:1.8:21 yields 1.2 rather than 1.2000000000000002.
                Ok((0..count)
                    .map(|i| {
                        let x = start + (stop - start) * i as f64 / (count - 1) as f64;
                        (x * 1e12).round() / 1e12
                    })
                    .collect())
            }
        }
    }

    /// Parses `a,b,c` or `start:stop:count`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || DptError::Config(format!("axis spec {s:?}: expected a,b,c or start:stop:count"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [a, b, n] => Ok(AxisSpec::Range {
                start: num(a)?,
                stop: num(b)?,
                count: n.trim().parse().map_err(|_| bad())?,
            }),
            [list] => list.split(',').map(num).collect::<Result<Vec<_>>>().map(AxisSpec::List),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<AxisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<AxisSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_c_khz: Option<AxisSpec>,
    /// Coupling held during R scans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_g: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub omega_khz: f64,
    /// Absent means exact expectation values.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    pub decay: DecayModel,
    /// Absent means the automatic choice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection { omega_khz: 10.0, shots: None, decay: DecayModel::Sqrt, k_max: None }
    }
}

impl ProbeSection {
    pub fn omega(&self) -> f64 {
        khz_to_rad_per_us(self.omega_khz)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    /// Critical fit keeps g in [g_c − w0, g_c − w1].
    pub critical_window: [f64; 2],
}

impl Default for FitSection {
    fn default() -> Self {
        FitSection { critical_window: [CRITICAL_WINDOW.0, CRITICAL_WINDOW.1] }
    }
}

fn field_err(field: &str, e: DptError) -> DptError {
    let msg = match e {
        DptError::InvalidParameter(m) | DptError::Config(m) => m,
        other => other.to_string(),
    };
    DptError::Config(format!("{field}: {msg}"))
}

impl ConfigFile {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(s).map_err(|e| DptError::Config(e.to_string()))?;
        cfg.experiment()?;
        Ok(cfg)
    }

    /// A `.json` path is read as a run manifest and its embedded config used.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DptError::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|x| x == "json") {
            #[derive(Deserialize)]
            struct Embedded {
                config: ConfigFile,
            }
            let m: Embedded = serde_json::from_str(&text).map_err(|e| DptError::Config(format!("manifest: {e}")))?;
            m.config.experiment()?;
            return Ok(m.config);
        }
        Self::from_toml_str(&text)
    }

    pub fn drive(&self) -> Result<DriveParams> {
        let d = &self.drive;
        let base = DriveParams::from_khz(d.delta_b_khz, d.delta_r_khz, 0.0, d.tau_us);
        let drive = match (d.omega_sb_khz, d.g) {
            (Some(o), None) => DriveParams { omega_sb: khz_to_rad_per_us(o), ..base },
            (None, Some(g)) => {
                if !(g >= 0.0) {
                    return Err(DptError::Config(format!("drive.g: must be >= 0, got {g}")));
                }
                base.validate().map_err(|e| field_err("drive", e))?;
                base.with_coupling(g)
            }
            _ => return Err(DptError::Config("drive: give exactly one of omega_sb_khz and g".into())),
        };
        drive.validate().map_err(|e| field_err("drive", e))?;
        Ok(drive)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let drive = self.drive()?;
        let c = &self.cool;
        let cool = CoolParams::from_khz(c.omega_c_khz, c.tau_c_us, c.tau_d_us);
        cool.validate().map_err(|e| field_err("cool", e))?;
        let noise = self.noise.params();
        noise.validate().map_err(|e| field_err("noise", e))?;
        let r = &self.run;
        let mut x = ExperimentConfig::new(drive, cool);
        x.noise = noise;
        x.initial = match r.initial {
            InitialKind::Ground => InitialState::Ground,
            InitialKind::Thermal => InitialState::DopplerThermal { nbar: r.initial_nbar },
        };
        x.channel_mode = r.channel;
        x.max_cycles = r.max_cycles;
        x.convergence = match r.convergence {
            ConvergenceKind::Fixed => Convergence::FixedCycles,
            ConvergenceKind::Tolerance => Convergence::Tolerance { tol: r.tol, window: r.window },
        };
        x.engine = r.engine;
        x.wall_clock = r.wall_clock;
        x.idle_sign = r.idle_sign;
        x.dt_max = r.dt_max_us;
        x.drive_substeps = r.drive_substeps;
        let k = &self.cutoff;
        x.cutoff = CutoffPolicy { n_max: k.n_max, epsilon: k.epsilon, growth: k.growth, ceiling: k.ceiling };
        x.jitter = self.jitter.as_ref().map(|j| Jitter {
            sigma_b: khz_to_rad_per_us(j.sigma_b_khz),
            sigma_r: khz_to_rad_per_us(j.sigma_r_khz),
        });
        x.seed = self.seed;
        x.validate().map_err(|e| field_err("run/cutoff", e))?;
        if !(self.probe.omega_khz > 0.0) {
            return Err(DptError::Config(format!("probe.omega_khz: must be > 0, got {}", self.probe.omega_khz)));
        }
        if self.probe.shots == Some(0) {
            return Err(DptError::Config("probe.shots: must be >= 1".into()));
        }
        let w = self.fit.critical_window;
        if !(w[0] > w[1] && w[1] >= 0.0) {
            return Err(DptError::Config(format!("fit.critical_window: need w0 > w1 >= 0, got {w:?}")));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG2: &str = r#"
seed = 3
[drive]
delta_b_khz = 26.0
delta_r_khz = 24.0
omega_sb_khz = 9.0
tau_us = 20.0
[cool]
omega_c_khz = 20.0
tau_c_us = 5.0
tau_d_us = 13.0
"#;

    #[test]
    fn units_converted_at_the_boundary() {
        let x = ConfigFile::from_toml_str(FIG2).unwrap().experiment().unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((x.drive.delta_b - two_pi * 0.026).abs() < 1e-15);
        assert!((x.drive.omega_sb - two_pi * 0.009).abs() < 1e-15);
        assert!((x.cool.omega_c - two_pi * 0.020).abs() < 1e-15);
        assert_eq!(x.cool.tau_d, 13.0);
        assert_eq!(x.seed, 3);
        assert_eq!(x.initial, InitialState::DopplerThermal { nbar: 5.0 });
    }

    #[test]
    fn coupling_alternative() {
        let s = FIG2.replace("omega_sb_khz = 9.0", "g = 1.3");
        let x = ConfigFile::from_toml_str(&s).unwrap().experiment().unwrap();
        assert!((x.drive.coupling() - 1.3).abs() < 1e-12);
        let both = FIG2.replace("omega_sb_khz = 9.0", "omega_sb_khz = 9.0\ng = 1.3");
        let err = ConfigFile::from_toml_str(&both).unwrap_err().to_string();
        assert!(err.contains("drive"), "{err}");
    }

    #[test]
    fn noise_rates_in_per_second() {
        let s = format!("{FIG2}[noise]\npreset = \"decoherence+recoil\"\nheating_per_s = 100.0\n");
        let n = ConfigFile::from_toml_str(&s).unwrap().experiment().unwrap().noise;
        assert!((n.heating_rate - 1e-4).abs() < 1e-18);
        assert!((n.dephasing_rate - 2e-4).abs() < 1e-18);
        assert!(n.recoil_enabled);
    }

    #[test]
    fn unknown_fields_name_the_field() {
        let s = FIG2.replace("tau_us", "tau_ms");
        let err = ConfigFile::from_toml_str(&s).unwrap_err().to_string();
        assert!(err.contains("tau_ms") || err.contains("tau_us"), "{err}");
        let s = format!("{FIG2}[run]\nmax_cycle = 3\n");
        assert!(ConfigFile::from_toml_str(&s).unwrap_err().to_string().contains("max_cycle"));
    }

    #[test]
    fn invalid_values_are_located() {
        let s = FIG2.replace("tau_d_us = 13.0", "tau_d_us = 1.0");
        let err = ConfigFile::from_toml_str(&s).unwrap_err().to_string();
        assert!(err.contains("cool"), "{err}");
        let s = FIG2.replace("delta_r_khz = 24.0", "delta_r_khz = 30.0");
        assert!(ConfigFile::from_toml_str(&s).unwrap_err().to_string().contains("drive"));
    }

    #[test]
    fn axis_specs() {
        assert_eq!(AxisSpec::parse("1,2,3").unwrap().values().unwrap(), vec![1.0, 2.0, 3.0]);
        let v = AxisSpec::parse("0.8:1.8:21").unwrap().values().unwrap();
        assert_eq!(v.len(), 21);
        assert!((v[10] - 1.3).abs() < 1e-12);
        assert!(AxisSpec::parse("1:2").is_err());
        let s = format!("{FIG2}[scan]\ng = {{ start = 0.8, stop = 1.8, count = 6 }}\nr = [50, 100]\n");
        let cfg = ConfigFile::from_toml_str(&s).unwrap();
        let scan = cfg.scan.unwrap();
        assert_eq!(scan.g.unwrap().values().unwrap().len(), 6);
        assert_eq!(scan.r.unwrap().values().unwrap(), vec![50.0, 100.0]);
    }

    #[test]
    fn json_round_trip() {
        let cfg = ConfigFile::from_toml_str(FIG2).unwrap();
        let j = serde_json::to_string(&cfg).unwrap();
        let back: ConfigFile = serde_json::from_str(&j).unwrap();
        assert_eq!(back, cfg);
    }
}
