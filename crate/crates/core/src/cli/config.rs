//! TOML experiment configuration. Frequencies are given in Hz and converted
//! to angular units here; rates (`*_per_s`) are plain inverse seconds.
//! Unknown keys are rejected.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    /// Single-atom Raman Rabi oscillation, time scan, push-out detection.
    RamanRabi,
    /// Rydberg excitation of one atom (second trap empty), time scan, recapture detection.
    RydbergSingle,
    /// Rydberg excitation of both atoms under blockade, time scan, recapture detection.
    RydbergPair,
    /// Entangling sequence followed by a global Raman rotation, θ scan, push-out detection.
    EntangleParity,
    /// Noise-model search matching the entangling-sequence outcome probabilities.
    Calibrate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::RamanRabi => "raman_rabi",
            ExperimentKind::RydbergSingle => "rydberg_single",
            ExperimentKind::RydbergPair => "rydberg_pair",
            ExperimentKind::EntangleParity => "entangle_parity",
            ExperimentKind::Calibrate => "calibrate",
        }
    }

    pub fn is_scan(self) -> bool {
        self != ExperimentKind::Calibrate
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsConfig {
    pub raman_rabi_hz: f64,
    pub raman_detuning_hz: f64,
    pub ryd_rabi_hz: f64,
    pub ryd_detuning_hz: f64,
    pub map_rabi_hz: f64,
    pub map_detuning_hz: f64,
    pub blockade_shift_hz: f64,
    /// Relative phase φ of the produced (|↓↑⟩ + e^{iφ}|↑↓⟩)/√2.
    pub bell_phase_rad: f64,
}

impl Default for PhysicsConfig {
    fn default() -> Self {
        Self {
            raman_rabi_hz: 250e3,
            raman_detuning_hz: 0.0,
            ryd_rabi_hz: 7e6,
            ryd_detuning_hz: 0.0,
            map_rabi_hz: 7e6,
            map_detuning_hz: 0.0,
            blockade_shift_hz: 50e6,
            bell_phase_rad: 0.0,
        }
    }
}

impl PhysicsConfig {
    pub fn raman_rabi(&self) -> f64 {
        TAU * self.raman_rabi_hz
    }

    pub fn ryd_rabi(&self) -> f64 {
        TAU * self.ryd_rabi_hz
    }

    pub fn map_rabi(&self) -> f64 {
        TAU * self.map_rabi_hz
    }

    pub fn blockade_shift(&self) -> f64 {
        TAU * self.blockade_shift_hz
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub scatter_rate_per_s: f64,
    /// Fractions into (up, down, dark).
    pub scatter_branching: [f64; 3],
    pub ryd_dephasing_per_s: f64,
    pub ryd_decay_per_s: f64,
    pub intensity_sigma: f64,
    pub detuning_sigma_hz: f64,
    pub map_phase_sigma_rad: f64,
    pub extra_loss_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            scatter_rate_per_s: 0.0,
            scatter_branching: [1.0, 0.0, 0.0],
            ryd_dephasing_per_s: 0.0,
            ryd_decay_per_s: 0.0,
            intensity_sigma: 0.0,
            detuning_sigma_hz: 0.0,
            map_phase_sigma_rad: 0.0,
            extra_loss_prob: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn to_spec(&self) -> NoiseSpec {
        NoiseSpec {
            scatter_rate_rad_per_s: self.scatter_rate_per_s,
            scatter_branching: self.scatter_branching,
            ryd_dephasing_rad_per_s: self.ryd_dephasing_per_s,
            ryd_decay_rad_per_s: self.ryd_decay_per_s,
            intensity_sigma: self.intensity_sigma,
            detuning_sigma_rad_per_s: TAU * self.detuning_sigma_hz,
            map_phase_sigma_rad: self.map_phase_sigma_rad,
            extra_loss_prob: self.extra_loss_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    /// Seconds for time scans, radians for the parity scan.
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    /// Whether the grid includes `stop`.
    #[serde(default = "yes")]
    pub include_stop: bool,
}

fn yes() -> bool {
    true
}

impl ScanConfig {
    pub fn values(&self) -> Vec<f64> {
        let n = self.points;
        let div = if self.include_stop { (n - 1).max(1) } else { n } as f64;
        let mut v: Vec<f64> = (0..n).map(|i| self.start + (self.stop - self.start) * i as f64 / div).collect();
        if self.include_stop {
            v[n - 1] = self.stop;
        }
        v
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Independently measured per-atom loss probability used to renormalize the fidelity.
    pub atom_loss_prob: Option<f64>,
}

/// Inclusive grid [min, max] with `points` values.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl From<[f64; 3]> for GridAxis {
    fn from(v: [f64; 3]) -> Self {
        Self { min: v[0], max: v[1], points: v[2].max(0.0) as usize }
    }
}

impl From<GridAxis> for [f64; 3] {
    fn from(g: GridAxis) -> Self {
        [g.min, g.max, g.points as f64]
    }
}

impl GridAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![self.min];
        }
        (0..self.points)
            .map(|i| self.min + (self.max - self.min) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Noise parameters the calibration may vary.
pub const CALIBRATION_PARAMETERS: [&str; 8] = [
    "scatter_rate_per_s",
    "scatter_down_fraction",
    "scatter_dark_fraction",
    "ryd_dephasing_per_s",
    "intensity_sigma",
    "detuning_sigma_hz",
    "map_phase_sigma_rad",
    "extra_loss_prob",
];

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrateConfig {
    /// Target (P11, P01, P10, P00).
    pub target: [f64; 4],
    pub sweeps: usize,
    /// Monte Carlo shots per objective evaluation.
    pub shots: usize,
    pub grid: BTreeMap<String, GridAxis>,
}

impl Default for CalibrateConfig {
    fn default() -> Self {
        Self { target: [0.06, 0.34, 0.31, 0.29], sweeps: 3, shots: 64, grid: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    pub loss_prob: f64,
    pub fidelity: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { loss_prob: 0.22, fidelity: 0.46 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "one")]
    pub shots: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Replace ensemble probabilities by a multinomial draw of `shots` repetitions.
    #[serde(default)]
    pub sample_counts: bool,
    /// Maximum integration step; chosen automatically when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    #[serde(default)]
    pub physics: PhysicsConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibrate: Option<CalibrateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportConfig>,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("field `{field}`: {msg}")));
        if self.shots == 0 {
            return bad("shots", "must be ≥ 1".into());
        }
        let p = &self.physics;
        for (name, v) in [
            ("physics.raman_rabi_hz", p.raman_rabi_hz),
            ("physics.ryd_rabi_hz", p.ryd_rabi_hz),
            ("physics.map_rabi_hz", p.map_rabi_hz),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(name, format!("must be a positive finite frequency, got {v}"));
            }
        }
        for (name, v) in [
            ("physics.raman_detuning_hz", p.raman_detuning_hz),
            ("physics.ryd_detuning_hz", p.ryd_detuning_hz),
            ("physics.map_detuning_hz", p.map_detuning_hz),
            ("physics.blockade_shift_hz", p.blockade_shift_hz),
            ("physics.bell_phase_rad", p.bell_phase_rad),
        ] {
            if !v.is_finite() {
                return bad(name, format!("must be finite, got {v}"));
            }
        }
        if let Some(dt) = self.dt_s {
            if !(dt > 0.0) || !dt.is_finite() {
                return bad("dt_s", format!("must be positive, got {dt}"));
            }
        }
        if let Err(e) = self.noise.to_spec().validate() {
            return bad("noise", e.to_string());
        }
        if self.experiment.is_scan() {
            match &self.scan {
                None => return bad("scan", format!("required for experiment {}", self.experiment.name())),
                Some(s) => {
                    if s.points < 2 {
                        return bad("scan.points", format!("must be ≥ 2, got {}", s.points));
                    }
                    if !s.start.is_finite() || !s.stop.is_finite() || s.start < 0.0 || s.stop <= s.start {
                        return bad("scan", format!("need 0 ≤ start < stop, got [{}, {}]", s.start, s.stop));
                    }
                }
            }
        }
        if let Some(p) = self.analysis.atom_loss_prob {
            if !(0.0..1.0).contains(&p) {
                return bad("analysis.atom_loss_prob", format!("must lie in [0, 1), got {p}"));
            }
        }
        if let Some(c) = &self.calibrate {
            if c.shots == 0 {
                return bad("calibrate.shots", "must be ≥ 1".into());
            }
            if c.target.iter().any(|t| !(0.0..=1.0).contains(t)) || (c.target.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return bad("calibrate.target", format!("must be four probabilities summing to 1, got {:?}", c.target));
            }
            for (name, axis) in &c.grid {
                if !CALIBRATION_PARAMETERS.contains(&name.as_str()) {
                    return bad(&format!("calibrate.grid.{name}"), format!("unknown parameter; expected one of {CALIBRATION_PARAMETERS:?}"));
                }
                if axis.points == 0 || !(axis.min <= axis.max) || axis.min < 0.0 {
                    return bad(&format!("calibrate.grid.{name}"), "need 0 ≤ min ≤ max and points ≥ 1".into());
                }
            }
        } else if self.experiment == ExperimentKind::Calibrate {
            return bad("calibrate", "section required for experiment calibrate".into());
        }
        if let Some(r) = &self.report {
            if !(0.0..=1.0).contains(&r.loss_prob) {
                return bad("report.loss_prob", format!("must lie in [0, 1], got {}", r.loss_prob));
            }
        }
        Ok(())
    }
}

/// Sets one named calibration parameter on a noise config. The two branching
/// fractions keep the triple normalized by adjusting the `up` share.
pub fn set_noise_parameter(noise: &mut NoiseConfig, name: &str, value: f64) -> Result<()> {
    match name {
        "scatter_rate_per_s" => noise.scatter_rate_per_s = value,
        "scatter_down_fraction" | "scatter_dark_fraction" => {
            let (down, dark) = if name == "scatter_down_fraction" {
                (value, noise.scatter_branching[2])
            } else {
                (noise.scatter_branching[1], value)
            };
            if down + dark > 1.0 + 1e-12 {
                return Err(Error::InvalidArgument(format!("branching fractions {down} + {dark} exceed 1")));
            }
            noise.scatter_branching = [(1.0 - down - dark).max(0.0), down, dark];
        }
        "ryd_dephasing_per_s" => noise.ryd_dephasing_per_s = value,
        "intensity_sigma" => noise.intensity_sigma = value,
        "detuning_sigma_hz" => noise.detuning_sigma_hz = value,
        "map_phase_sigma_rad" => noise.map_phase_sigma_rad = value,
        "extra_loss_prob" => noise.extra_loss_prob = value,
        other => return Err(Error::Config(format!("unknown calibration parameter `{other}`"))),
    }
    Ok(())
}

pub fn get_noise_parameter(noise: &NoiseConfig, name: &str) -> Option<f64> {
    Some(match name {
        "scatter_rate_per_s" => noise.scatter_rate_per_s,
        "scatter_down_fraction" => noise.scatter_branching[1],
        "scatter_dark_fraction" => noise.scatter_branching[2],
        "ryd_dephasing_per_s" => noise.ryd_dephasing_per_s,
        "intensity_sigma" => noise.intensity_sigma,
        "detuning_sigma_hz" => noise.detuning_sigma_hz,
        "map_phase_sigma_rad" => noise.map_phase_sigma_rad,
        "extra_loss_prob" => noise.extra_loss_prob,
        _ => return None,
    })
}
