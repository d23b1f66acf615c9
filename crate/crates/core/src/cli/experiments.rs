//! Named experiments: sequence construction, scans, fits and the calibration search.

use std::f64::consts::TAU;

use crate::analysis::{extract_fidelity, fit_rabi, pair_loss_probability, FidelityReport, ParityScan, RabiFit};
use crate::dynamics::{evolve_lindblad, run_ensemble, run_ensemble_chain, suggested_dt, EnsembleOptions, EvolveOptions};
use crate::error::{Error, Result};
use crate::measurement::{outcome_probabilities, sample_counts, Detection, OutcomeProbs};
use crate::physics::{
    build_entangle_sequence, build_rotation_sequence, EntanglePhases, NoiseSpec, PulseKind, PulseSpec, SequenceSpec,
    ShotParams, Targets,
};
use crate::qstate::{AtomLevel, DensityMatrix, PairIndex};

use super::config::{
    get_noise_parameter, set_noise_parameter, ExperimentConfig, ExperimentKind, NoiseConfig, ScanConfig,
};
use super::table::ScanRow;

/// θ grid used when a config without a `[scan]` section is turned into a parity run.
pub fn default_parity_scan() -> ScanConfig {
    ScanConfig { start: 0.0, stop: TAU, points: 16, include_stop: false }
}

/// Quantity fitted for a time-scan experiment.
pub fn rabi_signal(kind: ExperimentKind, p: &OutcomeProbs) -> Result<f64> {
    match kind {
        // Atom a returned to |↓⟩ survives push-out.
        ExperimentKind::RamanRabi => Ok(p.present_a()),
        // Atom a left in |r⟩ is not recaptured.
        ExperimentKind::RydbergSingle => Ok(p.p01 + p.p00),
        // Exactly one atom excited.
        ExperimentKind::RydbergPair => Ok(p.single()),
        other => Err(Error::Config(format!("experiment {} is not a time scan", other.name()))),
    }
}

struct TimeScanSetup {
    kind: PulseKind,
    rabi: f64,
    detuning: f64,
    targets: Targets,
    initial: PairIndex,
    detection: Detection,
}

fn time_scan_setup(cfg: &ExperimentConfig) -> Result<TimeScanSetup> {
    let p = &cfg.physics;
    use AtomLevel::*;
    Ok(match cfg.experiment {
        ExperimentKind::RamanRabi => TimeScanSetup {
            kind: PulseKind::RamanRotation,
            rabi: p.raman_rabi(),
            detuning: TAU * p.raman_detuning_hz,
            targets: Targets::A,
            initial: PairIndex::new(Up, Absent),
            detection: Detection::PushOut,
        },
        ExperimentKind::RydbergSingle => TimeScanSetup {
            kind: PulseKind::RydExcite,
            rabi: p.ryd_rabi(),
            detuning: TAU * p.ryd_detuning_hz,
            targets: Targets::A,
            initial: PairIndex::new(Up, Absent),
            detection: Detection::Recapture,
        },
        ExperimentKind::RydbergPair => TimeScanSetup {
            kind: PulseKind::RydExcite,
            rabi: p.ryd_rabi(),
            detuning: TAU * p.ryd_detuning_hz,
            targets: Targets::Both,
            initial: PairIndex::new(Up, Up),
            detection: Detection::Recapture,
        },
        other => return Err(Error::Config(format!("experiment {} is not a time scan", other.name()))),
    })
}

fn scan_of(cfg: &ExperimentConfig) -> Result<&ScanConfig> {
    cfg.scan.as_ref().ok_or_else(|| Error::Config(format!("field `scan`: required for experiment {}", cfg.experiment.name())))
}

fn finish_rows(cfg: &ExperimentConfig, values: &[f64], probs: Vec<OutcomeProbs>) -> Result<Vec<ScanRow>> {
    values
        .iter()
        .zip(probs)
        .enumerate()
        .map(|(k, (&v, p))| {
            let probs = if cfg.sample_counts {
                OutcomeProbs::from_counts(&sample_counts(&p, cfg.shots as u64, cfg.seed.wrapping_add(k as u64))?)?
            } else {
                p
            };
            Ok(ScanRow { scan_value: v, probs, n_shots: cfg.shots as u64, seed: cfg.seed })
        })
        .collect()
}

/// Pulse of duration t applied from t = 0; the scan is evolved as a chain of
/// increments so every shot is integrated once.
fn run_time_scan(cfg: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    let setup = time_scan_setup(cfg)?;
    let times = scan_of(cfg)?.values();
    let noise = cfg.noise.to_spec();
    let blockade = cfg.physics.blockade_shift();
    let mut stages = Vec::with_capacity(times.len());
    let mut prev = 0.0;
    for &t in &times {
        let len = t - prev;
        let pulses = if len > 0.0 {
            vec![PulseSpec::new(setup.kind, setup.rabi, len, setup.targets).with_detuning(setup.detuning)]
        } else {
            vec![]
        };
        stages.push(SequenceSpec::back_to_back(pulses, blockade, setup.initial)?);
        prev = t;
    }
    let dt = match cfg.dt_s {
        Some(dt) => dt,
        None => stages.iter().map(|s| suggested_dt(s, &noise)).fold(f64::INFINITY, f64::min),
    };
    let rho0 = DensityMatrix::basis(setup.initial);
    let states = run_ensemble_chain(&rho0, &stages, &noise, cfg.shots, cfg.seed, &EnsembleOptions { dt })?;
    let probs = states.iter().map(|rho| outcome_probabilities(rho, setup.detection)).collect::<Result<Vec<_>>>()?;
    finish_rows(cfg, &times, probs)
}

/// Entangling sequence for the configured physics parameters.
pub fn entangle_sequence(cfg: &ExperimentConfig) -> Result<SequenceSpec> {
    let p = &cfg.physics;
    let base = build_entangle_sequence(
        p.ryd_rabi(),
        p.map_rabi(),
        p.blockade_shift(),
        EntanglePhases::with_bell_phase(p.bell_phase_rad),
    )?;
    let pulses = base
        .pulses()
        .iter()
        .map(|tp| {
            let detuning = match tp.pulse.kind {
                PulseKind::RydMap => TAU * p.map_detuning_hz,
                _ => TAU * p.ryd_detuning_hz,
            };
            tp.pulse.clone().with_detuning(detuning)
        })
        .collect();
    SequenceSpec::back_to_back(pulses, base.blockade_shift_rad_per_s, base.initial_state)
}

/// Ensemble-averaged state at the end of the entangling sequence, loss included.
pub fn entangled_state(cfg: &ExperimentConfig, noise: &NoiseSpec, shots: usize) -> Result<DensityMatrix> {
    let seq = entangle_sequence(cfg)?;
    let dt = cfg.dt_s.unwrap_or_else(|| suggested_dt(&seq, noise));
    Ok(run_ensemble(&seq, noise, shots, cfg.seed, &EnsembleOptions { dt })?.mean_rho_final)
}

/// Applies a noiseless global Raman rotation by θ. Loss and the Rydberg
/// interaction do not act on the qubit levels during the rotation, so rotating
/// the ensemble mean equals averaging rotated shots.
pub fn rotate_both(rho: &DensityMatrix, omega_raman: f64, theta: f64) -> Result<DensityMatrix> {
    let seq = build_rotation_sequence(omega_raman, theta, PairIndex::new(AtomLevel::Down, AtomLevel::Down))?;
    if seq.pulses().is_empty() {
        return Ok(rho.clone());
    }
    let none = NoiseSpec::none();
    let dt = suggested_dt(&seq, &none);
    Ok(evolve_lindblad(rho, &seq, &none, &ShotParams::ideal(), &EvolveOptions::new(dt))?.into_final())
}

fn run_parity_scan(cfg: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    let thetas = scan_of(cfg)?.values();
    let rho = entangled_state(cfg, &cfg.noise.to_spec(), cfg.shots)?;
    let omega = cfg.physics.raman_rabi();
    let probs = thetas
        .iter()
        .map(|&th| outcome_probabilities(&rotate_both(&rho, omega, th)?, Detection::PushOut))
        .collect::<Result<Vec<_>>>()?;
    finish_rows(cfg, &thetas, probs)
}

/// Runs a scan experiment and returns its table.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ScanRow>> {
    match cfg.experiment {
        ExperimentKind::RamanRabi | ExperimentKind::RydbergSingle | ExperimentKind::RydbergPair => run_time_scan(cfg),
        ExperimentKind::EntangleParity => run_parity_scan(cfg),
        ExperimentKind::Calibrate => {
            Err(Error::Config("experiment calibrate has no scan; use the calibrate subcommand".into()))
        }
    }
}

pub fn fit_time_scan(kind: ExperimentKind, rows: &[ScanRow]) -> Result<RabiFit> {
    let samples = rows.iter().map(|r| Ok((r.scan_value, rabi_signal(kind, &r.probs)?))).collect::<Result<Vec<_>>>()?;
    fit_rabi(&samples)
}

/// Pair survival assumed by the fidelity renormalization: an explicit
/// per-atom loss in `[analysis]`, else the configured extra loss (zero by default).
pub fn pair_survival(cfg: &ExperimentConfig) -> Result<f64> {
    let p = cfg.analysis.atom_loss_prob.unwrap_or(cfg.noise.extra_loss_prob);
    Ok(1.0 - pair_loss_probability(p)?)
}

pub fn fit_parity_scan(cfg: &ExperimentConfig, rows: &[ScanRow]) -> Result<FidelityReport> {
    let scan = ParityScan::new(rows.iter().map(|r| (r.scan_value, r.probs)).collect())?;
    extract_fidelity(&scan, Some(pair_survival(cfg)?))
}

/// One objective evaluation of the calibration search.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPoint {
    pub noise: NoiseConfig,
    pub probs: OutcomeProbs,
    pub objective: f64,
}

impl CalibrationPoint {
    /// (P11, P01, P10, P00) minus the target, in the target's order.
    pub fn residuals(&self, target: &[f64; 4]) -> [f64; 4] {
        let p = &self.probs;
        [p.p11 - target[0], p.p01 - target[1], p.p10 - target[2], p.p00 - target[3]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub best: CalibrationPoint,
    pub evaluations: usize,
    pub sweeps_done: usize,
}

/// Push-out outcome probabilities right after the entangling sequence.
pub fn entangle_outcome(cfg: &ExperimentConfig, noise: &NoiseConfig, shots: usize) -> Result<OutcomeProbs> {
    outcome_probabilities(&entangled_state(cfg, &noise.to_spec(), shots)?, Detection::PushOut)
}

/// Coordinate descent over the configured grid: each sweep visits the
/// parameters in name order and keeps the grid value with the lowest sum of
/// squared residuals. Stops after a sweep without improvement.
pub fn calibrate(cfg: &ExperimentConfig, mut progress: impl FnMut(&str, &CalibrationPoint)) -> Result<CalibrationResult> {
    let cal = cfg.calibrate.as_ref().ok_or_else(|| Error::Config("field `calibrate`: section required".into()))?;
    let evaluate = |noise: &NoiseConfig| -> Result<CalibrationPoint> {
        let probs = entangle_outcome(cfg, noise, cal.shots)?;
        let mut point = CalibrationPoint { noise: noise.clone(), probs, objective: 0.0 };
        point.objective = point.residuals(&cal.target).iter().map(|r| r * r).sum();
        Ok(point)
    };
    let mut best = evaluate(&cfg.noise)?;
    let mut evaluations = 1;
    progress("start", &best);
    let mut sweeps_done = 0;
    for _ in 0..cal.sweeps {
        sweeps_done += 1;
        let mut improved = false;
        for (name, axis) in &cal.grid {
            let current = get_noise_parameter(&best.noise, name).expect("validated name");
            for value in axis.values() {
                if value == current {
                    continue;
                }
                let mut noise = best.noise.clone();
                if set_noise_parameter(&mut noise, name, value).is_err() || noise.to_spec().validate().is_err() {
                    continue;
                }
                let point = evaluate(&noise)?;
                evaluations += 1;
                if point.objective < best.objective {
                    best = point;
                    improved = true;
                }
            }
            progress(name, &best);
        }
        if !improved {
            break;
        }
    }
    Ok(CalibrationResult { best, evaluations, sweeps_done })
}

/// Loadable config holding the calibrated noise, set up as a parity run, with
/// the achieved probabilities and residuals as leading comments.
pub fn calibrated_config_text(cfg: &ExperimentConfig, result: &CalibrationResult) -> Result<String> {
    let cal = cfg.calibrate.as_ref().ok_or_else(|| Error::Config("field `calibrate`: section required".into()))?;
    let mut out = cfg.clone();
    out.experiment = ExperimentKind::EntangleParity;
    out.noise = result.best.noise.clone();
    out.shots = cal.shots;
    out.calibrate = None;
    out.output = None;
    if out.scan.is_none() {
        out.scan = Some(default_parity_scan());
    }
    let p = &result.best.probs;
    let r = result.best.residuals(&cal.target);
    let mut text = String::new();
    text.push_str("# Noise model found by `rydsim calibrate`.\n");
    text.push_str(&format!(
        "# target   (P11, P01, P10, P00) = ({:.4}, {:.4}, {:.4}, {:.4})\n",
        cal.target[0], cal.target[1], cal.target[2], cal.target[3]
    ));
    text.push_str(&format!(
        "# achieved (P11, P01, P10, P00) = ({:.4}, {:.4}, {:.4}, {:.4})\n",
        p.p11, p.p01, p.p10, p.p00
    ));
    text.push_str(&format!("# residuals = ({:+.4}, {:+.4}, {:+.4}, {:+.4})\n", r[0], r[1], r[2], r[3]));
    text.push_str(&format!(
        "# objective = {:.6e} after {} evaluations in {} sweeps, {} shots each, seed {}\n\n",
        result.best.objective, result.evaluations, result.sweeps_done, cal.shots, cfg.seed
    ));
    text.push_str(&out.to_toml_string()?);
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parity_cfg() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
experiment = "entangle_parity"
seed = 1
[physics]
blockade_shift_hz = 700e6
[scan]
start = 0.0
stop = 6.283185307179586
points = 12
include_stop = false
"#,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_parity_scan_gives_bell_fidelity() {
        let cfg = parity_cfg();
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 12);
        let report = fit_parity_scan(&cfg, &rows).unwrap();
        assert!((report.fidelity - 1.0).abs() < 5e-3, "{report:?}");
        assert_eq!(report.fidelity_renormalized, Some(report.fidelity));
    }

    #[test]
    fn signal_selection() {
        let p = OutcomeProbs::new(0.1, 0.2, 0.3, 0.4).unwrap();
        assert!((rabi_signal(ExperimentKind::RamanRabi, &p).unwrap() - 0.3).abs() < 1e-15);
        assert!((rabi_signal(ExperimentKind::RydbergSingle, &p).unwrap() - 0.7).abs() < 1e-15);
        assert!((rabi_signal(ExperimentKind::RydbergPair, &p).unwrap() - 0.5).abs() < 1e-15);
        assert!(rabi_signal(ExperimentKind::EntangleParity, &p).is_err());
    }

    #[test]
    fn time_scan_starts_at_initial_state() {
        let cfg = ExperimentConfig::from_toml_str(
            "experiment = \"raman_rabi\"\nseed = 3\n[scan]\nstart = 0.0\nstop = 2e-6\npoints = 5\n",
        )
        .unwrap();
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows[0].probs.as_array(), [0.0, 0.0, 0.0, 1.0]);
        // t = 2 µs is a π pulse at 250 kHz.
        assert!((rows[4].probs.present_a() - 1.0).abs() < 1e-6);
    }
}
