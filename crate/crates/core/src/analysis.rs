//! Estimators applied to simulated (or measured) scans.
//!
//! * [`fit_rabi`]: Gaussian-damped Rabi oscillation, FFT-seeded grid search
//!   followed by Gauss-Newton refinement.
//! * [`extract_fidelity`]: Bell-state fidelity from a global-rotation scan of
//!   the joint "both present" probability.
//! * Loss bookkeeping: [`pair_loss_probability`], [`renormalized_fidelity`].

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::measurement::OutcomeProbs;

/// Least-squares fit of P(t) = offset + (contrast/2)·[1 − cos(ωt)·exp(−(σ·ωt)²/2)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RabiFit {
    pub frequency_rad_per_s: f64,
    pub contrast: f64,
    /// Relative Gaussian frequency spread σ.
    pub decay: f64,
    pub offset: f64,
    pub residual_rms: f64,
    /// False when the data carry no oscillation (frequency is then a placeholder).
    pub identifiable: bool,
    pub iterations: usize,
}

impl RabiFit {
    pub fn frequency_hz(&self) -> f64 {
        self.frequency_rad_per_s / TAU
    }

    pub fn model(&self, t: f64) -> f64 {
        rabi_model(t, self.frequency_rad_per_s, self.contrast, self.decay * self.decay, self.offset)
    }
}

fn rabi_model(t: f64, omega: f64, contrast: f64, var: f64, offset: f64) -> f64 {
    let wt = omega * t;
    offset + 0.5 * contrast * (1.0 - wt.cos() * (-0.5 * var * wt * wt).exp())
}

const MIN_RABI_SAMPLES: usize = 10;
const MAX_GN_ITERATIONS: usize = 200;
const FLAT_DATA_STD: f64 = 1e-6;

fn sse(samples: &[(f64, f64)], p: &[f64; 4]) -> f64 {
    samples
        .iter()
        .map(|&(t, y)| {
            let r = y - rabi_model(t, p[0], p[1], p[2], p[3]);
            r * r
        })
        .sum()
}

/// Periodogram peak of the mean-removed samples (rad/s).
fn spectral_peak(samples: &[(f64, f64)]) -> f64 {
    let n = samples.len();
    let mean = samples.iter().map(|s| s.1).sum::<f64>() / n as f64;
    let t0 = samples[0].0;
    let span = samples[n - 1].0 - t0;
    let step = span / (n - 1) as f64;
    let uniform = samples.windows(2).all(|w| ((w[1].0 - w[0].0) - step).abs() <= 1e-6 * step);
    if uniform {
        let len = (8 * n).next_power_of_two();
        let mut buf: Vec<Complex<f64>> = samples.iter().map(|s| Complex::new(s.1 - mean, 0.0)).collect();
        buf.resize(len, Complex::new(0.0, 0.0));
        FftPlanner::new().plan_fft_forward(len).process(&mut buf);
        let k = (1..len / 2)
            .max_by(|&a, &b| buf[a].norm_sqr().total_cmp(&buf[b].norm_sqr()))
            .unwrap_or(1);
        TAU * k as f64 / (len as f64 * step)
    } else {
        // direct DFT on a grid up to the mean-spacing Nyquist frequency
        let nyquist = PI / (span / (n - 1) as f64);
        let grid = 8 * n;
        (1..=grid)
            .map(|i| nyquist * i as f64 / grid as f64)
            .max_by(|&a, &b| power(samples, mean, t0, a).total_cmp(&power(samples, mean, t0, b)))
            .unwrap_or(TAU / span)
    }
}

fn power(samples: &[(f64, f64)], mean: f64, t0: f64, omega: f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for &(t, y) in samples {
        let ph = omega * (t - t0);
        c += (y - mean) * ph.cos();
        s += (y - mean) * ph.sin();
    }
    c * c + s * s
}

/// Undamped linear fit y = α + β·cos(ωt) at fixed ω; returns (sse, offset, contrast).
fn linear_at(samples: &[(f64, f64)], omega: f64) -> (f64, f64, f64) {
    let (mut s1, mut sc, mut scc, mut sy, mut scy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, y) in samples {
        let c = (omega * t).cos();
        s1 += 1.0;
        sc += c;
        scc += c * c;
        sy += y;
        scy += c * y;
    }
    let det = s1 * scc - sc * sc;
    if det.abs() < 1e-300 {
        return (f64::INFINITY, sy / s1, 0.0);
    }
    let alpha = (scc * sy - sc * scy) / det;
    let beta = (s1 * scy - sc * sy) / det;
    let contrast = -2.0 * beta;
    let offset = alpha + beta;
    (sse(samples, &[omega, contrast, 0.0, offset]), offset, contrast)
}

fn describe(p: &[f64; 4], err: f64) -> String {
    format!("ω = {:.6e} rad/s, contrast = {:.4}, σ² = {:.3e}, offset = {:.4}, sse = {:.3e}", p[0], p[1], p[2], p[3], err)
}

/// Fit a damped Rabi oscillation to (time, probability) samples.
pub fn fit_rabi(samples: &[(f64, f64)]) -> Result<RabiFit> {
    if samples.len() < MIN_RABI_SAMPLES {
        return Err(Error::Fit {
            reason: format!("need at least {MIN_RABI_SAMPLES} samples, got {}", samples.len()),
            best: "none".into(),
        });
    }
    if samples.iter().any(|(t, y)| !t.is_finite() || !y.is_finite()) {
        return Err(Error::Fit { reason: "non-finite sample".into(), best: "none".into() });
    }
    let mut data = samples.to_vec();
    data.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = data.len() as f64;
    let span = data[data.len() - 1].0 - data[0].0;
    if !(span > 0.0) {
        return Err(Error::Fit { reason: "samples span zero time".into(), best: "none".into() });
    }
    let mean = data.iter().map(|s| s.1).sum::<f64>() / n;
    let std = (data.iter().map(|s| (s.1 - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std < FLAT_DATA_STD {
        return Ok(RabiFit {
            frequency_rad_per_s: TAU / span,
            contrast: 0.0,
            decay: 0.0,
            offset: mean,
            residual_rms: std,
            identifiable: false,
            iterations: 0,
        });
    }

    let seed = spectral_peak(&data);
    let bin = TAU / span;
    let lo = (seed - 1.5 * bin).max(0.25 * bin);
    let hi = seed + 1.5 * bin;
    let grid = 121;
    let (mut best_w, mut best) = (seed, linear_at(&data, seed));
    for i in 0..grid {
        let w = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
        let cand = linear_at(&data, w);
        if cand.0 < best.0 {
            best_w = w;
            best = cand;
        }
    }
    let mut p = [best_w, best.2, 0.0, best.1];
    let mut err = sse(&data, &p);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_GN_ITERATIONS {
        iterations += 1;
        let step = gauss_newton_step(&data, &p);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = [p[0] + scale * step[0], p[1] + scale * step[1], p[2] + scale * step[2], p[3] + scale * step[3]];
            trial[2] = trial[2].max(0.0);
            if trial[0] > 0.0 {
                let e = sse(&data, &trial);
                if e < err {
                    accepted = Some((trial, e));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((trial, e)) => {
                let gain = err - e;
                let moved = (trial[0] - p[0]).abs() / p[0];
                p = trial;
                err = e;
                if gain <= 1e-14 * err + 1e-300 || moved < 1e-13 {
                    converged = true;
                    break;
                }
            }
            None => {
                // no descent direction left: at a (constrained) minimum
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Fit {
            reason: format!("Gauss-Newton did not converge in {MAX_GN_ITERATIONS} iterations"),
            best: describe(&p, err),
        });
    }
    Ok(RabiFit {
        frequency_rad_per_s: p[0],
        contrast: p[1].clamp(0.0, 1.0),
        decay: p[2].sqrt(),
        offset: p[3],
        residual_rms: (err / n).sqrt(),
        identifiable: true,
        iterations,
    })
}

/// Solves the (lightly damped) normal equations for p = (ω, contrast, σ², offset).
/// σ² is frozen while it sits on its lower bound and the step would push it below.
fn gauss_newton_step(data: &[(f64, f64)], p: &[f64; 4]) -> [f64; 4] {
    let (w, c, v, off) = (p[0], p[1], p[2], p[3]);
    let mut jtj = Matrix4::<f64>::zeros();
    let mut jtr = Vector4::<f64>::zeros();
    for &(t, y) in data {
        let wt = w * t;
        let e = (-0.5 * v * wt * wt).exp();
        let (s, co) = wt.sin_cos();
        let r = y - (off + 0.5 * c * (1.0 - co * e));
        let j = Vector4::new(
            0.5 * c * e * (s * t + co * v * w * t * t),
            0.5 * (1.0 - co * e),
            0.25 * c * co * e * wt * wt,
            1.0,
        );
        jtj += j * j.transpose();
        jtr += j * r;
    }
    let damp = 1e-12;
    let mut full = jtj;
    for i in 0..4 {
        full[(i, i)] += damp * jtj[(i, i)].max(1e-300);
    }
    let step = full.lu().solve(&jtr).unwrap_or_else(Vector4::zeros);
    if v <= 0.0 && step[2] < 0.0 {
        // active-set solve without σ²
        let idx = [0usize, 1, 3];
        let mut a = Matrix3::<f64>::zeros();
        let mut b = Vector3::<f64>::zeros();
        for (ri, &i) in idx.iter().enumerate() {
            b[ri] = jtr[i];
            for (ci, &j) in idx.iter().enumerate() {
                a[(ri, ci)] = full[(i, j)];
            }
        }
        let s = a.lu().solve(&b).unwrap_or_else(Vector3::zeros);
        return [s[0], s[1], 0.0, s[2]];
    }
    [step[0], step[1], step[2], step[3]]
}

/// Ratio of the pair (collective) to the single-atom Rabi frequency.
pub fn frequency_ratio(pair_fit: &RabiFit, single_fit: &RabiFit) -> f64 {
    pair_fit.frequency_rad_per_s / single_fit.frequency_rad_per_s
}

/// Joint outcomes after a global Raman rotation by θ of both atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityScan {
    samples: Vec<(f64, OutcomeProbs)>,
}

pub const MIN_PARITY_SAMPLES: usize = 8;

impl ParityScan {
    /// Needs ≥ 8 samples whose θ values cover a full period. A uniform grid
    /// θ_k = 2πk/N (no duplicated endpoint) counts as covering it.
    pub fn new(mut samples: Vec<(f64, OutcomeProbs)>) -> Result<Self> {
        if samples.len() < MIN_PARITY_SAMPLES {
            return Err(Error::InvalidArgument(format!(
                "parity scan needs at least {MIN_PARITY_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        for (theta, probs) in &samples {
            if !theta.is_finite() {
                return Err(Error::InvalidArgument("non-finite rotation angle".into()));
            }
            probs.validate()?;
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = samples.len() as f64;
        let span = samples[samples.len() - 1].0 - samples[0].0;
        let coverage = span * n / (n - 1.0);
        if coverage < TAU * (1.0 - 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "parity scan covers {coverage:.4} rad, needs a full 2π"
            )));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, OutcomeProbs)] {
        &self.samples
    }
}

/// Result of the parity-scan analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    /// ⟨Ψ⁺|ρ|Ψ⁺⟩ over all events, lost atoms counted as outcome 0 (clamped to [0, 1]).
    pub fidelity: f64,
    pub fidelity_unclamped: f64,
    pub pair_survival: Option<f64>,
    pub fidelity_renormalized: Option<f64>,
    /// P₁₁(θ) ≈ a + b·cosθ + c2·cos2θ
    pub a: f64,
    pub b: f64,
    pub c2: f64,
    /// P₁₁(0), estimates the |↓↓⟩ population.
    pub p_down_down: f64,
    /// P₁₁(π), estimates the |↑↑⟩ population.
    pub p_up_up: f64,
    /// P₀₁(0) + P₁₀(0)
    pub single_sum: f64,
    /// Re⟨↓↑|ρ|↑↓⟩ estimate.
    pub coherence: f64,
}

impl FidelityReport {
    pub const ASSUMPTION: &'static str = "estimator assumes no |down,down>-|up,up> coherence";
}

/// Equal-weight least squares of y(θ) = a + b·cosθ + c2·cos2θ.
fn fit_cosine_series(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for &(theta, y) in points {
        let row = Vector3::new(1.0, theta.cos(), (2.0 * theta).cos());
        ata += row * row.transpose();
        aty += row * y;
    }
    let sol = ata
        .lu()
        .solve(&aty)
        .ok_or_else(|| Error::ModelViolation("rotation angles do not determine the cosine series".into()))?;
    Ok((sol[0], sol[1], sol[2]))
}

fn at_zero(scan: &ParityScan, f: impl Fn(&OutcomeProbs) -> f64) -> Result<f64> {
    if let Some((_, p)) = scan.samples.iter().find(|(th, _)| (th.rem_euclid(TAU)).min(TAU - th.rem_euclid(TAU)) < 1e-9) {
        return Ok(f(p));
    }
    let pts: Vec<_> = scan.samples.iter().map(|(th, p)| (*th, f(p))).collect();
    let (a, b, c) = fit_cosine_series(&pts)?;
    Ok(a + b + c)
}

/// Bell-state fidelity from a parity scan.
///
/// With R(θ) applied to both atoms, the "both present" signal is fitted as
/// P₁₁(θ) = A + B·cosθ + C₂·cos2θ. Then p↓↓ = P₁₁(0), p↑↑ = P₁₁(π),
/// s = P₀₁(0) + P₁₀(0), the coherence c = (p↓↓ + p↑↑ − s − 8C₂)/2 and F = s/2 + c.
pub fn extract_fidelity(scan: &ParityScan, pair_survival: Option<f64>) -> Result<FidelityReport> {
    let pts: Vec<_> = scan.samples.iter().map(|(th, p)| (*th, p.p11)).collect();
    let (a, b, c2) = fit_cosine_series(&pts)?;
    let p_down_down = a + b + c2;
    let p_up_up = a - b + c2;
    let single_sum = at_zero(scan, OutcomeProbs::single)?;
    let coherence = 0.5 * (p_down_down + p_up_up - single_sum - 8.0 * c2);
    let f = 0.5 * single_sum + coherence;
    if !(-0.05..=1.05).contains(&f) {
        return Err(Error::ModelViolation(format!("fitted fidelity {f:.4} outside [-0.05, 1.05]")));
    }
    let fidelity = f.clamp(0.0, 1.0);
    let fidelity_renormalized = match pair_survival {
        Some(s) => Some(renormalized_fidelity(fidelity, 1.0 - s)?),
        None => None,
    };
    Ok(FidelityReport {
        fidelity,
        fidelity_unclamped: f,
        pair_survival,
        fidelity_renormalized,
        a,
        b,
        c2,
        p_down_down,
        p_up_up,
        single_sum,
        coherence,
    })
}

/// Probability that at least one of two atoms is lost, 2p(1−p) + p².
pub fn pair_loss_probability(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("loss probability {p} outside [0, 1]")));
    }
    Ok(2.0 * p * (1.0 - p) + p * p)
}

/// F / (1 − pair_loss): fidelity conditioned on both atoms staying in the qubit levels.
pub fn renormalized_fidelity(fidelity: f64, pair_loss: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&pair_loss) {
        return Err(Error::InvalidArgument(format!(
            "pair loss {pair_loss} must lie in [0, 1) for any pair to survive"
        )));
    }
    Ok(fidelity / (1.0 - pair_loss))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin2_samples(omega: f64, t_max: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let t = t_max * i as f64 / (n - 1) as f64;
                (t, (0.5 * omega * t).sin().powi(2))
            })
            .collect()
    }

    #[test]
    fn exact_rabi_recovered() {
        let omega = TAU * 250e3;
        let fit = fit_rabi(&sin2_samples(omega, 8e-6, 60)).unwrap();
        assert!((fit.frequency_rad_per_s / omega - 1.0).abs() < 1e-3, "{fit:?}");
        assert!((fit.contrast - 1.0).abs() < 0.01);
        assert!(fit.decay < 1e-3);
        assert!(fit.identifiable);
    }

    #[test]
    fn damped_rabi_recovered() {
        let omega = TAU * 1e6;
        let data: Vec<_> = (0..80)
            .map(|i| {
                let t = 5e-6 * i as f64 / 79.0;
                (t, rabi_model(t, omega, 0.9, 0.03f64.powi(2), 0.04))
            })
            .collect();
        let fit = fit_rabi(&data).unwrap();
        assert!((fit.frequency_rad_per_s / omega - 1.0).abs() < 1e-6);
        assert!((fit.decay - 0.03).abs() < 1e-6);
        assert!((fit.contrast - 0.9).abs() < 1e-6);
        assert!((fit.offset - 0.04).abs() < 1e-6);
    }

    #[test]
    fn flat_data_is_degenerate_not_error() {
        let data: Vec<_> = (0..20).map(|i| (i as f64 * 1e-7, 0.3)).collect();
        let fit = fit_rabi(&data).unwrap();
        assert!(fit.contrast.abs() < 0.01);
        assert!(!fit.identifiable);
        assert!(fit.frequency_rad_per_s > 0.0);
    }

    #[test]
    fn too_few_samples() {
        let data = sin2_samples(1e6, 1e-5, 9);
        assert!(matches!(fit_rabi(&data), Err(Error::Fit { .. })));
    }

    #[test]
    fn nonuniform_sampling() {
        let omega = TAU * 250e3;
        let data: Vec<_> = (0..50)
            .map(|i| {
                let t = 8e-6 * ((i as f64 + 0.3 * ((i * 7) % 5) as f64 / 5.0) / 50.0);
                (t, (0.5 * omega * t).sin().powi(2))
            })
            .collect();
        let fit = fit_rabi(&data).unwrap();
        assert!((fit.frequency_rad_per_s / omega - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_fits_ratio_one() {
        let fit = fit_rabi(&sin2_samples(TAU * 7e6, 5e-7, 40)).unwrap();
        assert_eq!(frequency_ratio(&fit, &fit), 1.0);
    }

    fn probs(p11: f64, single: f64) -> OutcomeProbs {
        OutcomeProbs { p11, p10: 0.5 * single, p01: 0.5 * single, p00: 1.0 - p11 - single }
    }

    #[test]
    fn ideal_bell_scan() {
        // P₁₁(θ) = (1 − cos2θ)/4, single-count sum 1 at θ = 0
        let samples: Vec<_> = (0..16)
            .map(|k| {
                let th = TAU * k as f64 / 16.0;
                let p11 = (1.0 - (2.0 * th).cos()) / 4.0;
                let single = if k == 0 { 1.0 } else { 0.5 };
                (th, probs(p11, single))
            })
            .collect();
        let rep = extract_fidelity(&ParityScan::new(samples).unwrap(), None).unwrap();
        assert!((rep.c2 + 0.25).abs() < 1e-12);
        assert!((rep.coherence - 0.5).abs() < 1e-12);
        assert!((rep.fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn incoherent_mixture_scan() {
        let samples: Vec<_> = (0..16)
            .map(|k| {
                let th = TAU * k as f64 / 16.0;
                (th, probs((1.0 - (2.0 * th).cos()) / 8.0, if k == 0 { 1.0 } else { 0.6 }))
            })
            .collect();
        let rep = extract_fidelity(&ParityScan::new(samples).unwrap(), Some(0.5)).unwrap();
        assert!(rep.coherence.abs() < 1e-12);
        assert!((rep.fidelity - 0.5).abs() < 1e-12);
        assert!((rep.fidelity_renormalized.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scan_validation() {
        let short: Vec<_> = (0..7).map(|k| (k as f64, probs(0.0, 1.0))).collect();
        assert!(ParityScan::new(short).is_err());
        let half: Vec<_> = (0..10).map(|k| (PI * k as f64 / 9.0, probs(0.0, 1.0))).collect();
        assert!(ParityScan::new(half).is_err());
        let inclusive: Vec<_> = (0..9).map(|k| (TAU * k as f64 / 8.0, probs(0.0, 1.0))).collect();
        assert!(ParityScan::new(inclusive).is_ok());
    }

    #[test]
    fn unphysical_scan_rejected() {
        let samples: Vec<_> = (0..16).map(|k| (TAU * k as f64 / 16.0, probs(0.0, 1.0))).collect();
        // constant P₁₁ = 0 with s = 1 gives F = 0.5; make s inconsistent instead
        let mut bad = samples.clone();
        for (th, p) in bad.iter_mut() {
            *p = probs(0.45 + 0.45 * (2.0 * *th).cos(), 0.0);
        }
        assert!(matches!(extract_fidelity(&ParityScan::new(bad).unwrap(), None), Err(Error::ModelViolation(_))));
    }

    #[test]
    fn pair_loss_examples() {
        assert!((pair_loss_probability(0.22).unwrap() - 0.3916).abs() < 1e-15);
        assert_eq!(pair_loss_probability(0.0).unwrap(), 0.0);
        assert_eq!(pair_loss_probability(1.0).unwrap(), 1.0);
        assert!(pair_loss_probability(-0.1).is_err());
        assert!(pair_loss_probability(1.1).is_err());
    }

    #[test]
    fn renormalization_examples() {
        assert!((renormalized_fidelity(0.46, 0.39).unwrap() - 0.754).abs() < 5e-4);
        assert_eq!(renormalized_fidelity(0.7, 0.0).unwrap(), 0.7);
        assert!((renormalized_fidelity(0.305, 0.39).unwrap() - 0.5).abs() < 1e-12);
        assert!(renormalized_fidelity(0.5, 1.0).is_err());
    }
}
