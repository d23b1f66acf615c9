//! Time evolution of one shot (Schrödinger or Lindblad, fixed-step RK4) and
//! Monte Carlo ensembles over the shot-to-shot noise.
//!
//! Pulses are square, so the generator is piecewise constant. The integrator
//! walks the constant segments between pulse edges and divides each into
//! equal steps no longer than the requested `dt`; no step straddles an edge.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::physics::{
    collapse_from_pulses, hamiltonian_from_pulses, sample_shot_params, NoiseSpec, SequenceSpec, ShotParams,
};
use crate::qstate::{validate_density, Atom, CMatrix, CVector, DensityMatrix, PairIndex, PureState, DIM};

/// States sampled along one evolution.
#[derive(Debug, Clone)]
pub struct Trajectory<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    /// Integration steps taken; every one of them passed the state checks.
    pub steps: usize,
}

impl<S> Trajectory<S> {
    pub fn final_state(&self) -> &S {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn into_final(mut self) -> S {
        self.states.pop().expect("trajectory always holds the initial state")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    /// Maximum step length (s).
    pub dt: f64,
    /// Record every n-th step in addition to pulse edges. `None` records edges only.
    pub record_every: Option<usize>,
}

impl EvolveOptions {
    pub fn new(dt: f64) -> Self {
        Self { dt, record_every: None }
    }

    pub fn record_every(mut self, n: usize) -> Self {
        self.record_every = Some(n.max(1));
        self
    }
}

/// Step that resolves the fastest frequency in the sequence to 0.01 rad,
/// the shortest pulse to 1/100 and the fastest collapse rate to 1/10.
pub fn suggested_dt(seq: &SequenceSpec, noise: &NoiseSpec) -> f64 {
    let mut fastest: f64 = 0.0;
    let mut rydberg = false;
    for p in seq.pulses() {
        let pulse = &p.pulse;
        fastest = fastest.max(pulse.rabi_rad_per_s + pulse.detuning_rad_per_s.abs());
        rydberg |= pulse.kind.is_rydberg();
    }
    if rydberg {
        fastest = fastest.max(seq.blockade_shift_rad_per_s.abs());
    }
    let mut dt = f64::INFINITY;
    if fastest > 0.0 {
        dt = dt.min(0.01 / fastest);
    }
    if let Some(shortest) = seq.shortest_pulse() {
        dt = dt.min(shortest / 100.0);
    }
    let rate = noise.max_collapse_rate();
    if rate > 0.0 {
        dt = dt.min(0.1 / rate);
    }
    if dt.is_finite() {
        dt
    } else {
        1e-9
    }
}

fn check_dt_unitary(seq: &SequenceSpec, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if let Some(shortest) = seq.shortest_pulse() {
        let max = shortest / 100.0;
        if dt > max * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, max });
        }
    }
    Ok(())
}

fn check_dt_lindblad(seq: &SequenceSpec, noise: &NoiseSpec, dt: f64) -> Result<()> {
    check_dt_unitary(seq, dt)?;
    let rate = noise.max_collapse_rate();
    if rate > 0.0 {
        let max = 0.1 / rate;
        if dt > max * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, max });
        }
    }
    Ok(())
}

/// Nonzero entries of a 25×25 operator.
#[derive(Debug, Clone)]
struct SparseOp {
    entries: Vec<(usize, usize, Complex64)>,
}

impl SparseOp {
    fn from_dense(m: &CMatrix) -> Self {
        let mut entries = Vec::new();
        for j in 0..DIM {
            for i in 0..DIM {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        Self { entries }
    }

    /// out = M·v
    fn apply_vec(&self, v: &CVector, out: &mut CVector) {
        out.fill(Complex64::new(0.0, 0.0));
        for &(i, j, m) in &self.entries {
            out[i] += m * v[j];
        }
    }

    /// out = M·ρ (column-major storage)
    fn apply_left(&self, rho: &CMatrix, out: &mut CMatrix) {
        out.fill(Complex64::new(0.0, 0.0));
        let r = rho.as_slice();
        let o = out.as_mut_slice();
        for &(i, j, m) in &self.entries {
            for k in 0..DIM {
                o[k * DIM + i] += m * r[k * DIM + j];
            }
        }
    }

    /// out += Y·M†
    fn add_right_adjoint(&self, y: &CMatrix, out: &mut CMatrix) {
        let ys = y.as_slice();
        let o = out.as_mut_slice();
        for &(b, j, m) in &self.entries {
            let c = m.conj();
            for a in 0..DIM {
                o[b * DIM + a] += ys[j * DIM + a] * c;
            }
        }
    }
}

/// Constant Lindblad generator of one segment: dρ/dt = X + X† + Σ γ LρL†, X = −i·H_eff·ρ.
struct Generator {
    /// −i·H_eff with H_eff = H − (i/2)Σ γ L†L
    minus_i_heff: SparseOp,
    jumps: Vec<(f64, SparseOp)>,
}

impl Generator {
    fn new(h: &CMatrix, collapse: &[crate::physics::CollapseOperator]) -> Self {
        let mut heff = *h;
        let mut jumps = Vec::with_capacity(collapse.len());
        for c in collapse {
            let ldl = c.operator.adjoint() * c.operator;
            heff -= ldl * Complex64::new(0.0, 0.5 * c.rate);
            jumps.push((c.rate, SparseOp::from_dense(&c.operator)));
        }
        let minus_i_heff = SparseOp::from_dense(&(heff * Complex64::new(0.0, -1.0)));
        Self { minus_i_heff, jumps }
    }

    fn derivative(&self, rho: &CMatrix, out: &mut CMatrix, scratch: &mut CMatrix) {
        self.minus_i_heff.apply_left(rho, scratch);
        *out = *scratch + scratch.adjoint();
        for (rate, l) in &self.jumps {
            l.apply_left(rho, scratch);
            *scratch *= Complex64::from(*rate);
            l.add_right_adjoint(scratch, out);
        }
    }
}

fn symmetrize(m: &mut CMatrix) {
    for i in 0..DIM {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..DIM {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

struct Segment {
    start: f64,
    len: f64,
    steps: usize,
}

fn segments(seq: &SequenceSpec, dt: f64) -> Vec<Segment> {
    seq.segment_edges()
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let len = w[1] - w[0];
            let steps = ((len / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            Segment { start: w[0], len, steps }
        })
        .collect()
}

struct Recorder<S> {
    every: Option<usize>,
    traj: Trajectory<S>,
}

impl<S: Clone> Recorder<S> {
    fn new(every: Option<usize>, initial: &S) -> Self {
        Self { every, traj: Trajectory { times: vec![0.0], states: vec![initial.clone()], steps: 0 } }
    }

    fn after_step(&mut self, t: f64, state: &S, segment_end: bool) {
        self.traj.steps += 1;
        let by_stride = self.every.is_some_and(|n| self.traj.steps.is_multiple_of(n));
        let last = *self.traj.times.last().expect("nonempty");
        if (by_stride || segment_end) && t > last {
            self.traj.times.push(t);
            self.traj.states.push(state.clone());
        }
    }
}

/// Schrödinger evolution with fixed-step RK4, renormalizing after each step.
pub fn evolve_unitary(
    psi0: &PureState,
    seq: &SequenceSpec,
    shot: &ShotParams,
    opts: &EvolveOptions,
) -> Result<Trajectory<PureState>> {
    check_dt_unitary(seq, opts.dt)?;
    let mut psi = *psi0.amplitudes();
    let mut rec = Recorder::new(opts.record_every, psi0);
    let (mut k1, mut k2, mut k3, mut k4) = (CVector::zeros(), CVector::zeros(), CVector::zeros(), CVector::zeros());
    for seg in segments(seq, opts.dt) {
        let mid = seg.start + 0.5 * seg.len;
        let h = hamiltonian_from_pulses(seq.active_pulses(mid), seq.blockade_shift_rad_per_s, shot);
        let gen = SparseOp::from_dense(&(h * Complex64::new(0.0, -1.0)));
        let step = seg.len / seg.steps as f64;
        let half = Complex64::from(0.5 * step);
        let full = Complex64::from(step);
        for n in 0..seg.steps {
            gen.apply_vec(&psi, &mut k1);
            gen.apply_vec(&(psi + k1 * half), &mut k2);
            gen.apply_vec(&(psi + k2 * half), &mut k3);
            gen.apply_vec(&(psi + k3 * full), &mut k4);
            psi += (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * Complex64::from(step / 6.0);
            let norm = psi.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::IntegrationInvariant {
                    time: seg.start + (n + 1) as f64 * step,
                    reason: format!("state norm became {norm}"),
                });
            }
            psi /= Complex64::from(norm);
            let t = seg.start + (n + 1) as f64 * step;
            rec.after_step(t, &PureState::from_raw(psi), n + 1 == seg.steps);
        }
    }
    Ok(rec.traj)
}

/// Lindblad evolution with fixed-step RK4. Every step is symmetrized and then
/// checked for Hermiticity, unit trace and positivity.
pub fn evolve_lindblad(
    rho0: &DensityMatrix,
    seq: &SequenceSpec,
    noise: &NoiseSpec,
    shot: &ShotParams,
    opts: &EvolveOptions,
) -> Result<Trajectory<DensityMatrix>> {
    noise.validate()?;
    check_dt_lindblad(seq, noise, opts.dt)?;
    rho0.validate()?;
    let mut rho = *rho0.matrix();
    let mut rec = Recorder::new(opts.record_every, rho0);
    let mut scratch = CMatrix::zeros();
    let (mut k1, mut k2, mut k3, mut k4) = (CMatrix::zeros(), CMatrix::zeros(), CMatrix::zeros(), CMatrix::zeros());
    for seg in segments(seq, opts.dt) {
        let mid = seg.start + 0.5 * seg.len;
        let h = hamiltonian_from_pulses(seq.active_pulses(mid), seq.blockade_shift_rad_per_s, shot);
        let collapse = collapse_from_pulses(seq.active_pulses(mid), noise);
        let gen = Generator::new(&h, &collapse);
        let step = seg.len / seg.steps as f64;
        let half = Complex64::from(0.5 * step);
        let full = Complex64::from(step);
        for n in 0..seg.steps {
            gen.derivative(&rho, &mut k1, &mut scratch);
            gen.derivative(&(rho + k1 * half), &mut k2, &mut scratch);
            gen.derivative(&(rho + k2 * half), &mut k3, &mut scratch);
            gen.derivative(&(rho + k3 * full), &mut k4, &mut scratch);
            rho += (k1 + (k2 + k3) * Complex64::from(2.0) + k4) * Complex64::from(step / 6.0);
            symmetrize(&mut rho);
            let t = seg.start + (n + 1) as f64 * step;
            validate_density(&rho).map_err(|e| Error::IntegrationInvariant { time: t, reason: e.to_string() })?;
            rec.after_step(t, &DensityMatrix::from_raw(rho), n + 1 == seg.steps);
        }
    }
    Ok(rec.traj)
}

/// Outcome of one Monte Carlo shot.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotRecord {
    pub params: ShotParams,
    /// Diagonal of the shot's final density matrix, indexed by [`PairIndex::flat`].
    pub populations: [f64; DIM],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub mean_rho_final: DensityMatrix,
    pub shots: Vec<ShotRecord>,
    pub shot_count: usize,
}

impl EnsembleResult {
    /// Fraction of shots in which at least one atom was drawn as lost.
    pub fn loss_fraction(&self) -> f64 {
        self.shots.iter().filter(|s| s.params.any_loss()).count() as f64 / self.shot_count as f64
    }
}

/// Applies the shot's end-of-sequence loss draws.
pub fn apply_loss(rho: &DensityMatrix, shot: &ShotParams) -> DensityMatrix {
    let mut out = rho.clone();
    for atom in Atom::BOTH {
        if shot.loss_draws[atom.index()] {
            out = out.with_atom_lost(atom);
        }
    }
    out
}

/// Random stream for shot `index` of a run seeded with `seed`.
pub fn shot_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Shots per reduction chunk. Fixed so the summation order never depends on the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub dt: f64,
}

/// Monte Carlo average over `n_shots` noise realizations, starting from the
/// sequence's initial basis state.
pub fn run_ensemble(
    seq: &SequenceSpec,
    noise: &NoiseSpec,
    n_shots: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    let rho0 = DensityMatrix::basis(seq.initial_state);
    run_ensemble_from(&rho0, seq, noise, n_shots, seed, opts)
}

/// As [`run_ensemble`] but from an arbitrary initial state.
pub fn run_ensemble_from(
    rho0: &DensityMatrix,
    seq: &SequenceSpec,
    noise: &NoiseSpec,
    n_shots: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleResult> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one shot".into()));
    }
    noise.validate()?;
    let evolve_opts = EvolveOptions::new(opts.dt);
    let params = (0..n_shots as u64)
        .map(|i| sample_shot_params(noise, &mut shot_rng(seed, i)))
        .collect::<Result<Vec<_>>>()?;

    // Without slow noise every shot shares one Hamiltonian; only the loss draws differ.
    let shared_final = if noise.is_quasi_static_free() {
        Some(evolve_lindblad(rho0, seq, noise, &ShotParams::ideal(), &evolve_opts)?.into_final())
    } else {
        None
    };
    if let Some(base) = &shared_final {
        if params.iter().all(|p| !p.any_loss()) {
            let populations = base.populations();
            let shots = params.iter().map(|p| ShotRecord { params: *p, populations }).collect();
            return Ok(EnsembleResult { mean_rho_final: base.clone(), shots, shot_count: n_shots });
        }
    }

    let chunks: Vec<Result<(CMatrix, Vec<ShotRecord>)>> = params
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sum = CMatrix::zeros();
            let mut records = Vec::with_capacity(chunk.len());
            for p in chunk {
                let unlost = match &shared_final {
                    Some(base) => base.clone(),
                    None => evolve_lindblad(rho0, seq, noise, p, &evolve_opts)?.into_final(),
                };
                let fin = apply_loss(&unlost, p);
                records.push(ShotRecord { params: *p, populations: fin.populations() });
                sum += fin.matrix();
            }
            Ok((sum, records))
        })
        .collect();

    let mut total = CMatrix::zeros();
    let mut shots = Vec::with_capacity(n_shots);
    for chunk in chunks {
        let (sum, records) = chunk?;
        total += sum;
        shots.extend(records);
    }
    let mut mean = total / Complex64::from(n_shots as f64);
    symmetrize(&mut mean);
    let mean_rho_final = DensityMatrix::from_matrix(mean)?;
    Ok(EnsembleResult { mean_rho_final, shots, shot_count: n_shots })
}

/// Monte Carlo average over a chain of sequences applied one after another.
/// Entry `k` of the result is the mean state after stages `0..=k`, with each
/// shot's loss draws applied. Every shot keeps the same noise parameters
/// through the whole chain, so a time scan of one long pulse can be written as
/// a chain of short pulses.
pub fn run_ensemble_chain(
    rho0: &DensityMatrix,
    stages: &[SequenceSpec],
    noise: &NoiseSpec,
    n_shots: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<Vec<DensityMatrix>> {
    if n_shots == 0 {
        return Err(Error::InvalidArgument("ensemble needs at least one shot".into()));
    }
    noise.validate()?;
    rho0.validate()?;
    let evolve_opts = EvolveOptions::new(opts.dt);
    let params = (0..n_shots as u64)
        .map(|i| sample_shot_params(noise, &mut shot_rng(seed, i)))
        .collect::<Result<Vec<_>>>()?;

    let evolve_chain = |p: &ShotParams| -> Result<Vec<DensityMatrix>> {
        let mut rho = rho0.clone();
        let mut out = Vec::with_capacity(stages.len());
        for seq in stages {
            if !seq.pulses().is_empty() {
                rho = evolve_lindblad(&rho, seq, noise, p, &evolve_opts)?.into_final();
            }
            out.push(rho.clone());
        }
        Ok(out)
    };
    let shared = if noise.is_quasi_static_free() { Some(evolve_chain(&ShotParams::ideal())?) } else { None };

    let chunks: Vec<Result<Vec<CMatrix>>> = params
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut sums = vec![CMatrix::zeros(); stages.len()];
            for p in chunk {
                let owned;
                let states = match &shared {
                    Some(s) => s,
                    None => {
                        owned = evolve_chain(p)?;
                        &owned
                    }
                };
                for (sum, rho) in sums.iter_mut().zip(states) {
                    if p.any_loss() {
                        *sum += apply_loss(rho, p).matrix();
                    } else {
                        *sum += rho.matrix();
                    }
                }
            }
            Ok(sums)
        })
        .collect();

    let mut totals = vec![CMatrix::zeros(); stages.len()];
    for chunk in chunks {
        for (total, sum) in totals.iter_mut().zip(chunk?) {
            *total += sum;
        }
    }
    totals
        .into_iter()
        .map(|total| {
            let mut mean = total / Complex64::from(n_shots as f64);
            symmetrize(&mut mean);
            DensityMatrix::from_matrix(mean)
        })
        .collect()
}

/// Population of the collective single-excitation manifold {|r,↑⟩, |↑,r⟩}.
pub fn single_excitation_population(psi: &PureState) -> f64 {
    use crate::qstate::AtomLevel::{Ryd, Up};
    psi.population(PairIndex::new(Ryd, Up)) + psi.population(PairIndex::new(Up, Ryd))
}
