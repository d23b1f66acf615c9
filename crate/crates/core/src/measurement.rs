//! State detection by atom loss.
//!
//! Label 1 means the atom is still trapped at the end, 0 means it is gone.
//! With the push-out beam on, F=2 atoms are expelled so |↑⟩ reads 0 just like
//! a lost atom; without it, only Rydberg atoms (untrapped) and lost atoms read 0.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::qstate::{AtomLevel, DensityMatrix, PairIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detection {
    /// Push-out of F=2 before the recapture check.
    PushOut,
    /// Recapture check only: detects Rydberg excitation as loss.
    Recapture,
}

impl Detection {
    pub fn reads_present(self, level: AtomLevel) -> bool {
        match self {
            Detection::PushOut => matches!(level, AtomLevel::Down | AtomLevel::DarkPresent),
            Detection::Recapture => matches!(level, AtomLevel::Down | AtomLevel::Up | AtomLevel::DarkPresent),
        }
    }
}

const SUM_TOL: f64 = 1e-9;

/// Joint recapture probabilities; `p10` means atom a present, atom b absent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeProbs {
    pub p11: f64,
    pub p10: f64,
    pub p01: f64,
    pub p00: f64,
}

impl OutcomeProbs {
    pub fn new(p11: f64, p10: f64, p01: f64, p00: f64) -> Result<Self> {
        let probs = Self { p11, p10, p01, p00 };
        probs.validate()?;
        Ok(probs)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.as_array();
        if all.iter().any(|p| !(-SUM_TOL..=1.0 + SUM_TOL).contains(p)) {
            return Err(Error::InvalidArgument(format!("outcome probabilities {all:?} outside [0, 1]")));
        }
        let sum: f64 = all.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("outcome probabilities sum to {sum}")));
        }
        Ok(())
    }

    /// (p11, p10, p01, p00)
    pub fn as_array(&self) -> [f64; 4] {
        [self.p11, self.p10, self.p01, self.p00]
    }

    pub fn present_a(&self) -> f64 {
        self.p11 + self.p10
    }

    pub fn present_b(&self) -> f64 {
        self.p11 + self.p01
    }

    /// Exactly one atom present.
    pub fn single(&self) -> f64 {
        self.p10 + self.p01
    }

    pub fn from_counts(counts: &OutcomeCounts) -> Result<Self> {
        if counts.total == 0 {
            return Err(Error::InvalidArgument("no counts".into()));
        }
        let n = counts.total as f64;
        Self::new(counts.n11 as f64 / n, counts.n10 as f64 / n, counts.n01 as f64 / n, counts.n00 as f64 / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutcomeCounts {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
    pub total: u64,
}

/// Outcome probabilities from a list of diagonal populations indexed by [`PairIndex::flat`].
pub fn outcome_from_populations(populations: &[f64], detection: Detection) -> OutcomeProbs {
    let mut p = [0.0; 4];
    for idx in PairIndex::all() {
        let a = detection.reads_present(idx.level_a);
        let b = detection.reads_present(idx.level_b);
        let slot = match (a, b) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        p[slot] += populations[idx.flat()];
    }
    OutcomeProbs { p11: p[0], p10: p[1], p01: p[2], p00: p[3] }
}

pub fn outcome_probabilities(rho: &DensityMatrix, detection: Detection) -> Result<OutcomeProbs> {
    rho.validate()?;
    Ok(outcome_from_populations(&rho.populations(), detection))
}

/// Push-out detection: present ⇔ {Down, DarkPresent}.
pub fn pushout_probabilities(rho: &DensityMatrix) -> Result<OutcomeProbs> {
    outcome_probabilities(rho, Detection::PushOut)
}

/// Multinomial draw of `n` repetitions, as a chain of conditional binomials.
pub fn sample_counts(probs: &OutcomeProbs, n: u64, seed: u64) -> Result<OutcomeCounts> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one repetition".into()));
    }
    probs.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let ps = probs.as_array().map(|p| p.clamp(0.0, 1.0));
    let mut remaining = n;
    let mut remaining_p = 1.0_f64;
    let mut counts = [0u64; 4];
    for (k, p) in ps.iter().enumerate() {
        if k == 3 || remaining == 0 {
            counts[k] = remaining;
            remaining = 0;
            continue;
        }
        let q = if remaining_p > 0.0 { (p / remaining_p).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, q).map_err(|e| Error::InvalidArgument(e.to_string()))?.sample(&mut rng);
        counts[k] = draw;
        remaining -= draw;
        remaining_p -= p;
    }
    Ok(OutcomeCounts { n11: counts[0], n10: counts[1], n01: counts[2], n00: counts[3], total: n })
}
