//! Statevector simulation of the entangled ranging probe.
//!
//! Qubit `1` is the most significant bit of a basis index, so the basis string
//! `|q1 q2 … qN⟩` reads left to right. Global phases are never tracked.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::model::{validate_scheme, ProbeScheme, Sign};
use crate::{wrap_phase, Error, Result};

pub const MAX_QUBITS: usize = 12;

const DEGENERATE_AMPLITUDE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    /// `|0…0⟩` on `n_qubits` qubits.
    pub fn zero(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 {
            return Err(Error::InvalidParameter("need at least one qubit".into()));
        }
        if n_qubits > MAX_QUBITS {
            return Err(Error::Capacity(n_qubits));
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n_qubits];
        amps[0] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, basis: usize) -> Complex64 {
        self.amps[basis]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap_probability(&self, other: &StateVector) -> Result<f64> {
        if self.n_qubits != other.n_qubits {
            return Err(Error::LengthMismatch {
                what: "qubit count",
                left: self.n_qubits,
                right: other.n_qubits,
            });
        }
        let inner: Complex64 = self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum();
        Ok(inner.norm_sqr())
    }

    fn mask(&self, qubit: usize) -> usize {
        assert!(qubit >= 1 && qubit <= self.n_qubits, "qubit {qubit} out of range");
        1 << (self.n_qubits - qubit)
    }

    pub fn apply_h(&mut self, qubit: usize) {
        let bit = self.mask(qubit);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a, b) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = (a + b) * s;
                self.amps[i | bit] = (a - b) * s;
            }
        }
    }

    pub fn apply_x(&mut self, qubit: usize) {
        let bit = self.mask(qubit);
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                self.amps.swap(i, i | bit);
            }
        }
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) {
        assert_ne!(control, target);
        let (c, t) = (self.mask(control), self.mask(target));
        for i in 0..self.amps.len() {
            if i & c != 0 && i & t == 0 {
                self.amps.swap(i, i | t);
            }
        }
    }
}

/// The two complementary basis strings carrying the probe's amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchPattern {
    pub bits0: usize,
    pub bits1: usize,
    pub n_qubits: usize,
}

impl BranchPattern {
    /// Qubit `i` is set in `bits0` iff its sign is `-1`.
    pub fn from_scheme(scheme: &ProbeScheme) -> Self {
        let n = scheme.len();
        let full = (1usize << n) - 1;
        let bits0 = scheme
            .members()
            .iter()
            .enumerate()
            .filter(|(_, m)| m.sign == Sign::Minus)
            .fold(0, |acc, (i, _)| acc | 1 << (n - 1 - i));
        Self {
            bits0,
            bits1: full ^ bits0,
            n_qubits: n,
        }
    }
}

/// Hadamard on qubit 1, CNOT chain 1→2→…→N, then X on every `-1` qubit.
pub fn prepare_probe(scheme: &ProbeScheme) -> Result<StateVector> {
    validate_scheme(scheme).map_err(Error::InvalidScheme)?;
    let n = scheme.len();
    let mut state = StateVector::zero(n)?;
    state.apply_h(1);
    for q in 1..n {
        state.apply_cnot(q, q + 1);
    }
    for (i, m) in scheme.members().iter().enumerate() {
        if m.sign == Sign::Minus {
            state.apply_x(i + 1);
        }
    }
    Ok(state)
}

/// Per-qubit chirped evolution `|1⟩ → e^{-iγt²}|1⟩`, with qubit `i` stopped at `times[i]`.
pub fn apply_phase_evolution(
    state: &StateVector,
    times: &[f64],
    gamma: f64,
) -> Result<StateVector> {
    if times.len() != state.n_qubits {
        return Err(Error::LengthMismatch {
            what: "times vs qubits",
            left: times.len(),
            right: state.n_qubits,
        });
    }
    if let Some(t) = times.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::InvalidParameter(format!("negative time {t}")));
    }
    let n = state.n_qubits;
    let phases: Vec<f64> = times.iter().map(|t| gamma * t * t).collect();
    let mut out = state.clone();
    for (basis, amp) in out.amps.iter_mut().enumerate() {
        let phase: f64 = (0..n)
            .filter(|q| basis & (1 << (n - 1 - q)) != 0)
            .map(|q| phases[q])
            .sum();
        if phase != 0.0 {
            *amp *= Complex64::from_polar(1.0, -phase);
        }
    }
    Ok(out)
}

/// `arg(amp(bits0)) - arg(amp(bits1))`, wrapped to `(-π, π]`.
pub fn branch_relative_phase(state: &StateVector, pattern: &BranchPattern) -> Result<f64> {
    if pattern.n_qubits != state.n_qubits {
        return Err(Error::LengthMismatch {
            what: "pattern vs state qubits",
            left: pattern.n_qubits,
            right: state.n_qubits,
        });
    }
    let (a0, a1) = (state.amps[pattern.bits0], state.amps[pattern.bits1]);
    if a0.norm() <= DEGENERATE_AMPLITUDE || a1.norm() <= DEGENERATE_AMPLITUDE {
        return Err(Error::DegenerateState);
    }
    Ok(wrap_phase(a0.arg() - a1.arg()))
}

/// Probability of projecting back onto the initial probe: `cos²(χ/2)`.
pub fn povm_probability(chi: f64) -> f64 {
    let c = (chi / 2.0).cos();
    c * c
}

/// Draw `k ~ Binomial(shots, cos²(χ/2))` and return the principal-value MLE
/// `2 arccos √(k/shots)` in `[0, π]`.
///
/// The readout fixes `χ` only up to sign and multiples of `2π`.
pub fn sample_and_estimate_phase<R: Rng + ?Sized>(
    chi_true: f64,
    shots: u64,
    rng: &mut R,
) -> Result<f64> {
    if shots == 0 {
        return Err(Error::InvalidParameter("shots must be >= 1".into()));
    }
    let p0 = povm_probability(chi_true).clamp(0.0, 1.0);
    let k = Binomial::new(shots, p0)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .sample(rng);
    Ok(estimate_phase_from_counts(k, shots))
}

pub fn estimate_phase_from_counts(k: u64, shots: u64) -> f64 {
    let frac = (k as f64 / shots as f64).clamp(0.0, 1.0);
    2.0 * frac.sqrt().acos()
}

/// Delta-method standard deviation of the phase MLE at `χ`.
pub fn phase_estimate_std(chi: f64, shots: u64) -> f64 {
    // p = cos²(χ/2), dp/dχ = -sin(χ)/2.
    let p = povm_probability(chi);
    let dp = (chi.sin() / 2.0).abs();
    (p * (1.0 - p) / shots as f64).sqrt() / dp
}

/// Randomized consistency suite for the probe pipeline.
pub mod verify {
    use super::*;
    use crate::model::ProbeMember;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    #[derive(Debug, Clone, PartialEq)]
    pub struct VerifyReport {
        pub instances: usize,
        pub max_phase_deviation: f64,
        pub max_povm_deviation: f64,
        pub max_norm_deviation: f64,
        pub mle_runs: usize,
        pub mle_within_band: usize,
        pub failures: Vec<String>,
    }

    impl VerifyReport {
        pub fn passed(&self) -> bool {
            self.failures.is_empty()
        }
    }

    #[derive(Debug, Clone, Copy)]
    pub struct VerifyOptions {
        pub instances: usize,
        pub max_qubits: usize,
        pub mle_runs: usize,
        pub shots: u64,
        pub chi_mle: f64,
        pub seed: u64,
        /// Perturb the predicted phase; lets callers confirm the suite can fail.
        pub inject_fault: bool,
    }

    impl Default for VerifyOptions {
        fn default() -> Self {
            Self {
                instances: 1000,
                max_qubits: 6,
                mle_runs: 100,
                shots: 1_000_000,
                chi_mle: 0.3,
                seed: 0x5EED,
                inject_fault: false,
            }
        }
    }

    pub const PHASE_TOL: f64 = 1e-12;
    pub const NORM_TOL: f64 = 1e-12;
    pub const MLE_PASS_FRACTION: f64 = 0.95;

    pub fn random_scheme<R: Rng + ?Sized>(rng: &mut R, n_qubits: usize) -> ProbeScheme {
        let mut signs: Vec<Sign> = (0..n_qubits)
            .map(|i| if i < n_qubits / 2 { Sign::Plus } else { Sign::Minus })
            .collect();
        signs.shuffle(rng);
        ProbeScheme::new(
            signs
                .into_iter()
                .enumerate()
                .map(|(i, sign)| ProbeMember { anchor: i + 1, sign })
                .collect(),
        )
    }

    pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(opts.seed);
        let mut report = VerifyReport {
            instances: opts.instances,
            max_phase_deviation: 0.0,
            max_povm_deviation: 0.0,
            max_norm_deviation: 0.0,
            mle_runs: opts.mle_runs,
            mle_within_band: 0,
            failures: Vec::new(),
        };
        let max_pairs = (opts.max_qubits / 2).max(1);
        for _ in 0..opts.instances {
            let n = 2 * rng.random_range(1..=max_pairs);
            let scheme = random_scheme(&mut rng, n);
            let gamma = rng.random_range(0.01..2.0);
            let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();

            let init = prepare_probe(&scheme)?;
            let evolved = apply_phase_evolution(&init, &times, gamma)?;
            let pattern = BranchPattern::from_scheme(&scheme);
            let measured = branch_relative_phase(&evolved, &pattern)?;
            let mut predicted: f64 = gamma
                * scheme
                    .members()
                    .iter()
                    .zip(&times)
                    .map(|(m, t)| m.sign.value() * t * t)
                    .sum::<f64>();
            if opts.inject_fault {
                predicted += 1e-6;
            }
            report.max_phase_deviation = report
                .max_phase_deviation
                .max(wrap_phase(measured - predicted).abs());
            let overlap = init.overlap_probability(&evolved)?;
            report.max_povm_deviation = report
                .max_povm_deviation
                .max((overlap - povm_probability(predicted)).abs());
            report.max_norm_deviation = report
                .max_norm_deviation
                .max((evolved.norm_sqr() - 1.0).abs())
                .max((init.norm_sqr() - 1.0).abs());
        }
        if report.max_phase_deviation > PHASE_TOL {
            report.failures.push(format!(
                "branch phase deviates from gamma*sum(w t^2) by {:e}",
                report.max_phase_deviation
            ));
        }
        if report.max_povm_deviation > PHASE_TOL {
            report.failures.push(format!(
                "POVM probability deviates from overlap by {:e}",
                report.max_povm_deviation
            ));
        }
        if report.max_norm_deviation > NORM_TOL {
            report.failures.push(format!(
                "norm drift {:e}",
                report.max_norm_deviation
            ));
        }

        let band = 3.0 * phase_estimate_std(opts.chi_mle, opts.shots);
        for run in 0..opts.mle_runs {
            let mut r = crate::rng::stream(opts.seed, run as u64);
            let est = sample_and_estimate_phase(opts.chi_mle, opts.shots, &mut r)?;
            if (est - opts.chi_mle).abs() <= band {
                report.mle_within_band += 1;
            }
        }
        if opts.mle_runs > 0
            && (report.mle_within_band as f64) < MLE_PASS_FRACTION * opts.mle_runs as f64
        {
            report.failures.push(format!(
                "phase MLE inside 3-sigma band for only {}/{} runs",
                report.mle_within_band, opts.mle_runs
            ));
        }
        Ok(report)
    }
}
