//! Dynamics of a single probe qubit driven by the chirped coupling field
//! `ε(t) = ν(2γt + ω₀)`, `θ(t) = γt²`.
//!
//! Writing `s = γt² + ω₀t` the coefficient equations become constant-coefficient
//! in `s`, giving the exact solution
//!
//! ```text
//! c_j(t) = A_j exp{i((-1)^j + S)s/2} + B_j exp{i((-1)^j - S)s/2},   S = √(1 + 4ν²/ħ²)
//! ```
//!
//! with real `A_j`, `B_j` fixed by `c_0(0) = c_1(0) = 1/√2`. When `ν/ħ` is large the
//! relative phase between `|1⟩` and `|0⟩` tracks `-γt²` except near the zeros of
//! `cos Δ(t)`, `Δ(t) = -S s`.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::{wrap_phase, Error, Result};

const DEGENERATE_AMPLITUDE: f64 = 1e-12;
const MAX_PHASE_PER_STEP: f64 = 0.1;

/// Coupling and field parameters. Only the ratio `ν/ħ` ever enters the dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelParams {
    pub nu_over_hbar: f64,
    pub gamma: f64,
    pub omega0: f64,
}

impl TwoLevelParams {
    pub fn new(nu_over_hbar: f64, gamma: f64, omega0: f64) -> Result<Self> {
        for (name, v) in [
            ("nu_over_hbar", nu_over_hbar),
            ("gamma", gamma),
            ("omega0", omega0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            nu_over_hbar,
            gamma,
            omega0,
        })
    }

    /// Parameters of the reference phase-approximation scan.
    pub fn reference_scan() -> Self {
        Self {
            nu_over_hbar: 1e10,
            gamma: 1e3,
            omega0: 1e-2,
        }
    }

    /// `S = √(1 + 4ν²/ħ²)`.
    pub fn splitting(&self) -> f64 {
        (2.0 * self.nu_over_hbar).hypot(1.0)
    }

    /// `τ = (2ν/ħ) / (1 + S)`, always in `(0, 1)`.
    pub fn tau(&self) -> f64 {
        2.0 * self.nu_over_hbar / (1.0 + self.splitting())
    }

    /// `1 - τ` without cancellation: `S - 2ν/ħ = 1 / (S + 2ν/ħ)`.
    pub fn one_minus_tau(&self) -> f64 {
        let s = self.splitting();
        (1.0 + 1.0 / (s + 2.0 * self.nu_over_hbar)) / (1.0 + s)
    }

    /// `(1 - τ) / (τ² + τ)`; the approximation holds where `|cos Δ|` greatly exceeds this.
    pub fn approximation_gap(&self) -> f64 {
        let tau = self.tau();
        self.one_minus_tau() / (tau * tau + tau)
    }

    /// The conventional filter width `√((1 - τ)/(τ² + τ))`.
    pub fn default_filter_eps(&self) -> f64 {
        self.approximation_gap().sqrt()
    }

    /// `s(t) = γt² + ω₀t`.
    pub fn chirp_phase(&self, t: f64) -> f64 {
        self.gamma * t * t + self.omega0 * t
    }

    /// `Δ(t) = -S (γt² + ω₀t)`.
    pub fn delta(&self, t: f64) -> f64 {
        -self.splitting() * self.chirp_phase(t)
    }

    pub fn coefficients(&self) -> ClosedFormCoefficients {
        ClosedFormCoefficients::new(self.tau(), self.one_minus_tau())
    }
}

/// The real amplitudes `A_0, B_0, A_1, B_1` of the exact solution.
///
/// Substituting the ansatz into the coefficient equations forces `A_1 = -A_0/τ` and
/// `B_1 = τ B_0`; the initial condition then gives the values below. Realness is
/// structural (every field is `f64`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedFormCoefficients {
    pub a0: f64,
    pub b0: f64,
    pub a1: f64,
    pub b1: f64,
}

impl ClosedFormCoefficients {
    fn new(tau: f64, one_minus_tau: f64) -> Self {
        let k = std::f64::consts::FRAC_1_SQRT_2 / (1.0 + tau * tau);
        Self {
            a0: -tau * one_minus_tau * k,
            b0: (1.0 + tau) * k,
            a1: one_minus_tau * k,
            b1: tau * (1.0 + tau) * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientPair {
    pub c0: Complex64,
    pub c1: Complex64,
}

impl CoefficientPair {
    pub fn initial() -> Self {
        let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self { c0: h, c1: h }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr()
    }

    /// Largest componentwise modulus of the difference.
    pub fn max_deviation(&self, other: &CoefficientPair) -> f64 {
        (self.c0 - other.c0).norm().max((self.c1 - other.c1).norm())
    }

    /// Relative phase of the full state `c0 e^{-iω₀t/2}|0⟩ + c1 e^{iω₀t/2}|1⟩`.
    pub fn relative_phase(&self, omega0: f64, t: f64) -> Result<f64> {
        let (m0, m1) = (self.c0.norm(), self.c1.norm());
        if m0 < DEGENERATE_AMPLITUDE || m1 < DEGENERATE_AMPLITUDE {
            return Err(Error::AmplitudeDegenerate { c0: m0, c1: m1 });
        }
        Ok(wrap_phase(self.c1.arg() - self.c0.arg() + omega0 * t))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

pub fn closed_form_state(p: &TwoLevelParams, t: f64) -> Result<CoefficientPair> {
    check_time(t)?;
    let k = p.coefficients();
    let s = p.chirp_phase(t);
    let big = p.splitting();
    let e = |w: f64| Complex64::from_polar(1.0, w * s);
    Ok(CoefficientPair {
        c0: k.a0 * e((1.0 + big) / 2.0) + k.b0 * e((1.0 - big) / 2.0),
        c1: k.a1 * e((big - 1.0) / 2.0) + k.b1 * e(-(1.0 + big) / 2.0),
    })
}

/// Relative phase in `(-π, π]` from the closed form.
///
/// Factoring `c1/c0 = e^{-is} (A_1 + B_1 e^{iΔ}) / (A_0 + B_0 e^{iΔ})` and adding
/// back `ω₀t` leaves `-γt² + arg(ratio)`, which avoids the huge common phases
/// present in `c0` and `c1` individually.
pub fn relative_phase(p: &TwoLevelParams, t: f64) -> Result<f64> {
    check_time(t)?;
    let k = p.coefficients();
    let rot = Complex64::from_polar(1.0, p.delta(t));
    let num = k.a1 + k.b1 * rot;
    let den = k.a0 + k.b0 * rot;
    let (m0, m1) = (den.norm(), num.norm());
    if m0 < DEGENERATE_AMPLITUDE || m1 < DEGENERATE_AMPLITUDE {
        return Err(Error::AmplitudeDegenerate { c0: m0, c1: m1 });
    }
    Ok(wrap_phase(-p.gamma * t * t + (num.arg() - den.arg())))
}

fn derivative(p: &TwoLevelParams, t: f64, c: CoefficientPair) -> CoefficientPair {
    // dc0/dt = -i (ν/ħ)(2γt+ω₀) e^{+i(θ+ω₀t)} c1, dc1/dt likewise with e^{-i(...)}.
    let eps = p.nu_over_hbar * (2.0 * p.gamma * t + p.omega0);
    let rot = Complex64::from_polar(1.0, p.chirp_phase(t));
    let minus_i = Complex64::new(0.0, -eps);
    CoefficientPair {
        c0: minus_i * rot * c.c1,
        c1: minus_i * rot.conj() * c.c0,
    }
}

fn axpy(base: CoefficientPair, h: f64, k: CoefficientPair) -> CoefficientPair {
    CoefficientPair {
        c0: base.c0 + k.c0 * h,
        c1: base.c1 + k.c1 * h,
    }
}

/// Fixed-step RK4 integration of the coefficient equations from `(1/√2, 1/√2)`.
///
/// Returns `steps + 1` samples including both endpoints.
pub fn integrate_two_level(
    p: &TwoLevelParams,
    t_end: f64,
    steps: usize,
) -> Result<Vec<(f64, CoefficientPair)>> {
    integrate_two_level_sampled(p, t_end, steps, 1)
}

/// As [`integrate_two_level`], keeping every `stride`-th sample (and always the last).
pub fn integrate_two_level_sampled(
    p: &TwoLevelParams,
    t_end: f64,
    steps: usize,
    stride: usize,
) -> Result<Vec<(f64, CoefficientPair)>> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "t_end must be positive, got {t_end}"
        )));
    }
    if steps == 0 || stride == 0 {
        return Err(Error::InvalidParameter("steps and stride must be >= 1".into()));
    }
    let h = t_end / steps as f64;
    let per_step =
        (1.0 + p.splitting()) / 2.0 * (2.0 * p.gamma * t_end + p.omega0) * h;
    if per_step >= MAX_PHASE_PER_STEP {
        return Err(Error::Resolution { per_step });
    }

    let mut out = Vec::with_capacity(steps / stride + 2);
    let mut c = CoefficientPair::initial();
    out.push((0.0, c));
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = derivative(p, t, c);
        let k2 = derivative(p, t + h / 2.0, axpy(c, h / 2.0, k1));
        let k3 = derivative(p, t + h / 2.0, axpy(c, h / 2.0, k2));
        let k4 = derivative(p, t + h, axpy(c, h, k3));
        c = CoefficientPair {
            c0: c.c0 + (k1.c0 + 2.0 * k2.c0 + 2.0 * k3.c0 + k4.c0) * (h / 6.0),
            c1: c.c1 + (k1.c1 + 2.0 * k2.c1 + 2.0 * k3.c1 + k4.c1) * (h / 6.0),
        };
        let step = i + 1;
        if step % stride == 0 || step == steps {
            out.push((step as f64 * h, c));
        }
    }
    Ok(out)
}

/// Agreement between the integrator and the closed form along one trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCheck {
    pub max_deviation: f64,
    pub unitarity_drift: f64,
    pub samples: usize,
}

pub fn ode_cross_check(
    p: &TwoLevelParams,
    t_end: f64,
    steps: usize,
    stride: usize,
) -> Result<OracleCheck> {
    let traj = integrate_two_level_sampled(p, t_end, steps, stride)?;
    let mut max_deviation = 0.0f64;
    for (t, c) in &traj {
        max_deviation = max_deviation.max(c.max_deviation(&closed_form_state(p, *t)?));
    }
    let last = traj.last().expect("non-empty trajectory").1;
    Ok(OracleCheck {
        max_deviation,
        unitarity_drift: (last.norm_sqr() - 1.0).abs(),
        samples: traj.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    pub t: f64,
    pub phase_real: f64,
    pub phase_approx: f64,
    pub abs_discrepancy: f64,
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub points: Vec<ScanPoint>,
    pub max_unfiltered_discrepancy: f64,
    pub filtered_fraction: f64,
}

impl ScanReport {
    pub fn filtered_count(&self) -> usize {
        self.points.iter().filter(|p| p.filtered).count()
    }
}

/// Compare the exact relative phase to `-γt²` over `t_grid`.
///
/// Points where `|cos Δ(t)| ≤ filter_eps` are flagged and excluded from the maximum.
pub fn phase_discrepancy_scan(
    p: &TwoLevelParams,
    t_grid: &[f64],
    filter_eps: f64,
) -> Result<ScanReport> {
    if !(filter_eps > 0.0 && filter_eps < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "filter_eps must lie in (0, 1), got {filter_eps}"
        )));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("t_grid must be sorted ascending".into()));
    }
    let points = t_grid
        .par_iter()
        .map(|&t| {
            let phase_real = relative_phase(p, t)?;
            let gt2 = p.gamma * t * t;
            Ok(ScanPoint {
                t,
                phase_real,
                phase_approx: wrap_phase(-gt2),
                abs_discrepancy: wrap_phase(phase_real + gt2).abs(),
                filtered: p.delta(t).cos().abs() <= filter_eps,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_unfiltered_discrepancy = points
        .iter()
        .filter(|q| !q.filtered)
        .fold(0.0f64, |acc, q| acc.max(q.abs_discrepancy));
    let filtered = points.iter().filter(|q| q.filtered).count();
    let filtered_fraction = if points.is_empty() {
        0.0
    } else {
        filtered as f64 / points.len() as f64
    };
    Ok(ScanReport {
        points,
        max_unfiltered_discrepancy,
        filtered_fraction,
    })
}

/// `points` uniform samples on `[0, t_max]` with `γ t_max² = phase_span`.
pub fn uniform_phase_grid(p: &TwoLevelParams, phase_span: f64, points: usize) -> Vec<f64> {
    let t_max = (phase_span / p.gamma).sqrt();
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|i| t_max * i as f64 / (points - 1) as f64)
            .collect(),
    }
}
