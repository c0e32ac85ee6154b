//! Localization with quantum-enhanced ranging (QuER).
//!
//! A QuER measurement reads out the signed combination `Σ w_i d_i²` of squared
//! sensor-anchor distances in a single shot. With sign-balanced probe schemes the
//! quadratic term in the sensor position cancels and localization reduces to a
//! weighted linear least-squares problem.
//!
//! Modules, bottom up:
//!
//! * [`model`]: anchors, positions and probe schemes.
//! * [`qdynamics`]: the controlled two-level probe qubit, closed form and ODE oracle.
//! * [`qsim`]: statevector simulation of the entangled probe and its readout.
//! * [`ranging`]: exact and noisy ranging signals.
//! * [`localize`]: the WLS localizer and the classical baselines.
//! * [`metrics`]: RMSE, error CDF, Fisher information and the CRLB.
//! * [`experiment`]: Monte Carlo campaigns and CSV output.

// Negated comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod localize;
pub mod metrics;
pub mod model;
pub mod qdynamics;
pub mod qsim;
pub mod ranging;
pub mod rng;

pub use error::{Error, Result};

/// Reduce a phase to `(-π, π]`.
pub fn wrap_phase(phase: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = phase.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::wrap_phase;
    use std::f64::consts::PI;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_phase(0.0), 0.0);
        assert_eq!(wrap_phase(PI), PI);
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_phase(-0.2 - 4.0 * PI) + 0.2).abs() < 1e-12);
    }
}
