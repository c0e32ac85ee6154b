//! Ranging signals: exact QuER readouts, the Gaussian readout-noise model, the
//! classical mimic of a QuER readout, noisy classical distances, and the textbook
//! single-anchor signal mappings.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{AnchorSet, PhysicalConstants, Position, ProbeScheme};
use crate::{Error, Result};

/// Relative readout noise: a readout `v` becomes `v (1 + δ)`, `δ ~ N(0, rho²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    rho: f64,
}

impl NoiseModel {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in [0, 1), got {rho}"
            )));
        }
        Ok(Self { rho })
    }

    pub fn noiseless() -> Self {
        Self { rho: 0.0 }
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// One draw of `δ`. Always consumes one normal variate, even at `rho = 0`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.rho * z
    }
}

/// The readout of one ranging, in both phase and distance-squared units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangingOutcome {
    pub scheme_id: usize,
    /// `Σ w d²` in m².
    pub lambda: f64,
    /// `χ = 4γλ / c²` in rad.
    pub chi: f64,
}

impl RangingOutcome {
    pub fn from_lambda(scheme_id: usize, lambda: f64, consts: &PhysicalConstants) -> Self {
        Self {
            scheme_id,
            lambda,
            chi: lambda_to_chi(lambda, consts),
        }
    }
}

pub fn lambda_to_chi(lambda: f64, consts: &PhysicalConstants) -> f64 {
    4.0 * consts.gamma * lambda / (consts.c * consts.c)
}

pub fn chi_to_lambda(chi: f64, consts: &PhysicalConstants) -> f64 {
    consts.c * consts.c * chi / (4.0 * consts.gamma)
}

fn scheme_distances_sq(x: &Position, anchors: &AnchorSet, scheme: &ProbeScheme) -> Result<Vec<(f64, f64)>> {
    scheme
        .members()
        .iter()
        .map(|m| {
            let a = anchors.get(m.anchor)?;
            if a.dim() != x.dim() {
                return Err(Error::DimensionMismatch {
                    expected: a.dim(),
                    got: x.dim(),
                });
            }
            Ok((m.sign.value(), x.dist_sq(a)))
        })
        .collect()
}

/// `λ = Σ_{i∈I} w_i ‖x - a_i‖²`.
pub fn quer_lambda(x: &Position, anchors: &AnchorSet, scheme: &ProbeScheme) -> Result<f64> {
    Ok(scheme_distances_sq(x, anchors, scheme)?
        .into_iter()
        .map(|(w, d2)| w * d2)
        .sum())
}

pub fn perturb_lambda<R: Rng + ?Sized>(lambda: f64, noise: &NoiseModel, rng: &mut R) -> f64 {
    lambda * (1.0 + noise.draw(rng))
}

/// Classical imitation of a QuER readout: every distance is ranged (and perturbed)
/// separately, then squared and combined.
pub fn mimic_classical_lambda<R: Rng + ?Sized>(
    x: &Position,
    anchors: &AnchorSet,
    scheme: &ProbeScheme,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<f64> {
    let deltas: Vec<f64> = scheme.members().iter().map(|_| noise.draw(rng)).collect();
    mimic_lambda_with_deltas(x, anchors, scheme, &deltas)
}

/// [`mimic_classical_lambda`] with the per-distance perturbations supplied.
pub fn mimic_lambda_with_deltas(
    x: &Position,
    anchors: &AnchorSet,
    scheme: &ProbeScheme,
    deltas: &[f64],
) -> Result<f64> {
    if deltas.len() != scheme.len() {
        return Err(Error::LengthMismatch {
            what: "deltas vs scheme members",
            left: deltas.len(),
            right: scheme.len(),
        });
    }
    Ok(scheme_distances_sq(x, anchors, scheme)?
        .into_iter()
        .zip(deltas)
        .map(|((w, d2), delta)| w * d2 * (1.0 + delta) * (1.0 + delta))
        .sum())
}

pub fn perturb_distance<R: Rng + ?Sized>(d: f64, noise: &NoiseModel, rng: &mut R) -> f64 {
    d * (1.0 + noise.draw(rng))
}

/// Parameters of the classical single-anchor signal mappings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalParams {
    /// Arrival angle θ (rad) for AoA.
    pub theta: f64,
    /// Carrier wavelength (m).
    pub wavelength: f64,
    /// Propagation speed (m/s) for ToA / TDoA.
    pub speed: f64,
    pub tx_power: f64,
    pub tx_gain: f64,
    pub rx_gain: f64,
}

impl Default for SignalParams {
    fn default() -> Self {
        Self {
            theta: 0.0,
            wavelength: 0.125,
            speed: 3e8,
            tx_power: 1.0,
            tx_gain: 1.0,
            rx_gain: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalSignals {
    /// Phase difference of adjacent antennas (rad).
    pub aoa_phase: f64,
    /// Emission-to-recapture time (s).
    pub toa_time: f64,
    /// Arrival-time difference (s).
    pub tdoa_time: f64,
    /// Received power (same unit as `tx_power`).
    pub rssi_power: f64,
}

pub fn aoa_phase(d: f64, p: &SignalParams) -> f64 {
    2.0 * std::f64::consts::PI * p.theta.cos() / p.wavelength * d
}

pub fn toa_time(d: f64, p: &SignalParams) -> f64 {
    2.0 * d / p.speed
}

pub fn tdoa_time(d_i: f64, d_j: f64, p: &SignalParams) -> f64 {
    (d_i - d_j).abs() / p.speed
}

pub fn rssi_power(d: f64, p: &SignalParams) -> f64 {
    let pi = std::f64::consts::PI;
    p.tx_power * p.tx_gain * p.rx_gain * p.wavelength * p.wavelength / (16.0 * pi * pi * d * d)
}

pub fn classical_signal_maps(
    d_i: f64,
    d_j: Option<f64>,
    params: &SignalParams,
) -> Result<ClassicalSignals> {
    let positive = [
        params.wavelength,
        params.speed,
        params.tx_power,
        params.tx_gain,
        params.rx_gain,
    ];
    if positive.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("signal parameters must be positive".into()));
    }
    let d_j = d_j.ok_or(Error::MissingParameter("d_j (required for TDoA)"))?;
    Ok(ClassicalSignals {
        aoa_phase: aoa_phase(d_i, params),
        toa_time: toa_time(d_i, params),
        tdoa_time: tdoa_time(d_i, d_j, params),
        rssi_power: rssi_power(d_i, params),
    })
}
