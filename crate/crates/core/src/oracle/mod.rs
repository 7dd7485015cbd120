//! Brute-force reference evaluator.
//!
//! A single-pair perturbative state is pushed through every optical element
//! at one signal frequency, the H-signal photon number is read off, and the
//! result is integrated over the Gaussian SPDC spectrum by quadrature. Nothing
//! here shares code with [`crate::closed_form`].

pub mod quadrature;

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::params::{SetupParams, SPEED_OF_LIGHT};
pub use quadrature::{QuadratureRule, QuadratureScheme, QuadratureSpec};

/// Relative change tolerated when the node count is doubled.
pub const CONVERGENCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("signal frequency {omega_s:e} rad/s leaves no idler (pump at {omega_p:e} rad/s)")]
    NonphysicalFrequency { omega_s: f64, omega_p: f64 },
    #[error("invalid quadrature: {0}")]
    InvalidQuadrature(String),
    #[error(
        "quadrature did not converge: {coarse_nodes} nodes gave {coarse:e}, {fine_nodes} gave {fine:e} (relative change {relative:e})"
    )]
    NonConvergence {
        coarse_nodes: usize,
        fine_nodes: usize,
        coarse: f64,
        fine: f64,
        relative: f64,
    },
}

/// Basis of the truncated single-pair space, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// `|0,0,0,0⟩`
    Vacuum = 0,
    /// `|1,0,1,0⟩`: H signal, idler in the interferometer.
    HsIdler = 1,
    /// `|0,1,1,0⟩`
    VsIdler = 2,
    /// `|1,0,0,1⟩`: H signal, idler lost to the loss port.
    HsLost = 3,
    /// `|0,1,0,1⟩`
    VsLost = 4,
}

impl Basis {
    pub const PAIRS: [Basis; 4] = [Basis::HsIdler, Basis::VsIdler, Basis::HsLost, Basis::VsLost];
}

/// Amplitudes over [`Basis`]; the vacuum amplitude stays 1 to first order in ξ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairState {
    pub amps: [Complex64; 5],
}

impl PairState {
    pub fn vacuum() -> Self {
        let mut amps = [Complex64::new(0.0, 0.0); 5];
        amps[Basis::Vacuum as usize] = Complex64::new(1.0, 0.0);
        Self { amps }
    }

    pub fn amp(&self, b: Basis) -> Complex64 {
        self.amps[b as usize]
    }

    fn amp_mut(&mut self, b: Basis) -> &mut Complex64 {
        &mut self.amps[b as usize]
    }

    /// Total probability carried by the four pair states.
    pub fn pair_norm(&self) -> f64 {
        Basis::PAIRS.iter().map(|&b| self.amp(b).norm_sqr()).sum()
    }

    /// `⟨a†_{Hs} a_{Hs}⟩` after the PBS, summed over both idler branches.
    pub fn h_signal_number(&self) -> f64 {
        self.amp(Basis::HsIdler).norm_sqr() + self.amp(Basis::HsLost).norm_sqr()
    }

    /// Mixes the H/V signal amplitudes of one idler branch by
    /// `[[cos θ, i sin θ], [i sin θ, cos θ]]`.
    fn rotate_signal(&mut self, h: Basis, v: Basis, theta: f64) {
        let (s, c) = theta.sin_cos();
        let is = Complex64::new(0.0, s);
        let (ah, av) = (self.amp(h), self.amp(v));
        *self.amp_mut(h) = ah * c + av * is;
        *self.amp_mut(v) = ah * is + av * c;
    }
}

/// Signal, idler and line-centre frequencies for one spectral slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frequencies {
    pub omega_s: f64,
    pub omega_i: f64,
    pub omega_s0: f64,
}

impl Frequencies {
    /// Pump frequency is taken as `ω_s0 + ω_i0` from the stored wavelengths so
    /// the pairwise property holds exactly at line centre.
    pub fn new(params: &SetupParams, omega_s: f64) -> Result<Self, OracleError> {
        let omega_s0 = 2.0 * PI * SPEED_OF_LIGHT / params.lambda_s;
        let omega_p = omega_s0 + 2.0 * PI * SPEED_OF_LIGHT / params.lambda_i;
        if !(omega_s > 0.0 && omega_s < omega_p) {
            return Err(OracleError::NonphysicalFrequency { omega_s, omega_p });
        }
        Ok(Self {
            omega_s,
            omega_i: omega_p - omega_s,
            omega_s0,
        })
    }
}

/// Crystal data needed for the second-pass propagation phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalPhases {
    pub length: f64,
    pub n_hs: f64,
    pub n_vs: f64,
    pub n_i: f64,
}

/// One optical element acting on the pair state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementStep {
    SpdcA { xi: f64 },
    IdlerDelay { dx: f64 },
    /// Idler loss modelled as a beamsplitter of angle β, `T = cos²β`.
    LossBeamsplitter { beta: f64 },
    /// Double-passed quarter-wave plate, acting as a half-wave plate.
    DoubledQwp { theta: f64 },
    SpdcB { xi: f64, crystal: CrystalPhases },
    /// Extra V-signal path; applied as a retardance at line centre.
    BboPath { delta_v: f64 },
    OutputHwp { theta: f64 },
}

fn phasor(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, -phase)
}

impl ElementStep {
    pub fn apply(&self, state: &mut PairState, f: &Frequencies) {
        let c = SPEED_OF_LIGHT;
        match *self {
            ElementStep::SpdcA { xi } => {
                *state.amp_mut(Basis::HsIdler) += xi;
            }
            ElementStep::IdlerDelay { dx } => {
                let ph = phasor(f.omega_i * dx / c);
                *state.amp_mut(Basis::HsIdler) *= ph;
                *state.amp_mut(Basis::VsIdler) *= ph;
            }
            ElementStep::LossBeamsplitter { beta } => {
                let (s, co) = beta.sin_cos();
                for (kept, lost) in [(Basis::HsIdler, Basis::HsLost), (Basis::VsIdler, Basis::VsLost)] {
                    let (a, b) = (state.amp(kept), state.amp(lost));
                    *state.amp_mut(kept) = a * co - b * s;
                    *state.amp_mut(lost) = a * s + b * co;
                }
            }
            ElementStep::DoubledQwp { theta } | ElementStep::OutputHwp { theta } => {
                state.rotate_signal(Basis::HsIdler, Basis::VsIdler, theta);
                state.rotate_signal(Basis::HsLost, Basis::VsLost, theta);
            }
            ElementStep::SpdcB { xi, crystal } => {
                let sig_h = f.omega_s * crystal.length * crystal.n_hs / c;
                let sig_v = f.omega_s * crystal.length * crystal.n_vs / c;
                let idl = f.omega_i * crystal.length * crystal.n_i / c;
                *state.amp_mut(Basis::HsIdler) *= phasor(sig_h + idl);
                *state.amp_mut(Basis::VsIdler) *= phasor(sig_v + idl);
                *state.amp_mut(Basis::HsLost) *= phasor(sig_h);
                *state.amp_mut(Basis::VsLost) *= phasor(sig_v);
                *state.amp_mut(Basis::HsIdler) += xi;
            }
            ElementStep::BboPath { delta_v } => {
                let ph = phasor(f.omega_s0 * delta_v / c);
                *state.amp_mut(Basis::VsIdler) *= ph;
                *state.amp_mut(Basis::VsLost) *= ph;
            }
        }
    }
}

/// The element chain in its fixed physical order. The final PBS is the
/// measurement basis and has no step of its own.
pub fn canonical_sequence(params: &SetupParams) -> [ElementStep; 7] {
    [
        ElementStep::SpdcA { xi: params.xi_a },
        ElementStep::IdlerDelay { dx: params.dx },
        ElementStep::LossBeamsplitter {
            beta: params.loss_angle(),
        },
        ElementStep::DoubledQwp {
            theta: params.theta1,
        },
        ElementStep::SpdcB {
            xi: params.xi_b,
            crystal: CrystalPhases {
                length: params.crystal_length,
                n_hs: params.n_hs,
                n_vs: params.n_vs,
                n_i: params.n_i,
            },
        },
        ElementStep::BboPath {
            delta_v: params.bbo_extra_path,
        },
        ElementStep::OutputHwp {
            theta: params.theta2,
        },
    ]
}

pub fn propagate_through(
    params: &SetupParams,
    omega_s: f64,
    steps: &[ElementStep],
) -> Result<PairState, OracleError> {
    let f = Frequencies::new(params, omega_s)?;
    let mut state = PairState::vacuum();
    for step in steps {
        step.apply(&mut state, &f);
    }
    Ok(state)
}

/// Final state at one signal frequency. Gains are used as the pair
/// amplitudes at that frequency; the spectral density enters only as the
/// quadrature weight in [`integrate_over_frequency`].
pub fn propagate_state(params: &SetupParams, omega_s: f64) -> Result<PairState, OracleError> {
    propagate_through(params, omega_s, &canonical_sequence(params))
}

pub fn detector_expectation_monochromatic(
    params: &SetupParams,
    omega_s: f64,
) -> Result<f64, OracleError> {
    propagate_state(params, omega_s).map(|s| s.h_signal_number())
}

fn integrate_rule(params: &SetupParams, rule: &QuadratureRule) -> Result<f64, OracleError> {
    let omega_s0 = 2.0 * PI * SPEED_OF_LIGHT / params.lambda_s;
    let steps = canonical_sequence(params);
    let mut total = 0.0;
    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
        let omega_s = omega_s0 + params.delta_omega_s * z;
        total += w * propagate_through(params, omega_s, &steps)?.h_signal_number();
    }
    Ok(total)
}

/// Spectrally integrated H-signal photon number.
///
/// The rule is also run at twice the node count; a relative change above
/// [`CONVERGENCE_TOL`] is reported as non-convergence. The value returned is
/// the one at the requested node count.
pub fn integrate_over_frequency(
    params: &SetupParams,
    quad: &QuadratureSpec,
) -> Result<f64, OracleError> {
    let coarse = integrate_rule(params, &*quad.rule()?)?;
    let finer = quad.doubled();
    let fine = integrate_rule(params, &*finer.rule()?)?;
    let relative = (coarse - fine).abs() / fine.abs().max(f64::MIN_POSITIVE);
    if relative > CONVERGENCE_TOL {
        return Err(OracleError::NonConvergence {
            coarse_nodes: quad.node_count,
            fine_nodes: finer.node_count,
            coarse,
            fine,
            relative,
        });
    }
    Ok(coarse)
}
