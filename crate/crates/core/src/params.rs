//! Physical parameters of the retro-reflected interferometer.
//!
//! Everything in here is SI: meters, radians, rad/s. Unit handling for human
//! input lives in the config layer.

use std::f64::consts::PI;

use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Largest gain amplitude accepted for either crystal pass.
pub const MAX_LOW_GAIN: f64 = 0.2;

/// Relative tolerance on `1/λp = 1/λs + 1/λi`.
pub const ENERGY_CONSERVATION_TOL: f64 = 1e-9;

/// Default bound on the stepper's deviation from linear motion, meters.
pub const DEFAULT_STEPPER_REPEATABILITY: f64 = 3.6e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ValidationError {
    #[error("parameter `{name}` is not finite ({value})")]
    NonFinite { name: &'static str, value: f64 },
    #[error("parameter `{name}` must be > 0 (got {value})")]
    NonPositive { name: &'static str, value: f64 },
    #[error("gain `{name}` = {value} is outside the low-gain range [0, {MAX_LOW_GAIN}]")]
    GainOutOfRange { name: &'static str, value: f64 },
    #[error("transmission {0} is outside [0, 1]")]
    TransmissionOutOfRange(f64),
    #[error(
        "energy conservation violated: 1/lambda_p - 1/lambda_s - 1/lambda_i is {relative:e} of 1/lambda_p (tolerance {ENERGY_CONSERVATION_TOL:e})"
    )]
    EnergyConservation { relative: f64 },
    #[error("stepper deviation amplitude {amplitude} m exceeds the bound {bound} m")]
    StepperDeviation { amplitude: f64, bound: f64 },
    #[error("stepper parameter `{name}` is invalid ({value})")]
    Stepper { name: &'static str, value: f64 },
}

/// Idler wavelength forced by energy conservation.
pub fn idler_wavelength(lambda_p: f64, lambda_s: f64) -> f64 {
    1.0 / (1.0 / lambda_p - 1.0 / lambda_s)
}

/// Full parameter set of the model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetupParams {
    /// Gain amplitude of the first crystal pass.
    pub xi_a: f64,
    /// Gain amplitude of the second crystal pass.
    pub xi_b: f64,
    /// Rotation of the double-passed quarter-wave plate, rad.
    pub theta1: f64,
    /// Rotation of the output half-wave plate, rad.
    pub theta2: f64,
    /// Idler intensity transmissivity between passes.
    pub transmission: f64,
    /// Idler mirror displacement, m.
    pub dx: f64,
    pub crystal_length: f64,
    pub lambda_p: f64,
    pub lambda_s: f64,
    pub lambda_i: f64,
    pub n_hs: f64,
    pub n_vs: f64,
    /// Index of the single idler polarization mode.
    pub n_i: f64,
    /// Signal angular-frequency bandwidth, rad/s.
    pub delta_omega_s: f64,
    /// Extra optical path on the V-polarized signal only, m.
    pub bbo_extra_path: f64,
}

impl Default for SetupParams {
    /// 1064 nm pump, 1550 nm signal, 5 mm crystal, 0.2 mm coherence length,
    /// indices placing the two envelopes 0.35 mm apart at 0.25 mm and 0.60 mm.
    fn default() -> Self {
        let lambda_p = 1064e-9;
        let lambda_s = 1550e-9;
        Self {
            xi_a: 0.05,
            xi_b: 0.05,
            theta1: 30f64.to_radians(),
            theta2: 45f64.to_radians(),
            transmission: 0.25,
            dx: 0.0,
            crystal_length: 5e-3,
            lambda_p,
            lambda_s,
            lambda_i: idler_wavelength(lambda_p, lambda_s),
            n_hs: 2.138,
            n_vs: 2.208,
            n_i: 2.088,
            delta_omega_s: SPEED_OF_LIGHT / 0.2e-3,
            bbo_extra_path: 0.0,
        }
    }
}

impl SetupParams {
    /// Checks every invariant, returning the first violation.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let finite = [
            ("xi_a", self.xi_a),
            ("xi_b", self.xi_b),
            ("theta1", self.theta1),
            ("theta2", self.theta2),
            ("transmission", self.transmission),
            ("dx", self.dx),
            ("crystal_length", self.crystal_length),
            ("lambda_p", self.lambda_p),
            ("lambda_s", self.lambda_s),
            ("lambda_i", self.lambda_i),
            ("n_hs", self.n_hs),
            ("n_vs", self.n_vs),
            ("n_i", self.n_i),
            ("delta_omega_s", self.delta_omega_s),
            ("bbo_extra_path", self.bbo_extra_path),
        ];
        for (name, value) in finite {
            if !value.is_finite() {
                return Err(ValidationError::NonFinite { name, value });
            }
        }
        let positive = [
            ("crystal_length", self.crystal_length),
            ("lambda_p", self.lambda_p),
            ("lambda_s", self.lambda_s),
            ("lambda_i", self.lambda_i),
            ("n_hs", self.n_hs),
            ("n_vs", self.n_vs),
            ("n_i", self.n_i),
            ("delta_omega_s", self.delta_omega_s),
        ];
        for (name, value) in positive {
            if value <= 0.0 {
                return Err(ValidationError::NonPositive { name, value });
            }
        }
        for (name, value) in [("xi_a", self.xi_a), ("xi_b", self.xi_b)] {
            if !(0.0..=MAX_LOW_GAIN).contains(&value) {
                return Err(ValidationError::GainOutOfRange { name, value });
            }
        }
        if !(0.0..=1.0).contains(&self.transmission) {
            return Err(ValidationError::TransmissionOutOfRange(self.transmission));
        }
        let inv_p = 1.0 / self.lambda_p;
        let relative = (inv_p - 1.0 / self.lambda_s - 1.0 / self.lambda_i).abs() / inv_p;
        if relative > ENERGY_CONSERVATION_TOL {
            return Err(ValidationError::EnergyConservation { relative });
        }
        Ok(())
    }

    /// Consumes `self`, returning it unchanged when valid.
    pub fn validated(self) -> Result<Self, ValidationError> {
        self.validate().map(|()| self)
    }

    pub fn derived(&self) -> DerivedQuantities {
        DerivedQuantities::from_params(self)
    }

    /// Idler delay at which the H-signal cross term peaks (nonlinear-interferometer mode).
    pub fn ni_envelope_center(&self) -> f64 {
        self.derived().delta_l(OpticalMode::HSignal, OpticalMode::Idler)
    }

    /// Idler delay at which the V-signal cross term peaks (induced-coherence mode).
    pub fn ic_envelope_center(&self) -> f64 {
        self.derived().delta_l(OpticalMode::VSignal, OpticalMode::Idler)
    }

    pub fn mixed_delay(&self) -> f64 {
        0.5 * (self.ni_envelope_center() + self.ic_envelope_center())
    }

    /// Smallest non-negative V-signal extra path that brings the two
    /// cross terms into opposite phase (relative BBO phase of zero).
    pub fn destructive_bbo_path(&self) -> f64 {
        (self.crystal_length * (self.n_hs - self.n_vs)).rem_euclid(self.lambda_s)
    }

    /// `√T`, the field transmission `cos β`.
    pub fn field_transmission(&self) -> f64 {
        self.transmission.sqrt()
    }

    /// Loss beamsplitter angle β with `T = cos²β`.
    pub fn loss_angle(&self) -> f64 {
        self.field_transmission().clamp(0.0, 1.0).acos()
    }

    pub fn with_dx(mut self, dx: f64) -> Self {
        self.dx = dx;
        self
    }

    pub fn with_angles(mut self, theta1: f64, theta2: f64) -> Self {
        self.theta1 = theta1;
        self.theta2 = theta2;
        self
    }

    pub fn with_gains(mut self, xi_a: f64, xi_b: f64) -> Self {
        self.xi_a = xi_a;
        self.xi_b = xi_b;
        self
    }

    pub fn with_coherence_length(mut self, l_coh: f64) -> Self {
        self.delta_omega_s = SPEED_OF_LIGHT / l_coh;
        self
    }
}

/// Propagation modes inside the crystal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpticalMode {
    HSignal,
    VSignal,
    Idler,
}

impl OpticalMode {
    pub const ALL: [OpticalMode; 3] = [Self::HSignal, Self::VSignal, Self::Idler];
}

/// Quantities derived from a [`SetupParams`]; see [`SetupParams::derived`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    /// Coherence length `c / Δω_s`, m.
    pub l_coh: f64,
    crystal_length: f64,
    lambda_s: f64,
    lambda_i: f64,
    n_hs: f64,
    n_vs: f64,
    n_i: f64,
    bbo_extra_path: f64,
}

impl DerivedQuantities {
    fn from_params(p: &SetupParams) -> Self {
        Self {
            l_coh: SPEED_OF_LIGHT / p.delta_omega_s,
            crystal_length: p.crystal_length,
            lambda_s: p.lambda_s,
            lambda_i: p.lambda_i,
            n_hs: p.n_hs,
            n_vs: p.n_vs,
            n_i: p.n_i,
            bbo_extra_path: p.bbo_extra_path,
        }
    }

    pub fn index(&self, mode: OpticalMode) -> f64 {
        match mode {
            OpticalMode::HSignal => self.n_hs,
            OpticalMode::VSignal => self.n_vs,
            OpticalMode::Idler => self.n_i,
        }
    }

    pub fn wavelength(&self, mode: OpticalMode) -> f64 {
        match mode {
            OpticalMode::HSignal | OpticalMode::VSignal => self.lambda_s,
            OpticalMode::Idler => self.lambda_i,
        }
    }

    /// Optical path difference `L·(n_a − n_b)`, m.
    pub fn delta_l(&self, a: OpticalMode, b: OpticalMode) -> f64 {
        self.crystal_length * (self.index(a) - self.index(b))
    }

    /// Accumulated cycles `L·n/λ`; the V-signal also carries `δ_V/λ_s`.
    pub fn phi(&self, mode: OpticalMode) -> f64 {
        let base = self.crystal_length * self.index(mode) / self.wavelength(mode);
        match mode {
            OpticalMode::VSignal => base + self.bbo_extra_path / self.lambda_s,
            _ => base,
        }
    }

    /// `2π·φ`, rad.
    pub fn phase(&self, mode: OpticalMode) -> f64 {
        2.0 * PI * self.phi(mode)
    }
}

/// Deviation of the macro stage from linear motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepDeviation {
    None,
    /// `amplitude · sin(2π k / period_steps)`.
    Sinusoid { amplitude: f64, period_steps: f64 },
}

impl StepDeviation {
    pub fn at(&self, index: usize) -> f64 {
        match *self {
            StepDeviation::None => 0.0,
            StepDeviation::Sinusoid {
                amplitude,
                period_steps,
            } => amplitude * (2.0 * PI * index as f64 / period_steps).sin(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match *self {
            StepDeviation::None => 0.0,
            StepDeviation::Sinusoid { amplitude, .. } => amplitude.abs(),
        }
    }
}

/// Stepper-motor translation stage used for macro delay steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperModel {
    pub nominal_step: f64,
    pub deviation: StepDeviation,
    pub deviation_bound: f64,
}

impl StepperModel {
    pub fn linear(nominal_step: f64) -> Self {
        Self {
            nominal_step,
            deviation: StepDeviation::None,
            deviation_bound: DEFAULT_STEPPER_REPEATABILITY,
        }
    }

    pub fn with_sinusoid(mut self, amplitude: f64, period_steps: f64) -> Self {
        self.deviation = StepDeviation::Sinusoid {
            amplitude,
            period_steps,
        };
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !(self.nominal_step.is_finite() && self.nominal_step > 0.0) {
            return Err(ValidationError::Stepper {
                name: "nominal_step",
                value: self.nominal_step,
            });
        }
        if !(self.deviation_bound.is_finite() && self.deviation_bound >= 0.0) {
            return Err(ValidationError::Stepper {
                name: "deviation_bound",
                value: self.deviation_bound,
            });
        }
        if let StepDeviation::Sinusoid {
            amplitude,
            period_steps,
        } = self.deviation
        {
            if !(period_steps.is_finite() && period_steps > 0.0) {
                return Err(ValidationError::Stepper {
                    name: "period_steps",
                    value: period_steps,
                });
            }
            if !amplitude.is_finite() || amplitude.abs() > self.deviation_bound {
                return Err(ValidationError::StepperDeviation {
                    amplitude,
                    bound: self.deviation_bound,
                });
            }
        }
        Ok(())
    }

    /// Actual stage position after `index` steps.
    pub fn position(&self, index: usize) -> f64 {
        index as f64 * self.nominal_step + self.deviation.at(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_wavelengths_accepted() {
        let p = SetupParams::default();
        assert!(p.validate().is_ok());
        // 1/(1/1064 nm − 1/1550 nm) = 1064·1550/486 nm
        let expected = 1064.0 * 1550.0 / 486.0 * 1e-9;
        assert!((p.lambda_i - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn rounded_idler_wavelength_rejected() {
        let p = SetupParams {
            lambda_i: 3.4e-6,
            ..SetupParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ValidationError::EnergyConservation { .. })
        ));
    }

    #[test]
    fn high_gain_rejected() {
        let p = SetupParams {
            xi_a: 0.5,
            ..SetupParams::default()
        };
        assert_eq!(
            p.validate(),
            Err(ValidationError::GainOutOfRange {
                name: "xi_a",
                value: 0.5
            })
        );
    }

    #[test]
    fn transmission_and_lengths_checked() {
        let p = SetupParams {
            transmission: 1.5,
            ..SetupParams::default()
        };
        assert_eq!(p.validate(), Err(ValidationError::TransmissionOutOfRange(1.5)));
        let p = SetupParams {
            crystal_length: 0.0,
            ..SetupParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ValidationError::NonPositive {
                name: "crystal_length",
                ..
            })
        ));
        let p = SetupParams {
            dx: f64::NAN,
            ..SetupParams::default()
        };
        assert!(matches!(p.validate(), Err(ValidationError::NonFinite { name: "dx", .. })));
    }

    #[test]
    fn coherence_length_from_bandwidth() {
        let p = SetupParams::default().with_coherence_length(0.2e-3);
        assert!((p.derived().l_coh - 0.2e-3).abs() < 1e-18);
    }

    #[test]
    fn path_differences() {
        let p = SetupParams {
            n_vs: 2.138,
            ..SetupParams::default()
        };
        assert_eq!(p.derived().delta_l(OpticalMode::HSignal, OpticalMode::VSignal), 0.0);

        let p = SetupParams {
            crystal_length: 5e-3,
            n_hs: 2.208,
            n_vs: 2.138,
            ..SetupParams::default()
        };
        let d = p.derived().delta_l(OpticalMode::HSignal, OpticalMode::VSignal);
        assert!((d - 0.35e-3).abs() < 1e-15);

        let p = SetupParams::default();
        assert!((p.ni_envelope_center() - 0.25e-3).abs() < 1e-15);
        assert!((p.ic_envelope_center() - 0.60e-3).abs() < 1e-15);
    }

    #[test]
    fn bbo_path_enters_only_v_signal_phase() {
        let base = SetupParams::default();
        let shifted = SetupParams {
            bbo_extra_path: 100e-9,
            ..base
        };
        let (a, b) = (base.derived(), shifted.derived());
        assert_eq!(a.phi(OpticalMode::HSignal), b.phi(OpticalMode::HSignal));
        assert_eq!(a.phi(OpticalMode::Idler), b.phi(OpticalMode::Idler));
        let diff = b.phi(OpticalMode::VSignal) - a.phi(OpticalMode::VSignal);
        assert!((diff - 100e-9 / base.lambda_s).abs() < 1e-9);
    }

    #[test]
    fn destructive_path_cancels_relative_phase() {
        let p = SetupParams::default();
        let q = SetupParams {
            bbo_extra_path: p.destructive_bbo_path(),
            ..p
        };
        let d = q.derived();
        let cycles = d.phi(OpticalMode::HSignal) - d.phi(OpticalMode::VSignal);
        assert!((cycles - cycles.round()).abs() < 1e-9);
    }

    #[test]
    fn stepper_positions() {
        let s = StepperModel::linear(10e-6).with_sinusoid(3e-6, 40.0);
        assert!(s.validate().is_ok());
        assert_eq!(s.position(0), 0.0);
        assert!((s.position(10) - (100e-6 + 3e-6)).abs() < 1e-18);
        let bad = StepperModel::linear(10e-6).with_sinusoid(4e-6, 40.0);
        assert!(matches!(
            bad.validate(),
            Err(ValidationError::StepperDeviation { .. })
        ));
    }

    proptest! {
        #[test]
        fn delta_l_antisymmetric(a in 0usize..3, b in 0usize..3) {
            let d = SetupParams::default().derived();
            let (ma, mb) = (OpticalMode::ALL[a], OpticalMode::ALL[b]);
            prop_assert_eq!(d.delta_l(ma, ma), 0.0);
            prop_assert_eq!(d.delta_l(ma, mb), -d.delta_l(mb, ma));
        }

        #[test]
        fn crystal_length_scales_linearly(k in 0.1f64..10.0) {
            let p = SetupParams::default();
            let q = SetupParams { crystal_length: p.crystal_length * k, ..p };
            let (a, b) = (p.derived(), q.derived());
            for x in OpticalMode::ALL {
                prop_assert!((b.phi(x) - k * a.phi(x)).abs() <= 1e-12 * b.phi(x).abs());
                for y in OpticalMode::ALL {
                    let expected = k * a.delta_l(x, y);
                    prop_assert!((b.delta_l(x, y) - expected).abs() <= 1e-15 + 1e-12 * expected.abs());
                }
            }
        }

        #[test]
        fn derived_is_pure(dx in -1e-3f64..1e-3) {
            let p = SetupParams::default().with_dx(dx);
            prop_assert_eq!(p.derived(), p.derived());
        }
    }
}
