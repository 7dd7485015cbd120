//! Analytic photon-number expectation at the signal detector.
//!
//! The expectation is the sum of three intensity terms, one self-interference
//! term between the H and V signal components of the first pass, and two
//! dx-dependent cross terms between the first and second pass (one per signal
//! polarization). Each interference term carries a Gaussian coherence
//! envelope in its path mismatch.

use std::f64::consts::PI;

use crate::params::{OpticalMode, SetupParams};

/// Sign with which the idler crystal phase enters the cross-term arguments.
///
/// `Plus` is what propagating the pair state through the crystal produces;
/// `Minus` reproduces the alternative printed form and is kept for
/// comparison runs only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdlerPhaseSign {
    #[default]
    Plus,
    Minus,
}

impl IdlerPhaseSign {
    fn factor(self) -> f64 {
        match self {
            IdlerPhaseSign::Plus => 1.0,
            IdlerPhaseSign::Minus => -1.0,
        }
    }
}

/// Where the idler delay is evaluated.
///
/// A fine piezo scan moves the fringe phase over a few idler wavelengths while
/// the coherence envelopes (width ~`L_coh`) stay put; `envelope` and `phase`
/// let callers hold the envelopes at the macro position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delay {
    pub envelope: f64,
    pub phase: f64,
}

impl Delay {
    pub fn exact(dx: f64) -> Self {
        Self {
            envelope: dx,
            phase: dx,
        }
    }

    pub fn frozen(envelope: f64, phase: f64) -> Self {
        Self { envelope, phase }
    }
}

/// Term-by-term value of the expectation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermBreakdown {
    /// `ξ_B² cos²θ₂`
    pub pass_b: f64,
    /// `ξ_A² cos²θ₁ cos²θ₂`
    pub pass_a_h: f64,
    /// `ξ_A² sin²θ₁ sin²θ₂`
    pub pass_a_v: f64,
    pub self_interference: f64,
    pub cross_h: f64,
    pub cross_v: f64,
    pub total: f64,
}

impl TermBreakdown {
    pub fn terms(&self) -> [f64; 6] {
        [
            self.pass_b,
            self.pass_a_h,
            self.pass_a_v,
            self.self_interference,
            self.cross_h,
            self.cross_v,
        ]
    }

    /// The dx-independent part, i.e. everything except the two cross terms.
    pub fn background(&self) -> f64 {
        self.pass_b + self.pass_a_h + self.pass_a_v + self.self_interference
    }
}

fn envelope(mismatch: f64, l_coh: f64) -> f64 {
    (-(mismatch * mismatch) / (2.0 * l_coh * l_coh)).exp()
}

pub fn term_breakdown(params: &SetupParams) -> TermBreakdown {
    term_breakdown_at(params, Delay::exact(params.dx), IdlerPhaseSign::Plus)
}

pub fn term_breakdown_at(params: &SetupParams, delay: Delay, sign: IdlerPhaseSign) -> TermBreakdown {
    let d = params.derived();
    let (s1, c1) = params.theta1.sin_cos();
    let (s2, c2) = params.theta2.sin_cos();
    let xa = params.xi_a;
    let xb = params.xi_b;
    let root_t = params.field_transmission();

    let pass_b = xb * xb * c2 * c2;
    let pass_a_h = xa * xa * c1 * c1 * c2 * c2;
    let pass_a_v = xa * xa * s1 * s1 * s2 * s2;

    let dl_hv = d.delta_l(OpticalMode::HSignal, OpticalMode::VSignal);
    let self_interference = -2.0
        * xa
        * xa
        * s1
        * s2
        * c1
        * c2
        * envelope(dl_hv, d.l_coh)
        * (2.0 * PI * (d.phi(OpticalMode::HSignal) - d.phi(OpticalMode::VSignal))).cos();

    let idler_cycles = sign.factor() * d.phi(OpticalMode::Idler) + delay.phase / params.lambda_i;
    let dl_h = d.delta_l(OpticalMode::HSignal, OpticalMode::Idler);
    let dl_v = d.delta_l(OpticalMode::VSignal, OpticalMode::Idler);
    let cross_h = 2.0
        * xa
        * xb
        * root_t
        * c1
        * c2
        * c2
        * envelope(dl_h - delay.envelope, d.l_coh)
        * (2.0 * PI * (d.phi(OpticalMode::HSignal) + idler_cycles)).cos();
    let cross_v = -2.0
        * xa
        * xb
        * root_t
        * s1
        * s2
        * c2
        * envelope(dl_v - delay.envelope, d.l_coh)
        * (2.0 * PI * (d.phi(OpticalMode::VSignal) + idler_cycles)).cos();

    let total = pass_b + pass_a_h + pass_a_v + self_interference + cross_h + cross_v;
    TermBreakdown {
        pass_b,
        pass_a_h,
        pass_a_v,
        self_interference,
        cross_h,
        cross_v,
        total,
    }
}

/// Photon-number expectation per mode at the H output of the final PBS.
pub fn expected_counts(params: &SetupParams) -> f64 {
    term_breakdown(params).total.max(0.0)
}

pub fn expected_counts_at(params: &SetupParams, delay: Delay, sign: IdlerPhaseSign) -> f64 {
    term_breakdown_at(params, delay, sign).total.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at_h_peak_in_phase(xi: f64) -> SetupParams {
        // Place dx on the H envelope centre, then nudge it by less than one
        // idler wavelength so the cross-term phase is a whole number of cycles.
        let p = SetupParams {
            transmission: 1.0,
            ..SetupParams::default()
        }
        .with_gains(xi, xi)
        .with_angles(0.0, 0.0);
        let d = p.derived();
        let centre = p.ni_envelope_center();
        let cycles = d.phi(OpticalMode::HSignal) + d.phi(OpticalMode::Idler) + centre / p.lambda_i;
        let shift = (cycles.ceil() - cycles) * p.lambda_i;
        p.with_dx(centre + shift)
    }

    #[test]
    fn perfect_constructive_fringe() {
        let xi = 0.07;
        let p = at_h_peak_in_phase(xi);
        // the nudge moves dx off the envelope peak by < λ_i; account for it
        let offset = p.dx - p.ni_envelope_center();
        let env = (-(offset * offset) / (2.0 * p.derived().l_coh.powi(2))).exp();
        let n = expected_counts(&p);
        let expected = 2.0 * xi * xi + 2.0 * xi * xi * env;
        assert!((n - expected).abs() < 1e-12 * expected, "{n} vs {expected}");
        assert!((n - 4.0 * xi * xi).abs() < 1e-3 * 4.0 * xi * xi);

        let exact = expected_counts_at(&p, Delay::frozen(p.ni_envelope_center(), p.dx), IdlerPhaseSign::Plus);
        assert!((exact - 4.0 * xi * xi).abs() < 1e-14);
    }

    #[test]
    fn both_plates_crossed_far_from_envelopes() {
        let p = SetupParams::default()
            .with_angles(90f64.to_radians(), 90f64.to_radians())
            .with_dx(10e-3);
        let n = expected_counts(&p);
        assert!((n - p.xi_a * p.xi_a).abs() < 1e-15);
    }

    #[test]
    fn no_transmission_no_dx_dependence() {
        let base = SetupParams {
            transmission: 0.0,
            ..SetupParams::default()
        }
        .with_angles(45f64.to_radians(), 45f64.to_radians());
        let reference = expected_counts(&base.with_dx(base.ni_envelope_center()));
        for k in 0..50 {
            let dx = k as f64 * 20e-6;
            assert_eq!(expected_counts(&base.with_dx(dx)), reference);
        }
    }

    #[test]
    fn zero_theta1_kills_v_terms() {
        let p = SetupParams::default().with_angles(0.0, 0.7).with_dx(0.6e-3);
        let t = term_breakdown(&p);
        assert_eq!(t.self_interference, 0.0);
        assert_eq!(t.cross_v, 0.0);
    }

    #[test]
    fn zero_theta2_kills_sine_terms() {
        let p = SetupParams::default().with_angles(0.4, 0.0).with_dx(0.3e-3);
        let t = term_breakdown(&p);
        assert_eq!(t.pass_a_v, 0.0);
        assert_eq!(t.self_interference, 0.0);
        assert_eq!(t.cross_v, 0.0);
        assert!(t.cross_h != 0.0);
    }

    #[test]
    fn no_first_pass_leaves_second_pass_only() {
        let p = SetupParams {
            xi_a: 0.0,
            ..SetupParams::default()
        }
        .with_dx(0.25e-3);
        let t = term_breakdown(&p);
        assert!(t.pass_b > 0.0);
        for v in &t.terms()[1..] {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn signs_agree_when_idler_phase_is_whole_cycles() {
        // Both conventions coincide iff 2·φ_i is an integer.
        let mut p = SetupParams::default().with_dx(0.3e-3);
        let phi_i = p.derived().phi(OpticalMode::Idler);
        p.n_i *= (phi_i.round() / phi_i).max(0.0);
        let plus = expected_counts_at(&p, Delay::exact(p.dx), IdlerPhaseSign::Plus);
        let minus = expected_counts_at(&p, Delay::exact(p.dx), IdlerPhaseSign::Minus);
        assert!((plus - minus).abs() < 1e-9 * plus);
    }

    fn arb_params() -> impl Strategy<Value = SetupParams> {
        (
            0.0f64..0.2,
            0.0f64..0.2,
            -1.6f64..1.6,
            -1.6f64..1.6,
            0.0f64..=1.0,
            -0.5e-3f64..1.5e-3,
            0.0f64..2e-6,
        )
            .prop_map(|(xa, xb, t1, t2, t, dx, bbo)| SetupParams {
                transmission: t,
                bbo_extra_path: bbo,
                ..SetupParams::default()
            }
            .with_gains(xa, xb)
            .with_angles(t1, t2)
            .with_dx(dx))
    }

    proptest! {
        #[test]
        fn breakdown_sums_to_total(p in arb_params()) {
            let t = term_breakdown(&p);
            let sum: f64 = t.terms().iter().sum();
            prop_assert!((sum - t.total).abs() <= 1e-12 * t.total.abs().max(1e-30));
            prop_assert!(t.pass_b >= 0.0 && t.pass_a_h >= 0.0 && t.pass_a_v >= 0.0);
        }

        #[test]
        fn counts_nonnegative(p in arb_params()) {
            // the raw sum may dip below zero only by rounding
            prop_assert!(term_breakdown(&p).total >= -1e-16);
        }

        #[test]
        fn joint_angle_flip_invariance(p in arb_params()) {
            let q = p.with_angles(-p.theta1, -p.theta2);
            let (a, b) = (expected_counts(&p), expected_counts(&q));
            prop_assert!((a - b).abs() <= 1e-14 * a.max(1e-30));
        }

        #[test]
        fn pure_ni_mode_scales_with_cos2_theta2(p in arb_params(), t2 in -1.5f64..1.5) {
            let p0 = p.with_angles(0.0, 0.0);
            let p2 = p.with_angles(0.0, t2);
            let expected = t2.cos().powi(2) * expected_counts(&p0);
            prop_assert!((expected_counts(&p2) - expected).abs() <= 1e-14 * expected.max(1e-30));
        }

        #[test]
        fn degenerate_indices_collapse_to_two_source_interference(p in arb_params()) {
            let q = SetupParams { n_vs: p.n_hs, bbo_extra_path: 0.0, ..p };
            let d = q.derived();
            let sum = q.theta1 + q.theta2;
            let c2 = q.theta2.cos();
            let env = (-(d.delta_l(OpticalMode::HSignal, OpticalMode::Idler) - q.dx).powi(2)
                / (2.0 * d.l_coh * d.l_coh)).exp();
            let phase = 2.0 * PI * (d.phi(OpticalMode::HSignal) + d.phi(OpticalMode::Idler) + q.dx / q.lambda_i);
            let expected = q.xi_b.powi(2) * c2 * c2
                + q.xi_a.powi(2) * sum.cos().powi(2)
                + 2.0 * q.xi_a * q.xi_b * q.transmission.sqrt() * c2 * sum.cos() * env * phase.cos();
            let got = expected_counts(&q);
            // Phases reach ~1e5 rad, so rounding in the argument sets the floor.
            prop_assert!((got - expected).abs() <= 1e-10 * (q.xi_a.powi(2) + q.xi_b.powi(2)), "got {got} exp {expected}");
        }
    }

    #[test]
    fn fine_scan_period_near_envelope_peak() {
        // Brute-force zero crossings of N − mean across 0.05·L_coh at the H peak.
        let p = SetupParams::default().with_angles(0.0, 0.0);
        let l_coh = p.derived().l_coh;
        let centre = p.ni_envelope_center();
        let span = 0.05 * l_coh;
        let n = 20_000;
        let xs: Vec<f64> = (0..=n).map(|k| centre - span / 2.0 + span * k as f64 / n as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| expected_counts(&p.with_dx(x))).collect();
        let bg = term_breakdown(&p).background();
        let mut crossings = Vec::new();
        for k in 0..n {
            let (a, b) = (ys[k] - bg, ys[k + 1] - bg);
            if a < 0.0 && b >= 0.0 {
                crossings.push(xs[k] + (xs[k + 1] - xs[k]) * a / (a - b));
            }
        }
        let period = (crossings.last().unwrap() - crossings[0]) / (crossings.len() - 1) as f64;
        assert!((period - p.lambda_i).abs() < 1e-3 * p.lambda_i, "{period}");
    }
}
