//! Fringe scans over the idler delay and sinusoidal fits of the sampled counts.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::closed_form::{self, Delay, IdlerPhaseSign};
use crate::params::{SetupParams, ValidationError};

pub const MIN_SCAN_STEPS: usize = 16;
/// Fits with `𝒜/C` below this are reported as degenerate (visibility 0).
pub const DEGENERATE_CONTRAST: f64 = 1e-9;
/// The fitted period may move at most this fraction away from the hint.
pub const PERIOD_BOUND: f64 = 0.05;
pub const MAX_FIT_ITERATIONS: usize = 200;
pub const MIN_SAMPLES_PER_PERIOD: f64 = 8.0;

/// Default fine scan used by [`visibility_at`]: 4 idler wavelengths, 16 samples each.
pub const FINE_SPAN_PERIODS: f64 = 4.0;
pub const FINE_SCAN_STEPS: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("scan needs at least {MIN_SCAN_STEPS} steps, got {0}")]
    TooFewSteps(usize),
    #[error("half_width must be > 0, got {0}")]
    NonPositiveHalfWidth(f64),
    #[error("scan samples must have strictly increasing dx")]
    NotIncreasing,
    #[error("scan counts must be finite and >= 0")]
    BadCounts,
    #[error("fringe fits need a fine scan")]
    WrongKind,
    #[error("scan spans {periods:.3} periods, need at least 2")]
    InsufficientSpan { periods: f64 },
    #[error("scan has {per_period:.2} samples per period, need at least {MIN_SAMPLES_PER_PERIOD}")]
    TooFewSamples { per_period: f64 },
    #[error("fringe fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanKind {
    /// Piezo-scale offsets around a fixed stage position: envelopes frozen.
    Fine,
    /// Stage-scale positions, each evaluated in full.
    Macro,
}

impl ScanKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScanKind::Fine => "fine",
            ScanKind::Macro => "macro",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSample {
    pub dx: f64,
    pub counts: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanResult {
    samples: Vec<ScanSample>,
    params: SetupParams,
    kind: ScanKind,
}

impl ScanResult {
    /// Wraps externally produced samples (synthetic data, replays).
    pub fn from_samples(
        samples: Vec<ScanSample>,
        params: SetupParams,
        kind: ScanKind,
    ) -> Result<Self, AnalysisError> {
        if samples.windows(2).any(|w| !(w[1].dx > w[0].dx)) {
            return Err(AnalysisError::NotIncreasing);
        }
        if samples.iter().any(|s| !(s.counts.is_finite() && s.counts >= 0.0)) {
            return Err(AnalysisError::BadCounts);
        }
        Ok(Self {
            samples,
            params,
            kind,
        })
    }

    pub fn samples(&self) -> &[ScanSample] {
        &self.samples
    }

    pub fn params(&self) -> &SetupParams {
        &self.params
    }

    pub fn kind(&self) -> ScanKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.samples.first(), self.samples.last()) {
            (Some(a), Some(b)) => b.dx - a.dx,
            _ => 0.0,
        }
    }
}

fn uniform_offsets(half_width: f64, steps: usize) -> impl Iterator<Item = f64> {
    (0..=steps).map(move |k| -half_width + 2.0 * half_width * k as f64 / steps as f64)
}

/// Fine scan of `steps + 1` points over `[center − half_width, center + half_width]`.
///
/// The coherence envelopes are held at `center`; only the fringe phase moves.
pub fn scan_dx(
    params: &SetupParams,
    center: f64,
    half_width: f64,
    steps: usize,
) -> Result<ScanResult, AnalysisError> {
    scan_dx_with_sign(params, center, half_width, steps, IdlerPhaseSign::Plus)
}

pub fn scan_dx_with_sign(
    params: &SetupParams,
    center: f64,
    half_width: f64,
    steps: usize,
    sign: IdlerPhaseSign,
) -> Result<ScanResult, AnalysisError> {
    params.validate()?;
    if steps < MIN_SCAN_STEPS {
        return Err(AnalysisError::TooFewSteps(steps));
    }
    if !(half_width > 0.0) {
        return Err(AnalysisError::NonPositiveHalfWidth(half_width));
    }
    let samples = uniform_offsets(half_width, steps)
        .map(|off| {
            let dx = center + off;
            ScanSample {
                dx,
                counts: closed_form::expected_counts_at(params, Delay::frozen(center, dx), sign),
            }
        })
        .collect();
    Ok(ScanResult {
        samples,
        params: *params,
        kind: ScanKind::Fine,
    })
}

/// Stage-scale scan: every position is evaluated exactly (envelope and phase).
pub fn scan_macro(params: &SetupParams, positions: &[f64]) -> Result<ScanResult, AnalysisError> {
    params.validate()?;
    let samples = positions
        .iter()
        .map(|&dx| ScanSample {
            dx,
            counts: closed_form::expected_counts(&params.with_dx(dx)),
        })
        .collect();
    ScanResult::from_samples(samples, *params, ScanKind::Macro)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeMetrics {
    pub n_max: f64,
    pub n_min: f64,
    pub amplitude: f64,
    pub visibility: f64,
    /// Fitted offset `C`.
    pub mean: f64,
    pub fitted_period: f64,
    /// Phase `φ₀` of `cos(2π(dx − dx_mid)/period + φ₀)`, `dx_mid` being the scan midpoint.
    pub fitted_phase: f64,
    pub fit_residual_rms: f64,
    pub degenerate: bool,
}

struct Fit {
    c: f64,
    a: f64,
    b: f64,
    s: f64,
}

fn residual_cost(theta: &[f64], y: &[f64], p: &Fit) -> f64 {
    theta
        .iter()
        .zip(y)
        .map(|(&t, &yy)| {
            let (sn, cs) = (p.s * t).sin_cos();
            let r = yy - (p.c + p.a * cs + p.b * sn);
            r * r
        })
        .sum()
}

/// Linear least squares for (C, a, b) at fixed frequency scale `s`.
fn linear_seed(theta: &[f64], y: &[f64], s: f64) -> Option<Fit> {
    let mut m = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (&t, &yy) in theta.iter().zip(y) {
        let (sn, cs) = (s * t).sin_cos();
        let basis = Vector3::new(1.0, cs, sn);
        m += basis * basis.transpose();
        rhs += basis * yy;
    }
    let sol = m.lu().solve(&rhs)?;
    Some(Fit {
        c: sol[0],
        a: sol[1],
        b: sol[2],
        s,
    })
}

/// Damped Gauss-Newton on `C + a cos(s θ) + b sin(s θ)` with `s` boxed.
fn levenberg_marquardt(theta: &[f64], y: &[f64], mut p: Fit) -> Result<Fit, AnalysisError> {
    let (s_lo, s_hi) = (1.0 / (1.0 + PERIOD_BOUND), 1.0 / (1.0 - PERIOD_BOUND));
    let mut cost = residual_cost(theta, y, &p);
    let mut lambda = 1e-3;
    for _ in 0..MAX_FIT_ITERATIONS {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&t, &yy) in theta.iter().zip(y) {
            let (sn, cs) = (p.s * t).sin_cos();
            let r = yy - (p.c + p.a * cs + p.b * sn);
            let j = Vector4::new(1.0, cs, sn, t * (p.b * cs - p.a * sn));
            jtj += j * j.transpose();
            jtr += j * r;
        }
        loop {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&jtr)) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    return Ok(p);
                }
                continue;
            };
            let trial = Fit {
                c: p.c + step[0],
                a: p.a + step[1],
                b: p.b + step[2],
                s: (p.s + step[3]).clamp(s_lo, s_hi),
            };
            let trial_cost = residual_cost(theta, y, &trial);
            if trial_cost <= cost {
                let scale = p.c.abs() + p.a.hypot(p.b);
                let moved = (trial.c - p.c).abs() + (trial.a - p.a).abs() + (trial.b - p.b).abs();
                let small = moved <= 1e-14 * scale && (trial.s - p.s).abs() <= 1e-14;
                let flat = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda * 0.3).max(1e-12);
                if small || flat || cost == 0.0 {
                    return Ok(p);
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at working precision
                return Ok(p);
            }
        }
    }
    Err(AnalysisError::NonConvergence {
        iterations: MAX_FIT_ITERATIONS,
    })
}

/// Fits `C + (𝒜/2)·cos(2π·dx/period + φ₀)` to a fine scan.
pub fn fit_fringe(scan: &ScanResult, lambda_hint: f64) -> Result<FringeMetrics, AnalysisError> {
    if scan.kind != ScanKind::Fine {
        return Err(AnalysisError::WrongKind);
    }
    let periods = scan.span() / lambda_hint;
    if !(periods >= 2.0) {
        return Err(AnalysisError::InsufficientSpan { periods });
    }
    let per_period = (scan.len() - 1) as f64 / periods;
    // tolerate rounding in the span when the density sits exactly at the minimum
    if per_period < MIN_SAMPLES_PER_PERIOD * (1.0 - 1e-9) {
        return Err(AnalysisError::TooFewSamples { per_period });
    }

    let samples = scan.samples();
    let mid = 0.5 * (samples[0].dx + samples[samples.len() - 1].dx);
    let k0 = 2.0 * PI / lambda_hint;
    let theta: Vec<f64> = samples.iter().map(|s| k0 * (s.dx - mid)).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.counts).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));

    if !(mean > 0.0) || (hi - lo) / mean < DEGENERATE_CONTRAST {
        let rms = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        return Ok(FringeMetrics {
            n_max: mean.max(0.0),
            n_min: mean.max(0.0),
            amplitude: 0.0,
            visibility: 0.0,
            mean: mean.max(0.0),
            fitted_period: lambda_hint,
            fitted_phase: 0.0,
            fit_residual_rms: rms,
            degenerate: true,
        });
    }

    let seed = linear_seed(&theta, &y, 1.0).unwrap_or(Fit {
        c: mean,
        a: 0.5 * (hi - lo),
        b: 0.0,
        s: 1.0,
    });
    let fit = levenberg_marquardt(&theta, &y, seed)?;
    let rms = (residual_cost(&theta, &y, &fit) / n).sqrt();

    let half = fit.a.hypot(fit.b);
    let n_max = (fit.c + half).max(0.0);
    let n_min = (fit.c - half).max(0.0);
    let amplitude = n_max - n_min;
    let degenerate = amplitude / fit.c.abs() < DEGENERATE_CONTRAST;
    let visibility = if degenerate || n_max + n_min <= 0.0 {
        0.0
    } else {
        (amplitude / (n_max + n_min)).clamp(0.0, 1.0)
    };
    Ok(FringeMetrics {
        n_max,
        n_min,
        amplitude: if degenerate { 0.0 } else { amplitude },
        visibility,
        mean: fit.c,
        fitted_period: lambda_hint / fit.s,
        fitted_phase: (-fit.b).atan2(fit.a),
        fit_residual_rms: rms,
        degenerate,
    })
}

/// Which cross term the fine scan is centred on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Envelope {
    /// H-signal cross term (nonlinear-interferometer mode).
    Ni,
    /// V-signal cross term (induced-coherence mode).
    Ic,
    Custom(f64),
}

impl Envelope {
    pub fn center(self, params: &SetupParams) -> f64 {
        match self {
            Envelope::Ni => params.ni_envelope_center(),
            Envelope::Ic => params.ic_envelope_center(),
            Envelope::Custom(dx) => dx,
        }
    }
}

/// Fine scan of `4 λ_i` at the chosen envelope, then [`fit_fringe`].
pub fn visibility_at(params: &SetupParams, envelope: Envelope) -> Result<FringeMetrics, AnalysisError> {
    fine_metrics(params, envelope.center(params))
}

pub fn fine_metrics(params: &SetupParams, center: f64) -> Result<FringeMetrics, AnalysisError> {
    let half = 0.5 * FINE_SPAN_PERIODS * params.lambda_i;
    let scan = scan_dx(params, center, half, FINE_SCAN_STEPS)?;
    fit_fringe(&scan, params.lambda_i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(f: impl Fn(f64) -> f64, span: f64, steps: usize) -> ScanResult {
        let samples = (0..=steps)
            .map(|k| {
                let dx = span * k as f64 / steps as f64;
                ScanSample { dx, counts: f(dx) }
            })
            .collect();
        ScanResult::from_samples(samples, SetupParams::default(), ScanKind::Fine).unwrap()
    }

    #[test]
    fn unit_contrast_sinusoid() {
        let li = SetupParams::default().lambda_i;
        let scan = synthetic(|x| 1.0 + (2.0 * PI * x / li).cos(), 3.0 * li, 96);
        let m = fit_fringe(&scan, li).unwrap();
        assert!((m.visibility - 1.0).abs() < 1e-9);
        assert!((m.fitted_period / li - 1.0).abs() < 1e-4);
        assert!(m.fit_residual_rms <= 1e-6 * m.mean);
        assert!(!m.degenerate);
    }

    #[test]
    fn constant_scan_is_degenerate() {
        let li = SetupParams::default().lambda_i;
        let m = fit_fringe(&synthetic(|_| 1.0, 3.0 * li, 64), li).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.visibility, 0.0);
        assert_eq!(m.amplitude, 0.0);
    }

    #[test]
    fn zero_scan_is_degenerate() {
        let li = SetupParams::default().lambda_i;
        let m = fit_fringe(&synthetic(|_| 0.0, 3.0 * li, 64), li).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.visibility, 0.0);
    }

    proptest! {
        #[test]
        fn fit_round_trip(
            c in 0.5f64..2.0,
            contrast in 0.05f64..0.95,
            phi in -3.0f64..3.0,
            detune in -0.03f64..0.03,
            periods in 3.0f64..6.0,
        ) {
            let li = SetupParams::default().lambda_i;
            let period = li * (1.0 + detune);
            let amp = 2.0 * c * contrast;
            let span = periods * li;
            let steps = (32.0 * periods).ceil() as usize;
            let mid = span / 2.0;
            let scan = synthetic(|x| c + 0.5 * amp * (2.0 * PI * (x - mid) / period + phi).cos(), span, steps);
            let m = fit_fringe(&scan, li).unwrap();
            prop_assert!((m.mean / c - 1.0).abs() < 1e-3);
            prop_assert!((m.amplitude / amp - 1.0).abs() < 1e-3);
            let dphi = (m.fitted_phase - phi + PI).rem_euclid(2.0 * PI) - PI;
            prop_assert!(dphi.abs() < 1e-3 * phi.abs().max(1.0));
            prop_assert!((m.fitted_period / period - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fit_rejects_bad_scans() {
        let p = SetupParams::default();
        let li = p.lambda_i;
        let short = synthetic(|x| 1.0 + (2.0 * PI * x / li).cos(), 1.5 * li, 64);
        assert!(matches!(fit_fringe(&short, li), Err(AnalysisError::InsufficientSpan { .. })));
        let sparse = synthetic(|x| 1.0 + (2.0 * PI * x / li).cos(), 4.0 * li, 20);
        assert!(matches!(fit_fringe(&sparse, li), Err(AnalysisError::TooFewSamples { .. })));
        let mac = scan_macro(&p, &(0..40).map(|k| k as f64 * li / 8.0).collect::<Vec<_>>()).unwrap();
        assert_eq!(fit_fringe(&mac, li), Err(AnalysisError::WrongKind));
    }

    #[test]
    fn scan_rejects_bad_arguments() {
        let p = SetupParams::default();
        assert_eq!(scan_dx(&p, 0.0, 0.0, 32), Err(AnalysisError::NonPositiveHalfWidth(0.0)));
        assert_eq!(scan_dx(&p, 0.0, -1e-6, 32), Err(AnalysisError::NonPositiveHalfWidth(-1e-6)));
        assert_eq!(scan_dx(&p, 0.0, 1e-6, 15), Err(AnalysisError::TooFewSteps(15)));
        let bad = SetupParams { transmission: 2.0, ..p };
        assert!(matches!(scan_dx(&bad, 0.0, 1e-6, 32), Err(AnalysisError::Validation(_))));
        assert_eq!(
            ScanResult::from_samples(
                vec![ScanSample { dx: 1.0, counts: 0.0 }, ScanSample { dx: 1.0, counts: 0.0 }],
                p,
                ScanKind::Fine
            ),
            Err(AnalysisError::NotIncreasing)
        );
    }

    #[test]
    fn opaque_loss_gives_flat_scan() {
        let p = SetupParams { transmission: 0.0, ..SetupParams::default() };
        let scan = scan_dx(&p, p.ni_envelope_center(), 3.0 * p.lambda_i, 64).unwrap();
        let c0 = scan.samples()[0].counts;
        assert!(scan.samples().iter().all(|s| (s.counts - c0).abs() <= 1e-12 * c0));
        let m = fit_fringe(&scan, p.lambda_i).unwrap();
        assert!(m.degenerate && m.visibility == 0.0);
    }

    #[test]
    fn ni_scan_swings_between_zero_and_four_xi_squared() {
        let xi = 0.05;
        let p = SetupParams { transmission: 1.0, ..SetupParams::default() }
            .with_gains(xi, xi)
            .with_angles(0.0, 0.0);
        let scan = scan_dx(&p, p.ni_envelope_center(), 1.5 * p.lambda_i, 600).unwrap();
        let (lo, hi) = scan
            .samples()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(s.counts), hi.max(s.counts)));
        // 200 samples per period put the nearest sample within ~2.5e-4·ξ² of the zero
        assert!(lo < 1e-3 * xi * xi);
        assert!((hi / (4.0 * xi * xi) - 1.0).abs() < 1e-4);
        let m = fit_fringe(&scan, p.lambda_i).unwrap();
        assert!((m.fitted_period / p.lambda_i - 1.0).abs() < 1e-9);
    }

    /// Visibility from a dense raw max/min search over one fringe period.
    fn brute_force_visibility(p: &SetupParams, center: f64) -> f64 {
        let n = 20_000;
        let (lo, hi) = (0..=n).fold((f64::INFINITY, 0.0f64), |(lo, hi), k| {
            let dx = center + p.lambda_i * (k as f64 / n as f64 - 0.5);
            let v = closed_form::expected_counts_at(p, Delay::frozen(center, dx), IdlerPhaseSign::Plus);
            (lo.min(v), hi.max(v))
        });
        (hi - lo) / (hi + lo)
    }

    #[test]
    fn ni_peak_visibility_is_root_t() {
        let p = SetupParams::default().with_angles(0.0, 0.3).with_gains(0.05, 0.05);
        let m = visibility_at(&p, Envelope::Ni).unwrap();
        assert!((m.visibility - 0.5).abs() < 1e-6, "{}", m.visibility);
        assert!((brute_force_visibility(&p, p.ni_envelope_center()) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn missing_cross_terms_give_zero_visibility() {
        // short coherence length so the other envelope's tail is ~exp(−68)
        let base = SetupParams::default().with_coherence_length(0.03e-3);
        let p = base.with_angles(0.0, 0.5);
        assert_eq!(visibility_at(&p, Envelope::Ic).unwrap().visibility, 0.0);
        let p = base.with_angles(PI / 2.0, 0.5);
        assert_eq!(visibility_at(&p, Envelope::Ni).unwrap().visibility, 0.0);
    }

    #[test]
    fn balanced_ic_reaches_unit_visibility() {
        let (xa, xb) = (0.03, 0.07);
        let base = SetupParams { transmission: 1.0, ..SetupParams::default() }.with_gains(xa, xb);
        let t2 = (xb / xa).atan();
        let m = visibility_at(&base.with_angles(PI / 2.0, t2), Envelope::Ic).unwrap();
        assert!((m.visibility - 1.0).abs() < 1e-6, "{}", m.visibility);
        // grid search over θ₂ lands next to the analytic optimum
        let grid: Vec<f64> = (1..900).map(|k| k as f64 * 0.1f64.to_radians()).collect();
        let best = grid
            .iter()
            .map(|&t| (t, visibility_at(&base.with_angles(PI / 2.0, t), Envelope::Ic).unwrap().visibility))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        assert!((best.0 - t2).abs() <= 0.1f64.to_radians());
        assert!(best.1 <= m.visibility + 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ni_visibility_ignores_theta2(t2 in -80.0f64..80.0, xa in 0.01f64..0.1, xb in 0.01f64..0.1) {
            let p = SetupParams::default().with_gains(xa, xb);
            let reference = visibility_at(&p.with_angles(0.0, 0.0), Envelope::Ni).unwrap().visibility;
            let v = visibility_at(&p.with_angles(0.0, t2.to_radians()), Envelope::Ni).unwrap().visibility;
            prop_assert!((v - reference).abs() < 1e-9);
        }

        #[test]
        fn visibility_scales_as_root_t(t in 0.0f64..1.0, ic in proptest::bool::ANY) {
            let xi = 0.04;
            let (env, angles) = if ic { (Envelope::Ic, (PI / 2.0, PI / 4.0)) } else { (Envelope::Ni, (0.0, 0.2)) };
            let p = SetupParams { transmission: t, ..SetupParams::default() }
                .with_gains(xi, xi)
                .with_angles(angles.0, angles.1);
            let v = visibility_at(&p, env).unwrap().visibility;
            prop_assert!((v - t.sqrt()).abs() < 1e-6, "T={} v={}", t, v);
        }
    }
}
