//! Scenario layer: maps, sweeps and density grids built from fine-scan fits.

use std::f64::consts::PI;

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, Envelope, FringeMetrics, ScanKind, ScanResult, ScanSample};
use crate::closed_form::{self, Delay, IdlerPhaseSign};
use crate::oracle::{self, OracleError, QuadratureSpec};
use crate::params::{SetupParams, StepperModel, ValidationError};

/// Rows whose fringe amplitude is below this fraction of the mean are not fitted.
pub const RESOLVABLE_CONTRAST: f64 = 1e-6;
/// Relative rms residual under which an envelope model is accepted.
pub const REGION_FIT_TOL: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("micro_span {span} m is shorter than 2 idler wavelengths ({min} m)")]
    MicroSpanTooSmall { span: f64, min: f64 },
    #[error("macro scan [{start}, {end}] m does not cover both envelope centres ({ni}, {ic})")]
    MacroRangeTooShort { start: f64, end: f64, ni: f64, ic: f64 },
    #[error("axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Counts,
    Visibility,
    Amplitude,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Counts => "counts",
            Metric::Visibility => "visibility",
            Metric::Amplitude => "amplitude",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub values: Vec<f64>,
}

impl Axis {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

/// Row-major 2D grid: `values[i * axis2.len() + j]` belongs to `(axis1[i], axis2[j])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub axis1: Axis,
    pub axis2: Axis,
    values: Vec<f64>,
    pub metric: Metric,
}

impl SweepGrid {
    pub fn new(axis1: Axis, axis2: Axis, values: Vec<f64>, metric: Metric) -> Self {
        assert_eq!(values.len(), axis1.values.len() * axis2.values.len(), "grid shape");
        Self {
            axis1,
            axis2,
            values,
            metric,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.axis1.values.len(), self.axis2.values.len())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.axis2.values.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n2 = self.axis2.values.len();
        &self.values[i * n2..(i + 1) * n2]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(i, j, value)` of the largest entry (first one on ties).
    pub fn argmax(&self) -> (usize, usize, f64) {
        let n2 = self.axis2.values.len();
        let (k, v) = self
            .values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
        (k / n2, k % n2, v)
    }
}

/// Gaussian envelope region located on the macro axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeRegion {
    pub center: f64,
    /// Gaussian width of the amplitude envelope (its 1/e half-width is `√2·width`).
    pub width: f64,
    /// Peak fringe amplitude.
    pub peak_amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionFit {
    pub regions: Vec<EnvelopeRegion>,
    pub relative_residual: f64,
}

impl RegionFit {
    pub fn separation(&self) -> Option<f64> {
        match self.regions.as_slice() {
            [a, b] => Some((b.center - a.center).abs()),
            _ => None,
        }
    }
}

/// Macro/micro map: one fine scan per stepper position.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroMicroMap {
    /// `axis1`: actual stage positions, `axis2`: fine offsets relative to them.
    pub grid: SweepGrid,
    pub stepper: StepperModel,
    /// Fit of each row; `None` where the fringe is not resolvable.
    pub row_fits: Vec<Option<FringeMetrics>>,
}

impl MacroMicroMap {
    pub fn macro_positions(&self) -> &[f64] {
        &self.grid.axis1.values
    }

    /// Largest relative deviation of a fitted fine period from `lambda_i`.
    pub fn max_fine_period_error(&self, lambda_i: f64) -> Option<f64> {
        self.row_fits
            .iter()
            .flatten()
            .map(|m| (m.fitted_period / lambda_i - 1.0).abs())
            .reduce(f64::max)
    }

    /// Apparent fringe frequency along the macro axis, cycles per step, one per
    /// adjacent pair of resolvable rows.
    pub fn apparent_macro_frequencies(&self) -> Vec<f64> {
        self.row_fits
            .windows(2)
            .filter_map(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => {
                    let d = (b.fitted_phase - a.fitted_phase + PI).rem_euclid(2.0 * PI) - PI;
                    Some(d.abs() / (2.0 * PI))
                }
                _ => None,
            })
            .collect()
    }

    /// Ratio of the largest to the smallest apparent macro-axis fringe spacing.
    pub fn apparent_spacing_variation(&self) -> f64 {
        let f = self.apparent_macro_frequencies();
        let hi = f.iter().copied().fold(0.0, f64::max);
        let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
        if f.is_empty() {
            1.0
        } else {
            hi / lo
        }
    }

    /// Locates the oscillation regions from the row amplitudes.
    pub fn envelope_regions(&self) -> RegionFit {
        let pts: Vec<(f64, f64)> = self
            .macro_positions()
            .iter()
            .zip(&self.row_fits)
            .map(|(&x, m)| (x, m.map_or(0.0, |m| m.amplitude)))
            .collect();
        fit_envelope_regions(&pts)
    }
}

/// One fine scan per macro step, fitted row by row.
pub fn macro_micro_map(
    params: &SetupParams,
    stepper: &StepperModel,
    macro_steps: usize,
    micro_span: f64,
    micro_steps: usize,
) -> Result<MacroMicroMap, ExperimentError> {
    params.validate()?;
    stepper.validate()?;
    let min_span = 2.0 * params.lambda_i;
    if !(micro_span >= min_span) {
        return Err(ExperimentError::MicroSpanTooSmall {
            span: micro_span,
            min: min_span,
        });
    }
    if micro_steps < analysis::MIN_SCAN_STEPS {
        return Err(AnalysisError::TooFewSteps(micro_steps).into());
    }
    let positions: Vec<f64> = (0..=macro_steps).map(|k| stepper.position(k)).collect();
    let (start, end) = (positions[0], positions[positions.len() - 1]);
    let (ni, ic) = (params.ni_envelope_center(), params.ic_envelope_center());
    if ni.min(ic) < start || ni.max(ic) > end {
        return Err(ExperimentError::MacroRangeTooShort { start, end, ni, ic });
    }

    let half = 0.5 * micro_span;
    let offsets: Vec<f64> = (0..=micro_steps)
        .map(|k| -half + micro_span * k as f64 / micro_steps as f64)
        .collect();
    let rows: Vec<(Vec<f64>, Option<FringeMetrics>)> = positions
        .par_iter()
        .map(|&x| {
            let counts: Vec<f64> = offsets
                .iter()
                .map(|&off| closed_form::expected_counts_at(params, Delay::frozen(x, x + off), IdlerPhaseSign::Plus))
                .collect();
            let samples = offsets
                .iter()
                .zip(&counts)
                .map(|(&off, &c)| ScanSample { dx: x + off, counts: c })
                .collect();
            let scan = ScanResult::from_samples(samples, params.with_dx(x), ScanKind::Fine)?;
            let fit = analysis::fit_fringe(&scan, params.lambda_i)?;
            let resolvable = !fit.degenerate && fit.amplitude > RESOLVABLE_CONTRAST * fit.mean;
            Ok((counts, resolvable.then_some(fit)))
        })
        .collect::<Result<_, AnalysisError>>()?;

    let (values, row_fits): (Vec<Vec<f64>>, Vec<_>) = rows.into_iter().unzip();
    Ok(MacroMicroMap {
        grid: SweepGrid::new(
            Axis::new("macro_position_m", positions),
            Axis::new("fine_dx_m", offsets),
            values.concat(),
            Metric::Counts,
        ),
        stepper: *stepper,
        row_fits,
    })
}

fn gaussian_sq(x: f64, mu: f64, sigma: f64) -> f64 {
    (-(x - mu) * (x - mu) / (sigma * sigma)).exp()
}

/// Linear least squares of `y` on the given basis columns; returns (coefficients, ssr).
fn linear_lsq(basis: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let n = basis.len();
    let m = nalgebra::DMatrix::from_fn(y.len(), n, |r, c| basis[c][r]);
    let rhs = nalgebra::DVector::from_column_slice(y);
    let sol = m.clone().svd(true, true).solve(&rhs, 1e-14).ok()?;
    let ssr = (m * &sol - rhs).norm_squared();
    Some((sol.iter().copied().collect(), ssr))
}

/// Envelope model for squared amplitudes: `p g₁² + q g₂² + 2 r g₁ g₂`, or `p g₁²`.
fn region_ssr(pts: &[(f64, f64)], centers: &[f64], sigma: f64) -> Option<(Vec<f64>, f64)> {
    let y: Vec<f64> = pts.iter().map(|p| p.1 * p.1).collect();
    let g: Vec<Vec<f64>> = centers
        .iter()
        .map(|&mu| pts.iter().map(|p| gaussian_sq(p.0, mu, sigma)).collect())
        .collect();
    let mut basis = g.clone();
    if centers.len() == 2 {
        basis.push(g[0].iter().zip(&g[1]).map(|(a, b)| (a * b).sqrt()).collect());
    }
    linear_lsq(&basis, &y)
}

/// Compass search over (centres, width), starting from a coarse grid.
fn refine_regions(pts: &[(f64, f64)], mut centers: Vec<f64>, mut sigma: f64, scale: f64) -> (Vec<f64>, f64, f64) {
    let cost = |c: &[f64], s: f64| {
        if s <= 0.0 {
            return f64::INFINITY;
        }
        region_ssr(pts, c, s).map_or(f64::INFINITY, |r| r.1)
    };
    let mut best = cost(&centers, sigma);
    let mut step = scale;
    while step > 1e-9 * scale {
        let mut improved = false;
        for dim in 0..=centers.len() {
            for dir in [-1.0, 1.0] {
                let mut c = centers.clone();
                let mut s = sigma;
                if dim < c.len() {
                    c[dim] += dir * step;
                } else {
                    s += dir * step;
                }
                let v = cost(&c, s);
                if v < best {
                    best = v;
                    centers = c;
                    sigma = s;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (centers, sigma, best)
}

/// Smallest model (one or two Gaussian regions) describing the amplitude profile.
pub fn fit_envelope_regions(pts: &[(f64, f64)]) -> RegionFit {
    let total: f64 = pts.iter().map(|p| p.1.powi(4)).sum();
    if pts.len() < 4 || total <= 0.0 {
        return RegionFit {
            regions: Vec::new(),
            relative_residual: 0.0,
        };
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let span = xs[xs.len() - 1] - xs[0];
    let dx = span / (xs.len() - 1) as f64;
    let sigmas: Vec<f64> = (1..=12).map(|k| span * 0.025 * k as f64).collect();

    let to_regions = |centers: &[f64], sigma: f64| {
        let coef = region_ssr(pts, centers, sigma).map(|r| r.0).unwrap_or_default();
        centers
            .iter()
            .zip(&coef)
            .map(|(&c, &p)| EnvelopeRegion {
                center: c,
                width: sigma,
                peak_amplitude: p.max(0.0).sqrt(),
            })
            .collect::<Vec<_>>()
    };

    // single region
    let mut seed1 = (vec![xs[0]], sigmas[0], f64::INFINITY);
    for &mu in &xs {
        for &s in &sigmas {
            if let Some((_, ssr)) = region_ssr(pts, &[mu], s) {
                if ssr < seed1.2 {
                    seed1 = (vec![mu], s, ssr);
                }
            }
        }
    }
    let (c1, s1, ssr1) = refine_regions(pts, seed1.0, seed1.1, dx);
    let res1 = (ssr1 / total).sqrt();
    if res1 <= REGION_FIT_TOL {
        return RegionFit {
            regions: to_regions(&c1, s1),
            relative_residual: res1,
        };
    }

    let mut seed2 = (vec![xs[0], xs[1]], sigmas[0], f64::INFINITY);
    for (i, &m1) in xs.iter().enumerate() {
        for &m2 in &xs[i + 1..] {
            for &s in &sigmas {
                if let Some((_, ssr)) = region_ssr(pts, &[m1, m2], s) {
                    if ssr < seed2.2 {
                        seed2 = (vec![m1, m2], s, ssr);
                    }
                }
            }
        }
    }
    let (c2, s2, ssr2) = refine_regions(pts, seed2.0, seed2.1, dx);
    let res2 = (ssr2 / total).sqrt();
    let regions2 = to_regions(&c2, s2);
    let peak = regions2.iter().map(|r| r.peak_amplitude).fold(0.0, f64::max);
    let both_present = regions2.iter().all(|r| r.peak_amplitude > 1e-3 * peak);
    if res2 < res1 && both_present {
        let mut regions = regions2;
        regions.sort_by(|a, b| a.center.total_cmp(&b.center));
        RegionFit {
            regions,
            relative_residual: res2,
        }
    } else {
        RegionFit {
            regions: to_regions(&c1, s1),
            relative_residual: res1,
        }
    }
}

/// Fine-scan fit at `delay` with the output HWP at each `theta2`.
pub fn visibility_vs_hwp(
    params: &SetupParams,
    delays: &[f64],
    theta2_values: &[f64],
) -> Result<(SweepGrid, SweepGrid), ExperimentError> {
    params.validate()?;
    nonempty(delays, "delays")?;
    nonempty(theta2_values, "theta2")?;
    let metrics = par_metrics(delays.len(), theta2_values.len(), |i, j| {
        analysis::visibility_at(&params.with_angles(params.theta1, theta2_values[j]), Envelope::Custom(delays[i]))
    })?;
    Ok(split_metrics(
        Axis::new("dx_m", delays.to_vec()),
        Axis::new("theta2_rad", theta2_values.to_vec()),
        &metrics,
    ))
}

fn nonempty(v: &[f64], name: &'static str) -> Result<(), ExperimentError> {
    if v.is_empty() {
        Err(ExperimentError::EmptyAxis(name))
    } else {
        Ok(())
    }
}

/// Evaluates `f` on every grid cell in parallel, assembled in row-major order.
fn par_metrics(
    n1: usize,
    n2: usize,
    f: impl Fn(usize, usize) -> Result<FringeMetrics, AnalysisError> + Sync,
) -> Result<Vec<FringeMetrics>, AnalysisError> {
    (0..n1 * n2).into_par_iter().map(|k| f(k / n2, k % n2)).collect()
}

fn split_metrics(axis1: Axis, axis2: Axis, metrics: &[FringeMetrics]) -> (SweepGrid, SweepGrid) {
    let vis = metrics.iter().map(|m| m.visibility).collect();
    let amp = metrics.iter().map(|m| m.amplitude).collect();
    (
        SweepGrid::new(axis1.clone(), axis2.clone(), vis, Metric::Visibility),
        SweepGrid::new(axis1, axis2, amp, Metric::Amplitude),
    )
}

/// Visibility and amplitude grids over (θ₁, θ₂) at one delay.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityPair {
    pub delay: f64,
    pub visibility: SweepGrid,
    pub amplitude: SweepGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceDensity {
    pub gain_ratio: f64,
    /// `ξ_A = ξ_B`
    pub balanced: Vec<DensityPair>,
    /// `ξ_A = gain_ratio · ξ_B`
    pub unbalanced: Vec<DensityPair>,
}

pub fn density_grids(
    params: &SetupParams,
    theta1_values: &[f64],
    theta2_values: &[f64],
    delay: f64,
) -> Result<DensityPair, ExperimentError> {
    params.validate()?;
    nonempty(theta1_values, "theta1")?;
    nonempty(theta2_values, "theta2")?;
    let metrics = par_metrics(theta1_values.len(), theta2_values.len(), |i, j| {
        analysis::visibility_at(&params.with_angles(theta1_values[i], theta2_values[j]), Envelope::Custom(delay))
    })?;
    let (visibility, amplitude) = split_metrics(
        Axis::new("theta1_rad", theta1_values.to_vec()),
        Axis::new("theta2_rad", theta2_values.to_vec()),
        &metrics,
    );
    Ok(DensityPair {
        delay,
        visibility,
        amplitude,
    })
}

/// Density grids at each delay for balanced gains and for `ξ_A = gain_ratio·ξ_B`.
pub fn balance_density(
    params: &SetupParams,
    theta1_values: &[f64],
    theta2_values: &[f64],
    delays: &[f64],
    gain_ratio: f64,
) -> Result<BalanceDensity, ExperimentError> {
    let balanced_params = params.with_gains(params.xi_b, params.xi_b);
    let unbalanced_params = params.with_gains(gain_ratio * params.xi_b, params.xi_b);
    unbalanced_params.validate()?;
    let run = |p: &SetupParams| {
        delays
            .iter()
            .map(|&d| density_grids(p, theta1_values, theta2_values, d))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(BalanceDensity {
        gain_ratio,
        balanced: run(&balanced_params)?,
        unbalanced: run(&unbalanced_params)?,
    })
}

/// One visibility-vs-θ₂ curve per extra V path `δ_V`, delay taken from `params.dx`.
pub fn mixed_phase_sweep(
    params: &SetupParams,
    delta_v_values: &[f64],
    theta2_values: &[f64],
) -> Result<SweepGrid, ExperimentError> {
    params.validate()?;
    nonempty(delta_v_values, "delta_v")?;
    nonempty(theta2_values, "theta2")?;
    let metrics = par_metrics(delta_v_values.len(), theta2_values.len(), |i, j| {
        let p = SetupParams {
            bbo_extra_path: delta_v_values[i],
            ..params.with_angles(params.theta1, theta2_values[j])
        };
        analysis::visibility_at(&p, Envelope::Custom(params.dx))
    })?;
    Ok(split_metrics(
        Axis::new("delta_v_m", delta_v_values.to_vec()),
        Axis::new("theta2_rad", theta2_values.to_vec()),
        &metrics,
    )
    .0)
}

/// Interior strict local extrema of a sampled curve, refined by a parabola
/// through the three neighbouring samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveExtrema {
    pub minima: Vec<f64>,
    pub maxima: Vec<f64>,
}

pub fn curve_extrema(xs: &[f64], ys: &[f64]) -> CurveExtrema {
    let scale = ys.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let eps = 1e-9 * scale.max(1e-300);
    let mut out = CurveExtrema::default();
    for i in 1..ys.len().saturating_sub(1) {
        let (a, b, c) = (ys[i - 1], ys[i], ys[i + 1]);
        let is_min = b < a - eps && b < c - eps;
        let is_max = b > a + eps && b > c + eps;
        if !(is_min || is_max) {
            continue;
        }
        let h = 0.5 * (xs[i + 1] - xs[i - 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        let x = xs[i] + shift.clamp(-1.0, 1.0) * h;
        if is_min {
            out.minima.push(x);
        } else {
            out.maxima.push(x);
        }
    }
    out
}

/// Largest relative closed-form vs oracle mismatch over `delays`.
pub fn oracle_check(params: &SetupParams, delays: &[f64], quadrature: &QuadratureSpec) -> Result<f64, ExperimentError> {
    quadrature.validate()?;
    let mut worst = 0.0f64;
    for &d in delays {
        let p = params.with_dx(d);
        let closed = closed_form::expected_counts(&p);
        let numeric = oracle::integrate_over_frequency(&p, quadrature)?;
        let scale = closed.abs().max(numeric.abs()).max(1e-300);
        worst = worst.max((closed - numeric).abs() / scale);
    }
    Ok(worst)
}

pub mod scenarios;
pub use scenarios::{run_scenario, Scenario, ScenarioReport, ScenarioSettings, UniformAxis};
