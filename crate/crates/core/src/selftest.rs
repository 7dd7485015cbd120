//! Release-gate checks, shared by `--selftest` and the acceptance test target.

use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{self, Envelope};
use crate::cli;
use crate::closed_form::{self, Delay, IdlerPhaseSign};
use crate::experiments::{self, Scenario, UniformAxis};
use crate::oracle::{self, QuadratureRule, QuadratureSpec};
use crate::params::{SetupParams, StepperModel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelftestOptions {
    /// Sign used by the closed form in the oracle comparison.
    pub idler_sign: IdlerPhaseSign,
    /// Quadrature used by the oracle comparison (not validated, so starved rules can be tried).
    pub quadrature: QuadratureSpec,
    pub seed: u64,
    pub oracle_cases: usize,
}

impl Default for SelftestOptions {
    fn default() -> Self {
        Self {
            idler_sign: IdlerPhaseSign::Plus,
            quadrature: QuadratureSpec::default(),
            seed: 0x5EED_1DE5,
            oracle_cases: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}. {}: {}", self.id, self.name, self.detail)
    }
}

fn outcome(id: u8, name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        id,
        name,
        passed,
        detail,
    }
}

pub const ORACLE_TOL: f64 = 1e-6;
pub const ORACLE_TIME_BUDGET: Duration = Duration::from_secs(10);

/// Random parameter set for the oracle comparison; `k % 3` picks the delay region.
pub fn random_case(rng: &mut ChaCha8Rng, k: usize) -> SetupParams {
    let base = SetupParams::default();
    let l_coh = base.derived().l_coh;
    let mut p = SetupParams {
        xi_a: rng.random_range(0.01..=0.1),
        xi_b: rng.random_range(0.01..=0.1),
        theta1: rng.random_range(0.0..=PI / 2.0),
        theta2: rng.random_range(0.0..=PI / 2.0),
        transmission: rng.random_range(0.0..=1.0),
        bbo_extra_path: rng.random_range(0.0..base.lambda_s),
        ..base
    };
    p.dx = match k % 3 {
        0 => p.ni_envelope_center() + rng.random_range(-3.0..=3.0) * l_coh,
        1 => p.ic_envelope_center() + rng.random_range(-3.0..=3.0) * l_coh,
        _ => {
            let far = rng.random_range(6.0..=10.0) * l_coh;
            if rng.random_bool(0.5) {
                p.ni_envelope_center().min(p.ic_envelope_center()) - far
            } else {
                p.ni_envelope_center().max(p.ic_envelope_center()) + far
            }
        }
    };
    p
}

pub fn oracle_equivalence(opts: &SelftestOptions) -> CheckOutcome {
    let name = "closed form matches frequency-integrated oracle";
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut worst = 0.0f64;
    let mut worst_case = 0;
    for k in 0..opts.oracle_cases {
        let p = random_case(&mut rng, k);
        let closed = closed_form::expected_counts_at(&p, Delay::exact(p.dx), opts.idler_sign);
        let numeric = match oracle::integrate_over_frequency(&p, &opts.quadrature) {
            Ok(v) => v,
            Err(e) => return outcome(1, name, false, format!("case {k}: {e}")),
        };
        let rel = (closed - numeric).abs() / closed.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
        if rel > worst {
            worst = rel;
            worst_case = k;
        }
    }
    let elapsed = start.elapsed();
    let passed = worst <= ORACLE_TOL && elapsed < ORACLE_TIME_BUDGET;
    outcome(
        1,
        name,
        passed,
        format!(
            "{} cases, worst relative difference {worst:.3e} (case {worst_case}, tol {ORACLE_TOL:e}), {:.2} s",
            opts.oracle_cases,
            elapsed.as_secs_f64()
        ),
    )
}

/// `∫ Normal(x; 0, Δ) cos(y + a x) dx` by composite Simpson over ±12Δ.
fn gaussian_cos_simpson(y: f64, a: f64, delta: f64) -> f64 {
    let panels = 4096;
    let span = 12.0 * delta;
    let h = 2.0 * span / panels as f64;
    let norm = 1.0 / (delta * (2.0 * PI).sqrt());
    let f = |x: f64| norm * (-x * x / (2.0 * delta * delta)).exp() * (y + a * x).cos();
    let mut sum = f(-span) + f(span);
    for k in 1..panels {
        let x = -span + h * k as f64;
        sum += if k % 2 == 1 { 4.0 } else { 2.0 } * f(x);
    }
    sum * h / 3.0
}

pub fn gaussian_identity(opts: &SelftestOptions) -> CheckOutcome {
    let name = "Gaussian-weighted cosine integral identity";
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x511);
    let rule = QuadratureRule::gauss_hermite(128);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let y: f64 = rng.random_range(-PI..=PI);
        let delta: f64 = rng.random_range(0.2..=3.0);
        let a: f64 = rng.random_range(-4.0..=4.0) / delta;
        let exact = (-a * a * delta * delta / 2.0).exp() * y.cos();
        let simpson = gaussian_cos_simpson(y, a, delta);
        let gh = rule.expectation(|z| (y + a * delta * z).cos());
        worst = worst.max((simpson - exact).abs()).max((gh - exact).abs());
    }
    outcome(
        2,
        name,
        worst <= 1e-9,
        format!("20 triples, worst absolute error {worst:.3e} (Simpson and Gauss-Hermite, tol 1e-9)"),
    )
}

pub fn ni_theta2_invariance() -> CheckOutcome {
    let name = "NI-mode visibility independent of output HWP";
    let p = SetupParams::default().with_angles(0.0, 0.0);
    let mut vis = Vec::new();
    for deg in [0.0f64, 15.0, 30.0, 45.0, 60.0, 75.0] {
        match analysis::visibility_at(&p.with_angles(0.0, deg.to_radians()), Envelope::Ni) {
            Ok(m) => vis.push(m.visibility),
            Err(e) => return outcome(3, name, false, e.to_string()),
        }
    }
    let spread = vis.iter().copied().fold(f64::NEG_INFINITY, f64::max) - vis.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        3,
        name,
        spread <= 1e-9,
        format!("visibility {:.12} over theta2 = 0..75 deg, spread {spread:.3e} (tol 1e-9)", vis[0]),
    )
}

pub fn ic_balancing() -> CheckOutcome {
    let name = "IC-mode balancing regains full visibility";
    let xi_b = 0.05;
    let base = SetupParams {
        transmission: 1.0,
        ..SetupParams::default()
    };
    let base = base.with_dx(base.ic_envelope_center());
    let step = 0.1f64.to_radians();
    let t2 = UniformAxis::degrees(0.0, 90.0, 901).values();
    let run = |xi_a: f64| experiments::visibility_vs_hwp(&base.with_gains(xi_a, xi_b).with_angles(PI / 2.0, 0.0), &[base.dx], &t2);
    let ((vis_u, amp_u), (_, amp_b)) = match (run(0.1 * xi_b), run(xi_b)) {
        (Ok(u), Ok(b)) => (u, b),
        (Err(e), _) | (_, Err(e)) => return outcome(4, name, false, e.to_string()),
    };
    let (_, j, vmax) = vis_u.argmax();
    let target = 10f64.atan();
    let at_target = (t2[j] - target).abs() <= step;
    let amp_here = amp_u.get(0, j);
    let (_, _, amp_balanced) = amp_b.argmax();
    // analytic curve, independent of the fit
    let analytic = |t: f64| {
        let (s, c) = t.sin_cos();
        let (xa, xb) = (0.1 * xi_b, xi_b);
        2.0 * xa * xb * s * c / (xb * xb * c * c + xa * xa * s * s)
    };
    let analytic_err = t2[1..900]
        .iter()
        .enumerate()
        .map(|(k, &t)| (vis_u.get(0, k + 1) - analytic(t)).abs())
        .fold(0.0, f64::max);
    let passed = vmax >= 0.999 && at_target && amp_here < amp_balanced && analytic_err < 1e-6;
    outcome(
        4,
        name,
        passed,
        format!(
            "max visibility {vmax:.9} at theta2 = {:.2} deg (atan 10 = {:.2} deg, grid 0.1 deg); amplitude {amp_here:.4e} < balanced max {amp_balanced:.4e}; fit vs analytic {analytic_err:.1e}",
            t2[j].to_degrees(),
            target.to_degrees()
        ),
    )
}

pub fn root_t_scaling() -> CheckOutcome {
    let name = "visibility scales as sqrt(T)";
    let mut worst = 0.0f64;
    let mut at_quarter = f64::NAN;
    for t in [0.0, 0.0625, 0.25, 1.0] {
        let p = SetupParams {
            transmission: t,
            ..SetupParams::default()
        }
        .with_gains(0.05, 0.05);
        for (env, angles) in [(Envelope::Ni, (0.0, 0.0)), (Envelope::Ic, (PI / 2.0, PI / 4.0))] {
            match analysis::visibility_at(&p.with_angles(angles.0, angles.1), env) {
                Ok(m) => {
                    worst = worst.max((m.visibility - t.sqrt()).abs());
                    if t == 0.25 && env == Envelope::Ni {
                        at_quarter = m.visibility;
                    }
                }
                Err(e) => return outcome(5, name, false, e.to_string()),
            }
        }
    }
    outcome(
        5,
        name,
        worst <= 1e-6,
        format!("T in {{0, 0.0625, 0.25, 1}} at both envelopes, worst |V - sqrt T| {worst:.3e} (tol 1e-6); V(T=0.25) = {at_quarter:.9}"),
    )
}

/// Idler wavelength quoted for the default wavelengths.
pub const QUOTED_LAMBDA_I: f64 = 3.3918e-6;

pub fn two_envelope_geometry() -> CheckOutcome {
    let name = "two interference regions 0.35 mm apart";
    let p = SetupParams::default();
    let map = match experiments::macro_micro_map(&p, &StepperModel::linear(10e-6), 100, 4.0 * p.lambda_i, 64) {
        Ok(m) => m,
        Err(e) => return outcome(6, name, false, e.to_string()),
    };
    let fit = map.envelope_regions();
    let sep = fit.separation();
    let period_err = map
        .row_fits
        .iter()
        .flatten()
        .map(|m| (m.fitted_period / QUOTED_LAMBDA_I - 1.0).abs())
        .fold(0.0, f64::max);
    let passed = fit.regions.len() == 2 && sep.is_some_and(|s| (s - 0.35e-3).abs() <= 0.01e-3) && period_err <= 1e-3;
    let centers: Vec<String> = fit.regions.iter().map(|r| format!("{:.4} mm", r.center * 1e3)).collect();
    outcome(
        6,
        name,
        passed,
        format!(
            "{} regions at [{}], separation {} mm (0.35 +- 0.01); fine period within {period_err:.2e} of 3.3918 um (tol 1e-3)",
            fit.regions.len(),
            centers.join(", "),
            sep.map_or("n/a".into(), |s| format!("{:.5}", s * 1e3))
        ),
    )
}

pub fn mixed_phase_tunability() -> CheckOutcome {
    let name = "mixed-mode extrema tunable with the V-path phase";
    let base = SetupParams::default();
    let p = base.with_gains(0.5 * base.xi_b, base.xi_b).with_dx(base.mixed_delay());
    let t2 = UniformAxis::degrees(0.0, 90.0, 91).values();
    let start = p.destructive_bbo_path();
    let dv: Vec<f64> = (0..9).map(|k| start + 362.5e-9 * k as f64 / 8.0).collect();
    let grid = match experiments::mixed_phase_sweep(&p, &dv, &t2) {
        Ok(g) => g,
        Err(e) => return outcome(7, name, false, e.to_string()),
    };
    let mut mins = Vec::new();
    let mut maxs = Vec::new();
    let mut single = true;
    for i in 0..dv.len() {
        let e = experiments::curve_extrema(&t2, grid.row(i));
        single &= e.minima.len() == 1 && e.maxima.len() == 1;
        mins.extend(e.minima.first());
        maxs.extend(e.maxima.first());
    }
    let monotone = |v: &[f64]| {
        v.len() == dv.len()
            && (v.windows(2).all(|w| w[1] > w[0]) || v.windows(2).all(|w| w[1] < w[0]))
            && (v[v.len() - 1] - v[0]).abs() > 1f64.to_radians()
    };
    let cycle = experiments::mixed_phase_sweep(&p, &[0.0, p.lambda_s], &t2);
    let cycle_diff = match cycle {
        Ok(g) => g.row(0).iter().zip(g.row(1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        Err(e) => return outcome(7, name, false, e.to_string()),
    };
    let passed = single && monotone(&mins) && monotone(&maxs) && cycle_diff <= 1e-9;
    let deg = |v: &[f64]| match (v.first(), v.last()) {
        (Some(a), Some(b)) => format!("{:.1} -> {:.1} deg", a.to_degrees(), b.to_degrees()),
        _ => "missing".into(),
    };
    outcome(
        7,
        name,
        passed,
        format!(
            "9 panels over 362.5 nm: minimum {}, maximum {}, one of each per curve: {single}; |curve(lambda_s) - curve(0)| = {cycle_diff:.1e} (tol 1e-9)",
            deg(&mins),
            deg(&maxs)
        ),
    )
}

pub fn aliasing() -> CheckOutcome {
    let name = "stepper non-linearity aliases the macro axis";
    let p = SetupParams::default();
    let stepper = StepperModel::linear(10e-6).with_sinusoid(3e-6, 40.0);
    let map = match experiments::macro_micro_map(&p, &stepper, 100, 4.0 * p.lambda_i, 64) {
        Ok(m) => m,
        Err(e) => return outcome(8, name, false, e.to_string()),
    };
    let variation = map.apparent_spacing_variation();
    let period_err = map.max_fine_period_error(p.lambda_i).unwrap_or(f64::INFINITY);
    outcome(
        8,
        name,
        variation >= 2.0 && period_err <= 1e-3,
        format!("apparent macro spacing varies {variation:.2}x (need >= 2); fine period within {period_err:.1e} of lambda_i (tol 1e-3)"),
    )
}

pub fn determinism() -> CheckOutcome {
    let name = "scenario re-runs from the manifest are byte-identical";
    let mut notes = Vec::new();
    let mut passed = true;
    for sc in Scenario::ALL {
        let cfg = cli::default_run(sc);
        let first = match cli::execute(&cfg) {
            Ok(r) => cli::render_outputs(&cfg, &r),
            Err(e) => return outcome(9, name, false, format!("{sc}: {e}")),
        };
        let manifest = &first[0].1;
        let cfg2 = match cli::parse_config(manifest, None) {
            Ok(c) => c,
            Err(e) => return outcome(9, name, false, format!("{sc}: manifest does not parse: {e}")),
        };
        let second = match cli::execute(&cfg2) {
            Ok(r) => cli::render_outputs(&cfg2, &r),
            Err(e) => return outcome(9, name, false, format!("{sc}: {e}")),
        };
        let same = first == second;
        passed &= same;
        notes.push(format!("{sc} {} files {}", first.len(), if same { "identical" } else { "DIFFER" }));
    }
    outcome(9, name, passed, notes.join("; "))
}

pub fn run_all(opts: &SelftestOptions) -> Vec<CheckOutcome> {
    vec![
        oracle_equivalence(opts),
        gaussian_identity(opts),
        ni_theta2_invariance(),
        ic_balancing(),
        root_t_scaling(),
        two_envelope_geometry(),
        mixed_phase_tunability(),
        aliasing(),
        determinism(),
    ]
}
