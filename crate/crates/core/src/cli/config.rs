//! Run configuration: TOML with unit-annotated quantities, normalized to SI here.

use serde::Deserialize;
use thiserror::Error;

use crate::experiments::{Scenario, ScenarioSettings, UniformAxis};
use crate::oracle::{QuadratureScheme, QuadratureSpec};
use crate::params::{idler_wavelength, SetupParams, StepDeviation, StepperModel, ValidationError, SPEED_OF_LIGHT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("`{key}`: {message}")]
    Value { key: String, message: String },
    #[error("no scenario given (set `scenario` in the config or pass --scenario)")]
    MissingScenario,
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("quadrature: {0}")]
    Quadrature(String),
}

impl ConfigError {
    fn value(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Value {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Whether the failure is a rejected value rather than unreadable input.
    pub fn is_validation(&self) -> bool {
        matches!(self, ConfigError::Validation(_) | ConfigError::Quadrature(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Text,
}

impl OutputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Text => "text",
        }
    }
}

/// A physical value as written in the file: a quantity string like
/// `"1550 nm"`, or a bare number for dimensionless entries.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    Length,
    Angle,
    AngularFrequency,
}

fn unit_factor(dim: Dimension, unit: &str) -> Option<f64> {
    let f = match (dim, unit) {
        (Dimension::Length, "m") => 1.0,
        (Dimension::Length, "cm") => 1e-2,
        (Dimension::Length, "mm") => 1e-3,
        (Dimension::Length, "um" | "µm" | "μm") => 1e-6,
        (Dimension::Length, "nm") => 1e-9,
        (Dimension::Angle, "rad") => 1.0,
        (Dimension::Angle, "mrad") => 1e-3,
        (Dimension::Angle, "deg" | "°") => std::f64::consts::PI / 180.0,
        (Dimension::AngularFrequency, "rad/s") => 1.0,
        _ => return None,
    };
    Some(f)
}

fn quantity(key: &str, raw: &RawValue, dim: Dimension) -> Result<f64, ConfigError> {
    let text = match raw {
        RawValue::Number(_) => {
            return Err(ConfigError::value(key, "needs a unit, e.g. \"5 mm\" or \"30 deg\""));
        }
        RawValue::Text(t) => t.trim(),
    };
    let split = text
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
        .unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| ConfigError::value(key, format!("cannot read a number from \"{text}\"")))?;
    let factor = unit_factor(dim, unit.trim())
        .ok_or_else(|| ConfigError::value(key, format!("unsupported unit \"{}\"", unit.trim())))?;
    let v = if factor == 1.0 { value } else { value * factor };
    if !v.is_finite() {
        return Err(ConfigError::value(key, "must be finite"));
    }
    Ok(v)
}

fn length(key: &str, raw: &RawValue) -> Result<f64, ConfigError> {
    quantity(key, raw, Dimension::Length)
}

fn angle(key: &str, raw: &RawValue) -> Result<f64, ConfigError> {
    quantity(key, raw, Dimension::Angle)
}

fn number(key: &str, raw: &RawValue) -> Result<f64, ConfigError> {
    match raw {
        RawValue::Number(v) => Ok(*v),
        RawValue::Text(t) => t
            .trim()
            .parse()
            .map_err(|_| ConfigError::value(key, format!("expected a plain number, got \"{t}\""))),
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    scenario: Option<String>,
    output_dir: Option<String>,
    format: Option<String>,
    #[serde(default)]
    params: ParamsSection,
    #[serde(default)]
    stepper: StepperSection,
    #[serde(default)]
    scan: ScanSection,
    #[serde(default)]
    sweep: SweepSection,
    #[serde(default)]
    quadrature: QuadratureSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSection {
    xi_a: Option<RawValue>,
    xi_b: Option<RawValue>,
    theta1: Option<RawValue>,
    theta2: Option<RawValue>,
    transmission: Option<RawValue>,
    dx: Option<RawValue>,
    crystal_length: Option<RawValue>,
    lambda_p: Option<RawValue>,
    lambda_s: Option<RawValue>,
    lambda_i: Option<RawValue>,
    n_hs: Option<RawValue>,
    n_vs: Option<RawValue>,
    n_i: Option<RawValue>,
    delta_omega_s: Option<RawValue>,
    coherence_length: Option<RawValue>,
    bbo_extra_path: Option<RawValue>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepperSection {
    nominal_step: Option<RawValue>,
    deviation: Option<String>,
    deviation_amplitude: Option<RawValue>,
    deviation_period_steps: Option<f64>,
    deviation_bound: Option<RawValue>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScanSection {
    macro_steps: Option<usize>,
    micro_span: Option<RawValue>,
    micro_steps: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AxisSection {
    start: RawValue,
    stop: RawValue,
    count: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepSection {
    theta1: Option<AxisSection>,
    theta2: Option<AxisSection>,
    delays: Option<Vec<RawValue>>,
    gain_ratio: Option<RawValue>,
    delta_v: Option<Vec<RawValue>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadratureSection {
    scheme: Option<String>,
    nodes: Option<usize>,
    span_sigmas: Option<f64>,
}

/// Fully resolved run: SI parameters plus scenario settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub params: SetupParams,
    pub settings: ScenarioSettings,
    pub output_dir: Option<String>,
    pub format: OutputFormat,
    /// Whether `lambda_i` came from energy conservation.
    pub lambda_i_auto: bool,
}

pub fn parse_scenario(name: &str) -> Result<Scenario, ConfigError> {
    name.parse().map_err(|_| ConfigError::UnknownScenario(name.to_string()))
}

/// Builds a run configuration for `scenario` with every default.
pub fn default_run(scenario: Scenario) -> RunConfig {
    let params = SetupParams::default();
    RunConfig {
        scenario,
        settings: ScenarioSettings::defaults(scenario, &params),
        params,
        output_dir: None,
        format: OutputFormat::Csv,
        lambda_i_auto: true,
    }
}

/// Parses config text. `scenario_override` replaces the file's `scenario`.
pub fn parse_config(text: &str, scenario_override: Option<Scenario>) -> Result<RunConfig, ConfigError> {
    let file: FileConfig = toml::from_str(text)?;
    let scenario = match (scenario_override, &file.scenario) {
        (Some(s), _) => s,
        (None, Some(name)) => parse_scenario(name)?,
        (None, None) => return Err(ConfigError::MissingScenario),
    };
    let format = match file.format.as_deref() {
        None | Some("csv") => OutputFormat::Csv,
        Some("text") => OutputFormat::Text,
        Some(other) => return Err(ConfigError::value("format", format!("expected csv or text, got \"{other}\""))),
    };

    let (params, lambda_i_auto) = resolve_params(&file.params)?;
    params.validate()?;
    let mut settings = ScenarioSettings::defaults(scenario, &params);
    apply_stepper(&file.stepper, &mut settings.stepper)?;
    settings.stepper.validate()?;
    apply_scan(&file.scan, &mut settings)?;
    apply_sweep(&file.sweep, &mut settings)?;
    apply_quadrature(&file.quadrature, &mut settings.quadrature)?;
    settings
        .quadrature
        .validate()
        .map_err(|e| ConfigError::Quadrature(e.to_string()))?;

    Ok(RunConfig {
        scenario,
        params,
        settings,
        output_dir: file.output_dir,
        format,
        lambda_i_auto,
    })
}

fn resolve_params(s: &ParamsSection) -> Result<(SetupParams, bool), ConfigError> {
    let mut p = SetupParams::default();
    macro_rules! set {
        ($field:ident, $conv:ident) => {
            if let Some(raw) = &s.$field {
                p.$field = $conv(concat!("params.", stringify!($field)), raw)?;
            }
        };
    }
    set!(xi_a, number);
    set!(xi_b, number);
    set!(theta1, angle);
    set!(theta2, angle);
    set!(transmission, number);
    set!(dx, length);
    set!(crystal_length, length);
    set!(lambda_p, length);
    set!(lambda_s, length);
    set!(n_hs, number);
    set!(n_vs, number);
    set!(n_i, number);
    set!(bbo_extra_path, length);

    let auto = match &s.lambda_i {
        None => true,
        Some(RawValue::Text(t)) if t.trim().eq_ignore_ascii_case("auto") => true,
        Some(raw) => {
            p.lambda_i = length("params.lambda_i", raw)?;
            false
        }
    };
    if auto {
        p.lambda_i = idler_wavelength(p.lambda_p, p.lambda_s);
    }

    match (&s.delta_omega_s, &s.coherence_length) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::value(
                "params.coherence_length",
                "give either delta_omega_s or coherence_length, not both",
            ))
        }
        (Some(raw), None) => p.delta_omega_s = quantity("params.delta_omega_s", raw, Dimension::AngularFrequency)?,
        (None, Some(raw)) => {
            let l = length("params.coherence_length", raw)?;
            if !(l > 0.0) {
                return Err(ConfigError::value("params.coherence_length", "must be > 0"));
            }
            p.delta_omega_s = SPEED_OF_LIGHT / l;
        }
        (None, None) => {}
    }
    Ok((p, auto))
}

fn apply_stepper(s: &StepperSection, m: &mut StepperModel) -> Result<(), ConfigError> {
    if let Some(raw) = &s.nominal_step {
        m.nominal_step = length("stepper.nominal_step", raw)?;
    }
    if let Some(raw) = &s.deviation_bound {
        m.deviation_bound = length("stepper.deviation_bound", raw)?;
    }
    let kind = s.deviation.as_deref();
    match kind {
        Some("none") => {
            if s.deviation_amplitude.is_some() || s.deviation_period_steps.is_some() {
                return Err(ConfigError::value("stepper.deviation", "\"none\" takes no amplitude or period"));
            }
            m.deviation = StepDeviation::None;
        }
        Some("sinusoid") | None => {
            if kind.is_none() && s.deviation_amplitude.is_none() && s.deviation_period_steps.is_none() {
                return Ok(());
            }
            let (mut amplitude, mut period_steps) = match m.deviation {
                StepDeviation::Sinusoid {
                    amplitude,
                    period_steps,
                } => (amplitude, period_steps),
                StepDeviation::None => (0.0, 40.0),
            };
            if let Some(raw) = &s.deviation_amplitude {
                amplitude = length("stepper.deviation_amplitude", raw)?;
            }
            if let Some(n) = s.deviation_period_steps {
                period_steps = n;
            }
            m.deviation = StepDeviation::Sinusoid {
                amplitude,
                period_steps,
            };
        }
        Some(other) => {
            return Err(ConfigError::value(
                "stepper.deviation",
                format!("expected none or sinusoid, got \"{other}\""),
            ))
        }
    }
    Ok(())
}

fn apply_scan(s: &ScanSection, st: &mut ScenarioSettings) -> Result<(), ConfigError> {
    if let Some(n) = s.macro_steps {
        st.macro_steps = n;
    }
    if let Some(raw) = &s.micro_span {
        st.micro_span = length("scan.micro_span", raw)?;
    }
    if let Some(n) = s.micro_steps {
        st.micro_steps = n;
    }
    Ok(())
}

fn axis(key: &str, a: &AxisSection) -> Result<UniformAxis, ConfigError> {
    if a.count == 0 {
        return Err(ConfigError::value(key, "count must be >= 1"));
    }
    Ok(UniformAxis::new(
        angle(&format!("{key}.start"), &a.start)?,
        angle(&format!("{key}.stop"), &a.stop)?,
        a.count,
    ))
}

fn apply_sweep(s: &SweepSection, st: &mut ScenarioSettings) -> Result<(), ConfigError> {
    if let Some(a) = &s.theta1 {
        st.theta1 = axis("sweep.theta1", a)?;
    }
    if let Some(a) = &s.theta2 {
        st.theta2 = axis("sweep.theta2", a)?;
    }
    if let Some(list) = &s.delays {
        st.delays = list
            .iter()
            .map(|raw| length("sweep.delays", raw))
            .collect::<Result<_, _>>()?;
    }
    if let Some(raw) = &s.gain_ratio {
        let r = number("sweep.gain_ratio", raw)?;
        if !(r.is_finite() && r >= 0.0) {
            return Err(ConfigError::value("sweep.gain_ratio", "must be >= 0"));
        }
        st.gain_ratio = r;
    }
    if let Some(list) = &s.delta_v {
        st.delta_v = list
            .iter()
            .map(|raw| length("sweep.delta_v", raw))
            .collect::<Result<_, _>>()?;
    }
    Ok(())
}

fn apply_quadrature(s: &QuadratureSection, q: &mut QuadratureSpec) -> Result<(), ConfigError> {
    match s.scheme.as_deref() {
        None => {}
        Some("gauss-hermite") => q.scheme = QuadratureScheme::GaussHermite,
        Some("simpson") => q.scheme = QuadratureScheme::UniformSimpson,
        Some(other) => {
            return Err(ConfigError::value(
                "quadrature.scheme",
                format!("expected gauss-hermite or simpson, got \"{other}\""),
            ))
        }
    }
    if let Some(n) = s.nodes {
        q.node_count = n;
    }
    if let Some(v) = s.span_sigmas {
        q.span_sigmas = v;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units_normalize_to_si() {
        let t = |s: &str| RawValue::Text(s.into());
        assert_eq!(length("k", &t("1550 nm")).unwrap(), 1550.0 * 1e-9);
        assert_eq!(length("k", &t("5mm")).unwrap(), 5.0 * 1e-3);
        assert_eq!(length("k", &t("3.6 µm")).unwrap(), 3.6 * 1e-6);
        assert_eq!(length("k", &t("3.6 um")).unwrap(), 3.6 * 1e-6);
        assert_eq!(length("k", &t("-2.5e-4 m")).unwrap(), -2.5e-4);
        assert_eq!(angle("k", &t("30 deg")).unwrap(), 30.0 * std::f64::consts::PI / 180.0);
        assert!(length("k", &t("5 furlong")).is_err());
        assert!(length("k", &t("5 deg")).is_err());
        assert!(length("k", &RawValue::Number(5e-3)).is_err());
    }

    #[test]
    fn auto_idler_and_theta_in_degrees() {
        let c = parse_config(
            "scenario = \"fig3\"\n[params]\nlambda_i = \"auto\"\ntheta1 = \"30 deg\"\n",
            None,
        )
        .unwrap();
        assert!(c.lambda_i_auto);
        assert!((c.params.lambda_i - 3.39341563786e-6).abs() < 1e-16);
        assert!((c.params.theta1 - 0.5235987755982988).abs() < 1e-16);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            parse_config("scenario = \"fig3\"\nbogus = 1\n", None),
            Err(ConfigError::Syntax(_))
        ));
        assert!(matches!(
            parse_config("scenario = \"fig3\"\n[params]\nxi_c = 0.1\n", None),
            Err(ConfigError::Syntax(_))
        ));
    }

    #[test]
    fn bad_values_are_validation_errors() {
        let e = parse_config("scenario = \"fig3\"\n[params]\ntransmission = 1.5\n", None).unwrap_err();
        assert!(e.is_validation());
        let e = parse_config("scenario = \"fig3\"\n[stepper]\ndeviation_amplitude = \"5 um\"\n", None).unwrap_err();
        assert!(e.is_validation());
        let e = parse_config("scenario = \"fig3\"\n[params]\nlambda_i = \"3 um\"\n", None).unwrap_err();
        assert!(e.is_validation());
    }

    #[test]
    fn coherence_length_sets_bandwidth() {
        let c = parse_config("scenario = \"fig4\"\n[params]\ncoherence_length = \"0.1 mm\"\n", None).unwrap();
        assert!((c.params.derived().l_coh - 0.1e-3).abs() < 1e-18);
    }
}
