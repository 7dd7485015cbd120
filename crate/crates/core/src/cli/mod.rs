//! Config loading, manifest writing and result files for the command-line tool.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::analysis::AnalysisError;
use crate::experiments::{self, ExperimentError, MacroMicroMap, ScenarioReport, SweepGrid, UniformAxis};
use crate::oracle::{OracleError, QuadratureScheme};
use crate::params::{idler_wavelength, StepDeviation};

pub use config::{default_run, parse_config, parse_scenario, ConfigError, OutputFormat, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SELFTEST_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;
pub const EXIT_IO: i32 = 5;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Experiment(e) => match e {
                ExperimentError::Oracle(OracleError::NonConvergence { .. })
                | ExperimentError::Analysis(AnalysisError::NonConvergence { .. }) => EXIT_NONCONVERGENCE,
                ExperimentError::UnknownScenario(_) => EXIT_CONFIG,
                _ => EXIT_VALIDATION,
            },
            CliError::Io { .. } => EXIT_IO,
        }
    }
}

pub fn load_config(path: &Path, scenario_override: Option<experiments::Scenario>) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, scenario_override)
}

/// Fixed 17-significant-digit float format used in every output file.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn quoted(v: f64, unit: &str) -> String {
    format!("\"{} {unit}\"", fmt_f64(v))
}

fn axis_entry(a: &UniformAxis) -> String {
    format!(
        "{{ start = {}, stop = {}, count = {} }}",
        quoted(a.start, "rad"),
        quoted(a.stop, "rad"),
        a.count
    )
}

fn list_entry(values: &[f64], unit: &str) -> String {
    let items: Vec<String> = values.iter().map(|&v| quoted(v, unit)).collect();
    format!("[{}]", items.join(", "))
}

/// Fully resolved configuration as TOML; parsing it back yields the same `RunConfig`
/// (apart from `output_dir`, which is not part of the result).
pub fn render_manifest(cfg: &RunConfig) -> String {
    let p = &cfg.params;
    let s = &cfg.settings;
    let mut m = String::new();
    let w = &mut m;
    let _ = writeln!(w, "# Resolved run manifest. Pass it back with --config to reproduce the run.");
    let _ = writeln!(w, "scenario = \"{}\"", cfg.scenario.name());
    let _ = writeln!(w, "format = \"{}\"", cfg.format.as_str());
    let _ = writeln!(w);
    let _ = writeln!(w, "[params]");
    let _ = writeln!(w, "xi_a = {}", fmt_f64(p.xi_a));
    let _ = writeln!(w, "xi_b = {}", fmt_f64(p.xi_b));
    let _ = writeln!(w, "theta1 = {}  # {:.9} deg", quoted(p.theta1, "rad"), p.theta1.to_degrees());
    let _ = writeln!(w, "theta2 = {}  # {:.9} deg", quoted(p.theta2, "rad"), p.theta2.to_degrees());
    let _ = writeln!(w, "transmission = {}", fmt_f64(p.transmission));
    let _ = writeln!(w, "dx = {}", quoted(p.dx, "m"));
    let _ = writeln!(w, "crystal_length = {}", quoted(p.crystal_length, "m"));
    let _ = writeln!(w, "lambda_p = {}", quoted(p.lambda_p, "m"));
    let _ = writeln!(w, "lambda_s = {}", quoted(p.lambda_s, "m"));
    let conserved = p.lambda_i == idler_wavelength(p.lambda_p, p.lambda_s);
    let _ = writeln!(
        w,
        "lambda_i = {}  # {} um{}",
        quoted(p.lambda_i, "m"),
        format_sig(p.lambda_i * 1e6, 12),
        if conserved { ", from energy conservation" } else { "" }
    );
    let _ = writeln!(w, "n_hs = {}", fmt_f64(p.n_hs));
    let _ = writeln!(w, "n_vs = {}", fmt_f64(p.n_vs));
    let _ = writeln!(w, "n_i = {}", fmt_f64(p.n_i));
    let _ = writeln!(
        w,
        "delta_omega_s = {}  # coherence length {} mm",
        quoted(p.delta_omega_s, "rad/s"),
        format_sig(p.derived().l_coh * 1e3, 12)
    );
    let _ = writeln!(w, "bbo_extra_path = {}", quoted(p.bbo_extra_path, "m"));
    let _ = writeln!(w);
    let _ = writeln!(w, "[stepper]");
    let _ = writeln!(w, "nominal_step = {}", quoted(s.stepper.nominal_step, "m"));
    let _ = writeln!(w, "deviation_bound = {}", quoted(s.stepper.deviation_bound, "m"));
    match s.stepper.deviation {
        StepDeviation::None => {
            let _ = writeln!(w, "deviation = \"none\"");
        }
        StepDeviation::Sinusoid {
            amplitude,
            period_steps,
        } => {
            let _ = writeln!(w, "deviation = \"sinusoid\"");
            let _ = writeln!(w, "deviation_amplitude = {}", quoted(amplitude, "m"));
            let _ = writeln!(w, "deviation_period_steps = {}", fmt_f64(period_steps));
        }
    }
    let _ = writeln!(w);
    let _ = writeln!(w, "[scan]");
    let _ = writeln!(w, "macro_steps = {}", s.macro_steps);
    let _ = writeln!(w, "micro_span = {}", quoted(s.micro_span, "m"));
    let _ = writeln!(w, "micro_steps = {}", s.micro_steps);
    let _ = writeln!(w);
    let _ = writeln!(w, "[sweep]");
    let _ = writeln!(w, "theta1 = {}", axis_entry(&s.theta1));
    let _ = writeln!(w, "theta2 = {}", axis_entry(&s.theta2));
    let _ = writeln!(w, "delays = {}", list_entry(&s.delays, "m"));
    let _ = writeln!(w, "gain_ratio = {}", fmt_f64(s.gain_ratio));
    let _ = writeln!(w, "delta_v = {}", list_entry(&s.delta_v, "m"));
    let _ = writeln!(w);
    let _ = writeln!(w, "[quadrature]");
    let scheme = match s.quadrature.scheme {
        QuadratureScheme::GaussHermite => "gauss-hermite",
        QuadratureScheme::UniformSimpson => "simpson",
    };
    let _ = writeln!(w, "scheme = \"{scheme}\"");
    let _ = writeln!(w, "nodes = {}", s.quadrature.node_count);
    let _ = writeln!(w, "span_sigmas = {}", fmt_f64(s.quadrature.span_sigmas));
    m
}

/// `v` with `digits` significant digits, plain decimal notation.
fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

fn header(cols: &[&str], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => cols.join(","),
        OutputFormat::Text => format!("# {}", cols.join(" ")),
    }
}

fn join(fields: &[String], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => fields.join(","),
        OutputFormat::Text => fields.join(" "),
    }
}

pub fn render_grid(grid: &SweepGrid, format: OutputFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}",
        header(&[&grid.axis1.name, &grid.axis2.name, grid.metric.as_str()], format)
    );
    for (i, &a) in grid.axis1.values.iter().enumerate() {
        for (j, &b) in grid.axis2.values.iter().enumerate() {
            let _ = writeln!(out, "{}", join(&[fmt_f64(a), fmt_f64(b), fmt_f64(grid.get(i, j))], format));
        }
    }
    out
}

pub fn render_map(map: &MacroMicroMap, format: OutputFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{}",
        header(&["macro_index", "macro_position_m", "fine_dx_m", "counts"], format)
    );
    for (i, &x) in map.macro_positions().iter().enumerate() {
        for (j, &off) in map.grid.axis2.values.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}",
                join(&[i.to_string(), fmt_f64(x), fmt_f64(off), fmt_f64(map.grid.get(i, j))], format)
            );
        }
    }
    out
}

pub fn render_row_fits(map: &MacroMicroMap, format: OutputFormat) -> String {
    let mut out = String::new();
    let cols = [
        "macro_index",
        "macro_position_m",
        "resolvable",
        "n_max",
        "n_min",
        "amplitude",
        "visibility",
        "fitted_period_m",
        "fitted_phase_rad",
        "fit_residual_rms",
    ];
    let _ = writeln!(out, "{}", header(&cols, format));
    for (i, (&x, fit)) in map.macro_positions().iter().zip(&map.row_fits).enumerate() {
        let mut fields = vec![i.to_string(), fmt_f64(x)];
        match fit {
            Some(m) => {
                fields.push("1".into());
                for v in [
                    m.n_max,
                    m.n_min,
                    m.amplitude,
                    m.visibility,
                    m.fitted_period,
                    m.fitted_phase,
                    m.fit_residual_rms,
                ] {
                    fields.push(fmt_f64(v));
                }
            }
            None => {
                fields.push("0".into());
                fields.extend(std::iter::repeat_n(String::new(), 7));
            }
        }
        let _ = writeln!(out, "{}", join(&fields, format));
    }
    out
}

pub fn render_summary(report: &ScenarioReport, format: OutputFormat) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header(&["key", "value"], format));
    for (k, v) in &report.summary {
        let _ = writeln!(out, "{}", join(&[k.clone(), fmt_f64(*v)], format));
    }
    out
}

/// Every output file of a run as `(file name, contents)`, in write order.
pub fn render_outputs(cfg: &RunConfig, report: &ScenarioReport) -> Vec<(String, String)> {
    let ext = match cfg.format {
        OutputFormat::Csv => "csv",
        OutputFormat::Text => "txt",
    };
    let name = cfg.scenario.name();
    let mut files = vec![
        (MANIFEST_FILE.to_string(), render_manifest(cfg)),
        (format!("{name}_summary.{ext}"), render_summary(report, cfg.format)),
    ];
    if let Some(map) = &report.map {
        files.push((format!("{name}_map.{ext}"), render_map(map, cfg.format)));
        files.push((format!("{name}_row_fits.{ext}"), render_row_fits(map, cfg.format)));
    }
    for g in &report.grids {
        files.push((format!("{}.{ext}", g.name), render_grid(&g.grid, cfg.format)));
    }
    files
}

pub struct RunOutcome {
    pub report: ScenarioReport,
    pub files: Vec<PathBuf>,
}

pub fn execute(cfg: &RunConfig) -> Result<ScenarioReport, CliError> {
    Ok(experiments::run_scenario(cfg.scenario, &cfg.params, &cfg.settings)?)
}

/// Runs the configured scenario and writes its files into `out_dir`.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let report = execute(cfg)?;
    fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut files = Vec::new();
    for (name, contents) in render_outputs(cfg, &report) {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        files.push(path);
    }
    Ok(RunOutcome { report, files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Scenario;

    #[test]
    fn manifest_round_trips() {
        for sc in Scenario::ALL {
            let cfg = default_run(sc);
            let text = render_manifest(&cfg);
            let back = parse_config(&text, None).unwrap();
            assert_eq!(back.params, cfg.params, "{sc}");
            assert_eq!(back.settings, cfg.settings, "{sc}");
            assert_eq!(render_manifest(&back), text);
        }
    }

    #[test]
    fn manifest_shows_idler_and_angles() {
        let cfg = parse_config("scenario = \"fig3\"\n[params]\nlambda_i = \"auto\"\ntheta1 = \"30 deg\"\n", None).unwrap();
        let m = render_manifest(&cfg);
        assert!(m.contains("# 3.39341563786 um, from energy conservation"), "{m}");
        assert!(m.contains("theta1 = \"5.2359877559829882e-1 rad\""), "{m}");
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(3.393415637860082, 12), "3.39341563786");
        assert_eq!(format_sig(0.2, 12), "0.200000000000");
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
    }

    #[test]
    fn exit_codes_are_distinct() {
        let e = CliError::Config(parse_config("scenario = 3", None).unwrap_err());
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let e = CliError::Config(parse_config("scenario = \"fig3\"\n[params]\nxi_a = 0.5\n", None).unwrap_err());
        assert_eq!(e.exit_code(), EXIT_VALIDATION);
        let e = CliError::Experiment(ExperimentError::Oracle(OracleError::NonConvergence {
            coarse_nodes: 8,
            fine_nodes: 16,
            coarse: 1.0,
            fine: 2.0,
            relative: 0.5,
        }));
        assert_eq!(e.exit_code(), EXIT_NONCONVERGENCE);
    }
}
