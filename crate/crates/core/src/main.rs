use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use iupsim::cli::{self, CliError, EXIT_CONFIG, EXIT_OK, EXIT_SELFTEST_FAILED};
use iupsim::closed_form::IdlerPhaseSign;
use iupsim::oracle::QuadratureSpec;
use iupsim::selftest::{self, SelftestOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SignArg {
    Plus,
    Minus,
}

/// Simulates a retro-reflected undetected-photon interferometer and writes
/// plot-ready CSV for its delay maps and visibility sweeps.
#[derive(Debug, Parser)]
#[command(name = "iupsim", version)]
struct Args {
    /// Scenario to run: fig3, fig4, figS1, figS2, figS3, figS4 (overrides the config).
    #[arg(long)]
    scenario: Option<String>,
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for grid evaluation (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Run the built-in acceptance checks instead of a scenario.
    #[arg(long)]
    selftest: bool,
    /// Idler phase sign used by the closed form during --selftest.
    #[arg(long, value_enum, default_value = "plus", requires = "selftest")]
    selftest_sign: SignArg,
    /// Gauss-Hermite node count used by the oracle during --selftest.
    #[arg(long, default_value_t = 128, requires = "selftest")]
    selftest_nodes: usize,
}

fn fail(e: &CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }

    if args.selftest {
        let opts = SelftestOptions {
            idler_sign: match args.selftest_sign {
                SignArg::Plus => IdlerPhaseSign::Plus,
                SignArg::Minus => IdlerPhaseSign::Minus,
            },
            quadrature: QuadratureSpec::gauss_hermite(args.selftest_nodes),
            ..SelftestOptions::default()
        };
        let checks = selftest::run_all(&opts);
        for c in &checks {
            println!("{c}");
        }
        let failed = checks.iter().filter(|c| !c.passed).count();
        println!("{} of {} checks passed", checks.len() - failed, checks.len());
        return ExitCode::from(if failed == 0 { EXIT_OK } else { EXIT_SELFTEST_FAILED } as u8);
    }

    let scenario = match args.scenario.as_deref().map(cli::parse_scenario).transpose() {
        Ok(s) => s,
        Err(e) => return fail(&e.into()),
    };
    let cfg = match (&args.config, scenario) {
        (Some(path), _) => cli::load_config(path, scenario),
        (None, Some(sc)) => Ok(cli::default_run(sc)),
        (None, None) => Err(cli::ConfigError::MissingScenario),
    };
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => return fail(&e.into()),
    };
    let out = args
        .out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    match cli::run(&cfg, &out) {
        Ok(outcome) => {
            for (k, v) in &outcome.report.summary {
                println!("{k} = {v}");
            }
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
