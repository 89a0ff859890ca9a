use std::fs;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use instab_core::dynamics::{
    linearization_check, simulate_linear, top_mode_variance, write_path_csv, LedgerPolicy, ShockModel, SizeProfile,
};
use instab_core::network::{sample_holdings, to_weights, write_triplets};
use instab_core::spectral::{lambda_max, PhiOperator};
use instab_core::sweep::config::{parse_methods, OutputFormat, SweepConfig};
use instab_core::sweep::output::{write_gap_outputs, write_phase_outputs, write_q_sweep_outputs, Manifest};
use instab_core::sweep::{run_gap_analysis, run_phase_diagram, run_q_sweep};
use instab_core::{Error, HeterogeneityParams};

/// Stability phase diagrams of random bank-asset holding networks.
#[derive(Parser, Debug)]
#[command(name = "instab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Classify every (φ, p_B) cell as stable or unstable by each method.
    PhaseDiagram(Common),
    /// λmax against mean degree q for the homogeneous and heterogeneous settings.
    QSweep(Common),
    /// Relative gaps of the approximate methods against diagonalization.
    Gap(Common),
    /// Sample one network and run the linear return process on it.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use equal investment sizes instead of the configured (φ, p_B).
        #[arg(long)]
        homogeneous: bool,
    },
    /// Parse and check a config file, then print the resolved settings.
    ValidateConfig(Common),
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Comma list of diagonalization, corsi, replica.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_parser = ["csv", "json"])]
    format: Option<String>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn load(c: &Common) -> Result<SweepConfig, Error> {
    let mut cfg = match &c.config {
        Some(path) => SweepConfig::from_path(path)?,
        None => SweepConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(n) = c.samples {
        cfg.samples = n;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if let Some(m) = &c.methods {
        cfg.methods = parse_methods(m)?;
    }
    if let Some(d) = &c.out_dir {
        cfg.out_dir = d.clone();
    }
    if let Some(f) = &c.format {
        cfg.format = OutputFormat::parse(f).ok_or_else(|| Error::Config(format!("unknown format `{f}`")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::InvalidParameter { .. } | Error::Heterogeneity(_) | Error::LeverageTooLow { .. }
    )
}

/// Prints to stdout, ignoring a closed pipe.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        say(&p.display().to_string());
    }
}

fn outcome(failed: usize, total: usize) -> u8 {
    if failed > 0 {
        warn!("{failed} of {total} cells failed numerically");
        EXIT_NUMERICAL
    } else {
        0
    }
}

fn simulate(cfg: &SweepConfig, homogeneous: bool) -> Result<u8, Error> {
    let p = &cfg.model;
    let h = if homogeneous {
        HeterogeneityParams::homogeneous()
    } else {
        cfg.heterogeneity()?
    };
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    let x = sample_holdings(p, &h, cfg.seed)?;
    let w = to_weights(&x);
    if cfg.simulate.triplets {
        for (name, m) in [("X", &x.matrix), ("W", &w.matrix)] {
            let path = dir.join(format!("{name}.triplets"));
            write_triplets(&mut BufWriter::new(fs::File::create(&path)?), name, m, cfg.seed)?;
            paths.push(path);
        }
    }
    let op = PhiOperator::from_weights(w, p.phi_prefactor()?);
    let top = lambda_max(&op, &cfg.solver);
    info!("λmax(Φ) = {} ({} iterations)", top.value, top.iterations);

    let mut shocks = ShockModel::from_params(p, cfg.seed)?;
    let (end, trace) = simulate_linear(&op, &mut shocks, cfg.simulate.steps, None, &cfg.simulate.record)?;
    if cfg.simulate.trace {
        let path = dir.join("path_trace.csv");
        write_path_csv(&mut BufWriter::new(fs::File::create(&path)?), &trace)?;
        paths.push(path);
    }

    let horizon = cfg.simulate.steps.min(50);
    let equal = linearization_check(p, &h, cfg.seed, horizon, SizeProfile::Equal, LedgerPolicy::Recapitalized)?;
    let evolving = linearization_check(p, &h, cfg.seed, horizon, SizeProfile::Equal, LedgerPolicy::Evolving);
    let variance = if top.value < 1.0 && cfg.simulate.paths >= 2 {
        Some(top_mode_variance(
            &op,
            p.sigma_f2,
            p.sigma_nu2,
            cfg.simulate.paths,
            cfg.simulate.steps.min(30),
            cfg.seed,
            cfg.workers,
        )?)
    } else {
        None
    };

    let summary = serde_json::json!({
        "heterogeneity": h,
        "lambda_max": top.value,
        "solver_iterations": top.iterations,
        "solver_converged": top.converged,
        "steps_run": end.t,
        "diverged_at": trace.diverged_at,
        "final_max_abs": end.max_abs(),
        "linearization_recapitalized": equal,
        "linearization_evolving_max": match &evolving {
            Ok(r) => serde_json::json!(r.max_deviation),
            Err(e) => serde_json::json!(e.to_string()),
        },
        "top_mode_variance": variance,
    });
    let path = dir.join("simulate.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")?;
    paths.push(path);

    let mut manifest = Manifest::new("simulate", cfg);
    manifest.cells = 1;
    manifest.failed_cells = usize::from(!top.converged || !top.value.is_finite());
    manifest.outputs = paths.iter().filter_map(|p| p.file_name()).map(|s| s.to_string_lossy().into_owned()).collect();
    paths.push(manifest.write(dir)?);
    report(&paths);
    Ok(outcome(manifest.failed_cells, 1))
}

fn run(cmd: Command) -> Result<u8, Error> {
    match cmd {
        Command::PhaseDiagram(c) => {
            let cfg = load(&c)?;
            let d = run_phase_diagram(&cfg)?;
            report(&write_phase_outputs(&d, &cfg, &cfg.out_dir)?);
            for (m, counts) in &d.counts {
                info!("{m}: {counts:?}");
            }
            Ok(outcome(d.failed_cells(), d.cells.len()))
        }
        Command::QSweep(c) => {
            let cfg = load(&c)?;
            let s = run_q_sweep(&cfg)?;
            report(&write_q_sweep_outputs(&s, &cfg, &cfg.out_dir)?);
            Ok(outcome(s.failed_cells(), s.cells.len()))
        }
        Command::Gap(c) => {
            let cfg = load(&c)?;
            let rows = run_gap_analysis(&cfg, &cfg.scales)?;
            report(&write_gap_outputs(&rows, &cfg, &cfg.out_dir)?);
            let failed = rows.iter().filter(|r| r.failure.is_some()).count();
            Ok(outcome(failed, rows.len()))
        }
        Command::Simulate { common, homogeneous } => simulate(&load(&common)?, homogeneous),
        Command::ValidateConfig(c) => {
            let cfg = load(&c)?;
            say(&serde_json::to_string_pretty(&cfg)?);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            ExitCode::from(if is_config_error(&e) { EXIT_CONFIG } else { EXIT_NUMERICAL })
        }
    }
}
