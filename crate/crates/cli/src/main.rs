//! Command-line driver: seeded experiment runs, sweeps, exact equilibrium
//! solves, learning-rate theory checks, and checkpoint resumption.
//!
//! Exit codes: 0 on full success, 1 when any seed or sweep cell failed,
//! 2 on configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nashq::eval::check_learning_rate_properties;
use nashq::game::{nash_values, MarkovGame};
use nashq_cli::config::parse_config;
use nashq_cli::runner::{resume_run, run_experiment, RunOutput};
use nashq_cli::sweep::{parse_grid, run_sweep};

#[derive(Parser)]
#[command(name = "nashq", version, about = "Self-play equilibrium learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment for every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `run.out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the Cartesian product of grid overrides over the base config.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Output directory; overrides `run.out` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact equilibrium values of a serialized game.
    Solve {
        #[arg(long)]
        game: PathBuf,
    },
    /// Numerically verify the learning-rate sequence bounds.
    CheckTheory {
        /// Largest visit count N to sweep.
        #[arg(long, default_value_t = 2000)]
        n_max: usize,
    },
    /// Continue an interrupted run from a `state_<k>.txt` checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_FAILED_CELL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out } => cmd_run(&config, out.as_deref()),
        Command::Sweep { config, grid, out } => cmd_sweep(&config, &grid, out.as_deref()),
        Command::Solve { game } => cmd_solve(&game),
        Command::CheckTheory { n_max } => cmd_check_theory(n_max),
        Command::Resume { checkpoint } => cmd_resume(&checkpoint),
    };
    ExitCode::from(code)
}

fn report_config_errors(errors: &[String]) -> u8 {
    for e in errors {
        eprintln!("config error: {e}");
    }
    EXIT_CONFIG
}

fn resolve_out_dir(cli_out: Option<&Path>, config_out: Option<&Path>) -> Result<PathBuf, u8> {
    match cli_out.or(config_out) {
        Some(dir) => Ok(dir.to_path_buf()),
        None => {
            eprintln!("config error: no output directory; pass --out or set run.out");
            Err(EXIT_CONFIG)
        }
    }
}

fn print_run(output: &RunOutput) {
    for outcome in &output.outcomes {
        match &outcome.result {
            Ok(r) => println!(
                "seed {}: ok - final nash gap {:.6}, value gap {:.6}, k* {} (gap {:.6}), settled {:.3}",
                outcome.seed,
                r.final_nash_gap,
                r.final_value_gap,
                r.kstar,
                r.kstar_nash_gap,
                r.settled_fraction
            ),
            Err(e) => println!("seed {}: error - {e}", outcome.seed),
        }
    }
    println!("summary: {}", output.summary_path.display());
}

fn cmd_run(config_path: &Path, out: Option<&Path>) -> u8 {
    let parsed = match parse_config(config_path) {
        Ok(p) => p,
        Err(errors) => return report_config_errors(&errors),
    };
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let out_dir = match resolve_out_dir(out, parsed.config.out_dir.as_deref()) {
        Ok(d) => d,
        Err(code) => return code,
    };
    match run_experiment(&parsed.config, &out_dir) {
        Ok(output) => {
            print_run(&output);
            if output.all_ok() {
                EXIT_OK
            } else {
                EXIT_FAILED_CELL
            }
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            EXIT_FAILED_CELL
        }
    }
}

fn cmd_sweep(config_path: &Path, grid_path: &Path, out: Option<&Path>) -> u8 {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => {
            return report_config_errors(&[format!(
                "cannot read config {}: {e}",
                config_path.display()
            )])
        }
    };
    let pairs = match nashq_cli::config::read_pairs(&text) {
        Ok(p) => p,
        Err(errors) => return report_config_errors(&errors),
    };
    // The base must itself be a valid config; grid cells only override it.
    let base = match nashq_cli::config::build_config(&pairs) {
        Ok(p) => p,
        Err(errors) => return report_config_errors(&errors),
    };
    for w in &base.warnings {
        eprintln!("warning: {w}");
    }
    let grid_text = match std::fs::read_to_string(grid_path) {
        Ok(t) => t,
        Err(e) => {
            return report_config_errors(&[format!(
                "cannot read grid {}: {e}",
                grid_path.display()
            )])
        }
    };
    let axes = match parse_grid(&grid_text) {
        Ok(a) => a,
        Err(errors) => return report_config_errors(&errors),
    };
    let out_dir = match resolve_out_dir(out, base.config.out_dir.as_deref()) {
        Ok(d) => d,
        Err(code) => return code,
    };
    match run_sweep(&pairs, &axes, &out_dir) {
        Ok(output) => {
            for cell in &output.cells {
                let status = if cell.is_ok() { "ok" } else { "error" };
                println!("cell {} [{}]: {status}", cell.index, cell.label());
            }
            println!("summary: {}", output.summary_path.display());
            if output.all_ok() {
                EXIT_OK
            } else {
                EXIT_FAILED_CELL
            }
        }
        Err(e) => {
            eprintln!("sweep failed: {e}");
            EXIT_FAILED_CELL
        }
    }
}

fn cmd_solve(game_path: &Path) -> u8 {
    let text = match std::fs::read_to_string(game_path) {
        Ok(t) => t,
        Err(e) => {
            return report_config_errors(&[format!(
                "cannot read game {}: {e}",
                game_path.display()
            )])
        }
    };
    let game = match MarkovGame::from_text(&text) {
        Ok(g) => g,
        Err(e) => return report_config_errors(&[format!("bad game file: {e}")]),
    };
    match nash_values(&game) {
        Ok(exact) => {
            let d = game.dims;
            println!(
                "game: S={} A={} B={} H={}",
                d.num_states, d.num_actions_max, d.num_actions_min, d.horizon
            );
            println!(
                "equilibrium value at the initial state: {}",
                exact.v_star[d.vidx(0, game.initial_state)]
            );
            println!("h s v_star");
            for h in 0..d.horizon {
                for s in 0..d.num_states {
                    println!("{h} {s} {}", exact.v_star[d.vidx(h, s)]);
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("solve failed: {e}");
            EXIT_FAILED_CELL
        }
    }
}

fn cmd_check_theory(n_max: usize) -> u8 {
    let horizons = [1, 2, 5, 10, 32];
    match check_learning_rate_properties(&horizons, n_max) {
        Ok(report) => {
            println!("learning-rate bounds for H in {horizons:?}, N <= {n_max}");
            println!("max |sum of weights - 1| = {:.3e}", report.max_sum_deviation);
            if let Some(t) = report
                .tightest
                .iter()
                .min_by(|a, b| a.margin.total_cmp(&b.margin))
            {
                println!(
                    "tightest margin: {} at H={} N={} margin={:.3e}",
                    t.property, t.horizon, t.at, t.margin
                );
            }
            println!("violations: {}", report.violations.len());
            for v in &report.violations {
                println!("  {} at H={} N={} margin={:.3e}", v.property, v.horizon, v.at, v.margin);
            }
            if report.is_ok() {
                println!("ok");
                EXIT_OK
            } else {
                EXIT_FAILED_CELL
            }
        }
        Err(e) => {
            eprintln!("check failed: {e}");
            EXIT_FAILED_CELL
        }
    }
}

fn cmd_resume(checkpoint: &Path) -> u8 {
    match resume_run(checkpoint) {
        Ok(output) => {
            print_run(&output);
            if output.all_ok() {
                EXIT_OK
            } else {
                EXIT_FAILED_CELL
            }
        }
        Err(e) => {
            eprintln!("resume failed: {e}");
            EXIT_FAILED_CELL
        }
    }
}
