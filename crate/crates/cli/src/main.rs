//! `statgames`: verification campaigns, game runs and realisations.
//!
//! Exit codes: 0 pass, 1 fail or backend error, 2 usage or configuration
//! error, 3 inconclusive.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use statgames::config::{GameConfig, GradKind, ScenarioConfig, ScenarioGame};
use statgames::lens::{swap_corruption, verify_optical_bayes_with, Corruption, VerifyConfig};
use statgames::realisation::{LevelSpec, ThermostatConfig, ThermostatMode};
use statgames::Error;

use output::RunDir;

const EXIT_FAIL: i32 = 1;
const EXIT_USAGE: i32 = 2;

#[derive(Parser)]
#[command(
    name = "statgames",
    version,
    about = "Statistical open games: verification, equilibria and dynamical realisations"
)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "STATGAMES_OUT", default_value = "statgames-out")]
    out: PathBuf,
    /// Seed for every random choice; overrides seeds in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check on random finite instances that exact Bayesian lenses compose
    /// to the inversion of the composite channel.
    Verify {
        /// At least 1.
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        /// Largest space size drawn, in 2..=8.
        #[arg(long, default_value_t = 5)]
        max_dim: u64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Corrupt every composite backward channel (negative control).
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Solve a static game from a JSON config.
    Game { config: PathBuf },
    /// Realise a parametric game by gradient descent and run the cybernetic
    /// check, from a JSON scenario config.
    Realise { config: PathBuf },
    /// The thermostat scenario.
    Thermostat(ThermostatArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fep,
    DeepAi,
}

#[derive(clap::Args)]
struct ThermostatArgs {
    #[arg(long, value_enum, default_value = "fep")]
    mode: Mode,
    #[arg(long)]
    x0: Option<f64>,
    #[arg(long)]
    goal: Option<f64>,
    #[arg(long)]
    goal_var: Option<f64>,
    #[arg(long)]
    sensor_var: Option<f64>,
    #[arg(long)]
    env_var: Option<f64>,
    #[arg(long)]
    action_cost: Option<f64>,
    /// Extra level above the sensory one as `gain:var`; repeat for more.
    #[arg(long = "level", value_parser = parse_level)]
    levels: Vec<LevelSpec>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eps_fix: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    /// Use central finite differences instead of the analytic gradient.
    #[arg(long)]
    fd: bool,
    #[arg(long)]
    line_search: bool,
    #[arg(long)]
    tol: Option<f64>,
}

fn parse_level(s: &str) -> Result<LevelSpec, String> {
    let (g, v) = s.split_once(':').ok_or("expected gain:var")?;
    let gain = g.trim().parse().map_err(|e| format!("gain: {e}"))?;
    let var = v.trim().parse().map_err(|e| format!("var: {e}"))?;
    Ok(LevelSpec { gain, var })
}

/// How a command ended, before the manifest is written.
struct Outcome {
    status: &'static str,
    exit: i32,
    message: Option<String>,
}

impl Outcome {
    fn ok(status: &'static str, exit: i32) -> Self {
        Self {
            status,
            exit,
            message: None,
        }
    }

    fn error(e: &Error) -> Self {
        let exit = if matches!(e, Error::Config(_)) { EXIT_USAGE } else { EXIT_FAIL };
        Self {
            status: "error",
            exit,
            message: Some(e.to_string()),
        }
    }
}

type Body<'a> = Box<dyn FnOnce(&mut RunDir) -> std::io::Result<Outcome> + 'a>;

/// A command run: its name, effective config and seed, and the body.
struct Run<'a> {
    command: &'static str,
    config: Value,
    seed: Option<u64>,
    body: Body<'a>,
}

fn read_config(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn verify(cli: &Cli, trials: u64, max_dim: u64, tol: f64, corrupt: bool) -> Run<'static> {
    let cfg = VerifyConfig {
        trials: trials as usize,
        max_dim: max_dim as usize,
        seed: cli.seed.unwrap_or(0),
        tol,
    };
    Run {
        command: "verify",
        config: json!({"trials": trials, "max_dim": max_dim, "tol": tol, "corrupt": corrupt}),
        seed: Some(cfg.seed),
        body: Box::new(move |out| {
            let hook: &Corruption = &swap_corruption;
            let report = match verify_optical_bayes_with(cfg, corrupt.then_some(hook)) {
                Ok(r) => r,
                Err(e) => return Ok(Outcome::error(&e)),
            };
            let failed = !report.failures.is_empty();
            let summary = json!({
                "status": if failed { "fail" } else { "pass" },
                "trials": report.trials,
                "passes": report.passes,
                "failures": report.failures.len(),
                "worst_tv": report.worst_tv,
                "resampled": report.resampled,
                "seed": report.seed,
                "max_dim": report.max_dim,
                "tol": report.tol,
            });
            out.write_json("report.json", &summary)?;
            if failed {
                out.write_json("witnesses.json", &report.failures)?;
                Ok(Outcome::ok("fail", EXIT_FAIL))
            } else {
                Ok(Outcome::ok("pass", 0))
            }
        }),
    }
}

fn game(cli: &Cli, path: &Path) -> Run<'static> {
    let parsed = read_config(path).and_then(|t| GameConfig::from_json(&t));
    let mut cfg = match parsed {
        Ok(c) => c,
        Err(e) => return failed_run("game", json!({"path": path}), cli.seed, e),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Run {
        command: "game",
        config: serde_json::to_value(&cfg).unwrap_or(Value::Null),
        seed: Some(cfg.seed),
        body: Box::new(move |out| {
            let result = cfg.solve().and_then(|r| {
                let table = if cfg.objective_table {
                    Some(cfg.objective_table_csv()?)
                } else {
                    None
                };
                Ok((r, table))
            });
            match result {
                Ok((mut report, table)) => {
                    if table.is_some() {
                        report["objective_table_csv"] = json!("objective_table.csv");
                    }
                    out.write_json("report.json", &report)?;
                    if let Some(t) = table {
                        out.write("objective_table.csv", t.as_bytes())?;
                    }
                    Ok(Outcome::ok("pass", 0))
                }
                Err(e) => Ok(Outcome::error(&e)),
            }
        }),
    }
}

fn scenario(command: &'static str, mut cfg: ScenarioConfig, seed: Option<u64>) -> Run<'static> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Run {
        command,
        config: serde_json::to_value(&cfg).unwrap_or(Value::Null),
        seed: Some(cfg.seed),
        body: Box::new(move |out| {
            let report = match cfg.run() {
                Ok(r) => r,
                Err(e) => return Ok(Outcome::error(&e)),
            };
            out.write("trajectory.csv", report.check.trajectory.to_csv().as_bytes())?;
            out.write_json("report.json", &report.to_json("trajectory.csv"))?;
            let status = match report.check.status.exit_code() {
                0 => "pass",
                1 => "fail",
                _ => "inconclusive",
            };
            Ok(Outcome::ok(status, report.check.status.exit_code()))
        }),
    }
}

fn realise(cli: &Cli, path: &Path) -> Run<'static> {
    match read_config(path).and_then(|t| ScenarioConfig::from_json(&t)) {
        Ok(cfg) => scenario("realise", cfg, cli.seed),
        Err(e) => failed_run("realise", json!({"path": path}), cli.seed, e),
    }
}

fn thermostat(cli: &Cli, a: &ThermostatArgs) -> Run<'static> {
    let d = ThermostatConfig::default();
    let game = ThermostatConfig {
        x0: a.x0.unwrap_or(d.x0),
        goal: a.goal.unwrap_or(d.goal),
        goal_var: a.goal_var.unwrap_or(d.goal_var),
        sensor_var: a.sensor_var.unwrap_or(d.sensor_var),
        env_var: a.env_var.unwrap_or(d.env_var),
        action_cost: a.action_cost.unwrap_or(d.action_cost),
        levels: a.levels.clone(),
        mode: match a.mode {
            Mode::Fep => ThermostatMode::Fep,
            Mode::DeepAi => ThermostatMode::DeepAi,
        },
    };
    let cfg = ScenarioConfig {
        game: ScenarioGame::Thermostat(game),
        eta: a.eta,
        max_steps: a.max_steps,
        eps_fix: a.eps_fix,
        window: a.window,
        grad: if a.fd { GradKind::Fd } else { GradKind::Analytic },
        h: None,
        line_search: a.line_search,
        seed: 0,
        theta0: None,
        tol: a.tol,
    };
    scenario("thermostat", cfg, cli.seed)
}

/// A run that only records why it could not start.
fn failed_run(command: &'static str, config: Value, seed: Option<u64>, e: Error) -> Run<'static> {
    Run {
        command,
        config,
        seed,
        body: Box::new(move |_| Ok(Outcome::error(&e))),
    }
}

fn execute(out_dir: &Path, run: Run) -> std::io::Result<i32> {
    let mut out = RunDir::create(out_dir)?;
    let outcome = match (run.body)(&mut out) {
        Ok(o) => o,
        Err(e) => Outcome {
            status: "error",
            exit: EXIT_FAIL,
            message: Some(format!("writing outputs: {e}")),
        },
    };
    if let Some(m) = &outcome.message {
        eprintln!("statgames {}: {m}", run.command);
        if outcome.exit == EXIT_USAGE {
            eprintln!("For more information, try '--help'.");
        }
    }
    out.finish(run.command, run.config, run.seed, outcome.status, outcome.exit, outcome.message)?;
    Ok(outcome.exit)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = match &cli.cmd {
        Cmd::Verify {
            trials,
            max_dim,
            tol,
            corrupt,
        } => verify(&cli, *trials, *max_dim, *tol, *corrupt),
        Cmd::Game { config } => game(&cli, config),
        Cmd::Realise { config } => realise(&cli, config),
        Cmd::Thermostat(a) => thermostat(&cli, a),
    };
    match execute(&cli.out, run) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("statgames: cannot write to {}: {e}", cli.out.display());
            ExitCode::from(EXIT_FAIL as u8)
        }
    }
}
