mod commands;

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use dodge_rl::config::{kebab, RunConfig};

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;

/// Failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn config(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

/// One `--kebab-key <value>` flag per configuration key.
fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .short('c')
            .value_name("FILE")
            .help("configuration file; flags override its values"),
    );
    RunConfig::KEYS.iter().fold(cmd, |cmd, key| {
        let id: &'static str = key;
        let long: &'static str = Box::leak(kebab(key).into_boxed_str());
        let arg = Arg::new(id)
            .long(long)
            .value_name("VALUE")
            .help(RunConfig::describe(key))
            .hide_short_help(!matches!(*key, "agent" | "seed" | "run_dir" | "total_training_steps"));
        cmd.arg(if *key == "total_training_steps" { arg.visible_alias("steps") } else { arg })
    })
}

fn cli() -> Command {
    Command::new("dodge-rl")
        .about("Deep Q-learning agents that learn to dodge a scripted fighting-game opponent")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("train").about("Train in one process with in-process workers"),
        ))
        .subcommand(config_args(
            Command::new("manager").about("Accept worker uploads, train and serve models"),
        ))
        .subcommand(config_args(
            Command::new("worker").about("Generate samples for a manager"),
        ))
        .subcommand(
            config_args(Command::new("eval").about("Evaluate a model snapshot"))
                .arg(
                    Arg::new("snapshot")
                        .long("snapshot")
                        .value_name("FILE")
                        .required(true)
                        .help("model snapshot (.drlm)"),
                )
                .arg(Arg::new("level").long("level").value_name("1-9").help("opponent level"))
                .arg(Arg::new("episodes").long("episodes").value_name("N").help("episodes to play"))
                .arg(
                    Arg::new("greedy")
                        .long("greedy")
                        .action(ArgAction::SetTrue)
                        .help("act greedily instead of with epsilon 0.05"),
                )
                .arg(
                    Arg::new("record")
                        .long("record")
                        .value_name("FILE")
                        .help("write the first episode frame by frame as CSV"),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("FILE")
                        .help("report CSV (default <run-dir>/eval.csv)"),
                ),
        )
        .subcommand(
            Command::new("gradcheck")
                .about("Check backpropagation against finite differences")
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("N")
                        .default_value("0")
                        .value_parser(clap::value_parser!(u64)),
                )
                .arg(
                    Arg::new("networks")
                        .long("networks")
                        .value_name("N")
                        .default_value("100")
                        .value_parser(clap::value_parser!(usize)),
                )
                .arg(
                    Arg::new("corrupt-backward")
                        .long("corrupt-backward")
                        .action(ArgAction::SetTrue)
                        .hide(true),
                ),
        )
}

/// File values first, then `DODGE_RL_RUN_DIR` if the file left `run_dir`
/// alone, then flags.
pub fn load_config(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => RunConfig::from_file(path.as_ref()).map_err(Failure::config)?,
        None => RunConfig::default(),
    };
    if cfg.run_dir == RunConfig::default().run_dir {
        if let Ok(dir) = std::env::var("DODGE_RL_RUN_DIR") {
            cfg.run_dir = dir;
        }
    }
    for key in RunConfig::KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set_from_cli(key, v).map_err(Failure::config)?;
        }
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => commands::train(m),
        Some(("manager", m)) => commands::manager(m),
        Some(("worker", m)) => commands::worker(m),
        Some(("eval", m)) => commands::eval(m),
        Some(("gradcheck", m)) => commands::gradcheck(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
