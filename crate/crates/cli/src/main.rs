use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;
use tabsynth_cli::args::{Cli, Command};
use tabsynth_cli::{cmd_eval, cmd_geometry, cmd_infer, cmd_sample, cmd_train, exec_from_env, CliResult};

fn print<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("summary serialises"));
}

fn run(cli: Cli) -> CliResult<()> {
    let exec = exec_from_env()?;
    match cli.command {
        Command::Infer(a) => {
            let (data, out, threshold, target) = a.resolve()?;
            let schema = cmd_infer(&data, &out, threshold, target.as_deref())?;
            print(&serde_json::json!({
                "out": out,
                "columns": schema.columns.len(),
                "target": schema.target.name,
            }));
        }
        Command::Train(a) => print(&cmd_train(&a.resolve(exec)?)?),
        Command::Sample(a) => {
            let (ckpt, n, seed, out) = a.resolve()?;
            print(&cmd_sample(&ckpt, n, seed, &out, exec)?);
        }
        Command::Eval(a) => {
            let report = cmd_eval(&a.resolve(exec)?)?;
            println!("{}", report.to_json());
        }
        Command::Geometry(a) => {
            let (k, alpha, sigma, out) = a.resolve()?;
            let report = cmd_geometry(k, alpha, sigma, &out)?;
            print(&serde_json::json!({
                "rows": report.get("rows"),
                "max_abs_err": report.get("max_abs_err"),
            }));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
