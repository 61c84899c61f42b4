mod args;
mod client;
mod commands;
mod error;
mod table;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use client::Client;
use commands::Ctx;
use error::exit;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(exit::FAILURE);
        }
    };
    match runtime.block_on(dispatch(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

async fn dispatch(cli: Cli) -> Result<u8, error::CliError> {
    let ctx = Ctx {
        client: Client::new(&cli.server),
        json: cli.json,
    };
    match cli.command {
        Command::Serve(args) => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            commands::serve(args).await
        }
        Command::Deploy { file, version } => commands::deploy(&ctx, &file, &version).await,
        Command::Workflows(cmd) => commands::workflows(&ctx, cmd).await,
        Command::Services(cmd) => commands::services(&ctx, cmd).await,
        Command::Functions(cmd) => commands::functions(&ctx, cmd).await,
        Command::Run(args) => commands::run(&ctx, args).await,
        Command::Instances(cmd) => commands::instances(&ctx, cmd).await,
        Command::Validate { file } => commands::validate(ctx.json, &file),
        Command::Monitor(cmd) => commands::monitor(&ctx, cmd).await,
        Command::Sim(args) => commands::sim(&ctx, args).await,
    }
}
