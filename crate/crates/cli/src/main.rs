use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = idtrace_cli::Cli::parse();
    idtrace_cli::init_logging(cli.global.verbose);
    ExitCode::from(idtrace_cli::run(cli))
}
