use std::process::ExitCode;

use clap::Parser;
use fock_tomo_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let mut stdout = std::io::stdout().lock();
    match run(cli, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fock-tomo {name}: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
