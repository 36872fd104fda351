use std::process::ExitCode;

fn main() -> ExitCode {
    hfl_sim::cli::cli_main(std::env::args_os())
}
