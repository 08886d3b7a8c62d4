use std::process::ExitCode;

fn main() -> ExitCode {
    cabp::cli::main_with(std::env::args_os())
}
