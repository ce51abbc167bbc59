use std::process::ExitCode;

fn main() -> ExitCode {
    henn::cli::main_with(std::env::args_os())
}
