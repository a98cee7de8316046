use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(tensorciq::cli::run(std::env::args_os()))
}
