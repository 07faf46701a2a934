use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(chemcl_cli::run(std::env::args_os()))
}
