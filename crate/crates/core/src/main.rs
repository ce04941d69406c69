use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(branchrl::cli::run(std::env::args_os()))
}
