use std::process::ExitCode;

fn main() -> ExitCode {
    pollerr::cli::main_with_args(std::env::args_os())
}
