use std::process::ExitCode;

fn main() -> ExitCode {
    glpge_cli::main_with(std::env::args_os())
}
