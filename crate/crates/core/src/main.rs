use std::process::ExitCode;

fn main() -> ExitCode {
    cascade_minimax::cli::main_from(std::env::args_os())
}
