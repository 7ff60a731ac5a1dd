use std::process::ExitCode;

fn main() -> ExitCode {
    selective_rollout::cli::main_from_args(std::env::args_os())
}
