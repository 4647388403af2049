use std::process::ExitCode;

fn main() -> ExitCode {
    cocreate::cli::main_with(std::env::args_os())
}
