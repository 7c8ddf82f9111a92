use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(bvmatch::cli::cli_main(std::env::args_os()) as u8)
}
