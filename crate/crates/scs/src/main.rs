use std::process::ExitCode;

fn main() -> ExitCode {
    scs::cli::run()
}
