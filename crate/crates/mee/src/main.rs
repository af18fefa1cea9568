use std::process::ExitCode;

fn main() -> ExitCode {
    mee::cli::main()
}
