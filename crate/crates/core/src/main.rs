use std::process::ExitCode;

fn main() -> ExitCode {
    fedsim_core::cli::main()
}
