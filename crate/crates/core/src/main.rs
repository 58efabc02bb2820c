fn main() -> std::process::ExitCode {
    openfock::cli::main_with(std::env::args_os())
}
