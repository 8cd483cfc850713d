fn main() -> std::process::ExitCode {
    asc::cli::main_with_args(std::env::args_os())
}
