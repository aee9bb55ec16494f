fn main() -> std::process::ExitCode {
    provflow_cli::main_with(std::env::args_os())
}
