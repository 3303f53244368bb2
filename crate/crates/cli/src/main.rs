fn main() -> std::process::ExitCode {
    sieve_bvm_cli::main_with_args(std::env::args_os())
}
