fn main() -> std::process::ExitCode {
    veritas::cli::main()
}
