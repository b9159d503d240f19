fn main() -> std::process::ExitCode {
    gatekeeper::cli::main()
}
