fn main() -> std::process::ExitCode {
    steproute::cli::run()
}
