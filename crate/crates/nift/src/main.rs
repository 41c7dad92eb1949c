fn main() -> std::process::ExitCode {
    nift::cli::run()
}
