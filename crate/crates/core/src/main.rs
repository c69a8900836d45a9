fn main() -> std::process::ExitCode {
    roomtse::cli::main()
}
