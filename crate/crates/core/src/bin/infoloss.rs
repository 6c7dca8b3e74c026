fn main() -> std::process::ExitCode {
    infoloss::cli::main()
}
