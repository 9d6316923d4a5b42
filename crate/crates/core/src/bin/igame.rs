fn main() -> std::process::ExitCode {
    igame::cli::main()
}
