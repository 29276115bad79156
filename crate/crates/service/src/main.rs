fn main() -> std::process::ExitCode {
    rexcbr::cli::main()
}
