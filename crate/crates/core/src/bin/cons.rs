fn main() -> std::process::ExitCode {
    cons_marl::cli::main()
}
