fn main() -> std::process::ExitCode {
    smcl::cli::main()
}
