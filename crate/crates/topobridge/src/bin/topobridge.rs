fn main() -> std::process::ExitCode {
    topobridge::cli::main()
}
