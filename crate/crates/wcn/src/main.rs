fn main() -> std::process::ExitCode {
    wcn::cli::main()
}
