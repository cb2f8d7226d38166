fn main() -> std::process::ExitCode {
    robust_spd::cli::main()
}
