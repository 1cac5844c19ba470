fn main() -> std::process::ExitCode {
    pedaltrack_cli::run(std::env::args_os())
}
