fn main() {
    std::process::exit(kneecast_cli::run_cli(std::env::args_os()));
}
