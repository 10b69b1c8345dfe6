fn main() {
    std::process::exit(histoseg::cli::run_cli(std::env::args_os()));
}
