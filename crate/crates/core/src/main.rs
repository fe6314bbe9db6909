fn main() {
    std::process::exit(reprsim::cli::run(std::env::args_os()));
}
