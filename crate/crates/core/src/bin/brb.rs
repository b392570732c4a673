fn main() {
    std::process::exit(brb::cli::run(std::env::args_os()));
}
