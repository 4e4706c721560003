fn main() {
    std::process::exit(pdnjode::cli::run(std::env::args_os()));
}
