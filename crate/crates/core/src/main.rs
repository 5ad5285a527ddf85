fn main() {
    std::process::exit(dlpr::cli::run(std::env::args_os()));
}
