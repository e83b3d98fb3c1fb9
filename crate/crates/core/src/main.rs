fn main() {
    std::process::exit(atig::cli::run(std::env::args_os()));
}
