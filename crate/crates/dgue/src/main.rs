fn main() {
    std::process::exit(dgue::cli::run(std::env::args_os()));
}
