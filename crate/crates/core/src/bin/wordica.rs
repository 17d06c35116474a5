fn main() {
    std::process::exit(wordica::cli::run(std::env::args_os()));
}
