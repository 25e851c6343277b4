fn main() {
    std::process::exit(twostream::cli::run(std::env::args_os()));
}
