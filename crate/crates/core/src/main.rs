fn main() {
    std::process::exit(foragelab::cli::run(std::env::args_os()));
}
