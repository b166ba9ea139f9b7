fn main() {
    std::process::exit(relabel::cli::run(std::env::args_os()));
}
