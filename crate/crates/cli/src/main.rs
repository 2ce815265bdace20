fn main() {
    std::process::exit(collapse_walk_cli::run(std::env::args_os()));
}
