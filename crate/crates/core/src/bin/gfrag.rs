fn main() {
    std::process::exit(gfrag::cli::run_from(std::env::args_os()));
}
