fn main() {
    std::process::exit(hdben::cli::run(std::env::args_os()));
}
