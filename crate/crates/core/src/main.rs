fn main() {
    std::process::exit(pwconv::cli::run(std::env::args_os()));
}
