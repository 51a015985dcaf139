fn main() {
    std::process::exit(fibertrap::cli::run(std::env::args_os()));
}
