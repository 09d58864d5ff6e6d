fn main() {
    std::process::exit(fundpanel::cli::run(std::env::args_os()));
}
