fn main() {
    std::process::exit(quotefuse::cli::run(std::env::args_os()));
}
