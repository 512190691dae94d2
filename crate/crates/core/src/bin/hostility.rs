fn main() {
    std::process::exit(hostility::cli::run(std::env::args_os()));
}
