fn main() {
    std::process::exit(htmd::cli::run(std::env::args_os()));
}
