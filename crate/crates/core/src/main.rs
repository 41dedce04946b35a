fn main() {
    std::process::exit(tdss::cli::run(std::env::args_os()));
}
