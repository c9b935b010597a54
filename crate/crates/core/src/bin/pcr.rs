fn main() {
    std::process::exit(pcr::cli::run(std::env::args_os()));
}
