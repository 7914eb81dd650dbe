fn main() {
    std::process::exit(tvinr::cli::run(std::env::args_os()));
}
