fn main() {
    std::process::exit(vaxtract_service::cli::run(std::env::args_os()));
}
