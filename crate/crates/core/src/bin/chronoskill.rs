fn main() {
    std::process::exit(chronoskill::cli::run(std::env::args_os()));
}
