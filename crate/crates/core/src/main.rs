fn main() {
    std::process::exit(ldam_core::cli::run_from(std::env::args_os()));
}
